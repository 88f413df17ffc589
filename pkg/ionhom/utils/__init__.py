"""Utility functions for ionhom"""
