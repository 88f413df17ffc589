"""Tests for ionhom"""
