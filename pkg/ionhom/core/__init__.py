"""Core functionality for ionhom: settings, logging and errors"""
