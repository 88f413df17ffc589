"""Command-line surface for ionhom"""
