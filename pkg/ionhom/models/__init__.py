"""Configuration, parameter, geometry, state and report models"""
