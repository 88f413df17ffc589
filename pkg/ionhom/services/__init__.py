"""Solvers, geometry, membrane physics and run orchestration"""
