"""Stratified incompressible Euler flow in isopycnal coordinates."""
