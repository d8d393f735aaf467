"""
Stabilization coefficients: analytic formulas and calibrated tables
"""
