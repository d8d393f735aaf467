"""
Stabilized advection-diffusion solver with least-squares calibrated stabilization coefficients
"""
