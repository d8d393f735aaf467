"""
Stabilized finite element package: meshes, assembly, stabilization coefficients,
offline calibration tables and benchmark suites
"""
