"""
Finite element core: meshes, Lagrange spaces, assembly and linear solves
"""
