"""Finite element kernels, DSW physics, time integration and the CG inversion."""
