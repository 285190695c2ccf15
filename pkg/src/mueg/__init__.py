"""Numerical checks for magnetic current-density-functional theory at desk
scale: free-gas kernels, an explicit representability constructor for
density/current pairs, gauge and affine transformation rules, tetrahedral
partitions of unity, and smeared electron-gas trial states."""

__version__ = "0.1.0"
