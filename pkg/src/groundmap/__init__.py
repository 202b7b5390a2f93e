"""Ground-surface annotation from trajectories, BEV belief fusion, mesh
reprojection, evaluation, and costmap planning."""

__version__ = "0.1.0"
