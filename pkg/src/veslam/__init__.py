"""Non-rigid monocular SLAM with a visco-elastic deformation model."""

__version__ = "0.1.0"
