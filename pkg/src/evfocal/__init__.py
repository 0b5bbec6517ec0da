"""Depth from focal-sweep event streams: rendering, event simulation, voxelization,
lens-breathing correction and a small numpy U-Net regressor."""

__version__ = "0.1.0"
