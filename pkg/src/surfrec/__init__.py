"""Keypoint-field RGB-D surface reconstruction engine.

Builds continuous SDF/radiance fields from posed RGB-D frames: keypoint
surface features with distance-aware interpolation, SDF volume rendering,
two-stage generalizable prior training, and prior-guided per-scene
optimization over a prunable voxel feature grid. Verified end-to-end on
procedurally generated analytic-SDF scenes.
"""

__version__ = "0.1.0"
