"""Stereo-camera plus sparse-IMU human motion capture on a synthetic body model."""

__version__ = "0.1.0"
