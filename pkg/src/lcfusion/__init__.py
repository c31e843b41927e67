"""Desk-scale LiDAR-camera fusion 3D object detection pipeline."""

__version__ = "0.1.0"
