"""Sliding-window GNSS, RGB-D camera, IMU and wheel fusion for ground vehicles."""

__version__ = "0.1.0"
