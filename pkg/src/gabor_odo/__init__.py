"""Simulation and decoding toolkit for four-pixel Gabor-mask planar odometry."""

from .mask import FIXED_GABOR, GaborParams, MaskRaster, rasterize
from .sensor_sim import HeightProfile, SensorConfig, footprint, simulate, xi_ground
from .texture import TextureField, TextureSpec, generate
from .trajectory import GyroModel, PathSpec, PlanarPath, generate_path

__version__ = "0.1.0"

__all__ = [
    "FIXED_GABOR", "GaborParams", "MaskRaster", "rasterize",
    "HeightProfile", "SensorConfig", "footprint", "simulate", "xi_ground",
    "TextureField", "TextureSpec", "generate",
    "GyroModel", "PathSpec", "PlanarPath", "generate_path",
]
