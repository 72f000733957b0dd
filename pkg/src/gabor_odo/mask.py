"""Gabor masks and their printable non-negative decomposition.

Mask coordinates are normalised to the aperture: ``u = x / aperture_width``,
so the aperture spans ``u`` in [-1/2, 1/2], ``xi0`` counts carrier cycles
across the full aperture and ``sigma`` is measured in aperture widths.
Projected on the ground, a mask therefore has spatial frequency
``xi0 / footprint`` cycles per metre.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHANNELS = ("cos_plus", "cos_minus", "sin_plus", "sin_minus")


class MaskError(ValueError):
    pass


@dataclass(frozen=True)
class GaborParams:
    xi0: float = 6.0
    sigma: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if not self.xi0 > 0:
            raise MaskError(f"xi0 must be > 0, got {self.xi0}")
        if not self.sigma > 0:
            raise MaskError(f"sigma must be > 0, got {self.sigma}")
        if not 0 < self.alpha <= 1:
            raise MaskError(f"alpha must lie in (0, 1], got {self.alpha}")

    def as_array(self) -> np.ndarray:
        return np.array([self.xi0, self.sigma, self.alpha], dtype=float)

    def to_dict(self) -> dict:
        return {"xi0": float(self.xi0), "sigma": float(self.sigma), "alpha": float(self.alpha)}

    @classmethod
    def from_dict(cls, d: dict) -> GaborParams:
        return cls(float(d["xi0"]), float(d["sigma"]), float(d["alpha"]))


FIXED_GABOR = GaborParams(6.0, 1.0, 1.0)


def envelope(p: GaborParams, u):
    u = np.asarray(u, dtype=float)
    return p.alpha * np.exp(-(u**2) / (2.0 * p.sigma**2))


def eval_gabor_cos(p: GaborParams, u):
    """``alpha * exp(-u^2 / (2 sigma^2)) * cos(2 pi xi0 u)``."""
    return envelope(p, u) * np.cos(2.0 * np.pi * p.xi0 * np.asarray(u, dtype=float))


def eval_gabor_sin(p: GaborParams, u):
    # Quadrature partner: the carrier is shifted by 90 degrees under the same
    # centred envelope, so both channels see equal amplitude.
    return envelope(p, u) * np.sin(2.0 * np.pi * p.xi0 * np.asarray(u, dtype=float))


def decompose(g):
    """Split a signed transmittance into ``(max(g, 0), max(-g, 0))``."""
    g_arr = np.asarray(g, dtype=float)
    if np.any(np.abs(g_arr) > 1.0):
        raise MaskError("cannot decompose |g| > 1 into valid transmittances")
    plus = np.maximum(g_arr, 0.0)
    minus = np.maximum(-g_arr, 0.0)
    if plus.ndim == 0:
        return float(plus), float(minus)
    return plus, minus


def pixel_centers(resolution_px: int) -> np.ndarray:
    """Normalised aperture coordinate of each pixel centre."""
    n = int(resolution_px)
    return (np.arange(n) + 0.5) / n - 0.5


@dataclass(frozen=True, eq=False)
class MaskRaster:
    """Four transmittance grids; rows are identical (stripes run laterally)."""

    cos_plus: np.ndarray
    cos_minus: np.ndarray
    sin_plus: np.ndarray
    sin_minus: np.ndarray
    params: GaborParams | None = None

    def __post_init__(self):
        grids = [np.array(getattr(self, name), dtype=np.float64) for name in CHANNELS]
        shape = grids[0].shape
        if len(shape) != 2 or shape[0] != shape[1]:
            raise MaskError(f"mask grids must be square, got {shape}")
        for name, g in zip(CHANNELS, grids):
            if g.shape != shape:
                raise MaskError("all four mask grids must share one shape")
            if np.any(g < 0) or np.any(g > 1):
                raise MaskError(f"{name}: transmittance outside [0, 1]")
            if not np.array_equal(g, np.broadcast_to(g[0], g.shape)):
                raise MaskError(f"{name}: rows differ; masks must be constant along the lateral axis")
            g.setflags(write=False)
            object.__setattr__(self, name, g)

    @property
    def resolution_px(self) -> int:
        return self.cos_plus.shape[0]

    def grids(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, name) for name in CHANNELS)

    def rows(self) -> np.ndarray:
        """(4, N) array of the 1-D mask profiles, channel order ``CHANNELS``."""
        return np.stack([g[0] for g in self.grids()])

    @property
    def g_cos(self) -> np.ndarray:
        return self.cos_plus - self.cos_minus

    @property
    def g_sin(self) -> np.ndarray:
        return self.sin_plus - self.sin_minus

    def to_json(self) -> str:
        payload = {
            "format": "gabor-odo-mask/1",
            "resolution_px": self.resolution_px,
            "dtype": "<f8",
            "params": None if self.params is None else self.params.to_dict(),
            "grids": {
                name: base64.b64encode(np.ascontiguousarray(g, dtype="<f8").tobytes()).decode("ascii")
                for name, g in zip(CHANNELS, self.grids())
            },
        }
        return json.dumps(payload, indent=1)

    @classmethod
    def from_json(cls, text: str) -> MaskRaster:
        d = json.loads(text)
        n = int(d["resolution_px"])
        grids = {}
        for name in CHANNELS:
            raw = base64.b64decode(d["grids"][name])
            if len(raw) != n * n * 8:
                raise MaskError(f"{name}: expected {n * n * 8} bytes, got {len(raw)}")
            grids[name] = np.frombuffer(raw, dtype="<f8").reshape(n, n)
        params = GaborParams.from_dict(d["params"]) if d.get("params") else None
        return cls(**grids, params=params)

    def save_pgm(self, directory) -> list[Path]:
        from .texture import save_pgm

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, g in zip(CHANNELS, self.grids()):
            path = directory / f"mask_{name}.pgm"
            save_pgm(path, g)
            paths.append(path)
        return paths


def rasterize(p: GaborParams, resolution_px: int = 128) -> MaskRaster:
    n = int(resolution_px)
    if n < 32:
        raise MaskError(f"resolution_px must be >= 32, got {n}")
    if not 0 < p.alpha <= 1:
        raise MaskError(f"alpha must lie in (0, 1], got {p.alpha}")
    u = pixel_centers(n)
    cp, cm = decompose(eval_gabor_cos(p, u))
    sp, sm = decompose(eval_gabor_sin(p, u))

    def tile(row):
        return np.tile(row, (n, 1))

    return MaskRaster(tile(cp), tile(cm), tile(sp), tile(sm), params=p)
