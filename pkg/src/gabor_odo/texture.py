"""Ground-plane reflectance fields.

A :class:`TextureField` is a regular grid of reflectance values in [0, 1]
covering ``extent_m`` metres of ground. Grid node ``(r, c)`` sits at
``(c * dx, r * dy)``; rows run along the ground y axis and columns along x.
Sampling between nodes is bilinear, and outside the grid it either tiles
(the default, so long trajectories never run off the texture) or clamps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

KINDS = ("bandlimited_noise", "sinusoid", "checker", "perlin_like", "image_file")
WRAP_MODES = ("tile", "clamp")
LUMA = np.array([0.299, 0.587, 0.114])


class TextureError(ValueError):
    """Invalid texture specification or unreadable texture file."""


@dataclass(frozen=True, eq=False)
class TextureField:
    grid: np.ndarray
    extent_m: tuple[float, float]
    wrap_mode: str = "tile"

    def __post_init__(self):
        grid = np.array(self.grid, dtype=np.float64)
        if grid.ndim != 2 or min(grid.shape) < 2:
            raise TextureError(f"texture grid must be 2D with >= 2 nodes per axis, got {grid.shape}")
        if not np.all(np.isfinite(grid)) or grid.min() < 0.0 or grid.max() > 1.0:
            raise TextureError("texture values must lie in [0, 1]")
        extent = np.broadcast_to(np.asarray(self.extent_m, dtype=float), (2,))
        if np.any(extent <= 0):
            raise TextureError(f"extent_m must be positive, got {self.extent_m}")
        if self.wrap_mode not in WRAP_MODES:
            raise TextureError(f"wrap_mode must be one of {WRAP_MODES}")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "extent_m", (float(extent[0]), float(extent[1])))

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def spacing(self) -> tuple[float, float]:
        """Node spacing ``(dx, dy)`` in metres."""
        rows, cols = self.grid.shape
        return self.extent_m[0] / cols, self.extent_m[1] / rows

    def sample(self, x_m, y_m):
        """Bilinearly interpolated reflectance at ground point(s) ``(x_m, y_m)``."""
        return sample(self, x_m, y_m)


def sample(field: TextureField, x_m, y_m):
    x = np.asarray(x_m, dtype=np.float64)
    y = np.asarray(y_m, dtype=np.float64)
    rows, cols = field.grid.shape
    dx, dy = field.spacing
    gx = x / dx
    gy = y / dy
    if field.wrap_mode == "tile":
        gx = np.mod(gx, cols)
        gy = np.mod(gy, rows)
        # mod can return exactly `cols` for tiny negative inputs
        gx = np.where(gx >= cols, 0.0, gx)
        gy = np.where(gy >= rows, 0.0, gy)
        c0 = np.floor(gx).astype(np.intp)
        r0 = np.floor(gy).astype(np.intp)
        c1 = (c0 + 1) % cols
        r1 = (r0 + 1) % rows
    else:
        gx = np.clip(gx, 0.0, cols - 1)
        gy = np.clip(gy, 0.0, rows - 1)
        c0 = np.minimum(np.floor(gx).astype(np.intp), cols - 2)
        r0 = np.minimum(np.floor(gy).astype(np.intp), rows - 2)
        c1 = c0 + 1
        r1 = r0 + 1
    fx = gx - c0
    fy = gy - r0
    g = field.grid
    top = g[r0, c0] * (1.0 - fx) + g[r0, c1] * fx
    bottom = g[r1, c0] * (1.0 - fx) + g[r1, c1] * fx
    out = top * (1.0 - fy) + bottom * fy
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class TextureSpec:
    """Recipe for a texture. ``params`` are kind-specific:

    ``sinusoid``
        ``frequency`` (cycles/m), optional ``angle_rad``, ``phase_rad``, ``contrast``.
    ``checker``
        ``cell_m``: side of one square.
    ``bandlimited_noise``
        ``low``/``high`` cutoffs in cycles/m and ``seed``.
    ``perlin_like``
        ``base_frequency`` (cycles/m), ``octaves``, ``persistence``, ``seed``.
    ``image_file``
        ``path`` to a PGM/PNG file.
    """

    kind: str
    params: dict[str, Any] = field(default_factory=dict)
    resolution_px: int = 1024
    extent_m: float = 1.0
    wrap_mode: str = "tile"

    def validate(self):
        if self.kind not in KINDS:
            raise TextureError(f"unsupported texture kind {self.kind!r}; expected one of {KINDS}")
        if not self.extent_m > 0:
            raise TextureError(f"extent_m must be positive, got {self.extent_m}")
        if self.kind != "image_file" and int(self.resolution_px) < 64:
            raise TextureError(f"resolution_px must be >= 64, got {self.resolution_px}")
        if self.wrap_mode not in WRAP_MODES:
            raise TextureError(f"wrap_mode must be one of {WRAP_MODES}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": dict(self.params),
            "resolution_px": int(self.resolution_px),
            "extent_m": float(self.extent_m),
            "wrap_mode": self.wrap_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> TextureSpec:
        return cls(
            kind=d["kind"],
            params=dict(d.get("params", {})),
            resolution_px=int(d.get("resolution_px", 1024)),
            extent_m=float(d.get("extent_m", 1.0)),
            wrap_mode=d.get("wrap_mode", "tile"),
        )


def _minmax(a: np.ndarray) -> np.ndarray:
    lo, hi = a.min(), a.max()
    if hi - lo <= 0:
        return np.full_like(a, 0.5)
    return (a - lo) / (hi - lo)


def _node_coords(n: int, extent: float) -> np.ndarray:
    return np.arange(n) * (extent / n)


def _sinusoid(n, extent, p):
    f = float(p["frequency"])
    angle = float(p.get("angle_rad", 0.0))
    phase = float(p.get("phase_rad", 0.0))
    contrast = float(p.get("contrast", 1.0))
    if not 0 <= contrast <= 1:
        raise TextureError("sinusoid contrast must lie in [0, 1]")
    x = _node_coords(n, extent)
    X, Y = np.meshgrid(x, x)
    arg = 2 * np.pi * f * (X * np.cos(angle) + Y * np.sin(angle)) + phase
    return 0.5 + 0.5 * contrast * np.cos(arg)


def _checker(n, extent, p):
    cell = float(p["cell_m"])
    if cell <= 0:
        raise TextureError("checker cell_m must be positive")
    x = _node_coords(n, extent)
    # small guard so nodes landing on cell edges are not split by rounding
    idx = np.floor(x / cell + 1e-9).astype(np.int64)
    return ((idx[None, :] + idx[:, None]) % 2).astype(np.float64)


def _bandlimited(n, extent, p):
    low = float(p.get("low", 0.0))
    high = float(p["high"])
    if not 0 <= low < high:
        raise TextureError("bandlimited_noise needs 0 <= low < high (cycles/m)")
    rng = np.random.default_rng(int(p.get("seed", 0)))
    white = rng.standard_normal((n, n))
    f = np.fft.fftfreq(n, d=extent / n)
    fr = np.hypot(f[None, :], f[:, None])
    keep = (fr >= low) & (fr <= high)
    spec = np.fft.fft2(white) * keep
    return _minmax(np.fft.ifft2(spec).real)


def _smoothstep(t):
    return t * t * (3.0 - 2.0 * t)


def _value_noise_octave(n, cells, rng):
    lattice = rng.random((cells, cells))
    g = np.arange(n) * (cells / n)
    i0 = np.floor(g).astype(np.int64)
    t = _smoothstep(g - i0)
    i1 = (i0 + 1) % cells
    i0 = i0 % cells
    # rows: y, cols: x
    a = lattice[np.ix_(i0, i0)]
    b = lattice[np.ix_(i0, i1)]
    c = lattice[np.ix_(i1, i0)]
    d = lattice[np.ix_(i1, i1)]
    tx = t[None, :]
    ty = t[:, None]
    return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty


def _perlin_like(n, extent, p):
    base = float(p.get("base_frequency", 20.0))
    octaves = int(p.get("octaves", 5))
    persistence = float(p.get("persistence", 0.6))
    if base <= 0 or octaves < 1:
        raise TextureError("perlin_like needs base_frequency > 0 and octaves >= 1")
    rng = np.random.default_rng(int(p.get("seed", 0)))
    out = np.zeros((n, n))
    amp = 1.0
    for k in range(octaves):
        # whole lattice cells per tile keep the texture seamless
        cells = max(1, int(round(base * extent * 2**k)))
        cells = min(cells, n)
        out += amp * _value_noise_octave(n, cells, rng)
        amp *= persistence
    return _minmax(out)


_GENERATORS = {
    "sinusoid": _sinusoid,
    "checker": _checker,
    "bandlimited_noise": _bandlimited,
    "perlin_like": _perlin_like,
}


def generate(spec: TextureSpec) -> TextureField:
    """Build the texture described by ``spec``. Same spec, same bytes."""
    spec.validate()
    if spec.kind == "image_file":
        return load_image(spec.params["path"], spec.extent_m, wrap_mode=spec.wrap_mode)
    n = int(spec.resolution_px)
    try:
        grid = _GENERATORS[spec.kind](n, float(spec.extent_m), spec.params)
    except KeyError as exc:
        raise TextureError(f"{spec.kind} texture missing parameter {exc}") from None
    return TextureField(np.clip(grid, 0.0, 1.0), (spec.extent_m, spec.extent_m), spec.wrap_mode)


def load_image(path, extent_m, wrap_mode: str = "tile") -> TextureField:
    """Read an 8-bit PGM (P5) or PNG as reflectance.

    Gray values are divided by 255; colour images are reduced with
    0.299/0.587/0.114 luma weights first. ``extent_m`` is the physical width;
    pass a pair to set width and height independently.
    """
    from PIL import Image, UnidentifiedImageError

    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode == "P":
                img = img.convert("RGBA")
                mode = "RGBA"
            if mode == "L":
                grid = np.asarray(img, dtype=np.float64) / 255.0
            elif mode in ("LA",):
                grid = np.asarray(img, dtype=np.float64)[..., 0] / 255.0
            elif mode in ("RGB", "RGBA"):
                rgb = np.asarray(img, dtype=np.float64)[..., :3]
                grid = (rgb @ LUMA) / 255.0
            else:
                raise TextureError(f"{path}: unsupported image mode {mode!r} (need 8-bit gray or RGB)")
    except TextureError:
        raise
    except FileNotFoundError:
        raise TextureError(f"{path}: no such file") from None
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise TextureError(f"{path}: cannot decode image ({exc})") from None

    rows, cols = grid.shape
    if np.ndim(extent_m) == 0:
        extent = (float(extent_m), float(extent_m) * rows / cols)
    else:
        extent = (float(extent_m[0]), float(extent_m[1]))
    return TextureField(np.clip(grid, 0.0, 1.0), extent, wrap_mode)


def save_pgm(path, grid: np.ndarray):
    """Write a [0, 1] array as an 8-bit binary PGM."""
    from PIL import Image

    data = np.round(np.clip(np.asarray(grid, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data).save(Path(path), format="PPM")
