"""Four-detector sensor simulation: geometry, optics and readout electronics.

Geometry. The sensor sits at the robot origin, facing down. Detector ``k``
has a grid offset ``p_k`` in the sensor frame; its mask is placed so that at
the nominal height all four projected windows coincide. Off-nominal heights
scale each window and shift it by ``p_k * (1 - h / h_nom)`` (parallax).

Views. A view is ``view_px`` square pixels over the ground window, inverted
as through a pinhole: column index increases toward the rear of the sensor
and row index toward its right. The mask carrier runs along the columns.
With this orientation a forward-moving sensor produces a positive frequency
in ``s_cos + i s_sin``.

Optics and electronics. Each view is blurred (Gaussian detector footprint),
weighted by the cosine-power falloffs ``D`` and ``Omega``, multiplied by its
mask and summed; the sum is converted to volts with gain, read noise,
uniform quantisation and clipping.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d
from scipy.signal import butter, sosfiltfilt

from . import _kernels
from .mask import CHANNELS, MaskRaster, pixel_centers
from .texture import TextureField, sample
from .trajectory import PlanarPath, resample

REFERENCE_VIEW_PX = 128
BLUR_TRUNCATE = 4.0
BLUR_MODE = "reflect"


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SensorConfig:
    d_m: float = 0.019
    fov_rad: float = np.deg2rad(70.0)
    h_nom_m: float = 0.06
    view_px: int = 128
    gain: float = 1.22e-4
    read_noise_v: float = 175e-6
    adc_bits: int = 12
    v_clip: float = 3.2
    blur_sigma_px: float = 1.5
    falloff_exp_D: float = 1.0
    falloff_exp_Omega: float = 3.0
    rate_hz: float = 1000.0

    def __post_init__(self):
        for name in ("d_m", "h_nom_m", "gain", "v_clip", "rate_hz"):
            if not getattr(self, name) > 0:
                raise SimulationError(f"{name} must be positive")
        if not 0 < self.fov_rad < np.pi:
            raise SimulationError("fov_rad must lie in (0, pi)")
        if not 8 <= int(self.adc_bits) <= 16:
            raise SimulationError("adc_bits must lie in [8, 16]")
        if int(self.view_px) < 8:
            raise SimulationError("view_px too small")
        if min(self.read_noise_v, self.blur_sigma_px, self.falloff_exp_D, self.falloff_exp_Omega) < 0:
            raise SimulationError("noise, blur and falloff exponents must be non-negative")

    @property
    def lsb_v(self) -> float:
        return self.v_clip / (2 ** int(self.adc_bits) - 1)

    def to_dict(self) -> dict:
        return {k: (int(v) if k in ("view_px", "adc_bits") else float(v)) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> SensorConfig:
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise SimulationError(f"unknown sensor fields: {sorted(extra)}")
        return cls(**d)


# grid offsets (x forward, y left) in channel order cos+, cos-, sin+, sin-.
# Each +/- pair sits on a diagonal, so away from h_nom both pairs keep the
# same mean position and their relative quadrature phase.
_OFFSET_SIGNS = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])


def detector_offsets(cfg: SensorConfig) -> np.ndarray:
    return _OFFSET_SIGNS * (cfg.d_m / 2.0)


def footprint(cfg: SensorConfig, h_m) -> float:
    """Ground width covered by one detector view at height ``h_m``."""
    h = np.asarray(h_m, dtype=float)
    if np.any(h <= 0):
        raise SimulationError("height must be positive")
    w = 2.0 * h * np.tan(cfg.fov_rad / 2.0)
    return float(w) if w.ndim == 0 else w


def xi_ground(xi0: float, cfg: SensorConfig, h_m: float | None = None) -> float:
    """Projected mask frequency on the ground, cycles per metre."""
    return xi0 / footprint(cfg, cfg.h_nom_m if h_m is None else h_m)


@dataclass(frozen=True)
class Window:
    center: tuple[float, float]
    extent_m: float
    yaw_rad: float


def detector_window(cfg: SensorConfig, h_m: float, pose, k: int) -> Window:
    """Ground window seen by detector ``k`` when the sensor is at ``pose`` = (x, y, yaw)."""
    if not h_m > 0:
        raise SimulationError("height must be positive")
    x, y, yaw = (float(v) for v in pose)
    p = detector_offsets(cfg)[k]
    c, s = np.cos(yaw), np.sin(yaw)
    shift = 1.0 - h_m / cfg.h_nom_m
    dx = (c * p[0] - s * p[1]) * shift
    dy = (s * p[0] + c * p[1]) * shift
    return Window((x + dx, y + dy), footprint(cfg, h_m), yaw)


def view_points(window: Window, view_px: int):
    """Ground coordinates (X, Y) of every view pixel, each (N, N)."""
    u = pixel_centers(view_px)
    w = window.extent_m
    c, s = np.cos(window.yaw_rad), np.sin(window.yaw_rad)
    # body offsets (-u_j w, -u_i w) rotated into the world
    bx = -u[None, :] * w
    by = -u[:, None] * w
    X = window.center[0] + c * bx - s * by
    Y = window.center[1] + s * bx + c * by
    return X, Y


def render_view(field: TextureField, window: Window, view_px: int = 128) -> np.ndarray:
    X, Y = view_points(window, view_px)
    return sample(field, X, Y)


def falloff_map(cfg: SensorConfig, n: int | None = None) -> np.ndarray:
    """``D(u) * Omega(u)``: cosine powers of the ray angle off nadir."""
    n = int(cfg.view_px if n is None else n)
    u = pixel_centers(n)
    tan_beta = 2.0 * np.tan(cfg.fov_rad / 2.0) * np.hypot(u[:, None], u[None, :])
    cos_beta = 1.0 / np.sqrt(1.0 + tan_beta**2)
    return cos_beta ** (cfg.falloff_exp_D + cfg.falloff_exp_Omega)


def blur(view: np.ndarray, sigma_px: float) -> np.ndarray:
    if sigma_px <= 0:
        return np.asarray(view, dtype=float)
    return gaussian_filter(np.asarray(view, dtype=float), sigma_px, mode=BLUR_MODE, truncate=BLUR_TRUNCATE)


def integrate_detector(view, mask_grid, cfg: SensorConfig) -> float:
    """``sum_u (view * b)(u) D(u) Omega(u) mask(u)`` for one detector."""
    view = np.asarray(view, dtype=float)
    mask_grid = np.asarray(mask_grid, dtype=float)
    if view.shape != mask_grid.shape or view.ndim != 2 or view.shape[0] != view.shape[1]:
        raise SimulationError(f"view {view.shape} and mask {mask_grid.shape} must be equal squares")
    f = falloff_map(cfg, view.shape[0])
    return float(np.sum(blur(view, cfg.blur_sigma_px) * f * mask_grid))


def quantize(v, cfg: SensorConfig):
    lsb = cfg.lsb_v
    return np.round(np.asarray(v, dtype=float) / lsb) * lsb


def electronics(raw, cfg: SensorConfig, rng: np.random.Generator | None = None, noise: bool = True,
                normal_draws=None):
    """Volts from integrated signal: gain, read noise, quantisation, clip to [0, v_clip].

    ``normal_draws`` (standard normals, same shape as ``raw``) may be given
    instead of ``rng`` to reuse one noise realisation across calls.
    """
    v = np.asarray(raw, dtype=float) * cfg.gain
    if noise and cfg.read_noise_v > 0:
        if normal_draws is None:
            if rng is None:
                raise SimulationError("noise requested without an rng")
            normal_draws = rng.standard_normal(v.shape)
        v = v + cfg.read_noise_v * np.asarray(normal_draws)
    out = np.clip(quantize(v, cfg), 0.0, cfg.v_clip)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class HeightProfile:
    """Sensor height over time, ``h = h_nom * (1 + delta(t))``.

    Modes: ``nominal``; ``constant`` (``offset_pct``); ``per_trajectory`` (one
    uniform draw in +-``range_pct``); ``per_window`` (a fresh uniform draw every
    ``block_s`` seconds); ``continuous`` (low-passed noise at ``cutoff_hz``
    scaled to peak at +-``range_pct``).
    """

    mode: str = "nominal"
    range_pct: float = 0.0
    offset_pct: float = 0.0
    block_s: float = 1.0
    cutoff_hz: float = 2.0

    MODES = ("nominal", "constant", "per_trajectory", "per_window", "continuous")

    def __post_init__(self):
        if self.mode not in self.MODES:
            raise SimulationError(f"height mode must be one of {self.MODES}")
        if not 0 <= self.range_pct < 100 or not -100 < self.offset_pct:
            raise SimulationError("height range must keep the sensor above ground")

    def deltas(self, t: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        r = self.range_pct / 100.0
        if self.mode == "nominal":
            return np.zeros_like(t)
        if self.mode == "constant":
            return np.full_like(t, self.offset_pct / 100.0)
        if self.mode == "per_trajectory":
            return np.full_like(t, rng.uniform(-r, r))
        if self.mode == "per_window":
            block = np.floor((t - t[0]) / self.block_s + 1e-9).astype(int)
            draws = rng.uniform(-r, r, block.max() + 1)
            return draws[block]
        white = rng.standard_normal(len(t))
        dt = float(np.median(np.diff(t))) if len(t) > 1 else 1.0
        if len(t) > 30:
            sos = butter(2, self.cutoff_hz, fs=1.0 / dt, output="sos")
            white = sosfiltfilt(sos, white)
        peak = np.max(np.abs(white))
        return white * (r / peak) if peak > 0 else white

    def heights(self, t, h_nom: float, rng: np.random.Generator) -> np.ndarray:
        return h_nom * (1.0 + self.deltas(t, rng))

    def to_dict(self) -> dict:
        return {"mode": self.mode, "range_pct": float(self.range_pct), "offset_pct": float(self.offset_pct),
                "block_s": float(self.block_s), "cutoff_hz": float(self.cutoff_hz)}

    @classmethod
    def from_dict(cls, d: dict) -> HeightProfile:
        return cls(**d)


@dataclass(frozen=True, eq=False)
class FourChannelTrace:
    t: np.ndarray
    s_cos_p: np.ndarray
    s_cos_m: np.ndarray
    s_sin_p: np.ndarray
    s_sin_m: np.ndarray
    heights: np.ndarray | None = field(default=None, repr=False)

    HEADER = ("t", "s_cos_p", "s_cos_m", "s_sin_p", "s_sin_m")

    @property
    def channels(self) -> np.ndarray:
        return np.column_stack([self.s_cos_p, self.s_cos_m, self.s_sin_p, self.s_sin_m])

    @property
    def rate_hz(self) -> float:
        return 1.0 / float(np.median(np.diff(self.t)))

    def differential(self) -> SignalTrace:
        return SignalTrace(self.t, self.s_cos_p - self.s_cos_m, self.s_sin_p - self.s_sin_m)

    def to_csv(self, path):
        _write_csv(path, self.HEADER, [self.t, self.s_cos_p, self.s_cos_m, self.s_sin_p, self.s_sin_m])

    @classmethod
    def from_csv(cls, path) -> FourChannelTrace:
        cols = _read_csv(path, cls.HEADER)
        return cls(*cols)


@dataclass(frozen=True, eq=False)
class SignalTrace:
    t: np.ndarray
    s_cos: np.ndarray
    s_sin: np.ndarray

    HEADER = ("t", "s_cos", "s_sin")

    def __len__(self):
        return len(self.t)

    @property
    def rate_hz(self) -> float:
        return 1.0 / float(np.median(np.diff(self.t)))

    def to_csv(self, path):
        _write_csv(path, self.HEADER, [self.t, self.s_cos, self.s_sin])

    @classmethod
    def from_csv(cls, path) -> SignalTrace:
        return cls(*_read_csv(path, cls.HEADER))


def _write_csv(path, header, cols):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(f"{row[0]:.6f}," + ",".join(f"{v:.9f}" for v in row[1:]) + "\n")


def _read_csv(path, header):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got is None or tuple(h.strip() for h in got) != tuple(header):
            raise SimulationError(f"{path}: expected header {','.join(header)}")
        data = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
    if data.size == 0:
        raise SimulationError(f"{path}: no samples")
    return [data[:, i] for i in range(data.shape[1])]


# ---------------------------------------------------------------------------
# compiled fast path


@lru_cache(maxsize=32)
def _blur_matrix(n: int, sigma: float) -> np.ndarray:
    """B with ``blur(v) == B @ v`` along one axis (same boundary handling)."""
    if sigma <= 0:
        return np.eye(n)
    return gaussian_filter1d(np.eye(n), sigma, axis=0, mode=BLUR_MODE, truncate=BLUR_TRUNCATE)


def detector_kernels(cfg: SensorConfig, mask_rows: np.ndarray) -> np.ndarray:
    """Per-detector weights ``K_k = B^T (F * M_k) B`` so that
    ``integrate_detector(view, M_k) == sum(view * K_k)``."""
    n = int(cfg.view_px)
    B = _blur_matrix(n, float(cfg.blur_sigma_px))
    f = falloff_map(cfg, n)
    return np.stack([B.T @ (f * row[None, :]) @ B for row in np.asarray(mask_rows)])


def profile_operators(cfg: SensorConfig):
    """(band, radius, colw) for ``_kernels.detector_profiles``."""
    n = int(cfg.view_px)
    sigma = float(cfg.blur_sigma_px)
    B = _blur_matrix(n, sigma)
    radius = int(BLUR_TRUNCATE * sigma + 0.5) if sigma > 0 else 0
    band = np.zeros((n, 2 * radius + 1))
    for m in range(2 * radius + 1):
        j = np.arange(n)
        jj = j - radius + m
        ok = (jj >= 0) & (jj < n)
        band[j[ok], m] = B[j[ok], jj[ok]]
    recon = np.zeros_like(B)
    for m in range(2 * radius + 1):
        j = np.arange(n)
        jj = j - radius + m
        ok = (jj >= 0) & (jj < n)
        recon[j[ok], jj[ok]] = band[j[ok], m]
    if not np.allclose(recon, B, atol=0.0, rtol=0.0):
        raise SimulationError("blur matrix is wider than its band")
    colw = B.T @ falloff_map(cfg, n)
    return band, radius, colw


def _grid_frames(field: TextureField, cfg: SensorConfig, x, y, yaw, h):
    """Grid-unit origin and steps of every detector view, shapes (T, 4, 2)."""
    n = int(cfg.view_px)
    offsets = detector_offsets(cfg)
    c, s = np.cos(yaw), np.sin(yaw)
    shift = 1.0 - h / cfg.h_nom_m
    w = footprint(cfg, h)
    # window centres (T, 4)
    cx = x[:, None] + (c[:, None] * offsets[None, :, 0] - s[:, None] * offsets[None, :, 1]) * shift[:, None]
    cy = y[:, None] + (s[:, None] * offsets[None, :, 0] + c[:, None] * offsets[None, :, 1]) * shift[:, None]
    u0 = pixel_centers(n)[0]
    step = (w / n)[:, None]
    # pixel (i, j) = centre - w*(u_j e_x + u_i e_y)
    ox = cx - (w * u0)[:, None] * (c[:, None] - s[:, None])
    oy = cy - (w * u0)[:, None] * (s[:, None] + c[:, None])
    sj = np.stack([-step * c[:, None], -step * s[:, None]], axis=-1) * np.ones((1, 4, 1))
    si = np.stack([step * s[:, None], -step * c[:, None]], axis=-1) * np.ones((1, 4, 1))
    dx, dy = field.spacing
    origins = np.stack([ox / dx, oy / dy], axis=-1)
    steps_i = si / np.array([dx, dy])
    steps_j = sj / np.array([dx, dy])
    if field.wrap_mode == "tile":
        rows, cols = field.shape
        size = np.array([cols, rows], dtype=float)
        origins = origins - np.floor(origins / size) * size
        lo = (n - 1) * (np.minimum(steps_i, 0.0) + np.minimum(steps_j, 0.0))
        lift = np.ceil(-lo / size) * size
        origins = origins + lift
    return np.ascontiguousarray(origins), np.ascontiguousarray(steps_i), np.ascontiguousarray(steps_j)


def _prepare_path(path: PlanarPath, cfg: SensorConfig) -> PlanarPath:
    if len(path) == 0:
        raise SimulationError("empty path")
    if not path.is_uniform():
        raise SimulationError("path timestamps must be uniform")
    if len(path) > 1 and abs(path.rate_hz - cfg.rate_hz) > 1e-6 * cfg.rate_hz:
        path = resample(path, cfg.rate_hz)
    return path


def _streams(seed: int):
    heights_ss, noise_ss = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.default_rng(heights_ss), np.random.default_rng(noise_ss)


def _brightness_scale(cfg: SensorConfig) -> float:
    # the gain is calibrated for a 128x128 integration grid
    return (REFERENCE_VIEW_PX / int(cfg.view_px)) ** 2


def raw_signals(field: TextureField, masks: MaskRaster, cfg: SensorConfig, x, y, yaw, h) -> np.ndarray:
    """Integrated detector outputs (T, 4) before the electronics."""
    if masks.resolution_px != int(cfg.view_px):
        raise SimulationError(f"mask resolution {masks.resolution_px} != view_px {cfg.view_px}")
    o, si, sj = _grid_frames(field, cfg, *(np.atleast_1d(np.asarray(a, dtype=float)) for a in (x, y, yaw, h)))
    kernels = detector_kernels(cfg, masks.rows())
    return _kernels.detector_signals(field.grid, field.wrap_mode == "tile", o, si, sj, kernels)


def simulate(field: TextureField, masks: MaskRaster, cfg: SensorConfig, path: PlanarPath,
             height_profile: HeightProfile | None = None, seed: int = 0, noise: bool = True):
    """Run the full detector chain along ``path``.

    Returns ``(FourChannelTrace, SignalTrace)``. The result is a pure function
    of the inputs and ``seed``; heights and noise use separate streams, so
    toggling ``noise`` leaves the height draws unchanged.
    """
    path = _prepare_path(path, cfg)
    hp = height_profile or HeightProfile()
    h_rng, n_rng = _streams(seed)
    h = hp.heights(path.t, cfg.h_nom_m, h_rng)
    raw = raw_signals(field, masks, cfg, path.x_m, path.y_m, path.yaw_rad, h) * _brightness_scale(cfg)
    draws = n_rng.standard_normal(raw.shape)
    volts = electronics(raw, cfg, noise=noise, normal_draws=draws)
    four = FourChannelTrace(path.t.copy(), *volts.T.copy(), heights=h)
    return four, four.differential()


@dataclass(frozen=True, eq=False)
class ProfileRecording:
    """Mask-independent record of one scenario: per-column detector sums.

    ``signals(masks)`` reproduces ``simulate`` for any mask raster of the
    recorded resolution, with the same heights and noise draws.
    """

    t: np.ndarray
    profiles: np.ndarray  # (T, 4, N)
    heights: np.ndarray
    normal_draws: np.ndarray  # (T, 4)
    cfg: SensorConfig

    def raw(self, mask_rows: np.ndarray) -> np.ndarray:
        return np.einsum("tkn,kn->tk", self.profiles, mask_rows) * _brightness_scale(self.cfg)

    def signals(self, masks: MaskRaster, noise: bool = True):
        volts = electronics(self.raw(masks.rows()), self.cfg, noise=noise, normal_draws=self.normal_draws)
        four = FourChannelTrace(self.t, *volts.T.copy(), heights=self.heights)
        return four, four.differential()


def record_profiles(field: TextureField, cfg: SensorConfig, path: PlanarPath,
                    height_profile: HeightProfile | None = None, seed: int = 0) -> ProfileRecording:
    path = _prepare_path(path, cfg)
    hp = height_profile or HeightProfile()
    h_rng, n_rng = _streams(seed)
    h = hp.heights(path.t, cfg.h_nom_m, h_rng)
    o, si, sj = _grid_frames(field, cfg, path.x_m, path.y_m, path.yaw_rad, h)
    band, radius, colw = profile_operators(cfg)
    prof = _kernels.detector_profiles(field.grid, field.wrap_mode == "tile", o, si, sj, band, radius, colw)
    draws = n_rng.standard_normal((len(path), 4))
    return ProfileRecording(path.t.copy(), prof, h, draws, cfg)


def channel_names() -> tuple[str, ...]:
    return CHANNELS
