"""Planar SE(2) trajectories, synthetic generators, resampling and a gyro model."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

PROFILES = ("straight", "arc", "sinusoid_speed", "random_waypoints")
CSV_HEADER = ("t", "x", "y", "yaw", "v_x", "omega_z")


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PlanarPath:
    """Timestamped planar poses with body-frame forward speed and yaw rate.

    ``yaw_rad`` is stored unwrapped so consecutive samples never jump by 2 pi.
    """

    t: np.ndarray
    x_m: np.ndarray
    y_m: np.ndarray
    yaw_rad: np.ndarray
    v_x: np.ndarray
    omega_z: np.ndarray

    def __post_init__(self):
        arrays = [np.array(getattr(self, k), dtype=np.float64) for k in self._fields()]
        n = arrays[0].shape
        if any(a.shape != n or a.ndim != 1 for a in arrays):
            raise TrajectoryError("all path arrays must be 1-D and equally long")
        for k, a in zip(self._fields(), arrays):
            a.setflags(write=False)
            object.__setattr__(self, k, a)

    @staticmethod
    def _fields():
        return ("t", "x_m", "y_m", "yaw_rad", "v_x", "omega_z")

    def __len__(self):
        return len(self.t)

    @property
    def dt(self) -> float:
        return float(np.median(np.diff(self.t)))

    @property
    def rate_hz(self) -> float:
        return 1.0 / self.dt

    @property
    def duration_s(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self) else 0.0

    def is_uniform(self, rtol: float = 1e-6) -> bool:
        if len(self) < 2:
            return True
        d = np.diff(self.t)
        return bool(np.all(np.abs(d - d[0]) <= rtol * d[0]) and d[0] > 0)

    @property
    def xy(self) -> np.ndarray:
        return np.column_stack([self.x_m, self.y_m])

    def path_length(self) -> float:
        return float(np.sum(np.hypot(np.diff(self.x_m), np.diff(self.y_m))))

    def mean_speed(self, t0: float, t1: float) -> float:
        """Mean forward speed over samples with ``t0 < t <= t1``."""
        sel = (self.t > t0 + 1e-9) & (self.t <= t1 + 1e-9)
        if not np.any(sel):
            return float(np.interp(t1, self.t, self.v_x))
        return float(np.mean(self.v_x[sel]))

    def slice_time(self, t0: float, t1: float) -> PlanarPath:
        sel = (self.t >= t0 - 1e-12) & (self.t <= t1 + 1e-12)
        return PlanarPath(*(getattr(self, k)[sel] for k in self._fields()))

    def to_csv(self, path):
        write_path_csv(path, self)


def _integrate_kinematics(t: np.ndarray, v: Callable, w: Callable, pose0=(0.0, 0.0, 0.0)):
    def rhs(tt, s):
        vv = v(tt)
        return [vv * np.cos(s[2]), vv * np.sin(s[2]), w(tt)]

    sol = solve_ivp(rhs, (t[0], t[-1]), list(pose0), method="DOP853", t_eval=t,
                    rtol=1e-11, atol=1e-12, max_step=0.25)
    if not sol.success:
        raise TrajectoryError(f"kinematic integration failed: {sol.message}")
    return sol.y


def _time_grid(duration_s: float, rate_hz: float) -> np.ndarray:
    n = int(round(duration_s * rate_hz))
    return np.arange(n + 1) / rate_hz


def generate_path(profile: str, params: dict | None = None, duration_s: float = 10.0,
                  rate_hz: float = 1000.0) -> PlanarPath:
    """Synthetic differential-drive path starting at the origin, heading +x.

    Profiles and their ``params``:

    - ``straight``: ``v``
    - ``arc``: ``v``, ``omega``
    - ``sinusoid_speed``: ``v``, ``amplitude``, ``period_s``, optional ``omega``, ``phase_rad``
    - ``random_waypoints``: ``seed``, ``v_min``, ``knot_s``, ``turn_scale``; speed and
      yaw rate are monotone-cubic interpolations of random knots, so they never
      leave the knot range.

    Every profile honours ``v_max`` (default 0.4 m/s) and ``omega_max``
    (default 1 rad/s); a profile that would exceed them raises.
    """
    p = dict(params or {})
    if not duration_s > 0:
        raise TrajectoryError("duration_s must be positive")
    if profile not in PROFILES:
        raise TrajectoryError(f"unknown profile {profile!r}; expected one of {PROFILES}")
    v_max = float(p.get("v_max", 0.4))
    w_max = float(p.get("omega_max", 1.0))
    t = _time_grid(duration_s, rate_hz)

    if profile in ("straight", "arc", "sinusoid_speed"):
        v0 = float(p.get("v", 0.2))
        w0 = float(p.get("omega", 0.0)) if profile != "straight" else 0.0
        amp = float(p.get("amplitude", 0.0)) if profile == "sinusoid_speed" else 0.0
        period = float(p.get("period_s", 4.0))
        phase = float(p.get("phase_rad", 0.0))
        if amp == 0.0:
            def v(tt):
                return v0 * np.ones_like(tt)
        else:
            def v(tt):
                return v0 + amp * np.sin(2 * np.pi * tt / period + phase)

        def w(tt):
            return w0 * np.ones_like(tt)
    else:
        rng = np.random.default_rng(int(p.get("seed", 0)))
        knot = float(p.get("knot_s", 2.0))
        v_min = float(p.get("v_min", 0.1 * v_max))
        turn = float(p.get("turn_scale", 0.5))
        nk = int(np.ceil(duration_s / knot)) + 2
        tk = np.arange(nk) * knot
        vk = rng.uniform(v_min, v_max, nk)
        wk = rng.uniform(-1.0, 1.0, nk) * w_max * turn
        v = PchipInterpolator(tk, vk)
        w = PchipInterpolator(tk, wk)

    vt = np.asarray(v(t), dtype=float)
    wt = np.asarray(w(t), dtype=float)
    if np.max(np.abs(vt)) > v_max * (1 + 1e-9):
        raise TrajectoryError(f"speed {np.max(np.abs(vt)):.3f} m/s exceeds v_max={v_max}")
    if np.max(np.abs(wt)) > w_max * (1 + 1e-9):
        raise TrajectoryError(f"yaw rate {np.max(np.abs(wt)):.3f} rad/s exceeds omega_max={w_max}")

    if profile != "random_waypoints" and amp == 0.0:
        x, y, yaw = _closed_form_arc(t, v0, w0)
    else:
        x, y, yaw = _integrate_kinematics(t, v, w)
    return PlanarPath(t, x, y, yaw, vt, wt)


def _closed_form_arc(t, v, w):
    yaw = w * t
    if w == 0.0:
        return v * t, np.zeros_like(t), yaw
    r = v / w
    return r * np.sin(yaw), r * (1.0 - np.cos(yaw)), yaw


def scale_speed(path: PlanarPath, v_max: float) -> PlanarPath:
    """Uniformly scale speeds (and positions) so that ``max|v_x| == v_max``.

    Timestamps, heading and yaw rate are untouched, so the path keeps its
    duration and turning profile while its size shrinks.
    """
    peak = float(np.max(np.abs(path.v_x)))
    if peak == 0:
        return path
    s = v_max / peak
    x0, y0 = path.x_m[0], path.y_m[0]
    return PlanarPath(path.t, x0 + s * (path.x_m - x0), y0 + s * (path.y_m - y0),
                      path.yaw_rad, s * path.v_x, path.omega_z)


def resample(path: PlanarPath, rate_hz: float) -> PlanarPath:
    """Velocity-aware cubic Hermite resampling onto a uniform grid at ``rate_hz``."""
    t = path.t
    if len(t) < 4:
        raise TrajectoryError("resampling needs at least 4 samples")
    if np.any(np.diff(t) <= 0):
        raise TrajectoryError("timestamps must be strictly increasing")
    yaw = np.unwrap(path.yaw_rad)
    c, s = np.cos(yaw), np.sin(yaw)
    px = CubicHermiteSpline(t, path.x_m, path.v_x * c)
    py = CubicHermiteSpline(t, path.y_m, path.v_x * s)
    pyaw = CubicHermiteSpline(t, yaw, path.omega_z)

    n = int(np.floor((t[-1] - t[0]) * rate_hz + 1e-6))
    tn = t[0] + np.arange(n + 1) / rate_hz
    tn[-1] = min(tn[-1], t[-1])
    yaw_n = pyaw(tn)
    vx = px(tn, 1) * np.cos(yaw_n) + py(tn, 1) * np.sin(yaw_n)
    return PlanarPath(tn, px(tn), py(tn), yaw_n, vx, pyaw(tn, 1))


def five_point_derivative(f: np.ndarray, dt: float) -> np.ndarray:
    """Central 5-point stencil ``(-f[i+2] + 8 f[i+1] - 8 f[i-1] + f[i-2]) / 12 dt``.

    The two samples at each end fall back to ``np.gradient`` (second order).
    """
    f = np.asarray(f, dtype=float)
    d = np.gradient(f, dt, edge_order=2) if len(f) >= 3 else np.zeros_like(f)
    if len(f) >= 5:
        d[2:-2] = (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / (12.0 * dt)
    return d


def write_path_csv(path, p: PlanarPath):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for row in zip(p.t, p.x_m, p.y_m, p.yaw_rad, p.v_x, p.omega_z):
            fh.write(f"{row[0]:.6f},{row[1]:.9f},{row[2]:.9f},{row[3]:.9f},{row[4]:.9f},{row[5]:.9f}\n")


def read_path_csv(path) -> PlanarPath:
    """Load ``t,x,y,yaw[,v_x,omega_z]``; missing rates are differentiated."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = [c for c in ("t", "x", "y", "yaw") if c not in cols]
        if missing:
            raise TrajectoryError(f"{path}: missing columns {missing}")
        rows = list(reader)
    if not rows:
        raise TrajectoryError(f"{path}: no samples")
    data = {c: np.array([float(r[c]) for r in rows]) for c in cols if c in CSV_HEADER}
    t = data["t"]
    yaw = np.unwrap(data["yaw"])
    if "v_x" in data and "omega_z" in data:
        return PlanarPath(t, data["x"], data["y"], yaw, data["v_x"], data["omega_z"])
    if len(t) < 2 or np.any(np.diff(t) <= 0):
        raise TrajectoryError(f"{path}: timestamps must be strictly increasing")
    dt = float(np.median(np.diff(t)))
    xd = five_point_derivative(data["x"], dt)
    yd = five_point_derivative(data["y"], dt)
    vx = xd * np.cos(yaw) + yd * np.sin(yaw)
    return PlanarPath(t, data["x"], data["y"], yaw, vx, five_point_derivative(yaw, dt))


@dataclass(frozen=True)
class GyroModel:
    noise_std: float = 0.0
    bias: float = 0.0
    bias_walk_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.noise_std, self.bias_walk_std) < 0:
            raise TrajectoryError("gyro noise levels must be non-negative")


def gyro_measure(path: PlanarPath, model: GyroModel) -> np.ndarray:
    """Yaw rate as a gyro would report it: truth + random-walk bias + white noise."""
    n = len(path)
    rng = np.random.default_rng(model.seed)
    bias = np.full(n, float(model.bias))
    if model.bias_walk_std > 0 and n > 1:
        steps = rng.normal(0.0, model.bias_walk_std * np.sqrt(np.diff(path.t)))
        bias[1:] += np.cumsum(steps)
    out = path.omega_z + bias
    if model.noise_std > 0:
        out = out + rng.normal(0.0, model.noise_std, n)
    return out


@dataclass(frozen=True)
class PathSpec:
    """Serializable recipe for a synthetic path (or a CSV to import)."""

    profile: str = "straight"
    params: dict = field(default_factory=dict)
    duration_s: float = 10.0
    csv: str | None = None

    def build(self, rate_hz: float = 1000.0) -> PlanarPath:
        if self.csv:
            p = read_path_csv(self.csv)
            if not p.is_uniform() or abs(p.rate_hz - rate_hz) > 1e-6 * rate_hz:
                p = resample(p, rate_hz)
            return p
        return generate_path(self.profile, self.params, self.duration_s, rate_hz)

    def to_dict(self) -> dict:
        d = {"profile": self.profile, "params": dict(self.params), "duration_s": float(self.duration_s)}
        if self.csv:
            d["csv"] = str(self.csv)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PathSpec:
        return cls(d.get("profile", "straight"), dict(d.get("params", {})),
                   float(d.get("duration_s", 10.0)), d.get("csv"))
