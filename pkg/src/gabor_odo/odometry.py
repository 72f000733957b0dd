"""Dead reckoning from decoded forward speed and gyro yaw rate, plus scoring.

Scores difference the estimate against the reference directly, both starting
from the same pose; there is no rigid alignment step, so heading drift shows
up in full.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .decoder import SpeedEstimate
from .trajectory import PlanarPath

INTEGRATORS = ("euler", "midpoint")
HOLD_POLICIES = ("zero_order_hold", "zero_speed")


class OdometryError(ValueError):
    pass


@dataclass(frozen=True)
class OdometryConfig:
    integration: str = "midpoint"
    rate_hz: float = 1000.0
    hold_policy: str = "zero_order_hold"
    # A speed estimate stamped at a window end describes the window as a whole;
    # shifting it back by this much places it at the window's effective centre.
    speed_lag_s: float = 0.5

    def __post_init__(self):
        if self.integration not in INTEGRATORS:
            raise OdometryError(f"integration must be one of {INTEGRATORS}")
        if self.hold_policy not in HOLD_POLICIES:
            raise OdometryError(f"hold_policy must be one of {HOLD_POLICIES}")
        if not self.rate_hz > 0:
            raise OdometryError("rate_hz must be positive")
        if self.speed_lag_s < 0:
            raise OdometryError("speed_lag_s must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> OdometryConfig:
        return cls(**d)


def hold_speed(estimates: list[SpeedEstimate], t: np.ndarray, cfg: OdometryConfig) -> np.ndarray:
    """Accepted speed estimates as a piecewise-constant signal on clock ``t``.

    Before the first estimate its value is used. Under ``zero_speed``, clock
    samples further than 1.5 estimate spacings from the last estimate are zero.
    """
    acc = [e for e in estimates if e.accepted]
    if not acc:
        raise OdometryError("no accepted speed estimates")
    te = np.array([e.t_s for e in acc]) - cfg.speed_lag_s
    ve = np.array([e.v_hat for e in acc])
    if np.any(np.diff(te) < 0):
        order = np.argsort(te, kind="stable")
        te, ve = te[order], ve[order]
    idx = np.searchsorted(te, t, side="right") - 1
    v = ve[np.clip(idx, 0, None)]
    if cfg.hold_policy == "zero_speed" and len(te) > 1:
        spacing = float(np.median(np.diff(te)))
        age = t - te[np.clip(idx, 0, None)]
        v = np.where((idx >= 0) & (age > 1.5 * spacing), 0.0, v)
    return v


def integrate(speed, omega, cfg: OdometryConfig | None = None, t: np.ndarray | None = None,
              pose0=(0.0, 0.0, 0.0)) -> PlanarPath:
    """Integrate forward speed and yaw rate into a planar path.

    ``omega`` is sampled on a uniform clock at ``cfg.rate_hz`` (or on ``t``).
    ``speed`` is either a list of :class:`SpeedEstimate` (held onto the clock
    per ``cfg.hold_policy``) or an array already on that clock.

    The midpoint rule advances with the interval-averaged speed and yaw rate
    along the chord heading ``psi + omega * dt / 2``; Euler uses the left sample
    and the current heading.
    """
    cfg = cfg or OdometryConfig()
    omega = np.asarray(omega, dtype=float)
    if omega.ndim != 1 or len(omega) == 0:
        raise OdometryError("empty yaw-rate series")
    if t is None:
        t = np.arange(len(omega)) / cfg.rate_hz
    t = np.asarray(t, dtype=float)
    if len(t) != len(omega):
        raise OdometryError("yaw-rate series and clock differ in length")
    if isinstance(speed, (list, tuple)):
        if not speed:
            raise OdometryError("empty speed series")
        v = hold_speed(list(speed), t, cfg)
    else:
        v = np.asarray(speed, dtype=float)
        if v.ndim != 1 or len(v) == 0:
            raise OdometryError("empty speed series")
        if abs(len(v) - len(omega)) > 1:
            raise OdometryError(f"speed ({len(v)}) and yaw-rate ({len(omega)}) clocks differ by more than one sample")
        n = min(len(v), len(omega))
        v, omega, t = v[:n], omega[:n], t[:n]

    dt = np.diff(t)
    if cfg.integration == "midpoint":
        vs = 0.5 * (v[1:] + v[:-1])
        ws = 0.5 * (omega[1:] + omega[:-1])
        yaw = pose0[2] + np.concatenate([[0.0], np.cumsum(ws * dt)])
        heading = yaw[:-1] + 0.5 * ws * dt
    else:
        vs = v[:-1]
        ws = omega[:-1]
        yaw = pose0[2] + np.concatenate([[0.0], np.cumsum(ws * dt)])
        heading = yaw[:-1]
    x = pose0[0] + np.concatenate([[0.0], np.cumsum(vs * dt * np.cos(heading))])
    y = pose0[1] + np.concatenate([[0.0], np.cumsum(vs * dt * np.sin(heading))])
    return PlanarPath(t, x, y, yaw, v, omega)


def _aligned(est: PlanarPath, ref: PlanarPath):
    """Estimate positions inside the reference time range, with the reference
    linearly interpolated onto those timestamps."""
    if len(est) == 0 or len(ref) == 0:
        raise OdometryError("empty path")
    tol = 1e-9
    sel = (est.t >= ref.t[0] - tol) & (est.t <= ref.t[-1] + tol)
    if not np.any(sel):
        raise OdometryError("estimate and reference time ranges do not overlap")
    te = np.clip(est.t[sel], ref.t[0], ref.t[-1])
    rx = np.interp(te, ref.t, ref.x_m)
    ry = np.interp(te, ref.t, ref.y_m)
    return est.x_m[sel], est.y_m[sel], rx, ry, te


def ate(est: PlanarPath, ref: PlanarPath) -> float:
    """Root-mean-square position error, metres."""
    ex, ey, rx, ry, _ = _aligned(est, ref)
    return float(np.sqrt(np.mean((ex - rx) ** 2 + (ey - ry) ** 2)))


def drift(est: PlanarPath, ref: PlanarPath) -> float:
    """Endpoint position error as a percentage of the reference path length."""
    length = ref.path_length()
    if not length > 0:
        raise OdometryError("reference path has zero length")
    ex, ey, rx, ry, _ = _aligned(est, ref)
    return float(100.0 * np.hypot(ex[-1] - rx[-1], ey[-1] - ry[-1]) / length)


@dataclass(frozen=True)
class TrajectoryScore:
    ate_m: float
    drift_pct: float
    path_length_m: float
    duration_s: float

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> TrajectoryScore:
        d = json.loads(text)
        return cls(*(float(d[k]) for k in ("ate_m", "drift_pct", "path_length_m", "duration_s")))


def score(est: PlanarPath, ref: PlanarPath) -> TrajectoryScore:
    _, _, _, _, te = _aligned(est, ref)
    return TrajectoryScore(ate(est, ref), drift(est, ref), ref.path_length(), float(te[-1] - te[0]))
