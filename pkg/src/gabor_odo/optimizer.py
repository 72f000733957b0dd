"""Derivative-free search over Gabor mask parameters.

Candidates are scored by simulating a fixed bank of scenarios, decoding a set
of windows per scenario and measuring the speed error. Each scenario is
recorded once as mask-independent column sums (:class:`ProfileRecording`),
so every candidate sees exactly the same heights and noise draws.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .decoder import DecoderConfig, _decode_batch
from .mask import FIXED_GABOR, GaborParams, rasterize
from .sensor_sim import HeightProfile, ProfileRecording, SensorConfig, record_profiles, xi_ground
from .texture import TextureSpec, generate
from .trajectory import PathSpec, PlanarPath

PARAM_NAMES = ("xi0", "sigma", "alpha")
# alpha's lower bound stands in for the open end of (0, 1]
DEFAULT_BOUNDS = ((1.0, 20.0), (0.2, 2.0), (0.05, 1.0))
TARGET_SPAN_S = 0.1


class OptimizerError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectiveConfig:
    texture_specs: tuple
    path_specs: tuple
    height_range_pct: float = 25.0
    height_mode: str = "per_window"
    windows_per_scenario: int = 8
    master_seed: int = 0
    metric: str = "rmse"
    scenario_seeds: tuple = (0,)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    noise: bool = True
    reject_limit: float = 0.2
    reject_weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "texture_specs", tuple(self.texture_specs))
        object.__setattr__(self, "path_specs", tuple(self.path_specs))
        object.__setattr__(self, "scenario_seeds", tuple(int(s) for s in self.scenario_seeds))
        if not self.texture_specs or not self.path_specs or not self.scenario_seeds:
            raise OptimizerError("texture_specs, path_specs and scenario_seeds must be non-empty")
        if self.metric not in ("rmse", "mae"):
            raise OptimizerError("metric must be 'rmse' or 'mae'")
        if self.windows_per_scenario < 1:
            raise OptimizerError("windows_per_scenario must be >= 1")
        HeightProfile(self.height_mode if self.height_range_pct else "nominal", self.height_range_pct)

    def with_seeds(self, seeds) -> ObjectiveConfig:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["scenario_seeds"] = tuple(seeds)
        return ObjectiveConfig(**d)

    def to_dict(self) -> dict:
        return {
            "texture_specs": [t.to_dict() for t in self.texture_specs],
            "path_specs": [p.to_dict() for p in self.path_specs],
            "height_range_pct": float(self.height_range_pct),
            "height_mode": self.height_mode,
            "windows_per_scenario": int(self.windows_per_scenario),
            "master_seed": int(self.master_seed),
            "metric": self.metric,
            "scenario_seeds": list(self.scenario_seeds),
            "sensor": self.sensor.to_dict(),
            "decoder": self.decoder.to_dict(),
            "noise": bool(self.noise),
            "reject_limit": float(self.reject_limit),
            "reject_weight": float(self.reject_weight),
        }

    @classmethod
    def from_dict(cls, d: dict) -> ObjectiveConfig:
        d = dict(d)
        d["texture_specs"] = [TextureSpec.from_dict(t) for t in d["texture_specs"]]
        d["path_specs"] = [PathSpec.from_dict(p) for p in d["path_specs"]]
        if "sensor" in d:
            d["sensor"] = SensorConfig.from_dict(d["sensor"])
        if "decoder" in d:
            d["decoder"] = DecoderConfig.from_dict(d["decoder"])
        return cls(**d)


def split_seeds(n: int, master_seed: int = 0, fractions=(0.7, 0.1, 0.2)) -> dict[str, list[int]]:
    """Shuffle scenario seeds ``0..n-1`` and cut them into train/val/test."""
    if n < 3:
        raise OptimizerError("need at least 3 scenario seeds to split")
    perm = np.random.default_rng(np.random.SeedSequence([int(master_seed), 7011])).permutation(n)
    n_train = max(1, int(round(fractions[0] * n)))
    n_val = max(1, int(round(fractions[1] * n)))
    n_train = min(n_train, n - n_val - 1)
    return {
        "train": sorted(int(s) for s in perm[:n_train]),
        "val": sorted(int(s) for s in perm[n_train:n_train + n_val]),
        "test": sorted(int(s) for s in perm[n_train + n_val:]),
    }


@dataclass(frozen=True, eq=False)
class Scenario:
    key: tuple[int, int, int]  # (scenario seed, texture index, path index)
    recording: ProfileRecording
    path: PlanarPath
    starts: np.ndarray
    targets: np.ndarray


def _reseeded_texture(spec: TextureSpec, seed: int) -> TextureSpec:
    if spec.kind in ("bandlimited_noise", "perlin_like"):
        return TextureSpec(spec.kind, {**spec.params, "seed": seed}, spec.resolution_px, spec.extent_m,
                           spec.wrap_mode)
    return spec


def _reseeded_path(spec: PathSpec, seed: int) -> PathSpec:
    if spec.profile == "random_waypoints" and not spec.csv:
        return PathSpec(spec.profile, {**spec.params, "seed": seed}, spec.duration_s)
    return spec


def build_scenario(cfg: ObjectiveConfig, seed: int, ti: int, pj: int) -> Scenario:
    """Record one scenario. Its randomness comes only from (master_seed, seed, ti, pj)."""
    tex_seed, path_seed, sim_seed = np.random.SeedSequence(
        [int(cfg.master_seed), int(seed), int(ti), int(pj)]).generate_state(3)
    field_ = generate(_reseeded_texture(cfg.texture_specs[ti], int(tex_seed)))
    path = _reseeded_path(cfg.path_specs[pj], int(path_seed)).build(cfg.sensor.rate_hz)
    mode = cfg.height_mode if cfg.height_range_pct else "nominal"
    hp = HeightProfile(mode, cfg.height_range_pct)
    rec = record_profiles(field_, cfg.sensor, path, hp, seed=int(sim_seed))

    n = cfg.decoder.window_len
    if len(path) < n:
        raise OptimizerError(f"path of {len(path)} samples is shorter than one decoder window")
    last = len(path) - n
    k = cfg.windows_per_scenario
    starts = np.unique(np.round(np.linspace(0, last, k)).astype(int)) if k > 1 else np.array([last])
    t_end = path.t[starts + n - 1]
    targets = np.array([path.mean_speed(te - TARGET_SPAN_S, te) for te in t_end])
    return Scenario((int(seed), ti, pj), rec, path, starts, targets)


class ScenarioBank:
    """All scenarios of an :class:`ObjectiveConfig`, recorded once."""

    def __init__(self, cfg: ObjectiveConfig, jobs: int = 1):
        self.cfg = cfg
        keys = [(s, ti, pj) for s in cfg.scenario_seeds
                for ti in range(len(cfg.texture_specs)) for pj in range(len(cfg.path_specs))]
        if jobs > 1:
            with ThreadPoolExecutor(jobs) as pool:
                self.scenarios = list(pool.map(lambda k: build_scenario(cfg, *k), keys))
        else:
            self.scenarios = [build_scenario(cfg, *k) for k in keys]

    def __len__(self):
        return len(self.scenarios)


def check_bounds(params: GaborParams, bounds=DEFAULT_BOUNDS):
    for name, value, (lo, hi) in zip(PARAM_NAMES, params.as_array(), bounds):
        if not lo <= value <= hi:
            raise OptimizerError(f"{name}={value} outside bounds [{lo}, {hi}]")


def window_errors(params: GaborParams, bank: ScenarioBank):
    """Per-window (error, accepted) pooled over the bank."""
    cfg = bank.cfg
    masks = rasterize(params, cfg.sensor.view_px)
    xg = xi_ground(params.xi0, cfg.sensor)
    n = cfg.decoder.window_len
    errs, acc, targets = [], [], []
    for sc in bank.scenarios:
        _, sig = sc.recording.signals(masks, noise=cfg.noise)
        z = sig.s_cos + 1j * sig.s_sin
        idx = sc.starts[:, None] + np.arange(n)[None, :]
        f, conf = _decode_batch(z[idx], xg, cfg.decoder)
        errs.append(f / xg - sc.targets)
        acc.append((conf >= cfg.decoder.threshold) & (conf > 0))
        targets.append(sc.targets)
    return np.concatenate(errs), np.concatenate(acc), np.concatenate(targets)


def objective(params: GaborParams, cfg: ObjectiveConfig | None = None, bank: ScenarioBank | None = None,
              bounds=DEFAULT_BOUNDS) -> float:
    """Speed error (m/s) of ``params`` over the scenario bank.

    RMSE or MAE over accepted windows, plus ``reject_weight`` m/s per unit of
    rejection fraction above ``reject_limit``. With nothing accepted, the
    error is that of reporting zero speed.
    """
    if bank is None:
        if cfg is None:
            raise OptimizerError("need an ObjectiveConfig or a ScenarioBank")
        bank = ScenarioBank(cfg)
    cfg = bank.cfg
    check_bounds(params, bounds)
    err, acc, tgt = window_errors(params, bank)
    e = err[acc] if np.any(acc) else tgt
    base = float(np.sqrt(np.mean(e**2))) if cfg.metric == "rmse" else float(np.mean(np.abs(e)))
    reject = 1.0 - float(np.mean(acc))
    return base + cfg.reject_weight * max(0.0, reject - cfg.reject_limit)


@dataclass(frozen=True)
class HistoryEntry:
    start: int
    evaluation: int
    params: GaborParams
    objective: float


@dataclass
class OptimResult:
    best_params: GaborParams
    best_objective: float
    baseline_objective: float
    history: list[HistoryEntry]
    splits: dict | None = None
    starts: list[GaborParams] = field(default_factory=list)

    def running_best(self) -> np.ndarray:
        return np.minimum.accumulate([h.objective for h in self.history])

    def to_dict(self) -> dict:
        return {
            "best_params": self.best_params.to_dict(),
            "best_objective": self.best_objective,
            "baseline_params": FIXED_GABOR.to_dict(),
            "baseline_objective": self.baseline_objective,
            "starts": [s.to_dict() for s in self.starts],
            "objective_trace": [h.objective for h in self.history],
            "splits": self.splits,
            "n_evaluations": len(self.history),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["start", "evaluation", "xi0", "sigma", "alpha", "objective"])
        for h in self.history:
            w.writerow([h.start, h.evaluation, *(repr(float(v)) for v in h.params.as_array()),
                        repr(float(h.objective))])
        return buf.getvalue()


def _validate_bounds(bounds):
    b = np.asarray(bounds, dtype=float)
    if b.shape != (3, 2) or np.any(~np.isfinite(b)) or np.any(b[:, 0] >= b[:, 1]):
        raise OptimizerError("bounds must be three finite (low, high) pairs with low < high")
    if b[0, 0] <= 0 or b[1, 0] <= 0 or b[2, 0] <= 0 or b[2, 1] > 1:
        raise OptimizerError("bounds must keep xi0, sigma > 0 and alpha in (0, 1]")
    return b


def initial_simplex(x0: np.ndarray, bounds: np.ndarray, rel_step: float = 0.1) -> np.ndarray:
    """Axis-aligned simplex around ``x0``, stepping inward from any bound."""
    sim = [x0.copy()]
    for i in range(len(x0)):
        step = rel_step * (bounds[i, 1] - bounds[i, 0])
        x = x0.copy()
        x[i] = x0[i] + step if x0[i] + step <= bounds[i, 1] else x0[i] - step
        sim.append(x)
    return np.array(sim)


def optimize(cfg: ObjectiveConfig | None = None, bounds=DEFAULT_BOUNDS, starts=None,
             bank: ScenarioBank | None = None, max_evals: int = 200, fatol: float = 1e-4,
             rel_step: float = 0.1, include_baseline: bool = True, objective_fn=None) -> OptimResult:
    """Multi-start bounded Nelder-Mead over (xi0, sigma, alpha).

    The fixed Gabor is always evaluated first, so the result can never be
    worse than it. Each start stops when the simplex objective spread drops
    below ``fatol`` or after ``max_evals`` evaluations. ``objective_fn`` may
    replace the simulated objective (a callable on GaborParams).
    """
    b = _validate_bounds(bounds)
    if objective_fn is None:
        if bank is None:
            if cfg is None:
                raise OptimizerError("need an ObjectiveConfig or a ScenarioBank")
            bank = ScenarioBank(cfg)

        def objective_fn(p):
            return objective(p, bank=bank, bounds=b)

    starts = list(starts or [])
    if include_baseline and FIXED_GABOR not in starts:
        starts.insert(0, FIXED_GABOR)
    if not starts:
        raise OptimizerError("at least one start is required")
    for s in starts:
        check_bounds(s, b)

    history: list[HistoryEntry] = []
    cache: dict[tuple, float] = {}

    def evaluate(si, x):
        x = np.clip(x, b[:, 0], b[:, 1])
        key = tuple(float(v) for v in x)
        if key not in cache:
            cache[key] = float(objective_fn(GaborParams(*key)))
        history.append(HistoryEntry(si, len(history), GaborParams(*key), cache[key]))
        return cache[key]

    baseline = None
    if include_baseline:
        baseline = evaluate(0, FIXED_GABOR.as_array())
    for si, s in enumerate(starts):
        x0 = s.as_array()
        already = 1 if (si == 0 and include_baseline) else 0
        minimize(lambda x, si=si: evaluate(si, x), x0, method="Nelder-Mead", bounds=b,
                 options={"initial_simplex": initial_simplex(x0, b, rel_step), "xatol": np.inf,
                          "fatol": fatol, "maxfev": max(1, max_evals - already), "adaptive": False})

    best = min(history, key=lambda h: h.objective)
    if baseline is None:
        baseline = float(objective_fn(FIXED_GABOR)) if include_baseline else best.objective
    return OptimResult(best.params, best.objective, baseline, history, None, starts)


def grid_search(objective_fn, grid) -> tuple[GaborParams, float, list[tuple[GaborParams, float]]]:
    """Brute-force minimum over the Cartesian product of ``grid = (xi0s, sigmas, alphas)``."""
    rows = []
    for xi0 in grid[0]:
        for sigma in grid[1]:
            for alpha in grid[2]:
                p = GaborParams(float(xi0), float(sigma), float(alpha))
                rows.append((p, float(objective_fn(p))))
    best = min(rows, key=lambda r: r[1])
    return best[0], best[1], rows
