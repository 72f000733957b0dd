import json

import numpy as np
import pytest

from gabor_odo.mask import FIXED_GABOR, GaborParams, MaskError
from gabor_odo.optimizer import (DEFAULT_BOUNDS, ObjectiveConfig, OptimizerError, ScenarioBank, grid_search,
                                 initial_simplex, objective, optimize, split_seeds)
from gabor_odo.sensor_sim import SensorConfig, footprint, xi_ground
from gabor_odo.texture import TextureSpec
from gabor_odo.trajectory import PathSpec

SENSOR = SensorConfig(view_px=64)
NOISE_TEX = TextureSpec("bandlimited_noise", {"low": 5.0, "high": 300.0}, resolution_px=512)
CONSTANT_PATHS = (PathSpec("straight", {"v": 0.15}, 1.5), PathSpec("straight", {"v": 0.3}, 1.5))


def _cfg(**kw):
    base = dict(texture_specs=(NOISE_TEX,), path_specs=CONSTANT_PATHS, height_range_pct=25.0, sensor=SENSOR,
                scenario_seeds=(0, 1), windows_per_scenario=4)
    base.update(kw)
    return ObjectiveConfig(**base)


@pytest.fixture(scope="module")
def bank():
    return ScenarioBank(_cfg())


def _bowl(p):
    # smooth analytic landscape with its minimum at (9, 0.6, 0.7)
    return (p.xi0 - 9.0) ** 2 / 10 + (p.sigma - 0.6) ** 2 + (p.alpha - 0.7) ** 2


def test_objective_is_deterministic(bank):
    a = objective(FIXED_GABOR, bank=bank)
    assert objective(FIXED_GABOR, bank=bank) == a
    assert objective(FIXED_GABOR, cfg=_cfg()) == a
    other = objective(GaborParams(8.0, 0.8, 0.9), bank=bank)
    assert other != a


def test_parallel_bank_equals_serial(bank):
    par = ScenarioBank(_cfg(), jobs=3)
    for p in (FIXED_GABOR, GaborParams(10.0, 0.5, 0.6)):
        assert objective(p, bank=par) == objective(p, bank=bank)


def test_fixed_gabor_on_matched_tone_texture():
    xg = xi_ground(6.0, SENSOR)
    tone = TextureSpec("sinusoid", {"frequency": xg}, resolution_px=4096)
    cfg = _cfg(texture_specs=(tone,), height_range_pct=0.0, scenario_seeds=(0,))
    assert objective(FIXED_GABOR, cfg=cfg) < 0.02


def test_parameter_bounds(bank):
    with pytest.raises(MaskError):
        GaborParams(6.0, 1.0, 0.0)
    with pytest.raises(OptimizerError):
        objective(GaborParams(25.0, 1.0, 1.0), bank=bank)
    with pytest.raises(OptimizerError):
        objective(GaborParams(6.0, 1.0, 0.01), bank=bank)


def test_rejection_penalty_without_any_accepted_window():
    flat = TextureSpec("sinusoid", {"frequency": 1.0, "contrast": 0.0}, resolution_px=64)
    cfg = _cfg(texture_specs=(flat,), height_range_pct=0.0, scenario_seeds=(0,))
    rms = np.sqrt(np.mean([0.15**2, 0.3**2]))
    assert objective(FIXED_GABOR, cfg=cfg) == pytest.approx(rms + 0.8, rel=1e-12)


def test_objective_config_validation_and_round_trip():
    with pytest.raises(OptimizerError):
        _cfg(texture_specs=())
    with pytest.raises(OptimizerError):
        _cfg(metric="max")
    cfg = _cfg(metric="mae")
    assert ObjectiveConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert cfg.with_seeds([5, 6]).scenario_seeds == (5, 6)


def test_flat_objective_returns_start():
    res = optimize(objective_fn=lambda p: 0.5)
    assert res.best_params == FIXED_GABOR
    assert res.best_objective == res.baseline_objective == 0.5
    assert len(res.history) <= 6


def test_bowl_is_found_and_bounds_respected():
    res = optimize(objective_fn=_bowl, fatol=1e-8, max_evals=400)
    assert res.best_params.xi0 == pytest.approx(9.0, abs=0.05)
    assert res.best_objective <= res.baseline_objective
    # minimum outside the box: the search presses on the bound but never crosses it
    bounds = ((1.0, 20.0), (0.2, 2.0), (0.5, 1.0))
    res = optimize(objective_fn=lambda p: _bowl(p) + 5 * p.alpha, bounds=bounds, fatol=1e-8)
    arr = np.array([h.params.as_array() for h in res.history])
    assert np.all(arr >= np.array(bounds)[:, 0]) and np.all(arr <= np.array(bounds)[:, 1])
    assert res.best_params.alpha == pytest.approx(0.5)


def test_running_best_is_monotone_and_result_consistent():
    res = optimize(objective_fn=_bowl, starts=[GaborParams(15.0, 1.5, 0.3)])
    rb = res.running_best()
    assert np.all(np.diff(rb) <= 0)
    assert res.best_objective == rb[-1] == min(h.objective for h in res.history)
    assert res.history[0].params == FIXED_GABOR
    assert res.baseline_objective == _bowl(FIXED_GABOR)
    d = json.loads(res.to_json())
    assert d["best_objective"] == res.best_objective and len(d["objective_trace"]) == len(res.history)
    rows = res.history_csv().splitlines()
    assert rows[0] == "start,evaluation,xi0,sigma,alpha,objective" and len(rows) == len(res.history) + 1


def test_multi_start_is_no_worse_than_any_single_start():
    def bumpy(p):
        return np.sin(p.xi0) + 0.3 * np.cos(3 * p.sigma) + 0.1 * p.alpha + 0.01 * p.xi0

    rng = np.random.default_rng(0)
    starts = [GaborParams(rng.uniform(1, 20), rng.uniform(0.2, 2), rng.uniform(0.05, 1)) for _ in range(5)]
    singles = [optimize(objective_fn=bumpy, starts=[s]).best_objective for s in starts]
    multi = optimize(objective_fn=bumpy, starts=starts)
    assert multi.best_objective <= min(singles)


def test_invalid_bounds():
    for bad in [((5.0, 1.0), (0.2, 2.0), (0.05, 1.0)), ((1.0, 20.0), (0.2, 2.0), (0.0, 1.0)),
                ((1.0, 20.0), (0.2, 2.0), (0.05, 1.5)), ((1.0, np.inf), (0.2, 2.0), (0.05, 1.0)),
                ((1.0, 20.0), (0.2, 2.0))]:
        with pytest.raises(OptimizerError):
            optimize(objective_fn=_bowl, bounds=bad)
    with pytest.raises(OptimizerError):
        optimize(objective_fn=_bowl, starts=[GaborParams(30.0, 1.0, 1.0)])


def test_initial_simplex_steps_inward():
    b = np.array(DEFAULT_BOUNDS)
    sim = initial_simplex(np.array([20.0, 1.0, 1.0]), b)
    assert sim.shape == (4, 3)
    assert np.all(sim >= b[:, 0]) and np.all(sim <= b[:, 1])
    assert sim[1, 0] == pytest.approx(20.0 - 1.9)


def test_split_seeds():
    s = split_seeds(10, 3)
    assert [len(s[k]) for k in ("train", "val", "test")] == [7, 1, 2]
    assert sorted(s["train"] + s["val"] + s["test"]) == list(range(10))
    assert split_seeds(10, 3) == s
    assert split_seeds(10, 4) != s
    s = split_seeds(100, 0)
    assert [len(s[k]) for k in ("train", "val", "test")] == [70, 10, 20]
    with pytest.raises(OptimizerError):
        split_seeds(2)


def test_grid_search_finds_grid_minimum():
    best, val, rows = grid_search(_bowl, (np.linspace(1, 20, 5), [0.2, 0.6, 2.0], [0.7, 1.0]))
    assert len(rows) == 30
    assert best == GaborParams(10.5, 0.6, 0.7)
    assert val == min(r[1] for r in rows)


def test_known_texture_frequency_pulls_xi0():
    # a single sinusoid at 100 cycles/m fills the mask passband when xi0 = 100 * footprint
    tone = TextureSpec("sinusoid", {"frequency": 100.0}, resolution_px=4096)
    cfg = _cfg(texture_specs=(tone,), height_range_pct=0.0, scenario_seeds=(0,), windows_per_scenario=6)
    bank = ScenarioBank(cfg)
    xi_star = 100.0 * footprint(SENSOR, SENSOR.h_nom_m)

    def along_xi0(xi0):
        return objective(GaborParams(xi0, 1.0, 1.0), bank=bank)

    sweep = np.linspace(4.0, 14.0, 41)
    vals = [along_xi0(x) for x in sweep]
    best_sweep = sweep[int(np.argmin(vals))]
    assert abs(best_sweep - xi_star) <= 0.5
    res = optimize(bank=bank, bounds=((1.0, 20.0), (0.999, 1.0), (0.999, 1.0)))
    assert abs(res.best_params.xi0 - best_sweep) < abs(6.0 - best_sweep)
    assert res.best_objective <= res.baseline_objective
    assert res.best_objective <= min(vals) + 1e-3
