"""Score a few Gabor masks on a small scenario bank, then let Nelder-Mead tune one.

Run: python demos/mask_tuning.py   (a few seconds)
"""

from gabor_odo.mask import FIXED_GABOR, GaborParams
from gabor_odo.optimizer import ObjectiveConfig, ScenarioBank, objective, optimize
from gabor_odo.sensor_sim import SensorConfig
from gabor_odo.texture import TextureSpec
from gabor_odo.trajectory import PathSpec


def main():
    cfg = ObjectiveConfig(
        sensor=SensorConfig(view_px=64),
        texture_specs=(TextureSpec("bandlimited_noise", {"low": 5.0, "high": 300.0}),),
        path_specs=(PathSpec("random_waypoints", {"v_min": 0.05}, 3.0),),
        scenario_seeds=(0, 1, 2),
    )
    bank = ScenarioBank(cfg)
    probes = (FIXED_GABOR, GaborParams(4.0, 0.5, 1.0), GaborParams(12.0, 1.5, 0.5))
    for p in probes:
        print(f"{p.to_dict()}: RMSE {objective(p, bank=bank):.4f} m/s")

    # start from every probe; the best run wins
    res = optimize(bank=bank, starts=list(probes), include_baseline=False, max_evals=60)
    print(f"optimised {res.best_params.to_dict()}: RMSE {res.best_objective:.4f} m/s "
          f"after {len(res.history)} evaluations")


if __name__ == "__main__":
    main()
