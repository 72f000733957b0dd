"""Command-line entry point: ``gabor-odo <command> [options]``.

Every command writes into ``--out`` (or the config's ``output_dir``) a
``manifest.json`` listing the stages it completed and a SHA-256 of every file
it produced; commands driven by a config also write ``resolved_config.toml``.
Failures print a JSON object on stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import SCHEMA, STRIDES_MS, ConfigError, ExperimentConfig, load, resolve
from .decoder import (ConditioningConfig, condition, decode_stream, read_estimates_csv, write_estimates_csv)
from .mask import FIXED_GABOR, GaborParams
from .odometry import integrate, score
from .optimizer import ObjectiveConfig, ScenarioBank, objective, optimize, split_seeds
from .report import table_csv, table_markdown, trajectory_svg
from .sensor_sim import FourChannelTrace, HeightProfile, SignalTrace, simulate, xi_ground
from .texture import TextureSpec, generate, save_pgm
from .trajectory import PlanarPath, gyro_measure, read_path_csv, write_path_csv

SUMMARY_COLUMNS = ["scenario", "texture", "path", "height_range_pct", "rmse_mps", "mae_mps", "accept_rate",
                   "ate_m", "drift_pct", "path_length_m", "duration_s"]


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(str(exc))
        self.stage = stage
        self.cause = exc


# ---------------------------------------------------------------------------
# output bookkeeping


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Output directory plus the manifest of completed stages."""

    def __init__(self, out: Path, command: str):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = {"schema": SCHEMA, "version": __version__, "command": command, "status": "running",
                         "stages": []}
        self.flush()

    def write_text(self, rel: str, text: str) -> Path:
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        return p

    def stage(self, name: str, files: list[Path], **info):
        entry = {"stage": name, "status": "completed",
                 "outputs": {str(Path(f).relative_to(self.out)): _sha256(Path(f)) for f in files}}
        entry.update(info)
        self.manifest["stages"].append(entry)
        self.flush()

    def finish(self, status: str, error: dict | None = None):
        self.manifest["status"] = status
        if error:
            self.manifest["error"] = error
        self.flush()

    def flush(self):
        with open(self.out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _jobs(args) -> int:
    if args.jobs is not None:
        return max(1, int(args.jobs))
    env = os.environ.get("GABOR_ODO_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"GABOR_ODO_THREADS must be an integer, got {env!r}", "GABOR_ODO_THREADS") from None
    return 1


def _config(args, required: bool = True) -> ExperimentConfig:
    if args.config:
        cfg = load(args.config)
    elif required:
        raise ConfigError("this command needs --config", "--config")
    else:
        cfg = resolve({})
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be in [0, 2^64)", "--seed")
        cfg = replace(cfg, seed=int(args.seed))
    if args.stride_ms is not None:
        cfg = replace(cfg, stride_ms=int(args.stride_ms))
    if args.out:
        cfg = replace(cfg, output_dir=str(args.out))
    return cfg


def _scenario_keys(cfg: ExperimentConfig) -> list[tuple[int, int, int]]:
    if not cfg.textures or not cfg.paths:
        raise ConfigError("config needs at least one [[textures]] and one [[paths]] entry", "textures")
    keys = []
    for ti in range(len(cfg.textures)):
        for pj in range(len(cfg.paths)):
            keys.append((len(keys), ti, pj))
    return keys


def _scenario_seeds(master: int, index: int) -> tuple[int, int]:
    sim, gyro = np.random.SeedSequence([int(master), int(index)]).generate_state(2)
    return int(sim), int(gyro)


def _decoder_xi0(cfg: ExperimentConfig, masks) -> float:
    return masks.params.xi0 if masks.params is not None else cfg.mask.xi0


# ---------------------------------------------------------------------------
# scenario pipeline shared by simulate / experiment


def _speed_metrics(estimates, path: PlanarPath):
    acc = [e for e in estimates if e.accepted]
    if not acc:
        return float("nan"), float("nan"), 0.0
    err = np.array([e.v_hat - path.mean_speed(e.t_s - 0.1, e.t_s) for e in acc])
    rate = len(acc) / max(1, len(estimates))
    return float(np.sqrt(np.mean(err**2))), float(np.mean(np.abs(err))), rate


def run_scenario(cfg: ExperimentConfig, key, run: Run, subdir: str, height: HeightProfile, masks,
                 noise: bool = True) -> dict:
    idx, ti, pj = key
    sim_seed, gyro_seed = _scenario_seeds(cfg.seed, idx)
    stage = "texture"
    files = []
    try:
        field = generate(cfg.textures[ti])
        stage = "trajectory"
        path = cfg.paths[pj].build(cfg.sensor.rate_hz)
        stage = "simulate"
        _, sig = simulate(field, masks, cfg.sensor, path, height, seed=sim_seed, noise=noise)
        files.append(run.out / subdir / "path.csv")
        files[-1].parent.mkdir(parents=True, exist_ok=True)
        write_path_csv(files[-1], path)
        files.append(run.out / subdir / "signal.csv")
        sig.to_csv(files[-1])
        stage = "decode"
        xg = xi_ground(_decoder_xi0(cfg, masks), cfg.sensor)
        est = decode_stream(sig, cfg.stride_ms, xg, cfg.decoder, keep_rejected=True)
        files.append(run.out / subdir / "estimates.csv")
        write_estimates_csv(files[-1], est)
        stage = "odometry"
        omega = gyro_measure(path, replace(cfg.gyro, seed=gyro_seed))
        est_path = integrate(est, omega, cfg.odometry, t=path.t)
        files.append(run.out / subdir / "est_path.csv")
        write_path_csv(files[-1], est_path)
        stage = "evaluate"
        sc = score(est_path, path)
        rmse, mae, rate = _speed_metrics(est, path)
        files.append(run.write_text(f"{subdir}/score.json", sc.to_json() + "\n"))
        if cfg.experiment.plots:
            files.append(run.write_text(f"{subdir}/overlay.svg",
                                        trajectory_svg(est_path, path, f"{subdir}: ATE {sc.ate_m:.3f} m")))
    except Exception as exc:  # noqa: BLE001 - re-raised with stage context
        raise StageError(f"{subdir}/{stage}", exc) from exc
    row = {"scenario": subdir, "texture": ti, "path": pj, "height_range_pct": float(height.range_pct),
           "rmse_mps": rmse, "mae_mps": mae, "accept_rate": rate, **sc.to_dict()}
    return {"row": row, "files": files}


def _run_all(cfg, run: Run, jobs: int, tasks):
    def one(t):
        return run_scenario(cfg, *t)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(one, tasks))
    else:
        results = [one(t) for t in tasks]
    for t, r in zip(tasks, results):
        run.stage(f"scenario:{t[2]}", r["files"])
    return [r["row"] for r in results]


def _write_summary(run: Run, rows: list[dict], columns: list[str], name: str = "summary") -> list[Path]:
    return [run.write_text(f"{name}.csv", table_csv(rows, columns)),
            run.write_text(f"{name}.md", table_markdown(rows, columns))]


# ---------------------------------------------------------------------------
# optimisation helpers


def _objective_config(cfg: ExperimentConfig, seeds, mode: str | None = None,
                      range_pct: float | None = None) -> ObjectiveConfig:
    o = cfg.optimizer
    sensor = replace(cfg.sensor, view_px=int(o.view_px))
    hmode = mode or (cfg.heights.mode if cfg.heights.mode != "nominal" else "per_window")
    hrange = cfg.heights.range_pct if range_pct is None else range_pct
    return ObjectiveConfig(cfg.textures, cfg.paths, height_range_pct=hrange, height_mode=hmode,
                           windows_per_scenario=o.windows_per_scenario, master_seed=cfg.seed, metric=o.metric,
                           scenario_seeds=tuple(seeds), sensor=sensor, decoder=cfg.decoder, noise=o.noise)


def _optimize(cfg: ExperimentConfig, run: Run, jobs: int, prefix: str = ""):
    if not cfg.textures or not cfg.paths:
        raise ConfigError("optimize-masks needs [[textures]] and [[paths]]", "textures")
    o = cfg.optimizer
    splits = split_seeds(o.n_scenario_seeds, cfg.seed)
    train = ScenarioBank(_objective_config(cfg, splits["train"]), jobs=jobs)
    starts = [GaborParams(*s) for s in o.starts] or [FIXED_GABOR]
    res = optimize(bank=train, starts=starts, max_evals=o.max_evals, fatol=o.fatol)
    res.splits = splits
    evals = {"train": {"fixed": res.baseline_objective, "optimized": res.best_objective}}
    for split in ("val", "test"):
        bank = ScenarioBank(_objective_config(cfg, splits[split]), jobs=jobs)
        evals[split] = {"fixed": objective(FIXED_GABOR, bank=bank), "optimized": objective(res.best_params, bank=bank)}
    payload = res.to_dict()
    payload["split_objectives"] = evals
    files = [run.write_text(f"{prefix}optim_result.json", _json_text(payload)),
             run.write_text(f"{prefix}history.csv", res.history_csv())]
    run.stage("optimize", files, n_evaluations=len(res.history))
    return res, evals


# ---------------------------------------------------------------------------
# commands


def cmd_gen_texture(args, run: Run):
    if args.kind:
        params = {}
        for item in args.param or []:
            if "=" not in item:
                raise ConfigError(f"--param expects KEY=VALUE, got {item!r}", "--param")
            k, v = item.split("=", 1)
            try:
                params[k] = json.loads(v)
            except json.JSONDecodeError:
                params[k] = v
        if args.seed is not None:
            params.setdefault("seed", args.seed)
        specs = [TextureSpec(args.kind, params, args.resolution, args.extent)]
    else:
        cfg = _config(args)
        specs = list(cfg.textures)
        if not specs:
            raise ConfigError("no textures in config and no --kind given", "textures")
    files = []
    for i, spec in enumerate(specs):
        field = generate(spec)
        p = run.out / f"texture_{i:03d}.pgm"
        save_pgm(p, field.grid)
        files.append(p)
        info = {"spec": spec.to_dict(), "shape": list(field.shape), "extent_m": list(field.extent_m),
                "mean": float(field.grid.mean()), "std": float(field.grid.std())}
        files.append(run.write_text(f"texture_{i:03d}.json", _json_text(info)))
    run.stage("gen-texture", files)


def cmd_simulate(args, run: Run):
    cfg = _config(args)
    run.stage("config", [run.write_text("resolved_config.toml", cfg.to_toml())])
    masks = cfg.masks()
    files = []
    for idx, ti, pj in _scenario_keys(cfg):
        sim_seed, _ = _scenario_seeds(cfg.seed, idx)
        sub = f"scenario_{idx:03d}"
        try:
            field = generate(cfg.textures[ti])
            path = cfg.paths[pj].build(cfg.sensor.rate_hz)
            four, sig = simulate(field, masks, cfg.sensor, path, cfg.heights, seed=sim_seed,
                                 noise=cfg.experiment.noise)
        except Exception as exc:  # noqa: BLE001
            raise StageError(f"{sub}/simulate", exc) from exc
        (run.out / sub).mkdir(exist_ok=True)
        four.to_csv(run.out / sub / "raw.csv")
        sig.to_csv(run.out / sub / "signal.csv")
        write_path_csv(run.out / sub / "path.csv", path)
        files += [run.out / sub / n for n in ("raw.csv", "signal.csv", "path.csv")]
    run.stage("simulate", files)


def cmd_condition(args, run: Run):
    cfg = _config(args, required=False)
    trace = FourChannelTrace.from_csv(_existing(args.input, "--input"))
    sig = condition(trace, cfg.conditioning if args.input_rate is None
                    else replace(cfg.conditioning, input_rate_hz=float(args.input_rate)))
    p = run.out / "signal.csv"
    sig.to_csv(p)
    run.stage("condition", [p])


def cmd_decode(args, run: Run):
    cfg = _config(args, required=False)
    sig = SignalTrace.from_csv(_existing(args.input, "--input"))
    xi0 = args.xi0 if args.xi0 is not None else _decoder_xi0(cfg, cfg.masks())
    xg = xi_ground(xi0, cfg.sensor, args.height_m)
    est = decode_stream(sig, cfg.stride_ms, xg, cfg.decoder, keep_rejected=args.keep_rejected)
    p = run.out / "estimates.csv"
    write_estimates_csv(p, est)
    run.stage("decode", [p], windows=len(est), accepted=sum(e.accepted for e in est))


def cmd_optimize(args, run: Run):
    cfg = _config(args)
    run.stage("config", [run.write_text("resolved_config.toml", cfg.to_toml())])
    res, _ = _optimize(cfg, run, _jobs(args))
    run.write_text("best_mask.toml", "[mask]\n" + "".join(f"{k} = {v!r}\n"
                                                         for k, v in res.best_params.to_dict().items()))


def cmd_odometry(args, run: Run):
    cfg = _config(args, required=False)
    est = read_estimates_csv(_existing(args.estimates, "--estimates"))
    if args.gyro:
        data = np.loadtxt(_existing(args.gyro, "--gyro"), delimiter=",", skiprows=1, ndmin=2)
        t, omega = data[:, 0], data[:, 1]
    elif args.ref:
        ref = read_path_csv(_existing(args.ref, "--ref"))
        seed = _scenario_seeds(cfg.seed, 0)[1]
        t, omega = ref.t, gyro_measure(ref, replace(cfg.gyro, seed=seed))
    else:
        raise ConfigError("odometry needs --gyro or --ref", "--gyro")
    path = integrate(est, omega, cfg.odometry, t=t)
    p = run.out / "est_path.csv"
    write_path_csv(p, path)
    run.stage("odometry", [p])


def cmd_evaluate(args, run: Run):
    est = read_path_csv(_existing(args.est, "--est"))
    ref = read_path_csv(_existing(args.ref, "--ref"))
    sc = score(est, ref)
    files = [run.write_text("score.json", sc.to_json() + "\n")]
    if not args.no_plot:
        files.append(run.write_text("overlay.svg", trajectory_svg(est, ref, f"ATE {sc.ate_m:.3f} m")))
    run.stage("evaluate", files)
    print(sc.to_json())


def cmd_experiment(args, run: Run):
    cfg = _config(args)
    run.stage("config", [run.write_text("resolved_config.toml", cfg.to_toml())])
    jobs = _jobs(args)
    keys = _scenario_keys(cfg)
    kind = cfg.experiment.kind
    masks = cfg.masks()

    if kind == "mask_comparison":
        res, evals = _optimize(cfg, run, jobs)
        rows = []
        for split in ("train", "val", "test"):
            rows.append({"split": split, "fixed_objective": evals[split]["fixed"],
                         "optimized_objective": evals[split]["optimized"]})
        cols = ["split", "fixed_objective", "optimized_objective"]
        run.stage("summary", _write_summary(run, rows, cols), best_params=res.best_params.to_dict())
        return

    if cfg.optimizer.enabled:
        res, _ = _optimize(cfg, run, jobs)
        cfg = replace(cfg, mask=res.best_params, mask_file=None)
        masks = cfg.masks()

    if kind == "height_sweep":
        ranges = [float(r) for r in cfg.experiment.height_ranges_pct]
        mode = cfg.heights.mode if cfg.heights.mode != "nominal" else "per_window"
        tasks = []
        for ri, r in enumerate(ranges):
            hp = HeightProfile("nominal") if r == 0 else replace(cfg.heights, mode=mode, range_pct=r)
            for key in keys:
                tasks.append((key, run, f"range_{ri:02d}/scenario_{key[0]:03d}", hp, masks, cfg.experiment.noise))
        rows = _run_all(cfg, run, jobs, tasks)
        agg = []
        for r in ranges:
            sub = [row for row in rows if row["height_range_pct"] == r]
            agg.append({"height_range_pct": r,
                        "rmse_mps": float(np.sqrt(np.nanmean([x["rmse_mps"] ** 2 for x in sub]))),
                        "mae_mps": float(np.nanmean([x["mae_mps"] for x in sub])),
                        "accept_rate": float(np.mean([x["accept_rate"] for x in sub])),
                        "ate_m": float(np.mean([x["ate_m"] for x in sub])),
                        "drift_pct": float(np.mean([x["drift_pct"] for x in sub]))})
        files = _write_summary(run, rows, SUMMARY_COLUMNS)
        files += _write_summary(run, agg, ["height_range_pct", "rmse_mps", "mae_mps", "accept_rate", "ate_m",
                                           "drift_pct"], name="height_sweep")
        run.stage("summary", files)
        return

    tasks = [(key, run, f"scenario_{key[0]:03d}", cfg.heights, masks, cfg.experiment.noise) for key in keys]
    rows = _run_all(cfg, run, jobs, tasks)
    run.stage("summary", _write_summary(run, rows, SUMMARY_COLUMNS))


def _existing(path, flag: str) -> Path:
    if not path:
        raise ConfigError(f"{flag} is required", flag)
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{flag}: {p} does not exist", flag)
    return p


COMMANDS = {
    "gen-texture": cmd_gen_texture,
    "simulate": cmd_simulate,
    "condition": cmd_condition,
    "decode": cmd_decode,
    "optimize-masks": cmd_optimize,
    "odometry": cmd_odometry,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment TOML file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--jobs", type=int, help="parallel scenarios (default: $GABOR_ODO_THREADS or 1)")
    common.add_argument("--stride-ms", type=int, choices=STRIDES_MS, help="decoder window stride")
    common.add_argument("--out", help="output directory (overrides the config)")

    parser = argparse.ArgumentParser(prog="gabor-odo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-texture", parents=[common], help="generate texture(s) as PGM")
    p.add_argument("--kind", choices=["bandlimited_noise", "sinusoid", "checker", "perlin_like"])
    p.add_argument("--param", action="append", metavar="KEY=VALUE")
    p.add_argument("--resolution", type=int, default=1024)
    p.add_argument("--extent", type=float, default=1.0)

    sub.add_parser("simulate", parents=[common], help="simulate detector traces for every scenario")

    p = sub.add_parser("condition", parents=[common], help="filter and decimate a raw four-channel log")
    p.add_argument("--input", required=True)
    p.add_argument("--input-rate", type=float)

    p = sub.add_parser("decode", parents=[common], help="decode speed from a differential trace")
    p.add_argument("--input", required=True)
    p.add_argument("--xi0", type=float, help="mask carrier cycles per aperture (default: from config)")
    p.add_argument("--height-m", type=float, help="height assumed by the decoder (default: nominal)")
    p.add_argument("--keep-rejected", action="store_true")

    sub.add_parser("optimize-masks", parents=[common], help="optimise Gabor parameters")

    p = sub.add_parser("odometry", parents=[common], help="integrate speed estimates with yaw rate")
    p.add_argument("--estimates", required=True)
    p.add_argument("--gyro", help="CSV with columns t,omega")
    p.add_argument("--ref", help="reference path CSV to synthesise the gyro from")

    p = sub.add_parser("evaluate", parents=[common], help="score an estimated path against a reference")
    p.add_argument("--est", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--no-plot", action="store_true")

    sub.add_parser("experiment", parents=[common], help="run the end-to-end pipeline")
    return parser


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    if getattr(args, "config", None):
        try:
            return Path(load(args.config).output_dir)
        except (ConfigError, OSError):
            pass
    return Path("out")


def _error_payload(exc: BaseException, stage: str) -> dict:
    cause = exc.cause if isinstance(exc, StageError) else exc
    payload = {"error": type(cause).__name__, "message": str(cause),
               "stage": exc.stage if isinstance(exc, StageError) else stage}
    parameter = getattr(cause, "parameter", None)
    if parameter:
        payload["parameter"] = parameter
    return payload


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    run = None
    try:
        run = Run(_out_dir(args), args.command)
        COMMANDS[args.command](args, run)
        run.finish("completed")
        return 0
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON report
        payload = _error_payload(exc, args.command)
        if run is not None:
            run.finish("failed", payload)
        sys.stderr.write(json.dumps(payload) + "\n")
        return 2 if isinstance(exc, ConfigError) else 1


if __name__ == "__main__":
    sys.exit(main())
