"""Command-line entry point: simulate, train, eval, infer.

Exit codes: 0 success, 2 usage error, 3 data/schema error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .ekf import EkfConfig, EkfNumericalError, run_ekf
from .evaluation import build_report, render_tables
from .hybrid import CHANNELS, HybridModel, StandardizerError, fit_standardizer, run_hybrid, training_arrays
from .mlp import ConcatPoint, DivergenceError, MlpTopology, TrainConfig, train
from .seeding import substream
from .simulator import (
    ManeuverSpec,
    SensorNoiseSpec,
    StratificationError,
    build_suite,
    simulate_suite,
    split_dataset,
)
from .vehicle import LowSpeedError, TireModel, VehicleParams, kinematic_sideslip

log = logging.getLogger("sideslip")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
MANIFEST = "manifest.json"
OBSERVERS = ("kinematic", "ekf", "hybrid")


class UsageError(Exception):
    pass


def _write_config(path: Path, config: dict) -> None:
    path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")


def _param_overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise UsageError(f"--param expects KEY=VALUE, got {pair!r}")
        out[key.strip()] = float(value)
    return out


def _resolve_params(base: dict | None, overrides: list[str]) -> VehicleParams:
    data = dict(base or {})
    extra = _param_overrides(overrides)
    if extra:
        # derived tire peaks must follow changed loads unless given explicitly
        data.pop("pacejka_front", None)
        data.pop("pacejka_rear", None)
    data.update(extra)
    try:
        return VehicleParams.from_dict(data)
    except TypeError as exc:
        raise UsageError(f"bad vehicle parameter: {exc}") from None


# simulate ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = _resolve_params(None, args.param)
    sim_seed = substream(args.seed, "simulate")
    if args.suite == "custom":
        if not args.maneuvers:
            raise UsageError("--suite custom needs --maneuvers FILE")
        specs = [ManeuverSpec.from_dict(d) for d in json.loads(Path(args.maneuvers).read_text())]
    else:
        if args.maneuvers:
            raise UsageError("--maneuvers is only valid with --suite custom")
        specs = build_suite(args.suite, sim_seed, params, count=args.count,
                            duration=args.duration, jobs=args.jobs)
    noise = SensorNoiseSpec(**{k: getattr(args, k) for k in _NOISE_FIELDS})
    log.info("simulating %d trajectories", len(specs))
    trajectories = simulate_suite(specs, params, sim_seed, noise, jobs=args.jobs)
    for traj in trajectories:
        dataio.write_trajectory(out / f"{traj.name}.csv", traj)
    split = {"train": [], "test": []}
    if len(trajectories) >= 2:
        try:
            train_set, test_set = split_dataset(trajectories, args.split_ratio, substream(args.seed, "split"))
            split = {"train": [t.name for t in train_set], "test": [t.name for t in test_set]}
        except StratificationError as exc:
            log.warning("no stratified split written: %s", exc)
    manifest = {
        "schema_version": dataio.SCHEMA_VERSION,
        "suite": args.suite,
        "seed": args.seed,
        "params": params.to_dict(),
        "trajectories": [
            {"name": t.name, "file": f"{t.name}.csv", "label": t.label.value, "max_ay_g": t.max_ay_g}
            for t in trajectories
        ],
        "split": split,
    }
    _write_config(out / MANIFEST, manifest)
    _write_config(out / "simulate_config.json", {
        "command": "simulate", "suite": args.suite, "seed": args.seed, "count": args.count,
        "duration": args.duration, "split_ratio": args.split_ratio, "params": params.to_dict(),
        "noise": noise.to_dict(), "maneuvers": [s.to_dict() for s in specs],
    })
    labels = [t.label.value for t in trajectories]
    log.info("wrote %d trajectories (%d normal, %d dynamic) to %s",
             len(trajectories), labels.count("normal"), labels.count("dynamic"), out)
    return 0


# data loading -----------------------------------------------------------

def load_dataset(data_dir: str | Path, split: str):
    data_dir = Path(data_dir)
    manifest_path = data_dir / MANIFEST
    if not manifest_path.exists():
        raise dataio.DataFormatError(f"{data_dir}: no {MANIFEST}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("schema_version") != dataio.SCHEMA_VERSION:
        raise dataio.VersionError(f"{manifest_path}: unsupported schema version")
    entries = manifest["trajectories"]
    if split != "all":
        wanted = set(manifest["split"][split])
        entries = [e for e in entries if e["name"] in wanted]
    if not entries:
        raise dataio.DataFormatError(f"{data_dir}: split {split!r} is empty")
    trajectories = [dataio.read_trajectory(data_dir / e["file"]) for e in entries]
    return trajectories, manifest


# train ------------------------------------------------------------------

def cmd_train(args) -> int:
    trajectories, manifest = load_dataset(args.data, args.split)
    params = _resolve_params(manifest.get("params"), args.param)
    config = TrainConfig(
        learning_rate=args.learning_rate, l2_rate=args.l2_rate, batch_size=args.batch_size,
        epochs=args.epochs, seed=substream(args.seed, "train"),
    )
    topology = MlpTopology(concat_point=ConcatPoint(args.concat_point))
    standardizer = fit_standardizer([t.sensor for t in trajectories])
    x, kin, beta = training_arrays(trajectories, standardizer, params)
    log.info("training on %d frames from %d trajectories", len(beta), len(trajectories))
    weights, history = train(x, kin, beta, config, topology)
    model_path = Path(args.out)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    fingerprint = dataio.training_fingerprint(x, kin, beta)
    dataio.write_model(model_path, HybridModel(weights, standardizer), config, fingerprint)
    loss_path = model_path.with_name(model_path.stem + ".loss.csv")
    loss_path.write_text("epoch,loss\n" + "".join(f"{i + 1},{v!r}\n" for i, v in enumerate(history)))
    _write_config(model_path.with_name(model_path.stem + ".config.json"), {
        "command": "train", "data": str(args.data), "split": args.split, "seed": args.seed,
        "train_config": config.to_dict(), "topology": topology.to_dict(), "params": params.to_dict(),
        "training_fingerprint": fingerprint,
        "trajectories": [t.name for t in trajectories],
    })
    log.info("epoch loss %.3e -> %.3e; model written to %s", history[0], history[-1], model_path)
    return 0


# eval / infer -----------------------------------------------------------

def _load_model(path):
    model, _ = dataio.read_model(path)
    if model.standardizer.channels != CHANNELS:
        raise StandardizerError(f"model channel order {model.standardizer.channels} does not match "
                                f"data channel order {CHANNELS}")
    return model


def observer_outputs(trajectories, observers, params: VehicleParams, model=None,
                     ekf_config: EkfConfig | None = None) -> dict[str, list[np.ndarray]]:
    out = {}
    for name in observers:
        if name == "kinematic":
            out[name] = [np.atleast_1d(kinematic_sideslip(t.sensor.delta, params)) for t in trajectories]
        elif name == "ekf":
            out[name] = [run_ekf(t.sensor, params, ekf_config) for t in trajectories]
        elif name == "hybrid":
            out[name] = [run_hybrid(t.sensor, model, params) for t in trajectories]
        else:
            raise UsageError(f"unknown observer {name!r}")
    return out


def _parse_observers(text: str) -> list[str]:
    names = [s.strip() for s in text.split(",") if s.strip()]
    bad = [n for n in names if n not in OBSERVERS]
    if bad or not names:
        raise UsageError(f"--observers must be a subset of {','.join(OBSERVERS)}")
    return names


def cmd_eval(args) -> int:
    observers = _parse_observers(args.observers)
    if "hybrid" in observers and not args.model:
        raise UsageError("the hybrid observer needs --model")
    model = _load_model(args.model) if "hybrid" in observers else None
    trajectories, manifest = load_dataset(args.data, args.split)
    params = _resolve_params(manifest.get("params"), args.param)
    ekf_config = EkfConfig(tire=TireModel(args.ekf_tire))
    outputs = observer_outputs(trajectories, observers, params, model, ekf_config)
    report_dir = Path(args.report)
    report = build_report(trajectories, outputs, report_dir)
    _write_config(report_dir / "eval_config.json", {
        "command": "eval", "data": str(args.data), "split": args.split, "model": args.model,
        "observers": observers, "params": params.to_dict(), "ekf": ekf_config.to_dict(),
        "trajectories": [t.name for t in trajectories],
    })
    print(render_tables(report))
    return 0


def cmd_infer(args) -> int:
    model = _load_model(args.model)
    traj = dataio.read_trajectory(args.input)
    params = _resolve_params(traj.params.to_dict() if traj.params else None, args.param)
    beta = run_hybrid(traj.sensor, model, params)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataio.write_beta_series(out, traj.sensor.t, beta)
    _write_config(out.with_name(out.stem + ".config.json"), {
        "command": "infer", "model": args.model, "input": str(args.input), "params": params.to_dict(),
    })
    return 0


# parser -----------------------------------------------------------------

_NOISE_FIELDS = [
    "sigma_ax", "sigma_ay", "sigma_yaw_rate", "sigma_wheel_speed", "sigma_delta",
    "bias_ax", "bias_ay", "bias_yaw_rate", "bias_wheel_speed", "bias_delta",
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sideslip", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
        p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                       help="override a vehicle parameter, e.g. mass=1600")

    p = sub.add_parser("simulate", help="generate synthetic trajectories")
    common(p)
    p.add_argument("--suite", choices=("benchmark", "normal", "harsh", "custom"), default="benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--maneuvers", help="JSON list of maneuver specs for --suite custom")
    p.add_argument("--count", type=int, help="number of trajectories (suite default if omitted)")
    p.add_argument("--duration", type=float, default=60.0, help="seconds per trajectory")
    p.add_argument("--split-ratio", type=float, default=0.8)
    p.add_argument("--jobs", type=int, default=1)
    defaults = SensorNoiseSpec()
    for name in _NOISE_FIELDS:
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=float, default=getattr(defaults, name))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the hybrid observer")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--split", choices=("train", "test", "all"), default="train")
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--learning-rate", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--l2-rate", type=float, default=TrainConfig.l2_rate)
    p.add_argument("--concat-point", choices=[c.value for c in ConcatPoint], default=ConcatPoint.STAGE2.value)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score observers and write report tables and plot CSVs")
    common(p)
    p.add_argument("--model")
    p.add_argument("--data", required=True)
    p.add_argument("--observers", default=",".join(OBSERVERS))
    p.add_argument("--report", required=True)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--ekf-tire", choices=[t.value for t in TireModel], default=TireModel.LINEAR.value)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run the hybrid observer on one trajectory file")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, EkfNumericalError, LowSpeedError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
