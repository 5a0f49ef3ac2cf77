"""Command-line front end: dataset generation, training, generation, evaluation.

Every command is a pure function of its flags and input files; reruns with
identical flags produce byte-identical outputs. Each run writes exactly one
JSON manifest (next to its primary output) recording the resolved
configuration, the seed, and SHA-256 hashes of inputs and outputs.

Exit codes: 0 success, 2 usage error, 3 numeric failure, 4 I/O or format error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics, net, training
from .errors import DataFormatError, NonFiniteError, StepSizeUnderflowError
from .integrators import SolverConfig
from .lorenz import (
    DEFAULT_ATOL,
    DEFAULT_DT_PHYS,
    DEFAULT_RTOL,
    LorenzParams,
    generate_dataset,
    read_trajectory_csv,
    write_trajectory_csv,
)
from .optim import LbfgsConfig
from .training import TrainConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _parse_x0(text: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("x0 must be three comma-separated numbers")
    try:
        return np.array([float(v) for v in parts])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _write_manifest(
    primary_out: Path,
    command: str,
    config: dict,
    seed: int | None,
    inputs: dict[str, Path],
    outputs: dict[str, Path],
) -> Path:
    doc = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {k: {"path": str(p), "sha256": _sha256(p)} for k, p in inputs.items()},
        "outputs": {k: {"path": str(p), "sha256": _sha256(p)} for k, p in outputs.items()},
    }
    manifest = primary_out.with_name(primary_out.name + ".manifest.json")
    manifest.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return manifest


def _solver_config(args: argparse.Namespace) -> SolverConfig:
    return SolverConfig(eps=args.eps, safety=args.safety, h_clip=args.h_clip)


def cmd_gen_data(args: argparse.Namespace) -> int:
    params = LorenzParams(sigma=args.sigma, rho=args.rho, beta=args.beta)
    traj = generate_dataset(
        params, args.x0, n=args.n, dt_phys=args.dt_phys, rtol=args.rtol, atol=args.atol
    )
    out = Path(args.out)
    write_trajectory_csv(traj, out)
    _write_manifest(
        out,
        "gen-data",
        {
            "n": args.n,
            "dt_phys": args.dt_phys,
            "x0": [float(v) for v in args.x0],
            "sigma": args.sigma,
            "rho": args.rho,
            "beta": args.beta,
            "rtol": args.rtol,
            "atol": args.atol,
        },
        None,
        {},
        {"dataset": out},
    )
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    dataset = read_trajectory_csv(args.data)
    cfg = TrainConfig(
        mode=args.mode,
        epochs=args.epochs,
        solver=_solver_config(args),
        optimizer=LbfgsConfig(),
        seed=args.seed,
        batch_size=args.batch_size,
    )
    params, records = training.train(dataset, cfg)
    model_out = Path(args.out_model)
    log_out = Path(args.out_log)
    net.save_checkpoint(params, model_out)
    training.write_training_log(records, log_out)
    _write_manifest(
        model_out,
        "train",
        {
            "mode": args.mode,
            "eps": args.eps,
            "safety": args.safety,
            "h_clip": args.h_clip,
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "optimizer": {
                "lr": cfg.optimizer.lr,
                "max_iter": cfg.optimizer.max_iter,
                "max_eval": cfg.optimizer.max_eval,
                "tol_grad": cfg.optimizer.tol_grad,
                "tol_change": cfg.optimizer.tol_change,
                "history": cfg.optimizer.history,
                "c1": cfg.optimizer.c1,
                "c2": cfg.optimizer.c2,
            },
        },
        args.seed,
        {"dataset": Path(args.data)},
        {"model": model_out, "log": log_out},
    )
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    params = net.load_checkpoint(args.model)
    dataset = read_trajectory_csv(args.data)
    cfg = _solver_config(args)
    traj, _ = metrics.rollout(params, dataset.points[0], args.n, cfg, dt_phys=dataset.dt_phys)
    out = Path(args.out)
    write_trajectory_csv(traj, out)
    _write_manifest(
        out,
        "generate",
        {"n": args.n, "eps": args.eps, "safety": args.safety, "h_clip": args.h_clip},
        None,
        {"model": Path(args.model), "dataset": Path(args.data)},
        {"trajectory": out},
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    dataset = read_trajectory_csv(args.data)
    rtol = float(dataset.gen_meta.get("rtol", DEFAULT_RTOL))
    atol = float(dataset.gen_meta.get("atol", DEFAULT_ATOL))
    inputs: dict[str, Path] = {"dataset": Path(args.data)}

    if args.gen is not None:
        generated = read_trajectory_csv(args.gen)
        n_steps = None
        inputs["generated"] = Path(args.gen)
        config: dict = {"n": len(generated) - 1, "source": "file"}
    else:
        params = net.load_checkpoint(args.model)
        cfg = _solver_config(args)
        generated, n_steps = metrics.rollout(
            params, dataset.points[0], args.n, cfg, dt_phys=dataset.dt_phys
        )
        inputs["model"] = Path(args.model)
        config = {
            "n": args.n,
            "eps": args.eps,
            "safety": args.safety,
            "h_clip": args.h_clip,
            "source": "rollout",
        }

    report = metrics.build_report(
        generated, dataset, LorenzParams(), n_steps, rtol=rtol, atol=atol
    )
    out = Path(args.out)
    metrics.write_report_csv(report, out)
    windows = metrics.write_report_windows(report, out)
    outputs = {"report": out}
    for w in windows:
        outputs[w.stem] = w
    _write_manifest(out, "eval", config, None, inputs, outputs)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fehlberg-node",
        description="Neural ODE lab: Lorenz'63 with an adaptive Fehlberg 3(2) solver.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a ground-truth Lorenz dataset CSV")
    p.add_argument("--out", required=True, help="output trajectory CSV path")
    p.add_argument("--n", type=int, default=5000, help="number of points (default 5000)")
    p.add_argument("--dt-phys", dest="dt_phys", type=float, default=DEFAULT_DT_PHYS)
    p.add_argument("--x0", type=_parse_x0, default=np.array([1.0, 1.0, 1.0]))
    p.add_argument("--sigma", type=float, default=10.0)
    p.add_argument("--rho", type=float, default=28.0)
    p.add_argument("--beta", type=float, default=8.0 / 3.0)
    p.add_argument("--rtol", type=float, default=DEFAULT_RTOL)
    p.add_argument("--atol", type=float, default=DEFAULT_ATOL)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True, help="training dataset CSV")
    p.add_argument("--out-model", dest="out_model", required=True, help="checkpoint JSON path")
    p.add_argument("--out-log", dest="out_log", required=True, help="epoch log CSV path")
    p.add_argument("--mode", choices=training.MODES, default="blackbox")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--safety", type=float, default=0.9)
    p.add_argument("--h-clip", dest="h_clip", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="roll out a trained model closed-loop")
    p.add_argument("--model", required=True, help="checkpoint JSON")
    p.add_argument("--data", required=True, help="dataset CSV (initial condition source)")
    p.add_argument("--out", required=True, help="output trajectory CSV")
    p.add_argument("--n", type=int, default=2600, help="points to generate (default 2600)")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--safety", type=float, default=0.9)
    p.add_argument("--h-clip", dest="h_clip", type=float, default=0.1)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="write the diagnostic report for a model or trajectory")
    p.add_argument("--data", required=True, help="reference dataset CSV")
    p.add_argument("--model", help="checkpoint JSON (rolls out internally)")
    p.add_argument("--gen", help="existing generated trajectory CSV (skips rollout)")
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--n", type=int, default=2600)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--safety", type=float, default=0.9)
    p.add_argument("--h-clip", dest="h_clip", type=float, default=0.1)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    if args.command == "eval" and (args.model is None) == (args.gen is None):
        print("eval: exactly one of --model/--gen is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (NonFiniteError, StepSizeUnderflowError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataFormatError as exc:
        print(f"input format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    raise SystemExit(main())
