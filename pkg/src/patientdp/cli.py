"""Command-line entry point.

Subcommands::

    train             run private federated training or the SGD baseline
    accountant        privacy-cost query without any training
    attack            model-inversion attack on two checkpoints
    gradcheck         analytic-vs-finite-difference gradient gate
    synth             write a synthetic patient database as CSV
    validate-metrics  re-parse a metrics file and report violations

Experiments are described by a single JSON config file (schema below);
``--set section.key=value`` flags override file keys. Every run writes a
config snapshot, line-delimited metrics, checkpoints, and a summary into
its output directory. The environment variable ``PATIENTDP_OUTPUT_ROOT``,
when set, is prepended to relative output directories.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import models
from .accounting import (
    MomentsLedger,
    eps_for_delta,
    gaussian_moment,
    selection_moment,
    accumulate,
)
from .data import generate_synthetic, load_csv, split, write_csv
from .inversion import AttackConfig, attack_report
from .metrics import MetricsWriter, validate_metrics_file
from .models import ModelSpec, gradient_check, load_checkpoint, save_checkpoint
from .training import TrainConfig, train_private, train_sgd
from .accounting import PrivacyAccountant

__all__ = ["main", "load_config", "ConfigError"]

OUTPUT_ROOT_ENV = "PATIENTDP_OUTPUT_ROOT"


class ConfigError(ValueError):
    """Invalid configuration or usage; mapped to exit code 1."""


# ----------------------------------------------------------------------
# config schema

_SCHEMA = {
    "seed": int,
    "output_dir": str,
    "model": {
        "kind": str,
        "input_dim": int,
        "hidden_dim": (int, type(None)),
        "activation": str,
    },
    "data": {
        "source": str,
        "n_patients": int,
        "per_patient": int,
        "dim": int,
        "class_sep": (int, float),
        "patient_spread": (int, float),
        "path": (str, type(None)),
        "train_fraction": (int, float),
    },
    "train": {
        "strategy": str,
        "sampling_ratio": (int, float),
        "rounds": int,
        "noise_scales": list,
        "eps_select": (int, float),
        "update_clip": (int, float),
        "objective_clip": (int, float),
        "learning_rate": (int, float),
        "local_epochs": int,
        "local_batch": int,
        "batch_size": int,
        "checkpoint_every": int,
    },
    "accountant": {"delta": (int, float, type(None))},
    "attack": {
        "steps": int,
        "step_size": (int, float),
        "tv_weight": (int, float),
        "init": str,
        "n_examples": int,
        "grid_shape": (list, type(None)),
    },
}

_DEFAULTS = {
    "model": {"hidden_dim": None, "activation": "tanh"},
    "data": {
        "n_patients": 100,
        "per_patient": 20,
        "dim": 8,
        "class_sep": 4.0,
        "patient_spread": 0.5,
        "path": None,
        "train_fraction": 0.8,
    },
    "train": {
        "strategy": "private",
        "sampling_ratio": 0.1,
        "rounds": 100,
        "noise_scales": [3.0, 1.0],
        "eps_select": math.sqrt(0.1),
        "update_clip": 5.0,
        "objective_clip": 3.0,
        "learning_rate": 0.5,
        "local_epochs": 1,
        "local_batch": 16,
        "batch_size": 32,
        "checkpoint_every": 25,
    },
    "accountant": {"delta": None},
    "attack": {
        "steps": 200,
        "step_size": 0.1,
        "tv_weight": 0.0,
        "init": "zeros",
        "n_examples": 50,
        "grid_shape": None,
    },
}


def _validate_section(name: str, raw: dict, schema: dict, defaults: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    out = dict(defaults)
    for key, value in raw.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {name}.{key}")
        expected = schema[key]
        ok = isinstance(value, expected) and not isinstance(value, bool)
        if not ok:
            raise ConfigError(
                f"config key {name}.{key} has invalid type {type(value).__name__}"
            )
        out[key] = value
    return out


def _validate_config(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]}")
    cfg: dict = {}
    if "seed" not in raw:
        raise ConfigError("config key seed is required")
    if not isinstance(raw["seed"], int) or isinstance(raw["seed"], bool):
        raise ConfigError("config key seed must be an integer")
    cfg["seed"] = raw["seed"]
    if "output_dir" in raw:
        if not isinstance(raw["output_dir"], str):
            raise ConfigError("config key output_dir must be a string")
        cfg["output_dir"] = raw["output_dir"]
    for section in ("model", "data", "train", "accountant", "attack"):
        cfg[section] = _validate_section(
            section, raw.get(section, {}), _SCHEMA[section], _DEFAULTS.get(section, {})
        )

    model = cfg["model"]
    if "kind" not in model:
        raise ConfigError("config key model.kind is required")
    if model["kind"] not in ("logistic", "mlp"):
        raise ConfigError(f"config key model.kind must be logistic or mlp, got {model['kind']!r}")
    if "input_dim" not in model:
        raise ConfigError("config key model.input_dim is required")
    if model["kind"] == "mlp" and not model.get("hidden_dim"):
        raise ConfigError("config key model.hidden_dim is required for mlp")

    data = cfg["data"]
    if data.get("source") not in ("synthetic", "csv"):
        raise ConfigError("config key data.source must be 'synthetic' or 'csv'")
    if data["source"] == "csv" and not data.get("path"):
        raise ConfigError("config key data.path is required when data.source is csv")
    if data["source"] == "synthetic" and data["dim"] != model["input_dim"]:
        raise ConfigError(
            f"data.dim ({data['dim']}) must equal model.input_dim ({model['input_dim']})"
        )
    if not (0.0 < data["train_fraction"] < 1.0):
        raise ConfigError("config key data.train_fraction must be in (0, 1)")

    train = cfg["train"]
    if train["strategy"] not in ("private", "sgd"):
        raise ConfigError("config key train.strategy must be 'private' or 'sgd'")
    if not all(isinstance(z, (int, float)) and z > 0 for z in train["noise_scales"]):
        raise ConfigError("config key train.noise_scales must be positive numbers")

    delta = cfg["accountant"]["delta"]
    if delta is not None and not (0.0 < delta < 1.0):
        raise ConfigError("config key accountant.delta must be in (0, 1)")

    if cfg["attack"]["init"] not in ("zeros", "uniform"):
        raise ConfigError("config key attack.init must be 'zeros' or 'uniform'")
    grid = cfg["attack"]["grid_shape"]
    if grid is not None and (
        len(grid) != 2 or not all(isinstance(g, int) and g > 0 for g in grid)
    ):
        raise ConfigError("config key attack.grid_shape must be [rows, cols]")
    return cfg


def _apply_overrides(raw: dict, sets: list[str]) -> dict:
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        path, _, literal = item.partition("=")
        keys = path.strip().split(".")
        try:
            value = json.loads(literal)
        except json.JSONDecodeError:
            value = literal
        node = raw
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {path!r} does not address an object")
        node[keys[-1]] = value
    return raw


def load_config(path, sets: list[str] | None = None) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if sets:
        raw = _apply_overrides(raw, sets)
    return _validate_config(raw)


def _resolve_output_dir(cfg: dict) -> Path:
    if "output_dir" not in cfg:
        raise ConfigError("config key output_dir is required for this command")
    out = Path(cfg["output_dir"])
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def _run_id(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def _build_spec(cfg: dict) -> ModelSpec:
    model = cfg["model"]
    return ModelSpec(
        kind=model["kind"],
        input_dim=model["input_dim"],
        hidden_dim=model["hidden_dim"] if model["kind"] == "mlp" else None,
        activation=model.get("activation", "tanh"),
    )


def _build_databases(cfg: dict):
    data = cfg["data"]
    if data["source"] == "synthetic":
        db = generate_synthetic(
            n_patients=data["n_patients"],
            per_patient=data["per_patient"],
            dim=data["dim"],
            class_sep=data["class_sep"],
            seed=cfg["seed"],
            patient_spread=data["patient_spread"],
        )
    else:
        db = load_csv(data["path"])
        if db.feature_dim != cfg["model"]["input_dim"]:
            raise ConfigError(
                f"csv feature dim {db.feature_dim} does not match "
                f"model.input_dim {cfg['model']['input_dim']}"
            )
    return split(db, data["train_fraction"], cfg["seed"])


def _accuracy(spec, theta, db) -> float:
    X, y = db.pooled()
    pred = models.predict_proba(spec, theta, X) >= 0.5
    return float(np.mean(pred == (y == 1.0)))


# ----------------------------------------------------------------------
# subcommands

def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    outdir = _resolve_output_dir(cfg)
    outdir.mkdir(parents=True, exist_ok=True)
    run_id = _run_id(cfg)
    snapshot = outdir / "config_snapshot.json"
    snapshot.write_text(json.dumps(cfg, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    spec = _build_spec(cfg)
    db_train, db_test = _build_databases(cfg)
    train = cfg["train"]
    strategy = train["strategy"]
    every = train["checkpoint_every"]

    def checkpoint(t: int, theta: np.ndarray) -> None:
        if every > 0 and t % every == 0:
            save_checkpoint(outdir / f"checkpoint_round_{t:05d}.txt", spec, theta,
                            seed=cfg["seed"], round=t)

    summary: dict = {
        "run_id": run_id,
        "strategy": strategy,
        "model_kind": spec.kind,
        "n_train_patients": db_train.n_patients,
        "n_test_patients": db_test.n_patients,
    }
    with MetricsWriter(outdir / "metrics.jsonl", run_id, fresh=True) as sink:
        if strategy == "private":
            tc = TrainConfig(
                sampling_ratio=train["sampling_ratio"],
                rounds=train["rounds"],
                noise_scales=tuple(train["noise_scales"]),
                eps_select=train["eps_select"],
                update_clip=train["update_clip"],
                objective_clip=train["objective_clip"],
                learning_rate=train["learning_rate"],
                local_epochs=train["local_epochs"],
                local_batch=train["local_batch"],
                seed=cfg["seed"],
            )
            delta = cfg["accountant"]["delta"]
            if delta is None:
                delta = db_train.n_patients ** -1.1
            accountant = PrivacyAccountant(
                sampling_ratio=tc.sampling_ratio,
                noise_scales=tc.noise_scales,
                eps_select=tc.eps_select,
                target_delta=delta,
            )
            round_logs: list[dict] = []

            def sink_and_keep(record: dict) -> None:
                round_logs.append(record)
                sink(record)

            theta = train_private(
                spec, db_train, tc, accountant,
                metrics_sink=sink_and_keep, on_round=checkpoint,
            )
            spend = accountant.spend()
            z_counts: dict[str, int] = {}
            for r in round_logs:
                if not r["skipped"]:
                    key = repr(r["selected_z"])
                    z_counts[key] = z_counts.get(key, 0) + 1
            summary.update(
                rounds=tc.rounds,
                skipped_rounds=sum(1 for r in round_logs if r["skipped"]),
                epsilon=spend.epsilon,
                delta=spend.delta,
                minimizing_lambda=spend.minimizing_lambda,
                selected_z_counts=z_counts,
            )
        else:
            theta = train_sgd(
                spec, db_train,
                rounds=train["rounds"],
                batch_size=min(train["batch_size"], db_train.total_examples),
                gamma=train["learning_rate"],
                metrics_sink=sink, on_round=checkpoint,
                seed=cfg["seed"],
            )
            summary.update(rounds=train["rounds"])

        save_checkpoint(outdir / "checkpoint_final.txt", spec, theta,
                        seed=cfg["seed"], round=train["rounds"])
        Xtr, ytr = db_train.pooled()
        Xte, yte = db_test.pooled()
        summary["train_accuracy"] = _accuracy(spec, theta, db_train)
        summary["test_accuracy"] = _accuracy(spec, theta, db_test)
        summary["train_loss"] = models.loss(spec, theta, Xtr, ytr)
        summary["test_loss"] = models.loss(spec, theta, Xte, yte)
        sink({"kind": "summary", **summary})

    (outdir / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    for key in ("run_id", "strategy", "train_accuracy", "test_accuracy"):
        print(f"{key}: {summary[key]}")
    if "epsilon" in summary:
        print(f"epsilon: {summary['epsilon']:.6f} (delta={summary['delta']:.3e})")
    return 0


def cmd_accountant(args) -> int:
    if (args.z is None) == (args.scales is None):
        raise ConfigError("exactly one of --z (fixed) or --scales (adaptive) is required")
    if not (0.0 < args.q <= 1.0):
        raise ConfigError(f"--q must be in (0, 1], got {args.q}")
    if not (0.0 < args.delta < 1.0):
        raise ConfigError(f"--delta must be in (0, 1), got {args.delta}")
    if args.eps_select < 0:
        raise ConfigError(f"--eps-select must be non-negative, got {args.eps_select}")

    if args.z is not None:
        if args.rounds is None:
            raise ConfigError("--rounds is required with a fixed --z")
        zs = [args.z] * args.rounds
    else:
        if args.trace is None:
            raise ConfigError("--trace with one selected scale per line is required "
                              "for an adaptive --scales query")
        try:
            lines = Path(args.trace).read_text(encoding="utf-8").split()
        except OSError as exc:
            raise ConfigError(f"cannot read trace {args.trace}: {exc}") from exc
        try:
            zs = [float(v) for v in lines]
        except ValueError as exc:
            raise ConfigError(f"trace {args.trace}: non-numeric entry ({exc})") from exc
        if args.rounds is not None and args.rounds != len(zs):
            raise ConfigError(
                f"--rounds {args.rounds} does not match trace length {len(zs)}"
            )
    if any(z <= 0 for z in zs):
        raise ConfigError("noise scales must be positive")

    ledger = MomentsLedger()
    for z in zs:
        bounds = [
            gaussian_moment(args.q, z, lam)
            + selection_moment(args.q, args.eps_select, lam)
            for lam in ledger.lambdas
        ]
        accumulate(ledger, bounds)
    spend = eps_for_delta(ledger, args.delta)
    print(f"epsilon: {spend.epsilon:.6f}")
    print(f"minimizing_lambda: {spend.minimizing_lambda}")
    print(f"delta: {spend.delta:.6e}")
    print(f"rounds: {len(zs)}")
    return 0


def cmd_attack(args) -> int:
    cfg = load_config(args.config, args.set)
    if cfg["model"]["kind"] != "mlp":
        raise ConfigError("attack requires model.kind = mlp (a feature layer)")
    outdir = _resolve_output_dir(cfg)
    outdir.mkdir(parents=True, exist_ok=True)
    run_id = _run_id(cfg)
    spec = _build_spec(cfg)
    for path in (args.private, args.nonprivate):
        if not Path(path).exists():
            raise RuntimeError(f"checkpoint not found: {path}")
    loaded = {}
    for tag, path in (("private", args.private), ("nonprivate", args.nonprivate)):
        ck_spec, theta, _ = load_checkpoint(path)
        if ck_spec != spec:
            raise RuntimeError(
                f"checkpoint {path} was trained with {ck_spec}, config expects {spec}"
            )
        loaded[tag] = theta
    db_train, db_test = _build_databases(cfg)
    atk = cfg["attack"]
    acfg = AttackConfig(
        steps=atk["steps"],
        step_size=atk["step_size"],
        tv_weight=atk["tv_weight"],
        init=atk["init"],
        seed=cfg["seed"],
        grid_shape=tuple(atk["grid_shape"]) if atk["grid_shape"] else None,
    )
    records = attack_report(
        spec, loaded["private"], loaded["nonprivate"],
        db_train, db_test, acfg, n_examples=atk["n_examples"],
    )
    with MetricsWriter(outdir / "attack_report.jsonl", run_id, fresh=True) as sink:
        for record in records:
            sink(record)
    print(f"{'group':<8}{'model':<14}{'n':>5}{'mean PSNR (dB)':>18}{'mean reduction':>17}")
    for record in records:
        if record["kind"] == "summary":
            print(
                f"{record['group']:<8}{record['model_tag']:<14}{record['n_examples']:>5}"
                f"{record['mean_psnr_db']:>18.3f}{record['mean_objective_reduction']:>17.4f}"
            )
    return 0


def cmd_gradcheck(args) -> int:
    spec = ModelSpec(
        kind=args.kind,
        input_dim=args.input_dim,
        hidden_dim=args.hidden_dim if args.kind == "mlp" else None,
        activation=args.activation,
    )
    worst = gradient_check(spec, args.seed, n_draws=args.draws, corrupt=args.corrupt)
    print(f"max relative error over {args.draws} draws: {worst:.3e}")
    if worst < 1e-5:
        print("gradcheck: PASS")
        return 0
    print("gradcheck: FAIL (threshold 1e-5)")
    return 2


def cmd_synth(args) -> int:
    db = generate_synthetic(
        n_patients=args.n_patients,
        per_patient=args.per_patient,
        dim=args.dim,
        class_sep=args.class_sep,
        seed=args.seed,
        patient_spread=args.patient_spread,
    )
    write_csv(db, args.out)
    print(f"wrote {db.n_patients} patients x {args.per_patient} examples "
          f"(dim {db.feature_dim}) to {args.out}")
    return 0


def cmd_validate_metrics(args) -> int:
    problems = validate_metrics_file(args.path)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        print(f"{args.path}: INVALID ({len(problems)} problem(s))", file=sys.stderr)
        return 1
    with open(args.path, "r", encoding="utf-8") as fh:
        count = sum(1 for line in fh if line.strip())
    print(f"{args.path}: ok ({count} records)")
    return 0


# ----------------------------------------------------------------------
# parser / dispatch

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors map to exit code 1, not argparse's 2
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="patientdp", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. --set train.rounds=10")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("accountant", help="privacy-cost query (no training)")
    p.add_argument("--q", type=float, required=True, help="patient sampling ratio")
    p.add_argument("--z", type=float, default=None, help="fixed noise scale")
    p.add_argument("--scales", default=None,
                   help="comma-separated adaptive scale set (requires --trace)")
    p.add_argument("--trace", default=None,
                   help="file with one selected scale per round")
    p.add_argument("--eps-select", type=float, default=0.0,
                   help="per-round selection budget (0 = no selection charge)")
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--delta", type=float, required=True)
    p.set_defaults(func=cmd_accountant)

    p = sub.add_parser("attack", help="model-inversion attack on two checkpoints")
    p.add_argument("--config", required=True)
    p.add_argument("--private", required=True, help="privately trained checkpoint")
    p.add_argument("--nonprivate", required=True, help="baseline checkpoint")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("gradcheck", help="gradient correctness gate")
    p.add_argument("--kind", choices=("logistic", "mlp"), required=True)
    p.add_argument("--input-dim", type=int, default=6)
    p.add_argument("--hidden-dim", type=int, default=5)
    p.add_argument("--activation", choices=("tanh", "linear"), default="tanh")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--draws", type=int, default=100)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic patient database CSV")
    p.add_argument("--n-patients", type=int, required=True)
    p.add_argument("--per-patient", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--class-sep", type=float, default=4.0)
    p.add_argument("--patient-spread", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate-metrics", help="check a metrics file")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
