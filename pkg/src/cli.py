"""
Command line entry point.

    python -m src.cli run --preset desk --property ascent --seed 0 --seed 1
    python -m src.cli simulate --config experiment.json
    python -m src.cli attack runs/desk/20260101T000000000000_seed0
    python -m src.cli export runs/desk f1
    python -m src.cli sweep --field local_size --values 10 20 40
    python -m src.cli oracle --suite brute_force
"""
import argparse
import logging
import sys
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from . import harness
from .config import LOG_LEVEL, RUNS_DIR, ExitCode, GammaMode, InitStrategy, Method, PropertyKind, Selection
from .errors import FedProbeError
from .oracles import SUITES, run_oracle_suites
from .schemas import ExperimentConfig

logger = logging.getLogger(__name__)

# flag name -> (type, help); each maps onto the ExperimentConfig field of the same name
CONFIG_FLAGS = {
    "rounds": (int, "federation rounds n"),
    "clients": (int, "number of clients N"),
    "fraction": (float, "participation fraction C"),
    "phi": (float, "fraction of positive clients"),
    "positives": (int, "exact number of positive clients"),
    "eta_global": (float, "client learning rate"),
    "local_epochs": (int, "local epochs per round"),
    "local_size": (int, "samples per client"),
    "batch_size": (int, "local batch size"),
    "hidden_dim": (int, "classifier hidden width"),
    "fixed_point_bits": (int, "fractional bits of the masked encoding"),
    "aux_size": (int, "attacker auxiliary samples"),
    "eval_size": (int, "held-out evaluation samples"),
    "detector_updates": (int, "simulated updates per detector"),
    "detector_epochs": (int, "detector training epochs"),
    "eta_detector": (float, "detector step size"),
    "detector_l2": (float, "detector L2 penalty"),
    "feature_count": (int, "detector features t"),
    "lam": (float, "ridge penalty"),
    "threshold": (float, "decision threshold on tau"),
    "eval_every": (int, "evaluation cadence in rounds"),
}

# section -> field -> (type, help); flags are --<section>-<field>
NESTED_FLAGS = {
    "dataset": {
        "dim": (int, "synthetic feature dimension"),
        "separation": (float, "distance between the synthetic class means"),
    },
    "prolin": {
        "init": (InitStrategy, "starting point"),
        "learning_rate": (float, "step on the features (preconditioned units)"),
        "tau_learning_rate": (float, "step on tau"),
        "momentum": (float, "heavy-ball momentum"),
        "max_iters": (int, "iteration cap"),
        "gamma_mode": (GammaMode, "fixed weights or balanced by gradient norm"),
        "gamma1": (float, "likelihood weight"),
        "gamma2": (float, "regression tie weight"),
        "gamma3": (float, "aggregate tie weight"),
        "selection": (Selection, "threshold or top-k labelling"),
    },
}


def _add_flag(parser: argparse.ArgumentParser, flag: str, dest: str, kind, help_text: str) -> None:
    if isinstance(kind, type) and issubclass(kind, Enum):
        parser.add_argument(flag, dest=dest, choices=[member.value for member in kind], help=help_text)
    else:
        parser.add_argument(flag, dest=dest, type=kind, help=help_text)


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON experiment config")
    parser.add_argument("--preset", choices=["desk", "full"], default="desk")
    parser.add_argument("--name", type=str, help="experiment name (archive subdirectory)")
    parser.add_argument("--property", choices=[kind.value for kind in PropertyKind])
    parser.add_argument("--method", action="append", choices=[method.value for method in Method],
                        help="repeatable; default all methods")
    parser.add_argument("--seed", type=int, action="append", help="repeatable")
    parser.add_argument("--root", type=Path, help="archive root (default $FEDPROBE_RUNS_DIR/<name>)")
    parser.add_argument("--no-secure-aggregation", action="store_true")
    parser.add_argument("--keep-ciphertexts", action="store_true")
    parser.add_argument("--target-label-flip", action="store_true", help="give the target sample another label")
    parser.add_argument("--no-prolin-normalize", action="store_true", help="solve PROLIN in raw feature units")
    for flag, (kind, help_text) in CONFIG_FLAGS.items():
        _add_flag(parser, f"--{flag.replace('_', '-')}", flag, kind, help_text)
    for section, flags in NESTED_FLAGS.items():
        for flag, (kind, help_text) in flags.items():
            _add_flag(parser, f"--{section}-{flag.replace('_', '-')}", f"{section}_{flag}", kind, help_text)


def _nested_overrides(args: argparse.Namespace) -> dict[str, dict]:
    nested = {}
    for section, flags in NESTED_FLAGS.items():
        values = {flag: getattr(args, f"{section}_{flag}") for flag in flags}
        values = {flag: value for flag, value in values.items() if value is not None}
        if values:
            nested[section] = values
    if args.no_prolin_normalize:
        nested.setdefault("prolin", {})["normalize"] = False
    return nested


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Preset or JSON file first, then explicit flags on top."""
    overrides = {flag: getattr(args, flag) for flag in CONFIG_FLAGS if getattr(args, flag) is not None}
    if args.name:
        overrides["name"] = args.name
    if args.property:
        overrides["property"] = PropertyKind(args.property)
    if args.method:
        overrides["methods"] = [Method(value) for value in args.method]
    if args.seed:
        overrides["seeds"] = args.seed
    if args.no_secure_aggregation:
        overrides["secure_aggregation"] = False
    if args.keep_ciphertexts:
        overrides["keep_ciphertexts"] = True
    if args.target_label_flip:
        overrides["target_label_flip"] = True

    if args.config:
        base = ExperimentConfig.model_validate_json(args.config.read_text()).model_dump()
    elif args.preset == "full":
        base = ExperimentConfig.full().model_dump()
    else:
        base = ExperimentConfig.desk().model_dump()
    for section, values in _nested_overrides(args).items():
        base[section] = {**base[section], **values}
    return ExperimentConfig.model_validate({**base, **overrides})


def cmd_run(args: argparse.Namespace) -> int:
    config = build_config(args)
    result = harness.run_experiment(config, args.root)
    for summary in harness.summarize(result.metrics):
        print(
            f"{summary.method.value:>8}  mean F1 {summary.mean_f1:.3f}  max {summary.max_f1:.3f} "
            f"@ round {summary.max_f1_round}  converged {summary.convergence_round}"
        )
    print(f"Archive: {result.root}")
    return ExitCode.OK


def cmd_simulate(args: argparse.Namespace) -> int:
    config = build_config(args)
    root = args.root or Path(RUNS_DIR) / config.name
    root.mkdir(parents=True, exist_ok=True)
    for seed in config.seeds:
        simulation = harness.simulate(config, seed, root / harness.run_name_for(seed))
        print(simulation.run_dir)
    return ExitCode.OK


def cmd_attack(args: argparse.Namespace) -> int:
    evaluation = harness.attack_existing(args.run_dir)
    final_round = max(row.round for row in evaluation.metrics)
    for row in evaluation.metrics:
        if row.round == final_round:
            print(f"{row.method.value:>8}  round {row.round}  P {row.precision:.3f}  R {row.recall:.3f}  F1 {row.f1:.3f}")
    return ExitCode.OK


def cmd_export(args: argparse.Namespace) -> int:
    methods = [Method(value) for value in args.method] if args.method else None
    paths = harness.export_plot_data(args.root, args.selector, args.out, args.round, methods)
    for path in paths:
        print(path)
    return ExitCode.OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = build_config(args)
    results = harness.run_sweep(config, args.field, args.values, args.root)
    for result in results:
        print(result.root)
    for summary in harness.summarize([row for result in results for row in result.metrics]):
        print(f"{summary.variant or '':>16} {summary.method.value:>8}  mean F1 {summary.mean_f1:.3f}")
    return ExitCode.OK


def cmd_oracle(args: argparse.Namespace) -> int:
    results = run_oracle_suites(args.suite)
    for result in results:
        print(f"{'ok' if result.passed else 'MISMATCH':>8}  {result.name}: {result.detail}")
    return ExitCode.OK if all(result.passed for result in results) else ExitCode.ORACLE_MISMATCH


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Property inference against secure-aggregation federated learning")
    parser.add_argument("--log-level", default=LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate and attack every seed, then aggregate metrics")
    _add_config_arguments(run)
    run.set_defaults(func=cmd_run)

    simulate = sub.add_parser("simulate", help="run the federation only and archive the attacker view")
    _add_config_arguments(simulate)
    simulate.set_defaults(func=cmd_simulate)

    attack = sub.add_parser("attack", help="reconstruct properties from an archived run")
    attack.add_argument("run_dir", type=Path)
    attack.set_defaults(func=cmd_attack)

    export = sub.add_parser("export", help="write plot data from an experiment archive")
    export.add_argument("root", type=Path)
    export.add_argument("selector", choices=harness.SELECTORS)
    export.add_argument("--out", type=Path)
    export.add_argument("--round", type=int, action="append", help="rounds for the dist selector")
    export.add_argument("--method", action="append", choices=[method.value for method in Method])
    export.set_defaults(func=cmd_export)

    sweep = sub.add_parser("sweep", help="repeat an experiment over local dataset sizes or client counts")
    _add_config_arguments(sweep)
    sweep.add_argument("--field", choices=harness.SWEEP_FIELDS, required=True)
    sweep.add_argument("--values", type=int, nargs="+", required=True)
    sweep.set_defaults(func=cmd_sweep)

    oracle = sub.add_parser("oracle", help="run the verification suites")
    oracle.add_argument("--suite", action="append", choices=sorted(SUITES))
    oracle.set_defaults(func=cmd_oracle)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )
    try:
        return int(args.func(args))
    except FedProbeError as exc:
        logger.error(f"{args.command} failed: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return ExitCode.STAGE_FAILURE
    except (ValidationError, ValueError) as exc:
        logger.error(f"{args.command}: invalid configuration: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return ExitCode.BAD_CONFIG


if __name__ == "__main__":
    sys.exit(main())
