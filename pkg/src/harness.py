"""
End-to-end experiments: simulate a federation per seed, train the round
detectors, run every requested reconstruction method on growing prefixes of
rounds, score them against the planted roles and archive everything.

Run directory layout (one per seed, named <UTC timestamp>_seed<seed>):

    manifest.json        config, seed, roles
    attacker_view.npz    A, aggregates, snapshots, participant ids
    ground_truth.npz     per-client updates (oracles only)
    masked/              ciphertexts per round, when kept
    detectors.npz/.csv   alpha, head, beta and feature distributions per round
    metrics.csv          method, round, precision, recall, f1, seed
    decisions.csv        tau and label per client for every evaluation
    prolin_trace.csv     objective trace of the last PROLIN solve

The experiment root additionally holds archive.db and metrics_mean.csv.
"""
import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import crud
from .classifier import GlobalModel, ModelSpec
from .config import ARCHIVE_DB_NAME, CSV_FLOAT_FORMAT, DATABASE_URL_OVERRIDE, RUNS_DIR, WORKERS, Method, PropertyKind
from .data import ClientDataset, TaskData, partition_task, synthetic_task
from .database import Database
from .detector import (
    DetectorModel,
    FeatureDistributions,
    build_training_set,
    confidence,
    fit_distributions,
    train_detector,
)
from .errors import ArchiveNotFoundError, DimensionError, MissingSeriesError, StageError
from .fedsim import (
    AttackerView,
    FederationResult,
    FederationSettings,
    assign_roles,
    plant_target,
    run_federation,
)
from .idx import load_idx_dataset
from .prolin import ProlinProblem, ProlinSolution, solve
from .reconstruct import (
    Decision,
    baseline_reconstruct,
    feature_aggregates,
    ols_feature_reconstruct,
    reg_feature_reconstruct,
)
from .schemas import ExperimentConfig, MethodSummary, MetricRow, RunManifest
from .secagg import pack_round

logger = logging.getLogger(__name__)

CONVERGENCE_F1 = 0.8


@contextmanager
def stage(name: str):
    """Attach the pipeline stage name to any failure raised inside the block."""
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        where = getattr(exc, "stage", None) or name
        logger.error(f"Stage {where} failed: {exc}")
        raise StageError(where, exc) from exc


def f1_score(predicted, truth) -> tuple[float, float, float]:
    """(precision, recall, f1); every 0/0 ratio counts as 0."""
    predicted = np.asarray(predicted).astype(bool).reshape(-1)
    truth = np.asarray(truth).astype(bool).reshape(-1)
    if predicted.shape != truth.shape:
        raise DimensionError(f"{predicted.shape[0]} predictions for {truth.shape[0]} clients")
    true_positive = int(np.sum(predicted & truth))
    precision = true_positive / int(predicted.sum()) if predicted.any() else 0.0
    recall = true_positive / int(truth.sum()) if truth.any() else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


# -------- Seeds and task --------
@dataclass
class SeedStreams:
    task: np.random.SeedSequence
    roles: np.random.SeedSequence
    federation: int
    attack: int

    @classmethod
    def from_seed(cls, seed: int) -> "SeedStreams":
        task, roles, federation, attack = np.random.SeedSequence(seed).spawn(4)
        return cls(
            task=task,
            roles=roles,
            federation=int(federation.generate_state(1)[0]),
            attack=int(attack.generate_state(1)[0]),
        )


def prepare_task(config: ExperimentConfig, seed: int) -> TaskData:
    """Client, auxiliary and evaluation data plus the target sample; deterministic in the seed."""
    rng = np.random.default_rng(SeedStreams.from_seed(seed).task)
    spec = config.dataset
    if spec.kind == "idx":
        features, labels = load_idx_dataset(spec.images_path, spec.labels_path)
        return partition_task(
            features, labels, config.clients, config.local_size, config.aux_size, config.eval_size,
            rng, classes=spec.classes, target_label_flip=config.target_label_flip,
        )
    return synthetic_task(
        config.clients, config.local_size, config.aux_size, config.eval_size,
        spec.dim, spec.separation, rng, target_label_flip=config.target_label_flip,
    )


def model_spec_for(config: ExperimentConfig, task: TaskData) -> ModelSpec:
    return ModelSpec(input_dim=task.input_dim, hidden_dim=config.hidden_dim, classes=task.classes)


def run_name_for(seed: int, variant: Optional[str] = None) -> str:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%f")
    tag = f"_{variant}" if variant else ""
    return f"{stamp}{tag}_seed{seed}"


# -------- Simulation --------
@dataclass
class Simulation:
    manifest: RunManifest
    task: TaskData
    federation: FederationResult
    run_dir: Path


def simulate(config: ExperimentConfig, seed: int, run_dir: Path, variant: Optional[str] = None) -> Simulation:
    """Run the federation for one seed and write manifest, attacker view and ground truth."""
    streams = SeedStreams.from_seed(seed)
    run_dir.mkdir(parents=True, exist_ok=True)

    with stage("setup"):
        task = prepare_task(config, seed)
        roles = assign_roles(
            config.clients, config.resolved_positives, config.property, np.random.default_rng(streams.roles)
        )
        datasets = task.clients
        if config.property is PropertyKind.MEMBERSHIP:
            datasets = plant_target(datasets, roles, task.target_x, task.target_y)
        spec = model_spec_for(config, task)
        initial = GlobalModel.initialize(spec, np.random.default_rng([streams.federation, 0]))

    manifest = RunManifest(
        config=config,
        seed=seed,
        run_name=run_dir.name,
        created_at=datetime.now(timezone.utc),
        roles=roles,
        positive_clients=[i for i, role in enumerate(roles) if role.is_positive],
        parameter_count=spec.size,
        variant=variant,
    )
    (run_dir / "manifest.json").write_text(manifest.model_dump_json(indent=2))

    settings = FederationSettings(
        rounds=config.rounds,
        clients=config.clients,
        fraction=config.fraction,
        eta=config.eta_global,
        epochs=config.local_epochs,
        batch_size=config.batch_size,
        secure_aggregation=config.secure_aggregation,
        fixed_point_bits=config.fixed_point_bits,
        keep_ciphertexts=config.keep_ciphertexts,
        workers=WORKERS,
    )
    with stage("federation"):
        federation = run_federation(settings, initial, datasets, roles, streams.federation)

    with stage("archive"):
        federation.view.save(run_dir / "attacker_view.npz")
        federation.truth.save(run_dir / "ground_truth.npz")
        if federation.ciphertexts:
            masked_dir = run_dir / "masked"
            masked_dir.mkdir(exist_ok=True)
            for r, masked in federation.ciphertexts.items():
                (masked_dir / f"round_{r:04d}.bin").write_bytes(pack_round(masked))
    logger.info(f"Simulated {run_dir.name}: positives {manifest.positive_clients}")
    return Simulation(manifest=manifest, task=task, federation=federation, run_dir=run_dir)


# -------- Detectors --------
@dataclass
class RoundDetectors:
    detectors: list[DetectorModel]
    distributions: list[FeatureDistributions]
    eval_accuracy: list[float]


def _train_round(
    config: ExperimentConfig,
    aux: ClientDataset,
    view: AttackerView,
    target: tuple[np.ndarray, int],
    attack_seed: int,
    r: int,
) -> tuple[DetectorModel, FeatureDistributions, float]:
    dataset = build_training_set(
        aux,
        view.snapshot(r),
        config.property,
        eta=config.eta_global,
        batch_size=config.batch_size,
        count=config.resolved_detector_updates,
        seed=[attack_seed, r, 0],
        target=target,
        samples_per_update=config.local_size,
        epochs=config.local_epochs,
    )
    detector = train_detector(
        dataset,
        round_index=r,
        eta_detector=config.eta_detector,
        epochs=config.detector_epochs,
        seed=[attack_seed, r, 1],
        feature_count=config.feature_count,
        l2=config.detector_l2,
    )
    eval_updates, eval_labels = dataset.eval
    distributions = fit_distributions(detector, eval_updates, eval_labels)
    accuracy = float(np.mean((confidence(detector, eval_updates) > 0.5) == eval_labels))
    return detector, distributions, accuracy


def train_round_detectors(
    config: ExperimentConfig,
    task: TaskData,
    view: AttackerView,
    attack_seed: int,
) -> RoundDetectors:
    """One detector per round, each trained on that round's snapshot only."""
    aux = ClientDataset(client_id=-1, features=task.aux_features, labels=task.aux_labels)
    target = (task.target_x, task.target_y)
    rounds = range(view.rounds)
    if WORKERS > 1:
        with ThreadPoolExecutor(max_workers=WORKERS) as executor:
            results = list(executor.map(lambda r: _train_round(config, aux, view, target, attack_seed, r), rounds))
    else:
        results = [_train_round(config, aux, view, target, attack_seed, r) for r in rounds]
    logger.info(
        f"Trained {len(results)} detectors, mean eval accuracy {np.mean([acc for _, _, acc in results]):.3f}"
    )
    return RoundDetectors(
        detectors=[d for d, _, _ in results],
        distributions=[f for _, f, _ in results],
        eval_accuracy=[acc for _, _, acc in results],
    )


# -------- Evaluation --------
@dataclass
class Evaluation:
    metrics: list[MetricRow] = field(default_factory=list)
    decisions: list[dict] = field(default_factory=list)
    last_solution: Optional[ProlinSolution] = None


def evaluate_prefix(
    config: ExperimentConfig,
    view: AttackerView,
    bank: RoundDetectors,
) -> tuple[dict[Method, Decision], Optional[ProlinSolution]]:
    """Run every requested method on the rounds of `view`."""
    m = view.rounds
    detectors = bank.detectors[:m]
    distributions = bank.distributions[:m]
    decisions: dict[Method, Decision] = {}
    solution = None

    if Method.BASELINE in config.methods:
        with stage("baseline"):
            _, decisions[Method.BASELINE] = baseline_reconstruct(view, detectors, config.threshold)

    with stage("feature_aggregates"):
        agg = feature_aggregates(view, detectors, distributions)
    if Method.OLS in config.methods:
        with stage("ols"):
            _, decisions[Method.OLS] = ols_feature_reconstruct(agg, view.A, detectors, config.threshold)
    if Method.REG in config.methods or Method.PROLIN in config.methods:
        with stage("reg"):
            reg_profile, reg_decision = reg_feature_reconstruct(agg, view.A, detectors, config.lam, config.threshold)
        if Method.REG in config.methods:
            decisions[Method.REG] = reg_decision
    if Method.PROLIN in config.methods:
        with stage("prolin"):
            problem = ProlinProblem.from_reconstruction(agg, view.A, reg_profile.values, distributions, detectors)
            params = config.prolin.to_params(config.threshold, config.resolved_positives)
            solution = solve(problem, config.prolin.init, params)
            decisions[Method.PROLIN] = Decision(tau=solution.tau, labels=solution.labels, method=Method.PROLIN)
    return decisions, solution


def evaluate(
    config: ExperimentConfig,
    view: AttackerView,
    bank: RoundDetectors,
    truth: np.ndarray,
    seed: int,
    variant: Optional[str] = None,
) -> Evaluation:
    result = Evaluation()
    for m in config.evaluation_rounds():
        decisions, solution = evaluate_prefix(config, view.prefix(m), bank)
        if solution is not None:
            result.last_solution = solution
        for method in config.methods:
            decision = decisions[method]
            precision, recall, f1 = f1_score(decision.labels, truth)
            result.metrics.append(MetricRow(
                method=method, round=m, precision=precision, recall=recall, f1=f1, seed=seed, variant=variant,
            ))
            for i in range(truth.shape[0]):
                result.decisions.append({
                    "method": method.value,
                    "round": m,
                    "client": i,
                    "tau": float(decision.tau[i]),
                    "label": int(decision.labels[i]),
                    "truth": int(truth[i]),
                })
        logger.debug(
            f"Round {m}: " + ", ".join(f"{row.method.value} F1={row.f1:.3f}" for row in result.metrics[-len(config.methods):])
        )
    return result


# -------- Files --------
def _format(value):
    if isinstance(value, float):
        return CSV_FLOAT_FORMAT % value
    if isinstance(value, Method):
        return value.value
    return "" if value is None else value


def write_csv(path: Path, fieldnames: Sequence[str], rows: Iterable[dict]) -> Path:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _format(row[key]) for key in fieldnames})
    return path


def detector_rows(bank: RoundDetectors) -> list[dict]:
    return [
        {
            "round": r + 1,
            "alpha_norm": float(np.linalg.norm(detector.alpha)),
            "beta": float(detector.beta),
            "mu_plus": float(dist.mu_plus[0]),
            "sigma_plus": float(dist.sigma_plus[0]),
            "mu_minus": float(dist.mu_minus[0]),
            "sigma_minus": float(dist.sigma_minus[0]),
            "ovl": dist.ovl,
            "weight": dist.weight,
            "eval_accuracy": accuracy,
        }
        for r, (detector, dist, accuracy) in enumerate(zip(bank.detectors, bank.distributions, bank.eval_accuracy))
    ]


def trace_rows(solution: Optional[ProlinSolution]) -> list[dict]:
    if solution is None:
        return []
    return [
        {"iteration": k, "objective": float(value), "ml": float(ml), "reg": float(reg), "lstsq": float(lstsq)}
        for k, (value, (ml, reg, lstsq)) in enumerate(zip(solution.loss_trace, solution.term_trace))
    ]


def save_detectors(path: Path, bank: RoundDetectors) -> None:
    np.savez_compressed(
        path,
        alpha=np.stack([d.alpha for d in bank.detectors]),
        head=np.stack([d.head for d in bank.detectors]),
        beta=np.array([d.beta for d in bank.detectors]),
        mu_plus=np.stack([f.mu_plus for f in bank.distributions]),
        sigma_plus=np.stack([f.sigma_plus for f in bank.distributions]),
        mu_minus=np.stack([f.mu_minus for f in bank.distributions]),
        sigma_minus=np.stack([f.sigma_minus for f in bank.distributions]),
        ovl=np.stack([f.ovl_per_feature for f in bank.distributions]),
    )


METRIC_FIELDS = ["method", "round", "precision", "recall", "f1", "seed"]
DECISION_FIELDS = ["method", "round", "client", "tau", "label", "truth"]
DETECTOR_FIELDS = [
    "round", "alpha_norm", "beta", "mu_plus", "sigma_plus", "mu_minus", "sigma_minus", "ovl", "weight", "eval_accuracy",
]
TRACE_FIELDS = ["iteration", "objective", "ml", "reg", "lstsq"]


# -------- Attack --------
def run_attack(
    config: ExperimentConfig,
    seed: int,
    view: AttackerView,
    task: TaskData,
    truth: np.ndarray,
    run_dir: Path,
    variant: Optional[str] = None,
) -> Evaluation:
    """Train detectors and evaluate all methods; writes the result files of the run."""
    streams = SeedStreams.from_seed(seed)
    with stage("detector"):
        bank = train_round_detectors(config, task, view, streams.attack)
    save_detectors(run_dir / "detectors.npz", bank)
    write_csv(run_dir / "detectors.csv", DETECTOR_FIELDS, detector_rows(bank))

    evaluation = evaluate(config, view, bank, truth, seed, variant)
    write_csv(run_dir / "metrics.csv", METRIC_FIELDS, (row.model_dump() for row in evaluation.metrics))
    write_csv(run_dir / "decisions.csv", DECISION_FIELDS, evaluation.decisions)
    write_csv(run_dir / "prolin_trace.csv", TRACE_FIELDS, trace_rows(evaluation.last_solution))

    with Database.session(run_dir.parent) as db:
        manifest = RunManifest.model_validate_json((run_dir / "manifest.json").read_text())
        replaced = crud.replace_runs(db, manifest)
        if replaced:
            logger.info(f"Replacing {replaced} archived run(s) of seed {seed} in {run_dir.parent}")
        run = crud.create_run(db, manifest)
        crud.add_metric_rows(db, run, evaluation.metrics)
        crud.add_detector_rows(db, run, detector_rows(bank))
        crud.add_decision_rows(db, run, evaluation.decisions)
        crud.add_trace_rows(db, run, trace_rows(evaluation.last_solution))
        crud.finish_run(db, run)
    return evaluation


def attack_existing(run_dir: Path) -> Evaluation:
    """
    Re-run the attack on an archived run. Only the attacker view is loaded;
    auxiliary data and target are regenerated from the manifest seed.
    """
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise ArchiveNotFoundError(f"no manifest in {run_dir}", stage="attack")
    manifest = RunManifest.model_validate_json(manifest_path.read_text())
    with stage("load"):
        view = AttackerView.load(run_dir / "attacker_view.npz")
        task = prepare_task(manifest.config, manifest.seed)
    truth = np.array([role.is_positive for role in manifest.roles], dtype=np.int64)

    return run_attack(manifest.config, manifest.seed, view, task, truth, run_dir, manifest.variant)


def _record_failure(root: Path, run_dir: Path, exc: StageError) -> None:
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        return
    manifest = RunManifest.model_validate_json(manifest_path.read_text())
    with Database.session(root) as db:
        crud.replace_runs(db, manifest)
        run = crud.create_run(db, manifest)
        crud.finish_run(db, run, failed_stage=exc.stage)


# -------- Experiments --------
@dataclass
class ExperimentResult:
    root: Path
    run_dirs: list[Path]
    metrics: list[MetricRow]


def run_seed(config: ExperimentConfig, seed: int, root: Path, variant: Optional[str] = None) -> tuple[Path, Evaluation]:
    run_dir = root / run_name_for(seed, variant)
    try:
        simulation = simulate(config, seed, run_dir, variant)
        truth = np.array([role.is_positive for role in simulation.manifest.roles], dtype=np.int64)
        evaluation = run_attack(config, seed, simulation.federation.view, simulation.task, truth, run_dir, variant)
    except StageError as exc:
        _record_failure(root, run_dir, exc)
        raise
    return run_dir, evaluation


def mean_metric_rows(rows: Sequence[MetricRow]) -> list[dict]:
    """Average precision, recall and F1 over seeds per (variant, method, round)."""
    groups: dict[tuple, list[MetricRow]] = {}
    for row in rows:
        groups.setdefault((row.variant or "", row.method.value, row.round), []).append(row)
    return [
        {
            "variant": variant,
            "method": method,
            "round": rnd,
            "precision": float(np.mean([row.precision for row in group])),
            "recall": float(np.mean([row.recall for row in group])),
            "mean_f1": float(np.mean([row.f1 for row in group])),
            "std_f1": float(np.std([row.f1 for row in group])),
            "seeds": len(group),
        }
        for (variant, method, rnd), group in sorted(groups.items())
    ]


MEAN_FIELDS = ["variant", "method", "round", "precision", "recall", "mean_f1", "std_f1", "seeds"]


def run_experiment(
    config: ExperimentConfig,
    root: Optional[Path] = None,
    variant: Optional[str] = None,
) -> ExperimentResult:
    """Every seed of the config, then the seed-averaged metrics."""
    root = Path(root) if root is not None else Path(RUNS_DIR) / config.name
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(config.model_dump_json(indent=2))
    logger.info(
        f"Experiment {config.name}: property {config.property.value}, {len(config.seeds)} seeds, "
        f"N={config.clients}, n={config.rounds}, C={config.fraction}, positives={config.resolved_positives}"
    )

    run_dirs, metrics = [], []
    for seed in config.seeds:
        run_dir, evaluation = run_seed(config, seed, root, variant)
        run_dirs.append(run_dir)
        metrics.extend(evaluation.metrics)

    with Database.session(root) as db:
        all_rows = _stored_metric_rows(db, latest_runs(crud.list_runs(db, experiment=config.name)))
    write_csv(root / "metrics_mean.csv", MEAN_FIELDS, mean_metric_rows(all_rows))
    return ExperimentResult(root=root, run_dirs=run_dirs, metrics=metrics)


SWEEP_FIELDS = ("local_size", "clients")


def run_sweep(
    config: ExperimentConfig,
    field_name: str,
    values: Sequence[int],
    root: Optional[Path] = None,
) -> list[ExperimentResult]:
    """
    Repeat the experiment for each value of one field. Client-count sweeps
    keep the number of positive clients fixed.
    """
    if field_name not in SWEEP_FIELDS:
        raise ValueError(f"cannot sweep over '{field_name}', choose one of {', '.join(SWEEP_FIELDS)}")
    root = Path(root) if root is not None else Path(RUNS_DIR) / config.name
    results = []
    for value in values:
        update = {field_name: value}
        if field_name == "clients":
            update["positives"] = config.resolved_positives
        variant_config = ExperimentConfig.model_validate({**config.model_dump(), **update})
        results.append(run_experiment(variant_config, root, variant=f"{field_name}={value}"))
    return results


def summarize(rows: Sequence[MetricRow]) -> list[MethodSummary]:
    """Per method (and variant): mean, spread and best F1 over rounds and the first round reaching 0.8."""
    summaries = []
    for entry in _group_series(mean_metric_rows(rows)):
        rounds = np.array(entry["rounds"])
        f1 = np.array(entry["f1"])
        reached = np.flatnonzero(f1 >= CONVERGENCE_F1)
        best = int(np.argmax(f1))
        summaries.append(MethodSummary(
            method=Method(entry["method"]),
            variant=entry["variant"] or None,
            mean_f1=float(f1.mean()),
            std_f1=float(f1.std()),
            max_f1=float(f1[best]),
            max_f1_round=int(rounds[best]),
            convergence_round=int(rounds[reached[0]]) if reached.size else None,
        ))
    return summaries


def _group_series(mean_rows: Sequence[dict]) -> list[dict]:
    series: dict[tuple[str, str], dict] = {}
    for row in mean_rows:
        entry = series.setdefault(
            (row["variant"], row["method"]),
            {"variant": row["variant"], "method": row["method"], "rounds": [], "f1": [], "std": []},
        )
        entry["rounds"].append(row["round"])
        entry["f1"].append(row["mean_f1"])
        entry["std"].append(row["std_f1"])
    return list(series.values())


def latest_runs(runs: Sequence) -> list:
    """Newest run per (experiment, variant, seed), in the input order."""
    newest = {}
    for run in runs:
        key = (run.experiment, run.variant, run.seed)
        if key not in newest or run.created_at > newest[key].created_at:
            newest[key] = run
    keep = {id(run) for run in newest.values()}
    return [run for run in runs if id(run) in keep]


def _stored_metric_rows(db, runs) -> list[MetricRow]:
    return [
        MetricRow(
            method=Method(record.method),
            round=record.round,
            precision=record.precision,
            recall=record.recall,
            f1=record.f1,
            seed=run.seed,
            variant=run.variant,
        )
        for run, record in crud.list_metric_rows(db, runs)
    ]


# -------- Export --------
SELECTORS = ("f1", "ovl", "dist", "alpha", "summary")


def export_plot_data(
    root: Path,
    selector: str,
    out_dir: Optional[Path] = None,
    rounds: Optional[Sequence[int]] = None,
    methods: Optional[Sequence[Method]] = None,
) -> list[Path]:
    """Write plot-ready series from the archive under `root`; returns the files written."""
    if selector not in SELECTORS:
        raise ValueError(f"unknown selector '{selector}', choose one of {', '.join(SELECTORS)}")
    root = Path(root)
    if not root.is_dir() or not (DATABASE_URL_OVERRIDE or (root / ARCHIVE_DB_NAME).exists()):
        raise ArchiveNotFoundError(f"no archive at {root}", stage="export")
    out_dir = Path(out_dir) if out_dir is not None else root / "plots"
    out_dir.mkdir(parents=True, exist_ok=True)

    with Database.session(root) as db:
        runs = latest_runs(crud.list_runs(db))
        if not runs:
            raise ArchiveNotFoundError(f"no complete runs in {root}", stage="export")
        metric_rows = _stored_metric_rows(db, runs)
        detector_records = [
            {"seed": run.seed, "variant": run.variant or "", **{
                key: getattr(record, key) for key in DETECTOR_FIELDS
            }}
            for run, record in crud.list_detector_rows(db, runs)
        ]

    if selector == "f1":
        return _export_f1(out_dir, metric_rows, methods)
    if selector == "summary":
        path = out_dir / "summary.json"
        path.write_text(json.dumps([s.model_dump(mode="json") for s in summarize(metric_rows)], indent=2))
        return [path]
    if not detector_records:
        raise MissingSeriesError(["detector"])
    if selector == "dist":
        return _export_dist(out_dir, detector_records, rounds)
    column = "ovl" if selector == "ovl" else "alpha_norm"
    return [_export_round_mean(out_dir / f"{selector}.csv", detector_records, column)]


def _export_f1(out_dir: Path, rows: list[MetricRow], methods: Optional[Sequence[Method]]) -> list[Path]:
    present = {row.method for row in rows}
    wanted = list(methods) if methods else sorted(present, key=lambda m: list(Method).index(m))
    missing = [method.value for method in wanted if method not in present]
    if missing:
        raise MissingSeriesError([f"f1/{name}" for name in missing])
    paths = []
    for entry in _group_series(mean_metric_rows(rows)):
        if Method(entry["method"]) not in wanted:
            continue
        suffix = f"_{entry['variant']}" if entry["variant"] else ""
        path = out_dir / f"f1_{entry['method']}{suffix}.csv"
        series = [
            {"round": rnd, "mean_f1": f1, "std_f1": std}
            for rnd, f1, std in zip(entry["rounds"], entry["f1"], entry["std"])
        ]
        paths.append(write_csv(path, ["round", "mean_f1", "std_f1"], series))
    return paths


def _export_round_mean(path: Path, records: list[dict], column: str) -> Path:
    by_round: dict[int, list[float]] = {}
    for record in records:
        by_round.setdefault(record["round"], []).append(record[column])
    series = [{"round": rnd, column: float(np.mean(values))} for rnd, values in sorted(by_round.items())]
    return write_csv(path, ["round", column], series)


def _export_dist(out_dir: Path, records: list[dict], rounds: Optional[Sequence[int]]) -> list[Path]:
    available = {record["round"] for record in records}
    wanted = list(rounds) if rounds else sorted(available)
    missing = [f"dist/round {rnd}" for rnd in wanted if rnd not in available]
    if missing:
        raise MissingSeriesError(missing)
    fields = ["round", "seed", "variant", "mu_plus", "sigma_plus", "mu_minus", "sigma_minus", "ovl"]
    selected = sorted(
        (record for record in records if record["round"] in wanted),
        key=lambda record: (record["round"], record["variant"], record["seed"]),
    )
    return [write_csv(out_dir / "dist.csv", fields, selected)]
