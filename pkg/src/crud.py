from typing import Iterable, Optional

from sqlalchemy import and_, or_, select
from sqlalchemy.exc import IntegrityError
from sqlalchemy.orm import Session

from . import models, schemas
from .errors import ArchiveNotFoundError, FedProbeError


# -------- Runs --------
def create_run(
    db: Session,
    manifest: schemas.RunManifest,
) -> models.Run:
    db_run = models.Run(
        name=manifest.run_name,
        experiment=manifest.config.name,
        variant=manifest.variant,
        seed=manifest.seed,
        property_kind=manifest.config.property.value,
        config_json=manifest.config.model_dump_json(),
    )
    try:
        db.add(db_run)
        db.flush()
        return db_run
    except IntegrityError:
        db.rollback()
        raise FedProbeError(f"run {manifest.run_name} already archived", stage="archive")


def finish_run(db: Session, run: models.Run, failed_stage: Optional[str] = None) -> models.Run:
    run.status = "failed" if failed_stage else "complete"
    run.failed_stage = failed_stage
    db.flush()
    return run


def replace_runs(db: Session, manifest: schemas.RunManifest) -> int:
    """Delete earlier runs of the same run name or (experiment, variant, seed); returns how many."""
    variant = models.Run.variant.is_(None) if manifest.variant is None else models.Run.variant == manifest.variant
    same_slot = and_(
        models.Run.experiment == manifest.config.name,
        variant,
        models.Run.seed == manifest.seed,
    )
    runs = list(db.scalars(select(models.Run).where(or_(models.Run.name == manifest.run_name, same_slot))))
    for run in runs:
        db.delete(run)
    db.flush()
    return len(runs)


def get_run(db: Session, name: str) -> models.Run:
    run = db.scalar(select(models.Run).where(models.Run.name == name))
    if not run:
        raise ArchiveNotFoundError(f"run {name} not found", stage="export")
    return run


def list_runs(
    db: Session,
    experiment: Optional[str] = None,
    status: Optional[str] = "complete",
) -> list[models.Run]:
    """Runs ordered by variant, then seed."""
    query = select(models.Run)
    if experiment is not None:
        query = query.where(models.Run.experiment == experiment)
    if status is not None:
        query = query.where(models.Run.status == status)
    return list(db.scalars(query.order_by(models.Run.variant, models.Run.seed, models.Run.name)))


# -------- Results --------
def add_metric_rows(db: Session, run: models.Run, rows: Iterable[schemas.MetricRow]) -> None:
    for row in rows:
        db.add(models.MetricRecord(
            run_id=run.id,
            method=row.method.value,
            round=row.round,
            precision=row.precision,
            recall=row.recall,
            f1=row.f1,
        ))
    db.flush()


def add_detector_rows(db: Session, run: models.Run, rows: Iterable[dict]) -> None:
    for row in rows:
        db.add(models.DetectorRecord(run_id=run.id, **row))
    db.flush()


def add_decision_rows(db: Session, run: models.Run, rows: Iterable[dict]) -> None:
    for row in rows:
        db.add(models.DecisionRecord(run_id=run.id, **row))
    db.flush()


def add_trace_rows(db: Session, run: models.Run, rows: Iterable[dict]) -> None:
    for row in rows:
        db.add(models.TraceRecord(run_id=run.id, **row))
    db.flush()


def list_metric_rows(db: Session, runs: list[models.Run]) -> list[tuple[models.Run, models.MetricRecord]]:
    by_id = {run.id: run for run in runs}
    records = db.scalars(
        select(models.MetricRecord)
        .where(models.MetricRecord.run_id.in_(list(by_id)))
        .order_by(models.MetricRecord.method, models.MetricRecord.round)
    )
    return [(by_id[record.run_id], record) for record in records]


def list_detector_rows(db: Session, runs: list[models.Run]) -> list[tuple[models.Run, models.DetectorRecord]]:
    by_id = {run.id: run for run in runs}
    records = db.scalars(
        select(models.DetectorRecord)
        .where(models.DetectorRecord.run_id.in_(list(by_id)))
        .order_by(models.DetectorRecord.round)
    )
    return [(by_id[record.run_id], record) for record in records]
