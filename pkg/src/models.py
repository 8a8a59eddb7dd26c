import uuid
from datetime import datetime, timezone

from sqlalchemy import DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import Mapped, mapped_column, relationship

from .database import Base


def generate_id(prefix: str) -> str:
    return f"{prefix}-{uuid.uuid4()}"


class Run(Base):
    """One seed of one experiment (one run directory)."""
    __tablename__ = "runs"

    id: Mapped[str] = mapped_column(String, primary_key=True, default=lambda: generate_id("run"))
    name: Mapped[str] = mapped_column(String, unique=True, index=True, nullable=False)
    experiment: Mapped[str] = mapped_column(String, index=True, nullable=False)
    variant: Mapped[str | None] = mapped_column(String, nullable=True)
    seed: Mapped[int] = mapped_column(Integer, nullable=False)
    property_kind: Mapped[str] = mapped_column(String, nullable=False)
    config_json: Mapped[str] = mapped_column(Text, nullable=False)
    status: Mapped[str] = mapped_column(String, default="running")
    failed_stage: Mapped[str | None] = mapped_column(String, nullable=True)
    created_at: Mapped[datetime] = mapped_column(
        DateTime(timezone=True),
        default=lambda: datetime.now(timezone.utc),
    )

    metrics: Mapped[list["MetricRecord"]] = relationship(back_populates="run", cascade="all, delete-orphan")
    detectors: Mapped[list["DetectorRecord"]] = relationship(back_populates="run", cascade="all, delete-orphan")
    decisions: Mapped[list["DecisionRecord"]] = relationship(back_populates="run", cascade="all, delete-orphan")
    trace: Mapped[list["TraceRecord"]] = relationship(back_populates="run", cascade="all, delete-orphan")


class MetricRecord(Base):
    __tablename__ = "metric_rows"

    id: Mapped[str] = mapped_column(String, primary_key=True, default=lambda: generate_id("metric"))
    run_id: Mapped[str] = mapped_column(ForeignKey("runs.id"), index=True, nullable=False)
    method: Mapped[str] = mapped_column(String, index=True, nullable=False)
    round: Mapped[int] = mapped_column(Integer, nullable=False)
    precision: Mapped[float] = mapped_column(Float, nullable=False)
    recall: Mapped[float] = mapped_column(Float, nullable=False)
    f1: Mapped[float] = mapped_column(Float, nullable=False)

    run: Mapped["Run"] = relationship(back_populates="metrics")


class DetectorRecord(Base):
    """Per-round detector summary and fitted feature distributions (first feature when t > 1)."""
    __tablename__ = "detector_rows"

    id: Mapped[str] = mapped_column(String, primary_key=True, default=lambda: generate_id("detector"))
    run_id: Mapped[str] = mapped_column(ForeignKey("runs.id"), index=True, nullable=False)
    round: Mapped[int] = mapped_column(Integer, nullable=False)
    alpha_norm: Mapped[float] = mapped_column(Float, nullable=False)
    beta: Mapped[float] = mapped_column(Float, nullable=False)
    mu_plus: Mapped[float] = mapped_column(Float, nullable=False)
    sigma_plus: Mapped[float] = mapped_column(Float, nullable=False)
    mu_minus: Mapped[float] = mapped_column(Float, nullable=False)
    sigma_minus: Mapped[float] = mapped_column(Float, nullable=False)
    ovl: Mapped[float] = mapped_column(Float, nullable=False)
    weight: Mapped[float] = mapped_column(Float, nullable=False)
    eval_accuracy: Mapped[float] = mapped_column(Float, nullable=False)

    run: Mapped["Run"] = relationship(back_populates="detectors")


class DecisionRecord(Base):
    __tablename__ = "decision_rows"

    id: Mapped[str] = mapped_column(String, primary_key=True, default=lambda: generate_id("decision"))
    run_id: Mapped[str] = mapped_column(ForeignKey("runs.id"), index=True, nullable=False)
    method: Mapped[str] = mapped_column(String, nullable=False)
    round: Mapped[int] = mapped_column(Integer, nullable=False)
    client: Mapped[int] = mapped_column(Integer, nullable=False)
    tau: Mapped[float] = mapped_column(Float, nullable=False)
    label: Mapped[int] = mapped_column(Integer, nullable=False)
    truth: Mapped[int] = mapped_column(Integer, nullable=False)

    run: Mapped["Run"] = relationship(back_populates="decisions")


class TraceRecord(Base):
    """PROLIN objective trace of the final evaluation round."""
    __tablename__ = "trace_rows"

    id: Mapped[str] = mapped_column(String, primary_key=True, default=lambda: generate_id("trace"))
    run_id: Mapped[str] = mapped_column(ForeignKey("runs.id"), index=True, nullable=False)
    iteration: Mapped[int] = mapped_column(Integer, nullable=False)
    objective: Mapped[float] = mapped_column(Float, nullable=False)
    ml: Mapped[float] = mapped_column(Float, nullable=False)
    reg: Mapped[float] = mapped_column(Float, nullable=False)
    lstsq: Mapped[float] = mapped_column(Float, nullable=False)

    run: Mapped["Run"] = relationship(back_populates="trace")
