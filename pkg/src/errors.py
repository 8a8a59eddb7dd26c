"""Exception types raised across the simulator and the attack pipeline."""
from typing import Optional, Sequence


class FedProbeError(RuntimeError):
    """Base error with a human readable detail and the pipeline stage, if known."""

    def __init__(self, detail: str, stage: Optional[str] = None):
        self.detail = detail
        self.stage = stage
        super().__init__(detail if stage is None else f"[{stage}] {detail}")


class DimensionError(FedProbeError, ValueError):
    """Operand shapes do not agree or contain non-finite entries."""


class DivergenceError(FedProbeError):
    """A training pass produced non-finite parameters or loss."""


class IncompleteMaskSetError(FedProbeError):
    """Masked updates do not cover every participant of the round."""

    def __init__(self, missing: Sequence[int], round_index: int):
        self.missing = list(missing)
        super().__init__(
            f"incomplete mask set for round {round_index}: missing clients {self.missing}"
        )


class FieldOverflowError(FedProbeError):
    """Fixed-point values would wrap around the modulus."""

    def __init__(self, required_modulus: int, modulus: int):
        self.required_modulus = required_modulus
        super().__init__(
            f"field modulus {modulus} too small, need at least {required_modulus}"
        )


class ProlinDivergenceError(FedProbeError):
    """The relaxed objective kept increasing or became non-finite."""

    def __init__(self, detail: str, trace: Sequence[float]):
        self.trace = list(trace)
        super().__init__(detail, stage="prolin")


class ArchiveNotFoundError(FedProbeError):
    """A run or archive directory could not be located."""


class MissingSeriesError(FedProbeError):
    """Requested plot series are absent from the archive."""

    def __init__(self, missing: Sequence[str]):
        self.missing = list(missing)
        super().__init__(f"missing series: {', '.join(self.missing)}", stage="export")


class StageError(FedProbeError):
    """Wraps any failure with the name of the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        self.cause = cause
        super().__init__(f"{type(cause).__name__}: {cause}", stage=stage)
