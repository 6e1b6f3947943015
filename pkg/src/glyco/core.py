"""Shared domain types and glucose unit conversion.

All glucose concentrations are mg/dL internally. Timestamps are integer
seconds since epoch; sub-second precision is discarded at ingest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import InvalidValueError

MGDL_PER_MMOLL = 18.0

# Physiological-plus-sensor glucose range accepted at ingest, mg/dL.
GLUCOSE_MIN_MGDL = 0.0  # exclusive
GLUCOSE_MAX_MGDL = 1000.0  # inclusive

# Consecutive readings further apart than this start a new sequence.
MAX_GAP_SECONDS = 900

# Nominal spacing of CGM readings, seconds.
NOMINAL_STEP_SECONDS = 300


def mgdl_to_mmoll(v: float) -> float:
    """Convert a glucose concentration from mg/dL to mmol/L."""
    if not math.isfinite(v):
        raise InvalidValueError(f"glucose value must be finite, got {v!r}")
    return v / MGDL_PER_MMOLL


def mmoll_to_mgdl(v: float) -> float:
    """Convert a glucose concentration from mmol/L to mg/dL."""
    if not math.isfinite(v):
        raise InvalidValueError(f"glucose value must be finite, got {v!r}")
    return v * MGDL_PER_MMOLL


@dataclass(frozen=True)
class GlucoseReading:
    """One CGM sample: patient, integer epoch seconds, glucose in mg/dL."""

    patient_id: str
    timestamp: int
    value: float

    def __post_init__(self) -> None:
        if not isinstance(self.timestamp, int) or self.timestamp <= 0:
            raise InvalidValueError(
                f"timestamp must be a positive integer, got {self.timestamp!r}"
            )
        if not math.isfinite(self.value) or not (
            GLUCOSE_MIN_MGDL < self.value <= GLUCOSE_MAX_MGDL
        ):
            raise InvalidValueError(
                f"glucose value {self.value!r} outside ({GLUCOSE_MIN_MGDL}, "
                f"{GLUCOSE_MAX_MGDL}] mg/dL"
            )


@dataclass(frozen=True)
class ContiguousSequence:
    """A gap-free run of readings for one patient, treated as uniform 5-minute steps.

    Construction enforces that the run was built from readings whose raw
    consecutive gaps were at most 900 s; within the sequence the actual gaps
    are discarded and every step counts as one nominal 300 s interval.
    """

    patient_id: str
    start_timestamp: int
    values: tuple[float, ...]
    sequence_id: int = -1
    nominal_step: int = NOMINAL_STEP_SECONDS

    def __post_init__(self) -> None:
        if len(self.values) < 1:
            raise InvalidValueError("sequence must contain at least one reading")
        for v in self.values:
            if not math.isfinite(v) or not (GLUCOSE_MIN_MGDL < v <= GLUCOSE_MAX_MGDL):
                raise InvalidValueError(f"sequence value {v!r} outside glucose range")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class PatientRecord:
    """Static per-patient features. Missing fields are None and are excluded
    from statistics, never imputed.

    bmi is derived from weight and height when both are present. hba1c keeps
    an explicit unit label; statistics treat the value as dimensionless.
    """

    patient_id: str
    age: float | None = None
    weight_kg: float | None = None
    height_cm: float | None = None
    hba1c: float | None = None
    hba1c_unit: str | None = None
    annual_income_usd: float | None = None
    education_level: int | None = None
    sex: str | None = None
    bmi: float | None = field(default=None)

    def __post_init__(self) -> None:
        if self.weight_kg is not None and self.height_cm is not None:
            derived = self.weight_kg / (self.height_cm / 100.0) ** 2
            if self.bmi is None:
                object.__setattr__(self, "bmi", derived)
            elif abs(self.bmi - derived) > 1e-9:
                raise InvalidValueError(
                    f"bmi {self.bmi} inconsistent with weight/height (expected {derived})"
                )

    def feature(self, name: str) -> float | None:
        """Numeric feature lookup by column name; None when missing."""
        value = getattr(self, name)
        if value is None:
            return None
        return float(value)


@dataclass(frozen=True)
class ForecastPair:
    """A predicted horizon paired with its reference readings, both mg/dL."""

    predicted: tuple[float, ...]
    reference: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.predicted) != len(self.reference):
            raise InvalidValueError(
                f"predicted ({len(self.predicted)}) and reference "
                f"({len(self.reference)}) lengths differ"
            )
        if len(self.predicted) == 0:
            raise InvalidValueError("forecast pair must not be empty")
        object.__setattr__(self, "predicted", tuple(float(v) for v in self.predicted))
        object.__setattr__(self, "reference", tuple(float(v) for v in self.reference))

    def __len__(self) -> int:
        return len(self.predicted)
