"""Insulin bolus calculator.

Dose = meal term + correction term - active insulin:
CHO/CR + (measured - target)/CF - PS * IOB, all glucose terms in mg/dL.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidValueError


@dataclass(frozen=True)
class BolusInputs:
    cho_g: float  # carbohydrate intake, grams
    cr: float  # carbohydrate-to-insulin ratio, g per insulin unit
    gc_mgdl: float  # measured glucose
    gt_mgdl: float  # target glucose
    cf: float  # correction factor, mg/dL per insulin unit
    ps: float = 1.0  # physiological state multiplier (<1 raised sensitivity)
    iob: float = 0.0  # insulin on board, units

    def __post_init__(self) -> None:
        for name in ("cho_g", "cr", "gc_mgdl", "gt_mgdl", "cf", "ps", "iob"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise InvalidValueError(f"{name} must be finite, got {v!r}")
        if self.cr <= 0 or self.cf <= 0 or self.ps <= 0:
            raise InvalidValueError("cr, cf and ps must all be positive")
        if self.cho_g < 0 or self.iob < 0:
            raise InvalidValueError("cho and iob must be non-negative")


@dataclass(frozen=True)
class BolusResult:
    units: float
    no_bolus_needed: bool  # advisory: the formula went non-positive


def bolus(inputs: BolusInputs) -> BolusResult:
    """Exact evaluation; negative results are returned, not clamped."""
    units = (
        inputs.cho_g / inputs.cr
        + (inputs.gc_mgdl - inputs.gt_mgdl) / inputs.cf
        - inputs.ps * inputs.iob
    )
    return BolusResult(units=units, no_bolus_needed=units <= 0.0)
