"""Diagnostic test error inversion and its uncertainty.

An imperfect test with sensitivity ``v`` and specificity ``s`` maps the true
prevalence ``p`` to the observed positive fraction ``q = p v + (1 - p)(1 - s)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TestCharacteristics",
    "IllPosedInversionError",
    "forward_prevalence",
    "invert_prevalence",
    "propagate_test_error",
    "wilson_half_width",
    "renormalize_lambda",
    "GLOBAL_TEST",
]


@dataclass(frozen=True)
class TestCharacteristics:
    """Sensitivity and specificity with absolute 1-sigma uncertainties."""

    __test__ = False  # not a pytest class

    sensitivity: float
    specificity: float
    sigma_v: float = 0.0
    sigma_s: float = 0.0

    def __post_init__(self):
        v, s = self.sensitivity, self.specificity
        if not (0.0 < v <= 1.0 and 0.0 < s <= 1.0):
            raise ValueError(f"sensitivity and specificity must lie in (0, 1], got {v}, {s}")
        if v + s <= 1.0:
            raise ValueError(f"uninformative test: sensitivity + specificity = {v + s} <= 1")
        if self.sigma_v < 0 or self.sigma_s < 0:
            raise ValueError("uncertainties must be non-negative")

    @property
    def youden(self) -> float:
        return self.sensitivity + self.specificity - 1.0


GLOBAL_TEST = TestCharacteristics(0.892, 0.994, 0.02, 0.0014)


class IllPosedInversionError(ValueError):
    """Observed positive fraction outside ``[1 - s, v]``."""


def forward_prevalence(p: float, tc: TestCharacteristics) -> float:
    return p * tc.sensitivity + (1.0 - p) * (1.0 - tc.specificity)


def invert_prevalence(q: float, tc: TestCharacteristics) -> float:
    """Corrected prevalence ``(q + s - 1)/(v + s - 1)``."""
    lo, hi = 1.0 - tc.specificity, tc.sensitivity
    if q < lo:
        raise IllPosedInversionError(f"q = {q} below the false-positive floor 1 - s = {lo}")
    if q > hi:
        raise IllPosedInversionError(f"q = {q} above the sensitivity ceiling v = {hi}")
    return (q + tc.specificity - 1.0) / tc.youden


def propagate_test_error(q: float, sigma_q: float, tc: TestCharacteristics) -> float:
    """First-order uncertainty of the inverted prevalence (independent q, s, v)."""
    invert_prevalence(q, tc)  # domain check
    v, s = tc.sensitivity, tc.specificity
    j = tc.youden
    var = (j**2 * sigma_q**2 + (q - v) ** 2 * tc.sigma_s**2 + (q + s - 1.0) ** 2 * tc.sigma_v**2) / j**4
    return float(np.sqrt(var))


def wilson_half_width(p: float, n: int, z: float = 1.0) -> float:
    """Half the width of the Wilson score interval at proportion ``p``."""
    return float(z * np.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / (1.0 + z * z / n))


def renormalize_lambda(p_hat: float, n: int, tc: TestCharacteristics) -> float:
    """Relative systematic scale added by test-error uncertainty.

    The statistical part (Wilson 68% half-width at ``p_hat``) is removed in
    quadrature from the fully propagated relative uncertainty.
    """
    if not 0.0 < p_hat < 1.0:
        raise ValueError(f"p_hat must lie in (0, 1), got {p_hat}")
    if n < 1:
        raise ValueError("n must be >= 1")
    q = forward_prevalence(p_hat, tc)
    sigma_q = wilson_half_width(q, n)
    total = propagate_test_error(q, sigma_q, tc) / p_hat
    stat = wilson_half_width(p_hat, n) / p_hat
    diff = total**2 - stat**2
    if diff < 0:
        warnings.warn(f"negative quadrature difference {diff:.3g} clamped to 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(np.sqrt(diff))
