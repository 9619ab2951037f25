"""BIC model comparison and support classification.

Candidate models are ranked by BIC = -2 ln L + k ln(n_data) and compared via
their BIC relative to the minimum (delta BIC).  The null model is accepted as
best whenever its delta BIC stays within the strength-of-evidence threshold
of 10; an alternative is supported against the null when its BIC undercuts
the null's by more than 10, and is itself the best model when its delta BIC
is zero while every other candidate exceeds the threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np

from .models import MEAN_FIELD_KINDS, ModelKind

__all__ = [
    "SUPPORT_THRESHOLD",
    "Classification",
    "ModelEntry",
    "SelectionReport",
    "bic",
    "delta_bic",
    "classify",
    "param_count",
    "param_count_full",
    "build_selection_report",
]

#: delta-BIC strength-of-evidence threshold
SUPPORT_THRESHOLD = 10.0


class Classification(str, Enum):
    BEST = "best"
    SUPPORTED = "supported"
    NO_SUPPORT = "no_support"


def bic(log_likelihood: float, k: int, n_data: int) -> float:
    """Bayesian information criterion, -2 ln L + k ln(n_data)."""
    if k < 1:
        raise ValueError("parameter count must be at least 1")
    if n_data < 1:
        raise ValueError("data count must be at least 1")
    return -2.0 * log_likelihood + k * math.log(n_data)


def delta_bic(bics: Sequence[float]) -> np.ndarray:
    """BIC relative to the best candidate; the minimum maps to exactly 0."""
    arr = np.asarray(bics, dtype=float)
    if arr.size == 0:
        raise ValueError("need at least one BIC value")
    return arr - arr.min()


def param_count(kind: ModelKind, n_activities: int) -> int:
    """Dynamical parameter count: 2N for the null model, 2N + 1 otherwise.

    Segment initial conditions and the noise scale are shared by every
    candidate and cancel in all BIC comparisons, so they are excluded here;
    `param_count_full` reports the total for transparency.
    """
    base = 2 * n_activities
    return base if kind is ModelKind.NULL else base + 1


def param_count_full(kind: ModelKind, n_activities: int, n_segments: int) -> int:
    """Dynamical parameters plus per-segment initial conditions plus sigma."""
    return param_count(kind, n_activities) + n_segments * n_activities + 1


def classify(bics: Mapping[ModelKind, float]) -> dict:
    """Apply the support rules to a {kind: BIC} map.

    Requires the null model plus at least one alternative.  Returns a
    {kind: Classification} map.
    """
    if ModelKind.NULL not in bics:
        raise ValueError("classification requires the null model's BIC")
    if len(bics) < 2:
        raise ValueError("classification requires at least one alternative model")
    kinds = list(bics)
    values = np.asarray([bics[k] for k in kinds], dtype=float)
    deltas = dict(zip(kinds, delta_bic(values)))
    bic_null = bics[ModelKind.NULL]

    out = {}
    for kind in kinds:
        if kind is ModelKind.NULL:
            out[kind] = (
                Classification.BEST
                if deltas[kind] <= SUPPORT_THRESHOLD
                else Classification.NO_SUPPORT
            )
            continue
        others_rejected = all(
            deltas[other] > SUPPORT_THRESHOLD for other in kinds if other is not kind
        )
        if deltas[kind] == 0.0 and others_rejected:
            out[kind] = Classification.BEST
        elif bics[kind] - bic_null < -SUPPORT_THRESHOLD:
            out[kind] = Classification.SUPPORTED
        else:
            out[kind] = Classification.NO_SUPPORT
    return out


@dataclass(frozen=True)
class ModelEntry:
    kind: ModelKind
    log_likelihood: float
    k: int
    k_full: int
    bic: float
    delta_bic: float
    classification: Classification


@dataclass(frozen=True)
class SelectionReport:
    """Per-country BIC comparison across the candidate models."""

    country: str
    n_data: int
    entries: tuple

    def __post_init__(self):
        deltas = [e.delta_bic for e in self.entries]
        if deltas and min(deltas) != 0.0:
            raise ValueError("at least one model must have delta_bic = 0")

    @property
    def best_kind(self) -> Optional[ModelKind]:
        for entry in self.entries:
            if entry.classification is Classification.BEST:
                return entry.kind
        return None

    def entry(self, kind: ModelKind) -> ModelEntry:
        for e in self.entries:
            if e.kind is kind:
                return e
        raise KeyError(kind)


def build_selection_report(
    country: str,
    log_likelihoods: Mapping[ModelKind, float],
    n_activities: int,
    n_years: int,
    n_segments: int,
) -> SelectionReport:
    """Assemble BIC, delta BIC and classifications for one country."""
    n_data = n_activities * n_years
    bics = {
        kind: bic(ll, param_count(kind, n_activities), n_data)
        for kind, ll in log_likelihoods.items()
    }
    classes = classify(bics)
    deltas = delta_bic([bics[k] for k in bics])
    delta_map = dict(zip(bics, deltas))
    order = [k for k in MEAN_FIELD_KINDS if k in bics]
    entries = tuple(
        ModelEntry(
            kind=k,
            log_likelihood=float(log_likelihoods[k]),
            k=param_count(k, n_activities),
            k_full=param_count_full(k, n_activities, n_segments),
            bic=float(bics[k]),
            delta_bic=float(delta_map[k]),
            classification=classes[k],
        )
        for k in order
    )
    return SelectionReport(country=country, n_data=n_data, entries=entries)
