"""Community dynamics models for economic activities.

Each activity i in a country carries a capital size n_i (per-capita export
value).  The general model couples activities through pairwise interactions,
cross-country dispersal and within-country transformation; the five mean-field
sub-models reduce those couplings to a single country-level rate:

    null       dn_i/dt = r_i n_i (1 - b_i n_i)
    alpha +/-  dn_i/dt = r_i n_i (1 - b_i n_i + alpha * sum_{j != i} n_j)
    delta      dn_i/dt = null_i + delta * (nbar_i(t) - n_i)
    mu         dn_i/dt = null_i + mu * sum_j (n_j - n_i)

nbar_i(t) is the mean capital of activity i over the other countries,
supplied as an exogenous piecewise-linear forcing (`GlobalField`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "ModelKind",
    "CommunityState",
    "MeanFieldParams",
    "GeneralParams",
    "ModelSpec",
    "GlobalField",
    "MEAN_FIELD_KINDS",
    "COUPLED_KINDS",
    "rhs_null",
    "rhs_alpha",
    "rhs_delta",
    "rhs_mu",
    "rhs_general",
]


class ModelKind(str, Enum):
    """The six model variants; only the five mean-field ones are ever fitted."""

    NULL = "null"
    ALPHA_POS = "alpha_pos"
    ALPHA_NEG = "alpha_neg"
    DELTA = "delta"
    MU = "mu"
    GENERAL = "general"


#: fitting-eligible kinds, in canonical order
MEAN_FIELD_KINDS = (
    ModelKind.NULL,
    ModelKind.ALPHA_POS,
    ModelKind.ALPHA_NEG,
    ModelKind.DELTA,
    ModelKind.MU,
)

#: mean-field kinds that carry a coupling parameter
COUPLED_KINDS = MEAN_FIELD_KINDS[1:]

#: name of the coupling parameter per kind (used for init ranges / reports)
COUPLING_NAMES = {
    ModelKind.ALPHA_POS: "alpha",
    ModelKind.ALPHA_NEG: "alpha",
    ModelKind.DELTA: "delta",
    ModelKind.MU: "mu",
}


def _as_float_array(values, name: str, ndim: int) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class CommunityState:
    """Per-activity capital sizes of one country at one time."""

    values: np.ndarray

    def __post_init__(self):
        arr = _as_float_array(self.values, "state values", 1)
        if arr.size == 0:
            raise ValueError("state must contain at least one activity")
        if np.any(arr < 0):
            raise ValueError("state values must be non-negative")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def n_activities(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class MeanFieldParams:
    """Parameters of the mean-field sub-models.

    `coupling` is alpha for the interaction models, delta for dispersal,
    mu for transformation, and None for the null model.
    """

    growth: np.ndarray
    self_limitation: np.ndarray
    coupling: Optional[float] = None

    def __post_init__(self):
        r = _as_float_array(self.growth, "growth", 1)
        b = _as_float_array(self.self_limitation, "self_limitation", 1)
        if r.shape != b.shape:
            raise ValueError("growth and self_limitation must have equal length")
        if np.any(r <= 0) or np.any(b <= 0):
            raise ValueError("growth and self_limitation must be strictly positive")
        if self.coupling is not None and not np.isfinite(self.coupling):
            raise ValueError("coupling must be finite")
        for name, arr in (("growth", r), ("self_limitation", b)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.coupling is not None:
            object.__setattr__(self, "coupling", float(self.coupling))

    @property
    def n_activities(self) -> int:
        return self.growth.size


#: admissible coupling sign per kind (weak inequalities: a coupling of exactly
#: zero degenerates every sub-model to the null model and stays admissible)
_COUPLING_SIGN_OK = {
    ModelKind.ALPHA_POS: lambda c: c >= 0,
    ModelKind.ALPHA_NEG: lambda c: c <= 0,
    ModelKind.DELTA: lambda c: c >= 0,
    ModelKind.MU: lambda c: c >= 0,
}


@dataclass(frozen=True)
class ModelSpec:
    """A model kind together with its mean-field parameter vector."""

    kind: ModelKind
    params: MeanFieldParams

    def __post_init__(self):
        if self.kind not in MEAN_FIELD_KINDS:
            raise ValueError(f"ModelSpec only supports mean-field kinds, got {self.kind}")
        c = self.params.coupling
        if self.kind is ModelKind.NULL:
            if c is not None:
                raise ValueError("null model takes no coupling parameter")
        else:
            if c is None:
                raise ValueError(f"{self.kind.value} model requires a coupling parameter")
            if not _COUPLING_SIGN_OK[self.kind](c):
                raise ValueError(
                    f"coupling {c} has the wrong sign for model {self.kind.value}"
                )

    @property
    def n_activities(self) -> int:
        return self.params.n_activities


@dataclass(frozen=True)
class GeneralParams:
    """Full per-country parameterization of the general model.

    `interaction_matrix[i, j]` weights activity j's effect on i (diagonal
    unused), `dispersal_rates[l, i]` is the dispersal rate of activity i from
    country l into this country, and `transfer_matrix[j, i]` is the rate at
    which activity j transforms into activity i.
    """

    growth: np.ndarray
    self_limitation: np.ndarray
    interaction_matrix: np.ndarray
    dispersal_rates: np.ndarray
    transfer_matrix: np.ndarray

    def __post_init__(self):
        r = _as_float_array(self.growth, "growth", 1)
        b = _as_float_array(self.self_limitation, "self_limitation", 1)
        a = _as_float_array(self.interaction_matrix, "interaction_matrix", 2)
        d = _as_float_array(self.dispersal_rates, "dispersal_rates", 2)
        m = _as_float_array(self.transfer_matrix, "transfer_matrix", 2)
        n = r.size
        if b.size != n or a.shape != (n, n) or m.shape != (n, n) or d.shape[1] != n:
            raise ValueError("inconsistent parameter dimensions")
        if np.any(d < 0) or np.any(m < 0):
            raise ValueError("dispersal and transfer rates must be non-negative")
        for name, arr in (
            ("growth", r),
            ("self_limitation", b),
            ("interaction_matrix", a),
            ("dispersal_rates", d),
            ("transfer_matrix", m),
        ):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_activities(self) -> int:
        return self.growth.size

    @property
    def n_countries(self) -> int:
        return self.dispersal_rates.shape[0]


@dataclass(frozen=True)
class GlobalField:
    """Per-activity mean capital of the other countries, sampled yearly.

    Evaluated between samples by linear interpolation and clamped to the
    endpoint values outside the sampled span.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = _as_float_array(self.times, "field times", 1)
        v = _as_float_array(self.values, "field values", 2)
        if t.size == 0:
            raise ValueError("field must contain at least one sample time")
        if v.shape[0] != t.size:
            raise ValueError("field values must have one row per sample time")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("field times must be strictly increasing")
        if np.any(v < 0):
            raise ValueError("field values must be non-negative")
        t = t.copy()
        v = v.copy()
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def n_activities(self) -> int:
        return self.values.shape[1]

    def value_at(self, t: float) -> np.ndarray:
        """Interpolated field vector at time t (clamped outside the span)."""
        times = self.times
        if t <= times[0]:
            return self.values[0]
        if t >= times[-1]:
            return self.values[-1]
        j = int(np.searchsorted(times, t, side="right"))
        w = (t - times[j - 1]) / (times[j] - times[j - 1])
        return (1.0 - w) * self.values[j - 1] + w * self.values[j]

    def values_at(self, ts: np.ndarray) -> np.ndarray:
        """Interpolated field vectors at several times, shape (len(ts), N)."""
        times = self.times
        if times.size == 1:
            return np.tile(self.values[0], (len(ts), 1))
        ts = np.clip(ts, times[0], times[-1])
        j = np.clip(np.searchsorted(times, ts, side="right"), 1, times.size - 1)
        span = times[j] - times[j - 1]
        w = ((ts - times[j - 1]) / span)[:, None]
        return (1.0 - w) * self.values[j - 1] + w * self.values[j]


# ---------------------------------------------------------------------------
# Right-hand sides (public, validated API)
# ---------------------------------------------------------------------------

def rhs_null(params: MeanFieldParams, state: CommunityState) -> np.ndarray:
    """dn_i/dt = r_i n_i (1 - b_i n_i)."""
    n = state.values
    return params.growth * n * (1.0 - params.self_limitation * n)


def rhs_alpha(params: MeanFieldParams, state: CommunityState) -> np.ndarray:
    """Null dynamics plus a uniform interaction with all other activities."""
    if params.coupling is None:
        raise ValueError("alpha model requires a coupling parameter")
    n = state.values
    others = n.sum() - n
    return params.growth * n * (1.0 - params.self_limitation * n + params.coupling * others)


def rhs_delta(
    params: MeanFieldParams, state: CommunityState, field: GlobalField, t: float
) -> np.ndarray:
    """Null dynamics plus relaxation toward the cross-country mean capital."""
    if params.coupling is None:
        raise ValueError("delta model requires a coupling parameter")
    if field is None:
        raise ValueError("delta model requires a global field")
    if field.n_activities != state.n_activities:
        raise ValueError("field and state activity counts differ")
    n = state.values
    base = params.growth * n * (1.0 - params.self_limitation * n)
    return base + params.coupling * (field.value_at(float(t)) - n)


def rhs_mu(params: MeanFieldParams, state: CommunityState) -> np.ndarray:
    """Null dynamics plus symmetric capital transfer between activities."""
    if params.coupling is None:
        raise ValueError("mu model requires a coupling parameter")
    n = state.values
    base = params.growth * n * (1.0 - params.self_limitation * n)
    return base + params.coupling * (n.sum() - n.size * n)


def rhs_general(
    params: GeneralParams,
    states: Sequence[CommunityState],
    country: int,
) -> np.ndarray:
    """Full per-pair dynamics of one country given all countries' states.

    Simulation-only: the general model is never fitted.
    """
    m = len(states)
    if params.n_countries != m:
        raise ValueError(
            f"dispersal matrix expects {params.n_countries} countries, got {m}"
        )
    n_act = params.n_activities
    if any(s.n_activities != n_act for s in states):
        raise ValueError("all country states must share the activity count")
    if not 0 <= country < m:
        raise ValueError("country index out of range")

    n = states[country].values
    a = params.interaction_matrix.copy()
    np.fill_diagonal(a, 0.0)
    growth_term = params.growth * n * (1.0 - params.self_limitation * n + a @ n)

    all_states = np.stack([s.values for s in states])  # (M, N)
    dispersal_term = (params.dispersal_rates * (all_states - n)).sum(axis=0)

    transfer_term = params.transfer_matrix.T @ n - params.transfer_matrix.sum(axis=0) * n
    return growth_term + dispersal_term + transfer_term


# ---------------------------------------------------------------------------
# Unvalidated array-level kernels used inside integration loops
# ---------------------------------------------------------------------------

def mean_field_rhs(
    kind: ModelKind,
    params: MeanFieldParams,
    field: Optional[GlobalField] = None,
) -> Callable[[float, np.ndarray], np.ndarray]:
    """Bind params once and return the raw-array RHS f(t, n) for `kind`."""
    r = np.asarray(params.growth, dtype=float)
    b = np.asarray(params.self_limitation, dtype=float)
    c = params.coupling
    n_act = r.size

    if kind is ModelKind.NULL:
        def f(t, n):
            return r * n * (1.0 - b * n)
    elif kind in (ModelKind.ALPHA_POS, ModelKind.ALPHA_NEG):
        def f(t, n):
            return r * n * (1.0 - b * n + c * (n.sum() - n))
    elif kind is ModelKind.DELTA:
        if field is None:
            raise ValueError("delta model requires a global field")
        value_at = field.value_at

        def f(t, n):
            return r * n * (1.0 - b * n) + c * (value_at(t) - n)
    elif kind is ModelKind.MU:
        def f(t, n):
            return r * n * (1.0 - b * n) + c * (n.sum() - n_act * n)
    else:
        raise ValueError(f"no mean-field RHS for kind {kind}")
    return f


def mean_field_rhs_with_jacobians(
    kind: ModelKind,
    params: MeanFieldParams,
    field: Optional[GlobalField] = None,
):
    """Return fjac(t, n) -> (f, J, g_r, g_b, g_c) for forward sensitivities.

    J is the state Jacobian; g_r and g_b are the diagonal derivative entries
    df_i/dr_i and df_i/db_i; g_c is the coupling derivative vector (None for
    the null model).  All sub-models are polynomial or affine in state and
    parameters, so these are exact.
    """
    r = np.asarray(params.growth, dtype=float)
    b = np.asarray(params.self_limitation, dtype=float)
    c = params.coupling
    n_act = r.size

    if kind is ModelKind.NULL:
        def fjac(t, n):
            rn = r * n
            f = rn * (1.0 - b * n)
            jac = np.diag(r * (1.0 - 2.0 * b * n))
            return f, jac, n * (1.0 - b * n), -rn * n, None
    elif kind in (ModelKind.ALPHA_POS, ModelKind.ALPHA_NEG):
        def fjac(t, n):
            rn = r * n
            others = n.sum() - n
            e = 1.0 - b * n + c * others
            f = rn * e
            jac = np.tile((c * rn)[:, None], (1, n_act))
            np.fill_diagonal(jac, r * (e - b * n))
            return f, jac, n * e, -rn * n, rn * others
    elif kind is ModelKind.DELTA:
        if field is None:
            raise ValueError("delta model requires a global field")
        value_at = field.value_at

        def fjac(t, n):
            rn = r * n
            f0 = rn * (1.0 - b * n)
            gap = value_at(t) - n
            jac = np.diag(r * (1.0 - 2.0 * b * n) - c)
            return f0 + c * gap, jac, n * (1.0 - b * n), -rn * n, gap
    elif kind is ModelKind.MU:
        def fjac(t, n):
            rn = r * n
            f0 = rn * (1.0 - b * n)
            gap = n.sum() - n_act * n
            jac = np.full((n_act, n_act), c)
            np.fill_diagonal(jac, r * (1.0 - 2.0 * b * n) + c * (1.0 - n_act))
            return f0 + c * gap, jac, n * (1.0 - b * n), -rn * n, gap
    else:
        raise ValueError(f"no sensitivity kernel for kind {kind}")
    return fjac


def general_rhs(params_per_country: Sequence[GeneralParams]):
    """Joint RHS over the stacked (M, N) state of all countries."""
    prepared = []
    for p in params_per_country:
        a = p.interaction_matrix.copy()
        np.fill_diagonal(a, 0.0)
        prepared.append((p.growth, p.self_limitation, a, p.dispersal_rates,
                         p.transfer_matrix, p.transfer_matrix.sum(axis=0)))

    def f(t, states):
        out = np.empty_like(states)
        for idx, (r, b, a, d, mt, mcol) in enumerate(prepared):
            n = states[idx]
            growth = r * n * (1.0 - b * n + a @ n)
            dispersal = (d * (states - n)).sum(axis=0)
            transfer = mt.T @ n - mcol * n
            out[idx] = growth + dispersal + transfer
        return out

    return f
