"""Segmentation-based maximum-likelihood estimation.

A country's time series is partitioned into contiguous segments; every
segment gets its own estimated initial condition while the dynamical
parameters are shared.  Under i.i.d. log-normal observation noise the
maximum-likelihood problem concentrates to least squares on log residuals:

    loss(theta) = sum_{t,i} (ln y_i(t) - ln n_i(t; theta))^2

with the noise scale profiled out as sigma_hat^2 = loss / (T N).  The loss
is minimised with ADAM followed by BFGS, both in an unconstrained space
(log-transformed parameters, with the coupling sign fixed by the model
kind), and the whole procedure is repeated from several random starts.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .integrate import IntegrationFailure, IntegratorConfig, integrate, solve_at_times
from .models import (
    COUPLING_NAMES,
    MEAN_FIELD_KINDS,
    GlobalField,
    MeanFieldParams,
    ModelKind,
    ModelSpec,
)

__all__ = [
    "Dataset",
    "Segment",
    "FitConfig",
    "FitResult",
    "RunDiagnostics",
    "FitError",
    "DEFAULT_INIT_RANGES",
    "segment_partition",
    "initial_segments",
    "log_likelihood",
    "concentrated_loss",
    "profiled_log_likelihood",
    "predict",
    "r_squared",
    "fit_single",
    "fit_multi_start",
]

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8
_BFGS_GRAD_TOL = 1e-8
_ARMIJO_C = 1e-4
_MAX_COUPLING_RESCUES = 60

DEFAULT_INIT_RANGES: Mapping[str, tuple] = {
    "growth": (0.05, 0.15),
    "self_limitation": (0.5, 1.5),
    "alpha": (0.5, 1.5),
    "delta": (0.0005, 0.0015),
    "mu": (0.0005, 0.0015),
}

_KIND_INDEX = {kind: i for i, kind in enumerate(MEAN_FIELD_KINDS)}


class FitError(RuntimeError):
    """Raised when every optimisation run of a fit fails."""


@dataclass(frozen=True)
class Dataset:
    """Observed per-capita export values for one country."""

    country: str
    years: np.ndarray
    observations: np.ndarray  # (T, N), strictly positive
    activity_labels: tuple

    def __post_init__(self):
        years = np.asarray(self.years, dtype=int)
        obs = np.asarray(self.observations, dtype=float)
        if years.ndim != 1 or obs.ndim != 2 or obs.shape[0] != years.size:
            raise ValueError("observations must have one row per year")
        if years.size > 1 and np.any(np.diff(years) <= 0):
            raise ValueError("years must be strictly increasing")
        if not np.all(np.isfinite(obs)) or np.any(obs <= 0):
            raise ValueError("observations must be strictly positive and finite")
        if len(self.activity_labels) != obs.shape[1]:
            raise ValueError("one activity label per observation column required")
        years = years.copy()
        obs = obs.copy()
        years.flags.writeable = False
        obs.flags.writeable = False
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "activity_labels", tuple(self.activity_labels))

    @property
    def n_years(self) -> int:
        return self.years.size

    @property
    def n_activities(self) -> int:
        return self.observations.shape[1]


@dataclass(frozen=True)
class Segment:
    """Index range [start, end) into a dataset's time grid with its own
    estimated initial condition."""

    start: int
    end: int
    initial: np.ndarray

    def __post_init__(self):
        if self.end - self.start < 3:
            raise ValueError("segments must contain at least 3 points")
        init = np.asarray(self.initial, dtype=float)
        if init.ndim != 1 or not np.all(np.isfinite(init)) or np.any(init <= 0):
            raise ValueError("segment initial condition must be strictly positive")
        init = init.copy()
        init.flags.writeable = False
        object.__setattr__(self, "initial", init)

    @property
    def length(self) -> int:
        return self.end - self.start


def segment_partition(n_points: int, segment_length: int) -> list:
    """Split [0, n_points) into contiguous index ranges of `segment_length`.

    A trailing remainder shorter than 3 points is merged into the final
    segment; longer remainders become their own segment.
    """
    if n_points < 3:
        raise ValueError("need at least 3 time points to form a segment")
    if segment_length < 3:
        raise ValueError("segment length must be at least 3")
    n_full, remainder = divmod(n_points, segment_length)
    bounds = [(i * segment_length, (i + 1) * segment_length) for i in range(n_full)]
    if remainder:
        if remainder < 3 and bounds:
            start, _ = bounds[-1]
            bounds[-1] = (start, n_points)
        else:
            bounds.append((n_full * segment_length, n_points))
    return bounds


def initial_segments(dataset: Dataset, segment_length: int) -> list:
    """Partition a dataset with initial conditions at the observed values."""
    bounds = segment_partition(dataset.n_years, segment_length)
    return [
        Segment(start=s, end=e, initial=dataset.observations[s]) for s, e in bounds
    ]


# ---------------------------------------------------------------------------
# Objective: concentrated loss and its gradient in unconstrained coordinates
# ---------------------------------------------------------------------------

def _batched_plain_rhs(kind, r, b, c, field, offsets, cap):
    n_act = r.size

    if kind is ModelKind.NULL:
        def f(t, n):
            if n.max() > cap:
                return np.full_like(n, np.inf)
            return r * n * (1.0 - b * n)
    elif kind in (ModelKind.ALPHA_POS, ModelKind.ALPHA_NEG):
        def f(t, n):
            if n.max() > cap:
                return np.full_like(n, np.inf)
            others = n.sum(axis=1, keepdims=True) - n
            return r * n * (1.0 - b * n + c * others)
    elif kind is ModelKind.MU:
        def f(t, n):
            if n.max() > cap:
                return np.full_like(n, np.inf)
            gap = n.sum(axis=1, keepdims=True) - n_act * n
            return r * n * (1.0 - b * n) + c * gap
    elif kind is ModelKind.DELTA:
        def f(t, n):
            if n.max() > cap:
                return np.full_like(n, np.inf)
            phi = field.values_at(t + offsets)
            return r * n * (1.0 - b * n) + c * (phi - n)
    else:
        raise ValueError(f"cannot fit model kind {kind}")
    return f


def _batched_aug_rhs(kind, r, b, c, field, offsets, off_r, off_b, off_c, cap):
    """Batched state + forward-sensitivity RHS over (G, N, 1 + P) arrays.

    Exploits the row-constant-plus-diagonal structure of every sub-model's
    state Jacobian, so no N x N matrix is ever formed.  States beyond `cap`
    are flagged as divergent immediately so that hopeless parameter regions
    fail fast instead of being tracked to overflow.
    """
    n_act = r.size
    idx = np.arange(n_act)

    if kind is ModelKind.NULL:
        def f_aug(t, state):
            n = state[:, :, 0]
            if n.max() > cap:
                return np.full_like(state, np.inf)
            bn = b * n
            rn = r * n
            out = np.empty_like(state)
            out[:, :, 0] = rn * (1.0 - bn)
            sens = (r * (1.0 - 2.0 * bn))[:, :, None] * state[:, :, 1:]
            sens[:, idx, off_r + idx] += n * (1.0 - bn)
            sens[:, idx, off_b + idx] += -rn * n
            out[:, :, 1:] = sens
            return out
    elif kind in (ModelKind.ALPHA_POS, ModelKind.ALPHA_NEG):
        def f_aug(t, state):
            n = state[:, :, 0]
            if n.max() > cap:
                return np.full_like(state, np.inf)
            sub = state[:, :, 1:]
            others = n.sum(axis=1, keepdims=True) - n
            bn = b * n
            e = 1.0 - bn + c * others
            rn = r * n
            crn = c * rn
            out = np.empty_like(state)
            out[:, :, 0] = rn * e
            colsum = sub.sum(axis=1)
            sens = crn[:, :, None] * colsum[:, None, :]
            sens += (r * (e - bn) - crn)[:, :, None] * sub
            sens[:, idx, off_r + idx] += n * e
            sens[:, idx, off_b + idx] += -rn * n
            sens[:, :, off_c] += rn * others
            out[:, :, 1:] = sens
            return out
    elif kind is ModelKind.MU:
        def f_aug(t, state):
            n = state[:, :, 0]
            if n.max() > cap:
                return np.full_like(state, np.inf)
            sub = state[:, :, 1:]
            gap = n.sum(axis=1, keepdims=True) - n_act * n
            bn = b * n
            rn = r * n
            out = np.empty_like(state)
            out[:, :, 0] = rn * (1.0 - bn) + c * gap
            colsum = sub.sum(axis=1)
            sens = (r * (1.0 - 2.0 * bn) - c * n_act)[:, :, None] * sub
            sens += c * colsum[:, None, :]
            sens[:, idx, off_r + idx] += n * (1.0 - bn)
            sens[:, idx, off_b + idx] += -rn * n
            sens[:, :, off_c] += gap
            out[:, :, 1:] = sens
            return out
    elif kind is ModelKind.DELTA:
        def f_aug(t, state):
            n = state[:, :, 0]
            if n.max() > cap:
                return np.full_like(state, np.inf)
            gap = field.values_at(t + offsets) - n
            bn = b * n
            rn = r * n
            out = np.empty_like(state)
            out[:, :, 0] = rn * (1.0 - bn) + c * gap
            sens = (r * (1.0 - 2.0 * bn) - c)[:, :, None] * state[:, :, 1:]
            sens[:, idx, off_r + idx] += n * (1.0 - bn)
            sens[:, idx, off_b + idx] += -rn * n
            sens[:, :, off_c] += gap
            out[:, :, 1:] = sens
            return out
    else:
        raise ValueError(f"cannot fit model kind {kind}")
    return f_aug


class SegmentObjective:
    """Concentrated loss over all segments, in unconstrained coordinates.

    Unconstrained layout: [log r (N), log b (N), log |coupling| (0 or 1),
    log initial conditions (one block of N per segment)].  Segments whose
    observation grids coincide after shifting their start year to zero are
    integrated as one batch; the delta model's exogenous field is evaluated
    at per-segment absolute times, so batching is exact for every kind.
    """

    def __init__(
        self,
        kind: ModelKind,
        dataset: Dataset,
        segment_bounds: Sequence,
        field: Optional[GlobalField] = None,
        config: IntegratorConfig = IntegratorConfig(),
    ):
        if kind not in MEAN_FIELD_KINDS:
            raise ValueError(f"cannot fit model kind {kind}")
        if kind is ModelKind.DELTA and field is None:
            raise ValueError("delta model requires a global field")
        if field is not None and field.n_activities != dataset.n_activities:
            raise ValueError("field and dataset activity counts differ")
        self.kind = kind
        self.dataset = dataset
        self.field = field
        self.config = config
        self.bounds = [(int(s), int(e)) for s, e in segment_bounds]
        self.n_segments = len(self.bounds)
        n = dataset.n_activities
        self.n_activities = n
        self.has_coupling = kind is not ModelKind.NULL
        self.coupling_sign = -1.0 if kind is ModelKind.ALPHA_NEG else 1.0
        self.n_params = 2 * n + int(self.has_coupling) + self.n_segments * n
        self._ic_offset = 2 * n + int(self.has_coupling)
        # per-segment sensitivity column layout: [r | b | (c) | own ic]
        self._off_b = n
        self._off_c = 2 * n
        self._off_ic = 2 * n + int(self.has_coupling)
        self._p_cols = self._off_ic + n

        years = dataset.years.astype(float)
        # predictions this far beyond the data scale are treated as divergent
        self._state_cap = 1e4 * float(dataset.observations.max())
        self._ln_obs = np.log(dataset.observations)
        self.n_obs_total = dataset.n_years * n
        self.sum_ln_obs = float(self._ln_obs.sum())
        pooled_mean = self._ln_obs.mean()
        self.ss_tot = float(((self._ln_obs - pooled_mean) ** 2).sum())

        # group segments whose shifted grids coincide
        groups = {}
        for seg_idx, (s, e) in enumerate(self.bounds):
            shifted = years[s:e] - years[s]
            key = shifted.tobytes()
            groups.setdefault(key, {"times": shifted, "members": [], "offsets": []})
            groups[key]["members"].append(seg_idx)
            groups[key]["offsets"].append(years[s])
        self._groups = []
        for g in groups.values():
            members = g["members"]
            offsets = np.asarray(g["offsets"])
            ln_y = np.stack(
                [self._ln_obs[self.bounds[m][0]: self.bounds[m][1]] for m in members],
                axis=1,
            )  # (K, G, N)
            if kind is ModelKind.DELTA:
                shifted_breaks = (field.times[None, :] - offsets[:, None]).ravel()
            else:
                shifted_breaks = None
            self._groups.append(
                {
                    "times": g["times"],
                    "members": members,
                    "offsets": offsets,
                    "ln_y": ln_y,
                    "breaks": shifted_breaks,
                }
            )

    # -- coordinate transforms ------------------------------------------------

    def pack(self, params: MeanFieldParams, initials: Sequence) -> np.ndarray:
        u = np.empty(self.n_params)
        n = self.n_activities
        u[:n] = np.log(params.growth)
        u[n: 2 * n] = np.log(params.self_limitation)
        if self.has_coupling:
            if params.coupling is None or params.coupling == 0:
                raise ValueError("coupled models need a nonzero coupling to pack")
            u[2 * n] = math.log(abs(params.coupling))
        off = self._ic_offset
        for seg_idx, ic in enumerate(initials):
            u[off + seg_idx * n: off + (seg_idx + 1) * n] = np.log(ic)
        return u

    def natural(self, u: np.ndarray):
        """Map unconstrained coordinates to (r, b, coupling, ics).

        Coordinates are clamped to +-700 so the exponentials can neither
        overflow nor underflow to zero; beyond that range the parameters
        are numerically indistinguishable from the boundary anyway.
        """
        n = self.n_activities
        u = np.clip(u, -700.0, 700.0)
        r = np.exp(u[:n])
        b = np.exp(u[n: 2 * n])
        c = (
            self.coupling_sign * float(np.exp(u[2 * n]))
            if self.has_coupling
            else None
        )
        ics = np.exp(u[self._ic_offset:]).reshape(self.n_segments, n)
        return r, b, c, ics

    def unpack(self, u: np.ndarray):
        """Unconstrained coordinates to validated params and segments."""
        r, b, c, ics = self.natural(u)
        params = MeanFieldParams(growth=r, self_limitation=b, coupling=c)
        segments = [
            Segment(start=s, end=e, initial=ics[i])
            for i, (s, e) in enumerate(self.bounds)
        ]
        return params, segments

    # -- evaluation -----------------------------------------------------------

    def loss_from_natural(self, r, b, c, ics) -> float:
        """Sum of squared log residuals; +inf on integration failure."""
        finite = np.all(np.isfinite(r)) and np.all(np.isfinite(b)) and np.all(
            np.isfinite(ics)
        )
        if self.has_coupling:
            finite = finite and np.isfinite(c)
        if not finite:
            return math.inf
        total = 0.0
        for grp in self._groups:
            f = _batched_plain_rhs(self.kind, r, b, c, self.field, grp["offsets"],
                                   self._state_cap)
            y0 = np.asarray(ics)[grp["members"]]
            try:
                pred = solve_at_times(f, y0, grp["times"], self.config, grp["breaks"])
            except IntegrationFailure:
                return math.inf
            if np.any(pred <= 0):
                return math.inf
            total += float(((np.log(pred) - grp["ln_y"]) ** 2).sum())
        return total

    def loss(self, u: np.ndarray) -> float:
        return self.loss_from_natural(*self.natural(u))

    def loss_and_grad(self, u: np.ndarray):
        """Loss plus its gradient in unconstrained coordinates.

        Gradients flow through forward sensitivities and the chain rule of
        the log transforms; returns (inf, None) when integration fails.
        """
        r, b, c, ics = self.natural(u)
        finite = np.all(np.isfinite(r)) and np.all(np.isfinite(b)) and np.all(
            np.isfinite(ics)
        )
        if self.has_coupling:
            finite = finite and np.isfinite(c)
        if not finite:
            return math.inf, None

        n = self.n_activities
        idx = np.arange(n)
        total = 0.0
        grad = np.zeros(self.n_params)
        for grp in self._groups:
            members = grp["members"]
            n_members = len(members)
            f_aug = _batched_aug_rhs(
                self.kind, r, b, c, self.field, grp["offsets"],
                0, self._off_b, self._off_c, self._state_cap,
            )
            y0 = np.zeros((n_members, n, 1 + self._p_cols))
            y0[:, :, 0] = np.asarray(ics)[members]
            y0[:, idx, 1 + self._off_ic + idx] = 1.0
            try:
                raw = solve_at_times(
                    f_aug, y0, grp["times"], self.config, grp["breaks"]
                )
            except IntegrationFailure:
                return math.inf, None
            pred = raw[:, :, :, 0]  # (K, G, N)
            if np.any(pred <= 0):
                return math.inf, None
            resid = np.log(pred) - grp["ln_y"]
            total += float((resid**2).sum())
            weight = 2.0 * resid / pred
            g_nat = np.einsum("kgn,kgnp->gp", weight, raw[:, :, :, 1:])
            grad[:n] += g_nat[:, :n].sum(axis=0) * r
            grad[n: 2 * n] += g_nat[:, n: 2 * n].sum(axis=0) * b
            if self.has_coupling:
                grad[2 * n] += g_nat[:, self._off_c].sum() * c
            for gi, seg_idx in enumerate(members):
                block = self._ic_offset + seg_idx * n
                grad[block: block + n] += g_nat[gi, self._off_ic:] * ics[seg_idx]
        if not np.all(np.isfinite(grad)):
            return math.inf, None
        return total, grad


# ---------------------------------------------------------------------------
# Likelihood
# ---------------------------------------------------------------------------

def _segments_to_bounds(segments) -> list:
    return [(seg.start, seg.end) for seg in segments]


def concentrated_loss(
    model: ModelSpec,
    segments: Sequence[Segment],
    dataset: Dataset,
    field: Optional[GlobalField] = None,
    config: IntegratorConfig = IntegratorConfig(),
) -> float:
    """Sum of squared log residuals over all segments (+inf on failure).

    Minimising this over parameters is equivalent to maximising the
    log-normal likelihood with the noise scale at its closed-form MLE.
    """
    obj = SegmentObjective(model.kind, dataset, _segments_to_bounds(segments),
                           field, config)
    ics = np.stack([seg.initial for seg in segments])
    return obj.loss_from_natural(
        model.params.growth, model.params.self_limitation, model.params.coupling, ics
    )


def log_likelihood(
    model: ModelSpec,
    segments: Sequence[Segment],
    dataset: Dataset,
    sigma: float,
    field: Optional[GlobalField] = None,
    config: IntegratorConfig = IntegratorConfig(),
) -> float:
    """Log of the log-normal observation likelihood at noise level `sigma`.

    Each segment is integrated from its own initial condition; integration
    failure yields the -inf sentinel rather than an exception.
    """
    if sigma <= 0 or not np.isfinite(sigma):
        raise ValueError("sigma must be strictly positive")
    loss = concentrated_loss(model, segments, dataset, field, config)
    if math.isinf(loss):
        return -math.inf
    n_points = sum(seg.length for seg in segments)
    m = n_points * dataset.n_activities
    ln_obs = np.log(dataset.observations)
    sum_ln = float(sum(ln_obs[seg.start: seg.end].sum() for seg in segments))
    return (
        -0.5 * m * math.log(2.0 * math.pi)
        - m * math.log(sigma)
        - sum_ln
        - 0.5 * loss / sigma**2
    )


def profiled_log_likelihood(loss: float, n_obs_total: int, sum_ln_obs: float) -> float:
    """Log-likelihood with sigma at its MLE, sigma_hat^2 = loss / n_obs_total."""
    if math.isinf(loss):
        return -math.inf
    if loss == 0.0:
        return math.inf
    m = n_obs_total
    return -0.5 * m * (math.log(2.0 * math.pi) + math.log(loss / m) + 1.0) - sum_ln_obs


def predict(
    model: ModelSpec,
    segments: Sequence[Segment],
    dataset: Dataset,
    field: Optional[GlobalField] = None,
    config: IntegratorConfig = IntegratorConfig(),
) -> np.ndarray:
    """Model predictions on the dataset's year grid, segment by segment."""
    out = np.full_like(dataset.observations, np.nan)
    years = dataset.years.astype(float)
    for seg in segments:
        traj = integrate(
            model.kind, model.params, seg.initial, years[seg.start: seg.end],
            field=field, config=config,
        )
        out[seg.start: seg.end] = traj.states
    return out


# ---------------------------------------------------------------------------
# Optimisation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitConfig:
    """Hyperparameters of the two-phase multi-start fitting procedure."""

    segment_length: int = 20
    adam_epochs: int = 800
    adam_learning_rate: float = 1e-2
    quasi_newton_epochs: int = 800
    runs: int = 5
    seed: int = 0
    init_ranges: Mapping = field(default_factory=lambda: dict(DEFAULT_INIT_RANGES))
    # a much lower step budget than the standalone default makes divergent
    # or needlessly stiff parameter regions fail fast during optimisation;
    # legitimate fits use well under a tenth of this
    integrator: IntegratorConfig = field(
        default_factory=lambda: IntegratorConfig(max_steps=2_000)
    )

    def __post_init__(self):
        if self.segment_length < 3:
            raise ValueError("segment length must be at least 3")
        if self.runs < 1:
            raise ValueError("need at least one optimisation run")


@dataclass(frozen=True)
class RunDiagnostics:
    run_index: int
    init_loss: float
    loss_after_adam: float
    final_loss: float
    bfgs_iterations: int
    gradient_norm: float
    converged: bool
    coupling_rescues: int = 0
    failure: Optional[str] = None


@dataclass(frozen=True)
class FitResult:
    """Outcome of fitting one model kind to one dataset."""

    kind: ModelKind
    params: Optional[MeanFieldParams]
    segments: tuple
    log_likelihood: float
    sigma_hat: float
    r_squared: float
    diagnostics: tuple

    @property
    def success(self) -> bool:
        return self.params is not None and not math.isinf(self.log_likelihood)


def _failed_result(kind, diag) -> FitResult:
    return FitResult(
        kind=kind,
        params=None,
        segments=(),
        log_likelihood=-math.inf,
        sigma_hat=math.nan,
        r_squared=math.nan,
        diagnostics=(diag,),
    )


def _run_adam(obj: SegmentObjective, u0: np.ndarray, epochs: int, lr: float):
    u = u0.copy()
    m = np.zeros_like(u)
    v = np.zeros_like(u)
    best_u = u0.copy()
    best_loss = math.inf
    failures = 0
    for t in range(1, epochs + 1):
        lo, grad = obj.loss_and_grad(u)
        if grad is None:
            # stepped into a divergent region: back off and shorten steps
            failures += 1
            u = best_u.copy()
            lr *= 0.5
            if failures > 8:
                break
            continue
        if lo < best_loss:
            best_loss = lo
            best_u = u.copy()
        m = _ADAM_BETA1 * m + (1.0 - _ADAM_BETA1) * grad
        v = _ADAM_BETA2 * v + (1.0 - _ADAM_BETA2) * grad * grad
        m_hat = m / (1.0 - _ADAM_BETA1**t)
        v_hat = v / (1.0 - _ADAM_BETA2**t)
        u = u - lr * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)
    return u, best_u, best_loss


def _run_bfgs(obj: SegmentObjective, u0: np.ndarray, max_iters: int):
    """BFGS with Armijo backtracking; stops on small gradients, line-search
    failure or the iteration cap.  Returns (u, loss, iters, grad_norm,
    converged) or None when no finite start is available."""
    f_val, g = obj.loss_and_grad(u0)
    if g is None:
        return None
    u = u0.copy()
    dim = u.size
    h_inv = np.eye(dim)
    first_update = True
    converged = False
    iters = 0
    g_norm = float(np.linalg.norm(g))
    while iters < max_iters:
        if g_norm < _BFGS_GRAD_TOL:
            converged = True
            break
        direction = -(h_inv @ g)
        slope = float(direction @ g)
        if not np.all(np.isfinite(direction)) or slope >= 0.0:
            h_inv = np.eye(dim)
            first_update = True
            direction = -g
            slope = -float(g @ g)
        # cap the trial jump in log-parameter space; absurdly long probes
        # only waste integrations in stiff or divergent regions
        d_max = float(np.abs(direction).max())
        step = min(1.0, 5.0 / d_max) if d_max > 0 else 1.0
        accepted = False
        for _ in range(30):
            u_trial = u + step * direction
            f_trial = obj.loss(u_trial)
            if np.isfinite(f_trial) and f_trial <= f_val + _ARMIJO_C * step * slope:
                accepted = True
                break
            step *= 0.5
        iters += 1
        if not accepted:
            break
        f_new, g_new = obj.loss_and_grad(u_trial)
        if g_new is None:
            break
        s = step * direction
        yk = g_new - g
        sy = float(s @ yk)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(yk):
            if first_update:
                h_inv *= sy / float(yk @ yk)
                first_update = False
            rho = 1.0 / sy
            hy = h_inv @ yk
            h_inv -= rho * (np.outer(s, hy) + np.outer(hy, s))
            h_inv += (rho * rho * float(yk @ hy) + rho) * np.outer(s, s)
        u, f_val, g = u_trial, f_new, g_new
        g_norm = float(np.linalg.norm(g))
    return u, f_val, iters, g_norm, converged


def _coupling_range(kind: ModelKind, init_ranges: Mapping) -> tuple:
    return tuple(init_ranges[COUPLING_NAMES[kind]])


def fit_single(
    kind: ModelKind,
    dataset: Dataset,
    config: FitConfig,
    field: Optional[GlobalField] = None,
    rng: Optional[np.random.Generator] = None,
    run_index: int = 0,
) -> FitResult:
    """One optimisation run: random initialisation, ADAM, then BFGS."""
    if dataset.n_years < config.segment_length:
        raise ValueError(
            f"dataset has {dataset.n_years} years, below the segment length "
            f"{config.segment_length}"
        )
    if rng is None:
        rng = np.random.default_rng(config.seed)
    bounds = segment_partition(dataset.n_years, config.segment_length)
    obj = SegmentObjective(kind, dataset, bounds, field, config.integrator)

    n = dataset.n_activities
    lo, hi = config.init_ranges["growth"]
    r0 = rng.uniform(lo, hi, n)
    lo, hi = config.init_ranges["self_limitation"]
    b0 = rng.uniform(lo, hi, n)
    c0 = None
    if obj.has_coupling:
        lo, hi = _coupling_range(kind, config.init_ranges)
        c0 = obj.coupling_sign * rng.uniform(lo, hi)
    ics0 = [dataset.observations[s] for s, _ in bounds]
    params0 = MeanFieldParams(growth=r0, self_limitation=b0, coupling=c0)
    u = obj.pack(params0, ics0)

    # shrink the coupling toward zero until the trajectory stays finite;
    # large initial couplings can put the community in a divergent regime
    rescues = 0
    init_loss = obj.loss(u)
    while (
        not np.isfinite(init_loss)
        and obj.has_coupling
        and rescues < _MAX_COUPLING_RESCUES
    ):
        u[2 * n] -= math.log(2.0)
        rescues += 1
        init_loss = obj.loss(u)
    if not np.isfinite(init_loss):
        diag = RunDiagnostics(
            run_index=run_index, init_loss=math.inf, loss_after_adam=math.inf,
            final_loss=math.inf, bfgs_iterations=0, gradient_norm=math.nan,
            converged=False, coupling_rescues=rescues,
            failure="no finite starting point",
        )
        return _failed_result(kind, diag)

    u_adam, u_best, best_loss = _run_adam(
        obj, u, config.adam_epochs, config.adam_learning_rate
    )
    refined = _run_bfgs(obj, u_adam, config.quasi_newton_epochs)
    if refined is None and np.isfinite(best_loss):
        refined = _run_bfgs(obj, u_best, config.quasi_newton_epochs)
    if refined is None:
        diag = RunDiagnostics(
            run_index=run_index, init_loss=init_loss, loss_after_adam=math.inf,
            final_loss=math.inf, bfgs_iterations=0, gradient_norm=math.nan,
            converged=False, coupling_rescues=rescues,
            failure="optimisation diverged",
        )
        return _failed_result(kind, diag)
    u_final, final_loss, bfgs_iters, g_norm, converged = refined
    loss_after_adam = obj.loss(u_adam)
    if not np.isfinite(loss_after_adam):
        loss_after_adam = best_loss

    params, segments = obj.unpack(u_final)
    sigma_hat = math.sqrt(final_loss / obj.n_obs_total)
    ll = profiled_log_likelihood(final_loss, obj.n_obs_total, obj.sum_ln_obs)
    r2 = 1.0 - final_loss / obj.ss_tot if obj.ss_tot > 0 else math.nan
    diag = RunDiagnostics(
        run_index=run_index, init_loss=init_loss, loss_after_adam=loss_after_adam,
        final_loss=final_loss, bfgs_iterations=bfgs_iters, gradient_norm=g_norm,
        converged=converged, coupling_rescues=rescues,
    )
    return FitResult(
        kind=kind, params=params, segments=tuple(segments),
        log_likelihood=ll, sigma_hat=sigma_hat, r_squared=r2,
        diagnostics=(diag,),
    )


def _stable_country_key(country: str) -> int:
    return int.from_bytes(hashlib.sha256(country.encode()).digest()[:4], "big")


def run_stream(seed: int, country: str, kind: ModelKind, run: int) -> np.random.Generator:
    """Counter-style stream keyed by (seed, country, model, run); results are
    reproducible regardless of scheduling order."""
    key = (_stable_country_key(country), _KIND_INDEX[kind], run)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _fit_one_run(args) -> FitResult:
    kind, dataset, config, field, run = args
    rng = run_stream(config.seed, dataset.country, kind, run)
    return fit_single(kind, dataset, config, field, rng=rng, run_index=run)


def fit_multi_start(
    kind: ModelKind,
    dataset: Dataset,
    config: FitConfig,
    field: Optional[GlobalField] = None,
    jobs: int = 1,
) -> FitResult:
    """Fit from `config.runs` independent initialisations, keep the best run.

    Every run's diagnostics are attached to the returned result so that the
    similarity of run likelihoods can be cross-checked.  Raises FitError when
    every run fails.
    """
    tasks = [(kind, dataset, config, field, run) for run in range(config.runs)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_fit_one_run, tasks))
    else:
        results = [_fit_one_run(t) for t in tasks]

    best = None
    for res in results:
        if res.success and (best is None or res.log_likelihood > best.log_likelihood):
            best = res
    all_diags = tuple(res.diagnostics[0] for res in results)
    if best is None:
        raise FitError(
            f"all {config.runs} runs failed for {kind.value} on {dataset.country}"
        )
    return replace(best, diagnostics=all_diags)


def r_squared(
    fit: FitResult,
    dataset: Dataset,
    field: Optional[GlobalField] = None,
    config: IntegratorConfig = IntegratorConfig(),
) -> float:
    """Pooled log-space coefficient of determination of a successful fit."""
    if not fit.success:
        raise ValueError("cannot compute r_squared for a failed fit")
    ln_obs = np.log(dataset.observations)
    ss_tot = float(((ln_obs - ln_obs.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ValueError("constant observations leave r_squared undefined")
    pred = predict(ModelSpec(fit.kind, fit.params), fit.segments, dataset, field,
                   config)
    if np.any(pred <= 0) or not np.all(np.isfinite(pred)):
        return -math.inf
    ss_res = float(((ln_obs - np.log(pred)) ** 2).sum())
    return 1.0 - ss_res / ss_tot
