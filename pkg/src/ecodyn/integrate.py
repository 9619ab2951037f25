"""Adaptive explicit ODE integration with dense output and forward sensitivities.

The stepper is a Dormand-Prince 5(4) embedded Runge-Kutta pair with PI step
control and the standard quartic dense-output interpolant, evaluated at the
requested observation times as the integration passes them.  Gradients for
the fitting machinery come from forward sensitivity equations

    dS/dt = (df/dn) S + df/dtheta,      S(t0) = [0 | I]

integrated jointly with the state, using the analytic Jacobians from
`ecodyn.models`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .models import (
    CommunityState,
    GeneralParams,
    GlobalField,
    MeanFieldParams,
    ModelKind,
    general_rhs,
    mean_field_rhs,
    mean_field_rhs_with_jacobians,
)

__all__ = [
    "IntegratorConfig",
    "IntegrationFailure",
    "Trajectory",
    "SensitivityTrajectory",
    "integrate",
    "integrate_with_sensitivity",
    "integrate_general",
]

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# difference between the 5th- and embedded 4th-order weights
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)
# quartic dense-output coefficients (Shampine's continuous extension)
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
# PI controller exponents for a 5(4) pair
_BETA = 0.04
_ALPHA = 0.2 - 0.75 * _BETA


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-6
    abs_tol: float = 1e-8
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be strictly positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


class IntegrationFailure(RuntimeError):
    """Integration could not reach the end time.

    Carries the last time at which the state was still valid; the fitter
    maps this failure to an infinite loss.
    """

    def __init__(self, message: str, last_valid_time: float):
        super().__init__(f"{message} (last valid time {last_valid_time:g})")
        self.last_valid_time = last_valid_time


@dataclass(frozen=True)
class Trajectory:
    """Model states sampled at the requested output times."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        if self.states.shape[0] != self.times.size:
            raise ValueError("states must have one row per output time")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("trajectory contains non-finite states")


@dataclass(frozen=True)
class SensitivityTrajectory:
    """Trajectory plus d state / d parameter at every output time."""

    trajectory: Trajectory
    sensitivities: np.ndarray  # (T, N, P)
    parameter_labels: tuple

    @property
    def times(self) -> np.ndarray:
        return self.trajectory.times

    @property
    def states(self) -> np.ndarray:
        return self.trajectory.states


def _error_norm(err: np.ndarray, scale: np.ndarray) -> float:
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(f, t0, y0, f0, rtol, atol, t_span):
    scale = atol + rtol * np.abs(y0)
    d0 = float(np.sqrt(np.mean((y0 / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((f0 / scale) ** 2)))
    if not np.isfinite(d0) or not np.isfinite(d1):
        return 1e-10
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    f1 = f(t0 + h0, y1)
    if not np.all(np.isfinite(f1)):
        return max(h0 * 1e-3, 1e-10)
    d2 = float(np.sqrt(np.mean(((f1 - f0) / scale) ** 2))) / h0
    if not np.isfinite(d2):
        return max(h0 * 1e-3, 1e-10)
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, t_span)


def solve_at_times(
    f: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    output_times: np.ndarray,
    config: IntegratorConfig,
    breakpoints: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Integrate y' = f(t, y) and sample the solution at `output_times`.

    `y0` is the state at `output_times[0]`; any array shape is accepted and
    error control covers every component.  `breakpoints` forces steps to land
    on times where the RHS loses smoothness (kinks of piecewise-linear
    forcings).  Raises IntegrationFailure on step exhaustion, step-size
    underflow or a non-finite state.
    """
    times = np.asarray(output_times, dtype=float)
    t0, t_end = times[0], times[-1]
    outputs = np.empty((times.size,) + y0.shape)
    outputs[0] = y0
    if times.size == 1:
        return outputs

    if breakpoints is None:
        breaks = np.empty(0)
    else:
        bp = np.asarray(breakpoints, dtype=float)
        breaks = np.unique(bp[(bp > t0) & (bp < t_end)])
    n_breaks = breaks.size
    next_break = 0

    # the quartic interpolant loses accuracy on steps spanning many output
    # intervals, so cap the step relative to the requested sampling
    h_max = 4.0 * float(np.median(np.diff(times)))

    rtol, atol = config.rel_tol, config.abs_tol
    t = t0
    y = y0.astype(float, copy=True)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        f_curr = f(t, y)
        if not np.all(np.isfinite(f_curr)):
            raise IntegrationFailure("non-finite derivative at initial state", t)
        h = _initial_step(f, t, y, f_curr, rtol, atol, t_end - t0)
        h_floor = 1e-13 * max(abs(t0), abs(t_end), 1.0)
        err_prev = 1.0
        next_out = 1
        k = np.empty((7,) + y.shape)
        steps = 0
        rejected = False

        while t < t_end:
            if steps >= config.max_steps:
                raise IntegrationFailure("maximum step count exhausted", t)
            if h < h_floor:
                raise IntegrationFailure("step size underflow", t)
            h = min(h, h_max)
            limit = breaks[next_break] if next_break < n_breaks else t_end
            # stretch slightly oversized steps onto the limit to avoid leaving
            # a sliver that would underflow the step floor
            capped = h >= 0.95 * (limit - t)
            h_try = limit - t if capped else h

            k[0] = f_curr
            for s in range(1, 7):
                y_stage = y + h_try * np.tensordot(_A[s], k[:s], axes=1)
                k[s] = f(t + _C[s] * h_try, y_stage)
            y_new = y + h_try * np.tensordot(_B, k, axes=1)
            err = h_try * np.tensordot(_E, k, axes=1)
            steps += 1

            if not np.all(np.isfinite(y_new)):
                h = h_try * _MIN_FACTOR
                rejected = True
                continue
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err_norm = _error_norm(err, scale)
            if not np.isfinite(err_norm):
                h = h_try * _MIN_FACTOR
                rejected = True
                continue
            if err_norm > 1.0:
                h = h_try * max(_MIN_FACTOR, _SAFETY * err_norm ** (-0.2))
                rejected = True
                continue

            t_new = limit if capped else t + h_try
            while next_out < times.size and times[next_out] <= t_new:
                if times[next_out] == t_new:
                    outputs[next_out] = y_new
                else:
                    theta = (times[next_out] - t) / h_try
                    w = _P @ np.array([theta, theta**2, theta**3, theta**4])
                    outputs[next_out] = y + h_try * np.tensordot(w, k, axes=1)
                next_out += 1
            if capped and t_new != t_end:
                next_break += 1
            # FSAL: stage 7 is the derivative at the accepted point
            f_curr = k[6]
            y = y_new
            t = t_new
            factor = _SAFETY * (err_norm + 1e-16) ** (-_ALPHA) * err_prev**_BETA
            factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
            if rejected:
                factor = min(1.0, factor)
            h = h_try * factor
            err_prev = err_norm + 1e-16
            rejected = False

        if not np.all(np.isfinite(outputs)):
            raise IntegrationFailure("non-finite output state", t)
    return outputs


def _state_array(initial) -> np.ndarray:
    if isinstance(initial, CommunityState):
        return np.asarray(initial.values, dtype=float)
    arr = np.asarray(initial, dtype=float)
    if arr.ndim != 1 or not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("initial state must be a finite non-negative vector")
    return arr


def _check_output_times(output_times) -> np.ndarray:
    times = np.asarray(output_times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("output_times must be a non-empty vector")
    if times.size > 1 and np.any(np.diff(times) <= 0):
        raise ValueError("output_times must be strictly increasing")
    return times


def integrate(
    kind: ModelKind,
    params: MeanFieldParams,
    initial,
    output_times,
    field: Optional[GlobalField] = None,
    config: IntegratorConfig = IntegratorConfig(),
) -> Trajectory:
    """Solve one mean-field sub-model, sampling at the observation times."""
    times = _check_output_times(output_times)
    y0 = _state_array(initial)
    f = mean_field_rhs(kind, params, field)
    breaks = field.times if kind is ModelKind.DELTA and field is not None else None
    states = solve_at_times(f, y0, times, config, breakpoints=breaks)
    return Trajectory(times=times, states=states)


def integrate_general(
    params_per_country: Sequence[GeneralParams],
    initial_states: np.ndarray,
    output_times,
    config: IntegratorConfig = IntegratorConfig(),
) -> Trajectory:
    """Jointly simulate all countries under the general model.

    `initial_states` has shape (M, N); the returned trajectory's states have
    shape (T, M, N).
    """
    times = _check_output_times(output_times)
    y0 = np.asarray(initial_states, dtype=float)
    if y0.ndim != 2 or y0.shape[0] != len(params_per_country):
        raise ValueError("initial_states must be an (n_countries, n_activities) array")
    f = general_rhs(params_per_country)
    states = solve_at_times(f, y0, times, config)
    return Trajectory(times=times, states=states)


_ALL_BLOCKS = ("growth", "self_limitation", "coupling", "initial")


def sensitivity_labels(
    kind: ModelKind, n_activities: int, blocks: Sequence[str]
) -> tuple:
    labels = []
    for block in blocks:
        if block == "coupling":
            labels.append("coupling")
        else:
            labels.extend(f"{block}[{i}]" for i in range(n_activities))
    return tuple(labels)


def integrate_with_sensitivity(
    kind: ModelKind,
    params: MeanFieldParams,
    initial,
    output_times,
    field: Optional[GlobalField] = None,
    config: IntegratorConfig = IntegratorConfig(),
    param_selector: Optional[Sequence[str]] = None,
) -> SensitivityTrajectory:
    """Integrate the model jointly with its forward sensitivity equations.

    `param_selector` picks the differentiated parameter blocks from
    ("growth", "self_limitation", "coupling", "initial"); the default is all
    blocks applicable to `kind`.  Sensitivities are with respect to the
    natural (untransformed) parameters.
    """
    times = _check_output_times(output_times)
    n0 = _state_array(initial)
    n_act = n0.size

    if param_selector is None:
        blocks = [b for b in _ALL_BLOCKS if b != "coupling" or kind is not ModelKind.NULL]
    else:
        blocks = list(param_selector)
        for b in blocks:
            if b not in _ALL_BLOCKS:
                raise ValueError(f"unknown parameter block {b!r}")
        if "coupling" in blocks and kind is ModelKind.NULL:
            raise ValueError("null model has no coupling parameter")

    offsets = {}
    pos = 0
    for b in blocks:
        offsets[b] = pos
        pos += 1 if b == "coupling" else n_act
    n_params = pos

    fjac = mean_field_rhs_with_jacobians(kind, params, field)
    idx = np.arange(n_act)

    has_r = "growth" in blocks
    has_b = "self_limitation" in blocks
    has_c = "coupling" in blocks
    off_r = offsets.get("growth", 0)
    off_b = offsets.get("self_limitation", 0)
    off_c = offsets.get("coupling", 0)

    def f_aug(t, state):
        n = state[:, 0]
        dn, jac, g_r, g_b, g_c = fjac(t, n)
        out = np.empty_like(state)
        out[:, 0] = dn
        sens = jac @ state[:, 1:]
        if has_r:
            sens[idx, off_r + idx] += g_r
        if has_b:
            sens[idx, off_b + idx] += g_b
        if has_c:
            sens[:, off_c] += g_c
        out[:, 1:] = sens
        return out

    y0 = np.zeros((n_act, 1 + n_params))
    y0[:, 0] = n0
    if "initial" in blocks:
        y0[idx, 1 + offsets["initial"] + idx] = 1.0

    breaks = field.times if kind is ModelKind.DELTA and field is not None else None
    raw = solve_at_times(f_aug, y0, times, config, breakpoints=breaks)
    trajectory = Trajectory(times=times, states=raw[:, :, 0])
    return SensitivityTrajectory(
        trajectory=trajectory,
        sensitivities=raw[:, :, 1:],
        parameter_labels=sensitivity_labels(kind, n_act, blocks),
    )


def fixed_step_solve(
    f: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    t0: float,
    t_end: float,
    n_steps: int,
) -> np.ndarray:
    """Fixed-step Dormand-Prince solve; used to verify the method's order."""
    h = (t_end - t0) / n_steps
    y = y0.astype(float, copy=True)
    t = t0
    k = np.empty((7,) + y.shape)
    for _ in range(n_steps):
        k[0] = f(t, y)
        for s in range(1, 7):
            k[s] = f(t + _C[s] * h, y + h * np.tensordot(_A[s], k[:s], axes=1))
        y = y + h * np.tensordot(_B, k, axes=1)
        t += h
    return y
