"""Blind decision-directed joint phase/SOP tracker (Jones, Stokes and 4D forms).

All three forms keep the *inverse* channel estimate and update it on the right,
``H_{k+1} = H_k T(-theta, -alpha)``, which is the inverse of left-multiplying
the channel estimate by ``T(theta, alpha)``.  The update parameters are one
gradient-descent step on the squared decision error, evaluated at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np

from . import kernels
from .algebra import (
    RHO, RHOBAR1, SIGMA, jones_combined, mueller_from_sop, reunitarize,
    rot4_from_params, stokes_from_jones, vec4_from_jones,
)
from .channel import NoiseParams
from .constellations import Constellation, decide, decide_stokes_index

# format constant c of the tracking-stage step-size rule
C_CONST = {"PS-QPSK": 27.0, "PM-QPSK": 64.0, "PM-16-QAM": 400.0, "PM-64-QAM": 2352.0, "PM-256-QAM": 6084.0}


@dataclass(frozen=True)
class StepParams:
    c_const: float
    stage_switch_k: int = 2000  # last index of the convergence stage; -1 skips it
    convergence_mu: float = 0.1  # times 1/Es
    sop_period: int = 1
    mu_floor: float = 1e-4  # times 1/Es, used when a linewidth is zero
    mu_ph: float | None = None  # explicit tracking-stage overrides (times 1/Es)
    mu_sop: float | None = None

    def __post_init__(self):
        if self.sop_period < 1:
            raise ValueError("sop_period must be >= 1")
        if self.c_const <= 0 or self.convergence_mu < 0:
            raise ValueError("step parameters must be positive")

    @classmethod
    def for_format(cls, name: str, **kw) -> "StepParams":
        return cls(C_CONST[name], **kw)

    def frozen(self) -> "StepParams":
        return replace(self, stage_switch_k=-1, mu_ph=0.0, mu_sop=0.0)


def tracking_steps(steps: StepParams, params: NoiseParams, es: float) -> tuple[float, float]:
    def rule(linewidth, override):
        if override is not None:
            return override / es
        if linewidth <= 0:
            return steps.mu_floor / es
        return math.sqrt(linewidth * params.symbol_time * steps.c_const) / es

    return rule(params.delta_nu, steps.mu_ph), rule(params.delta_p, steps.mu_sop)


def step_sizes(k: int, steps: StepParams, params: NoiseParams, es: float) -> tuple[float, float]:
    if k <= steps.stage_switch_k:
        mu = steps.convergence_mu / es
        return mu, mu
    return tracking_steps(steps, params, es)


@dataclass
class TrackerState:
    h_matrix: np.ndarray
    steps: StepParams
    params: NoiseParams
    k: int = 0
    last_update: np.ndarray = field(default_factory=lambda: np.zeros(4))


@dataclass
class StokesTrackerState:
    m_inv: np.ndarray
    steps: StepParams
    params: NoiseParams
    k: int = 0
    last_update: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass
class Rot4TrackerState:
    r_inv: np.ndarray
    steps: StepParams
    params: NoiseParams
    k: int = 0
    last_update: np.ndarray = field(default_factory=lambda: np.zeros(4))


# ---- error functions (what each update descends) ----------------------------


def jones_error(h, y, xhat, theta, alpha) -> float:
    r = h @ jones_combined(-theta, -np.asarray(alpha)) @ y - xhat
    return float(np.vdot(r, r).real)


def stokes_error(m_inv, s_y, s_hat, alpha) -> float:
    r = m_inv @ mueller_from_sop(-np.asarray(alpha)) @ s_y - s_hat
    return float(r @ r)


def rot4_error(r_inv, v_y, v_hat, theta, alpha) -> float:
    r = r_inv @ rot4_from_params(-theta, -np.asarray(alpha)) @ v_y - v_hat
    return float(r @ r)


def jones_gradient(h, y, xhat) -> tuple[float, np.ndarray]:
    """Gradient of :func:`jones_error` in (theta, alpha) at the origin."""
    z = h @ y
    a = z - xhat
    g_theta = 2 * np.vdot(a, 1j * z).real
    g_alpha = np.array([2 * np.vdot(a, 1j * (h @ (s @ y))).real for s in SIGMA])
    return g_theta, g_alpha


# ---- single-symbol reference steps ------------------------------------------


def _maybe_renorm(m, k):
    return reunitarize(m) if k % kernels.RENORM_PERIOD == 0 else m


def track_jones(state: TrackerState, y, c: Constellation):
    """One symbol of the Jones tracker; returns ``(decided index, new state)``."""
    y = np.asarray(y, dtype=complex)
    h = state.h_matrix
    z = h @ y
    idx, xhat = decide(z, c)
    mu_ph, mu_sop = step_sizes(state.k, state.steps, state.params, c.es)
    a = z - xhat
    theta = -2 * mu_ph * np.vdot(a, 1j * z).real
    alpha = np.zeros(3)
    if state.k % state.steps.sop_period == 0:
        alpha = np.array([-2 * mu_sop * np.vdot(a, 1j * (h @ (s @ y))).real for s in SIGMA])
    h_new = _maybe_renorm(h @ jones_combined(-theta, -alpha), state.k + 1)
    return idx, replace(state, h_matrix=h_new, k=state.k + 1, last_update=np.r_[theta, alpha])


def track_stokes(state: StokesTrackerState, s_y, c: Constellation):
    """One symbol of the Stokes tracker (SOP only); returns ``(Stokes index, new state)``."""
    s_y = np.asarray(s_y, dtype=float)
    m = state.m_inv
    u = m @ s_y
    j = int(decide_stokes_index(u, c))
    _, mu_sop = step_sizes(state.k, state.steps, state.params, c.es)
    alpha = np.zeros(3)
    if state.k % state.steps.sop_period == 0:
        a = u - c.stokes_points[j]
        alpha = np.array([4 * mu_sop * a @ m @ np.cross(e, s_y) for e in np.eye(3)])
        m = m @ mueller_from_sop(-alpha)
    m = _maybe_renorm(m, state.k + 1)
    return j, replace(state, m_inv=m, k=state.k + 1, last_update=alpha)


def track_rot4(state: Rot4TrackerState, v_y, c: Constellation):
    """One symbol of the real-4D tracker; returns ``(decided index, new state)``."""
    v_y = np.asarray(v_y, dtype=float)
    r = state.r_inv
    v = r @ v_y
    idx, xhat = decide(v[0::2] + 1j * v[1::2], c)
    mu_ph, mu_sop = step_sizes(state.k, state.steps, state.params, c.es)
    a = v - vec4_from_jones(xhat)
    theta = 2 * mu_ph * a @ r @ RHOBAR1 @ v_y
    alpha = np.zeros(3)
    if state.k % state.steps.sop_period == 0:
        alpha = np.array([-2 * mu_sop * a @ r @ rho @ v_y for rho in RHO])
    r_new = _maybe_renorm(r @ rot4_from_params(-theta, -alpha), state.k + 1)
    return idx, replace(state, r_inv=r_new, k=state.k + 1, last_update=np.r_[theta, alpha])


# ---- compiled block runners -------------------------------------------------


def _decider(c: Constellation):
    if c.is_qam:
        return c.points, c.unit, c.levels, c.rail_index
    return c.points, 0.0, 0, np.zeros((1, 1), dtype=np.int64)


def _mus(state, c):
    mu_ph, mu_sop = tracking_steps(state.steps, state.params, c.es)
    return state.steps.convergence_mu / c.es, mu_ph, mu_sop


def run_jones(state: TrackerState, y: np.ndarray, c: Constellation, record: bool = False):
    """Track a block; returns ``(decided indices, new state, taps or None)``."""
    y = np.ascontiguousarray(y, dtype=complex)
    h = np.array(state.h_matrix, dtype=complex)
    decided = np.empty(len(y), dtype=np.int64)
    taps = np.empty((len(y) if record else 0, 4))
    kernels.track_jones(
        y, h, *_decider(c), *_mus(state, c), state.steps.stage_switch_k,
        state.steps.sop_period, state.k, decided, taps,
    )
    return decided, replace(state, h_matrix=h, k=state.k + len(y)), (taps if record else None)


def run_rot4(state: Rot4TrackerState, vy: np.ndarray, c: Constellation, record: bool = False):
    vy = np.ascontiguousarray(vy, dtype=float)
    r = np.array(state.r_inv, dtype=float)
    decided = np.empty(len(vy), dtype=np.int64)
    taps = np.empty((len(vy) if record else 0, 4))
    kernels.track_rot4(
        vy, r, *_decider(c), *_mus(state, c), state.steps.stage_switch_k,
        state.steps.sop_period, state.k, decided, taps, RHO, RHOBAR1,
    )
    return decided, replace(state, r_inv=r, k=state.k + len(vy)), (taps if record else None)


def run_stokes(state: StokesTrackerState, sy: np.ndarray, c: Constellation, record: bool = False):
    sy = np.ascontiguousarray(sy, dtype=float)
    m = np.array(state.m_inv, dtype=float)
    decided = np.empty(len(sy), dtype=np.int64)
    taps = np.empty((len(sy) if record else 0, 3))
    mu_conv, _, mu_sop = _mus(state, c)
    kernels.track_stokes(
        sy, m, c.stokes_points, mu_conv, mu_sop, state.steps.stage_switch_k,
        state.steps.sop_period, state.k, decided, taps,
    )
    return decided, replace(state, m_inv=m, k=state.k + len(sy)), (taps if record else None)


def stokes_of(y: np.ndarray) -> np.ndarray:
    return stokes_from_jones(y)
