"""Random phase-noise and SOP-drift channel, ``y_k = T_k x_k + n_k``.

Each symbol consumes eight standard normals from the channel stream, in the
order ``[n1.re, n1.im, n2.re, n2.im, nu', a1', a2', a3']`` (noise for ``y_k``
first, then the innovations producing ``T_{k+1}``).  The single-step functions
and :func:`propagate` therefore produce identical trajectories.  Normals come
from numpy's PCG64 generator (ziggurat sampler).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np

from . import kernels
from .algebra import jones_combined, reunitarize, sop_from_unit4

DRAWS_PER_SYMBOL = 8
CHUNK = 1 << 18


@dataclass(frozen=True)
class NoiseParams:
    delta_nu: float = 0.0  # Hz, sum of laser linewidths
    delta_p: float = 0.0  # Hz, polarization linewidth
    symbol_time: float = 1 / 28e9  # s
    n0: float = 0.0  # E[n n^H] = n0 * I2

    def __post_init__(self):
        for name in ("delta_nu", "delta_p", "symbol_time", "n0"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be finite and >= 0, got {value}")

    @property
    def sigma_nu2(self) -> float:
        return 2 * math.pi * self.delta_nu * self.symbol_time

    @property
    def sigma_p2(self) -> float:
        return 2 * math.pi * self.delta_p * self.symbol_time

    @classmethod
    def from_products(cls, delta_nu_t=0.0, delta_p_t=0.0, snr_db=math.inf, baud=28e9, es=1.0):
        """Build from linewidth-symbol-time products and SNR = Es/N0 in dB."""
        n0 = 0.0 if math.isinf(snr_db) else es * 10 ** (-snr_db / 10)
        return cls(delta_nu_t * baud, delta_p_t * baud, 1 / baud, n0)


@dataclass
class RngStream:
    """A reproducible random stream keyed by ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> "RngStream":
        """Independent sub-stream; keyed, so order of creation does not matter."""
        return RngStream(self.seed, self.stream_id * 1_000_003 + 17 + index)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, size=None):
        return self.generator.random(size)

    def integers(self, high, size=None):
        return self.generator.integers(0, high, size)


@dataclass
class ChannelState:
    t_matrix: np.ndarray
    params: NoiseParams
    rng: RngStream
    k: int = 0
    theta0: float = 0.0
    alpha0: np.ndarray = field(default_factory=lambda: np.zeros(3))


def initial_matrix(g, theta0: float) -> np.ndarray:
    return jones_combined(theta0, sop_from_unit4(g))


def init_channel(params: NoiseParams, rng: RngStream) -> ChannelState:
    """Uniformly random SOP (via a normalized 4D Gaussian) and uniform phase."""
    g = rng.normal(4)
    theta0 = 2 * math.pi * rng.uniform()
    alpha0 = sop_from_unit4(g)
    return ChannelState(jones_combined(theta0, alpha0), params, rng, 0, theta0, alpha0)


def _innovation(params: NoiseParams, d: np.ndarray) -> np.ndarray:
    return jones_combined(math.sqrt(params.sigma_nu2) * d[0], math.sqrt(params.sigma_p2) * d[1:4])


def transmit(state: ChannelState, x) -> np.ndarray:
    d = state.rng.normal(4)
    std = math.sqrt(state.params.n0 / 2)
    return state.t_matrix @ np.asarray(x, dtype=complex) + std * (d[[0, 2]] + 1j * d[[1, 3]])


def step_channel(state: ChannelState) -> ChannelState:
    d = state.rng.normal(4)
    t = _innovation(state.params, d) @ state.t_matrix
    k = state.k + 1
    if k % kernels.RENORM_PERIOD == 0:
        t = reunitarize(t)
    return replace(state, t_matrix=t, k=k)


def propagate(state: ChannelState, x: np.ndarray, innovations: np.ndarray | None = None):
    """Send a block of symbols; returns ``(y, new_state)``.

    Equivalent to alternating :func:`transmit` and :func:`step_channel`.  If
    ``innovations`` (shape ``(n, 4)``) is given it receives ``(nu', a1', a2', a3')``.
    """
    x = np.ascontiguousarray(x, dtype=complex)
    n = x.shape[0]
    y = np.empty_like(x)
    t = np.array(state.t_matrix, dtype=complex)
    p = state.params
    s_nu, s_p, std = math.sqrt(p.sigma_nu2), math.sqrt(p.sigma_p2), math.sqrt(p.n0 / 2)
    for start in range(0, n, CHUNK):
        stop = min(n, start + CHUNK)
        draws = state.rng.normal((stop - start, DRAWS_PER_SYMBOL))
        kernels.propagate(t, x[start:stop], draws, s_nu, s_p, std, state.k + start, y[start:stop])
        if innovations is not None:
            innovations[start:stop, 0] = s_nu * draws[:, 4]
            innovations[start:stop, 1:] = s_p * draws[:, 5:]
    return y, replace(state, t_matrix=t, k=state.k + n)


def measured_snr_db(x: np.ndarray, y: np.ndarray, t_free: np.ndarray) -> float:
    """Es/N0 from a block: ``t_free`` is the noiseless ``T_k x_k``."""
    es = np.mean(np.sum(np.abs(x) ** 2, axis=1))
    n0 = np.mean(np.sum(np.abs(y - t_free) ** 2, axis=1)) / 2
    return 10 * math.log10(es / n0)


__all__ = [
    "NoiseParams", "RngStream", "ChannelState", "init_channel", "step_channel",
    "transmit", "propagate", "initial_matrix", "measured_snr_db",
]
