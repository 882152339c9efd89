"""Reference receivers: block Kabsch tracking, one-tap CMA/MMA and blind phase search.

Each compiled runner has a plain numpy counterpart used by the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from . import kernels
from .constellations import Constellation, build_constellation, decide_indices

# per-format receiver settings
KABSCH_BLOCK = {"PS-QPSK": 31}
BPS_WINDOW = {"PS-QPSK": 13}
BPS_PHASES = {"PM-64-QAM": 64, "PM-256-QAM": 64}
CMA_MU = {"PS-QPSK": 0.04, "PM-QPSK": 0.16, "PM-16-QAM": 0.04, "PM-64-QAM": 0.035, "PM-256-QAM": 0.017}


@dataclass(frozen=True)
class KabschConfig:
    block_len: int = 16

    def __post_init__(self):
        if self.block_len < 1:
            raise ValueError("block_len must be >= 1")

    @classmethod
    def for_format(cls, name: str) -> "KabschConfig":
        return cls(KABSCH_BLOCK.get(name, 16))


@dataclass(frozen=True)
class CmaConfig:
    mu: float  # times 1/Es^2
    stage_len: int = 5000  # symbols per radius stage during blind training

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be > 0")

    @classmethod
    def for_format(cls, name: str, **kw) -> "CmaConfig":
        return cls(CMA_MU[name], **kw)


@dataclass(frozen=True)
class BpsConfig:
    window: int = 19
    test_phases: int = 32

    def __post_init__(self):
        if self.window < 1 or self.test_phases < 2:
            raise ValueError("need window >= 1 and test_phases >= 2")

    @classmethod
    def for_format(cls, name: str) -> "BpsConfig":
        return cls(BPS_WINDOW.get(name, 19), BPS_PHASES.get(name, 32))


# ---- Kabsch ------------------------------------------------------------------


def procrustes(b: np.ndarray) -> np.ndarray:
    """Rotation G in SO(n) maximizing tr(G^T B), i.e. minimizing sum ||G y - x||^2 for B = sum x y^T."""
    u, _, vt = np.linalg.svd(b)
    d = np.eye(len(b))
    d[-1, -1] = np.sign(np.linalg.det(u @ vt))
    return u @ d @ vt


def _decider(c: Constellation):
    if c.is_qam:
        return c.points, c.unit, c.levels, c.rail_index
    return c.points, 0.0, 0, np.zeros((1, 1), dtype=np.int64)


def _vec4(points: np.ndarray) -> np.ndarray:
    return np.stack([points[:, 0].real, points[:, 0].imag, points[:, 1].real, points[:, 1].imag], axis=1)


def kabsch_reference(vy: np.ndarray, g: np.ndarray, c: Constellation, cfg: KabschConfig):
    g = np.array(g, dtype=float)
    decided = np.empty(len(vy), dtype=np.int64)
    for start in range(0, len(vy), cfg.block_len):
        blk = vy[start:start + cfg.block_len]
        v = blk @ g.T
        idx = decide_indices(v[:, 0::2] + 1j * v[:, 1::2], c)
        decided[start:start + len(blk)] = idx
        b = _vec4(c.points[idx]).T @ blk
        s = np.linalg.svd(b, compute_uv=False)
        if s[-1] > 1e-9 * s[0]:
            g = procrustes(b)
    return decided, g


def kabsch_track(vy: np.ndarray, g: np.ndarray, c: Constellation, cfg: KabschConfig):
    """Block-wise decision-directed rotation tracking; returns ``(decided, new estimate)``."""
    vy = np.ascontiguousarray(vy, dtype=float)
    g = np.array(g, dtype=float)
    decided = np.empty(len(vy), dtype=np.int64)
    kernels.kabsch(vy, g, cfg.block_len, *_decider(c), decided)
    return decided, g


# ---- CMA / MMA ----------------------------------------------------------------


def godard_radius(c: Constellation) -> float:
    a = c.points[:, 0]
    return math.sqrt(np.mean(np.abs(a) ** 4) / np.mean(np.abs(a) ** 2))


def radius_stages(c: Constellation, staged: bool = True) -> list[np.ndarray]:
    """Target-radius sets used one after another during blind training.

    Blind QAM training starts with a single (Godard) radius, then adds the ring
    sets of each smaller square QAM before the full set.
    """
    if not staged or not c.is_qam or len(c.mma_radii) == 1:
        return [c.mma_radii]
    stages = [np.array([godard_radius(c)])]
    for m in (16, 64):
        if m * m < c.size:
            stages.append(build_constellation(f"PM-{m}-QAM").mma_radii)
    stages.append(c.mma_radii)
    return stages


def cma_mma_step(w: np.ndarray, y: np.ndarray, mu: float, radii: np.ndarray):
    """One MMA update (CMA when ``radii`` has one entry); returns ``(z, new W)``."""
    z = w @ y
    r = np.abs(z)
    target = radii[np.argmin(np.abs(radii[None, :] - r[:, None]), axis=1)]
    e = target ** 2 - r ** 2
    return z, w + mu * np.outer(e * z, y.conj())


def run_cma(y: np.ndarray, w: np.ndarray, cfg: CmaConfig, stages: list[np.ndarray]):
    """Equalize a block; returns ``(z, new W)``."""
    y = np.ascontiguousarray(y, dtype=complex)
    w = np.array(w, dtype=complex)
    width = max(len(s) for s in stages)
    radii = np.zeros((len(stages), width))
    counts = np.array([len(s) for s in stages], dtype=np.int64)
    for i, s in enumerate(stages):
        radii[i, :len(s)] = s
    boundaries = cfg.stage_len * np.arange(1, len(stages), dtype=np.int64)
    z = np.empty_like(y)
    kernels.cma(y, w, cfg.mu, radii, counts, boundaries, z)
    return z, w


# ---- BPS ---------------------------------------------------------------------


def alphabet_2d(c: Constellation) -> np.ndarray:
    if c.is_qam:
        return c.alphabet
    return np.unique(np.round(c.points[:, 0], 15))  # QPSK points plus the idle zero


def phase_grid(cfg: BpsConfig) -> np.ndarray:
    return np.arange(cfg.test_phases) * (math.pi / 2) / cfg.test_phases - math.pi / 4


def _min_dist(z: np.ndarray, alphabet: np.ndarray) -> np.ndarray:
    return np.min(np.abs(z[..., None] - alphabet) ** 2, axis=-1)


def bps_decide(window: np.ndarray, cfg: BpsConfig, c: Constellation, prev: float = 0.0):
    """Phase for the center sample of ``window`` and its 2D decision index.

    The returned phase ``phi`` derotates as ``z * exp(1j * phi)`` and is unwrapped
    to the multiple of pi/2 nearest ``prev``.
    """
    alphabet = alphabet_2d(c)
    phis = phase_grid(cfg)
    cost = np.array([np.sum(_min_dist(window * np.exp(1j * p), alphabet)) for p in phis])
    phi = phis[int(np.argmin(cost))]
    phi += (math.pi / 2) * round((prev - phi) / (math.pi / 2))
    center = window[len(window) // 2] * np.exp(1j * phi)
    return phi, int(np.argmin(np.abs(center - alphabet)))


def bps_reference(z: np.ndarray, cfg: BpsConfig, c: Constellation) -> np.ndarray:
    """Loop over :func:`bps_decide` with the window truncated at the block edges."""
    half = cfg.window // 2
    out = np.empty(len(z))
    prev = 0.0
    for k in range(len(z)):
        window = z[max(0, k - half):k + half + 1]
        prev, _ = bps_decide(window, cfg, c, prev)
        out[k] = prev
    return out


def bps_track(z: np.ndarray, cfg: BpsConfig, c: Constellation) -> np.ndarray:
    """Per-sample derotation phases for one polarization."""
    z = np.ascontiguousarray(z, dtype=complex)
    out = np.empty(len(z))
    if c.is_qam:
        kernels.bps(z, cfg.test_phases, cfg.window, c.alphabet, c.unit, c.levels, out)
    else:
        kernels.bps(z, cfg.test_phases, cfg.window, alphabet_2d(c), 0.0, 0, out)
    return out


# ---- chain -------------------------------------------------------------------


def mma_bps_chain(y: np.ndarray, c: Constellation, cma: CmaConfig, bps: BpsConfig,
                  w0: np.ndarray | None = None, staged: bool = True):
    """MMA demultiplexing, then BPS per polarization, then 4D decisions.

    Returns ``(decided indices, final W, phases (n, 2))``.  Differential decoding
    is left to the caller.
    """
    w = np.eye(2, dtype=complex) if w0 is None else w0
    z, w = run_cma(y, w, cma, radius_stages(c, staged))
    phases = np.stack([bps_track(z[:, p], bps, c) for p in range(2)], axis=1)
    decided = decide_indices(z * np.exp(1j * phases), c)
    return decided, w, phases
