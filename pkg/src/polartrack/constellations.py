"""4D modulation formats, decisions and per-polarization differential coding.

PM-M-QAM points are indexed ``i4 = ix * M2 + iy`` where ``ix, iy`` index the
per-polarization alphabet.  A 2D index is ``q * Mq + r``: ``q`` is the quadrant
(the point is ``i**q * base[r]``) and ``r`` a Gray label inside the first
quadrant.  PS-QPSK points are indexed ``p * 4 + q`` with ``p`` the active
polarization.  All formats are normalized to unit average symbol energy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np

from .algebra import stokes_from_jones

FORMATS = ("PS-QPSK", "PM-QPSK", "PM-16-QAM", "PM-64-QAM", "PM-256-QAM")

_QAM_ORDER = {"PM-QPSK": 4, "PM-16-QAM": 16, "PM-64-QAM": 64, "PM-256-QAM": 256}


class UnknownFormatError(ValueError):
    pass


def _gray(n: int) -> int:
    return n ^ (n >> 1)


@dataclass(frozen=True, eq=False)
class Constellation:
    name: str
    points: np.ndarray  # (M, 2) complex
    mma_radii: np.ndarray  # distinct per-polarization moduli
    stokes_points: np.ndarray  # (K, 3), deduplicated
    stokes_index: np.ndarray  # (M,) index of each point's Stokes image
    # per-polarization structure (square QAM only)
    alphabet: np.ndarray | None = None  # (M2,) complex
    levels: int = 0  # amplitude levels per rail
    unit: float = 0.0  # half the spacing between adjacent levels
    rail_index: np.ndarray | None = field(default=None, repr=False)  # (L, L) -> 2D index

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def es(self) -> float:
        return float(np.mean(np.sum(np.abs(self.points) ** 2, axis=1)))

    @property
    def is_qam(self) -> bool:
        return self.alphabet is not None

    @property
    def quadrant_size(self) -> int:
        return len(self.alphabet) // 4 if self.is_qam else 1


def _stokes_images(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = stokes_from_jones(points)
    keys = np.round(s, 9) + 0.0  # +0.0 folds -0.0 into 0.0
    uniq, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    # keep first-appearance order so indices are stable and ties go low
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return s[first[order]], remap[inverse.ravel()]


def _square_qam(m2: int):
    levels = math.isqrt(m2)
    half = levels // 2
    mq = m2 // 4
    base = np.empty(mq, dtype=complex)
    for ji in range(half):
        for jq in range(half):
            base[_gray(ji) * half + _gray(jq)] = complex(2 * ji + 1, 2 * jq + 1)
    alphabet = np.concatenate([(1j) ** q * base for q in range(4)])
    rail_index = np.empty((levels, levels), dtype=np.int64)
    for idx, p in enumerate(alphabet):
        ii = int(round((p.real + levels - 1) / 2))
        iq = int(round((p.imag + levels - 1) / 2))
        rail_index[ii, iq] = idx
    return alphabet, levels, rail_index


@lru_cache(maxsize=None)
def build_constellation(name: str) -> Constellation:
    if name == "PS-QPSK":
        qpsk = (1j) ** np.arange(4) * (1 + 1j) / math.sqrt(2)
        zeros = np.zeros(4, dtype=complex)
        points = np.concatenate(
            [np.stack([qpsk, zeros], axis=1), np.stack([zeros, qpsk], axis=1)]
        )
        s_pts, s_idx = _stokes_images(points)
        return Constellation(name, points, np.array([0.0, 1.0]), s_pts, s_idx)
    if name not in _QAM_ORDER:
        raise UnknownFormatError(f"unknown format {name!r}; choose from {FORMATS}")
    alphabet, levels, rail_index = _square_qam(_QAM_ORDER[name])
    e2 = np.mean(np.abs(alphabet) ** 2)
    scale = 1.0 / math.sqrt(2 * e2)
    alphabet = alphabet * scale
    m2 = len(alphabet)
    points = np.stack([np.repeat(alphabet, m2), np.tile(alphabet, m2)], axis=1)
    mod = np.abs(alphabet)
    _, first = np.unique(np.round(mod, 9), return_index=True)
    radii = np.sort(mod[first])  # exact moduli, deduplicated
    s_pts, s_idx = _stokes_images(points)
    return Constellation(
        name, points, radii, s_pts, s_idx,
        alphabet=alphabet, levels=levels, unit=scale, rail_index=rail_index,
    )


def _slice_rail(v: np.ndarray, c: Constellation) -> np.ndarray:
    i = np.rint((v / c.unit + c.levels - 1) / 2)
    return np.clip(i, 0, c.levels - 1).astype(np.int64)


def slice_2d(z: np.ndarray, c: Constellation) -> np.ndarray:
    """Per-polarization nearest alphabet index by independent rail quantization."""
    return c.rail_index[_slice_rail(z.real, c), _slice_rail(z.imag, c)]


def decide_exhaustive(z, c: Constellation) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    d = np.sum(np.abs(z[:, None, :] - c.points[None, :, :]) ** 2, axis=2)
    return np.argmin(d, axis=1)


def decide_indices(z, c: Constellation) -> np.ndarray:
    """Minimum-distance 4D decisions for an array of Jones vectors ``(..., 2)``."""
    z = np.asarray(z, dtype=complex)
    if not c.is_qam:
        return decide_exhaustive(z.reshape(-1, 2), c).reshape(z.shape[:-1])
    m2 = len(c.alphabet)
    return slice_2d(z[..., 0], c) * m2 + slice_2d(z[..., 1], c)


def decide(z, c: Constellation) -> tuple[int, np.ndarray]:
    idx = int(decide_indices(np.asarray(z, dtype=complex).reshape(2), c))
    return idx, c.points[idx]


def decide_stokes(s, c: Constellation) -> np.ndarray:
    return c.stokes_points[decide_stokes_index(s, c)]


def decide_stokes_index(s, c: Constellation):
    s = np.asarray(s, dtype=float)
    d = np.sum((s[..., None, :] - c.stokes_points) ** 2, axis=-1)
    return np.argmin(d, axis=-1)


# ---- differential coding -------------------------------------------------------


def _split(idx: np.ndarray, c: Constellation):
    """4D index -> per-polarization (quadrant, rest) arrays."""
    if c.is_qam:
        m2, mq = len(c.alphabet), c.quadrant_size
        ix, iy = np.divmod(idx, m2)
        return (ix // mq, ix % mq), (iy // mq, iy % mq)
    p, q = np.divmod(idx, 4)
    return p, q


def _diff(q: np.ndarray, sign: int) -> np.ndarray:
    if sign > 0:
        return np.cumsum(q) % 4
    prev = np.concatenate([[0], q[:-1]])
    return (q - prev) % 4


def diff_encode(data: np.ndarray, c: Constellation) -> np.ndarray:
    """Map source indices to transmitted point indices.

    The quadrant of each polarization carries the mod-4 increment of the
    source quadrant bits; the remaining (Gray) bits are sent as-is.  The
    reference quadrant before the first symbol is 0.
    """
    data = np.asarray(data, dtype=np.int64)
    return _apply(data, c, +1)


def diff_decode(decided: np.ndarray, c: Constellation) -> np.ndarray:
    decided = np.asarray(decided, dtype=np.int64)
    return _apply(decided, c, -1)


def _apply(idx: np.ndarray, c: Constellation, sign: int) -> np.ndarray:
    if c.is_qam:
        m2, mq = len(c.alphabet), c.quadrant_size
        (qx, rx), (qy, ry) = _split(idx, c)
        ix = _diff(qx, sign) * mq + rx
        iy = _diff(qy, sign) * mq + ry
        return ix * m2 + iy
    # PS-QPSK: one quadrant chain across both polarizations, polarization bit absolute
    p, q = _split(idx, c)
    return p * 4 + _diff(q, sign)


def swap_polarizations(idx: np.ndarray, c: Constellation) -> np.ndarray:
    """Index map of exchanging the two polarizations."""
    idx = np.asarray(idx, dtype=np.int64)
    if c.is_qam:
        ix, iy = np.divmod(idx, len(c.alphabet))
        return iy * len(c.alphabet) + ix
    p, q = np.divmod(idx, 4)
    return (1 - p) * 4 + q


def rotate_indices(idx: np.ndarray, c: Constellation, nx: int, ny: int) -> np.ndarray:
    """Index map of multiplying polarization x by i**nx and y by i**ny."""
    idx = np.asarray(idx, dtype=np.int64)
    if c.is_qam:
        m2, mq = len(c.alphabet), c.quadrant_size
        (qx, rx), (qy, ry) = _split(idx, c)
        return (((qx + nx) % 4) * mq + rx) * m2 + ((qy + ny) % 4) * mq + ry
    p, q = _split(idx, c)
    return p * 4 + (q + np.where(p == 0, nx, ny)) % 4


def count_ser(tx, rx) -> float:
    tx = np.asarray(tx)
    rx = np.asarray(rx)
    if tx.shape != rx.shape:
        raise ValueError(f"length mismatch: {tx.shape} vs {rx.shape}")
    if tx.size == 0:
        return 0.0
    return float(np.count_nonzero(tx != rx)) / tx.size
