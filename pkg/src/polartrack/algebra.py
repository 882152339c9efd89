"""Jones, Stokes and real-4D descriptions of joint phase/polarization rotations.

Conventions
-----------
* Jones vectors are complex arrays of shape ``(..., 2)``; Jones matrices ``(2, 2)``.
* Pauli matrices are ordered (diag(1, -1), X, Y) so that sigma1 sigma2 = i sigma3.
* A rotation is parameterized by a phase ``theta`` and a real 3-vector ``alpha``:
  ``T(theta, alpha) = exp(-i theta) exp(-i alpha . sigma)``.
* Real 4D vectors use the layout ``[Re z1, Im z1, Re z2, Im z2]``.
"""

from __future__ import annotations

import math

import numpy as np

SMALL_ANGLE = 1e-9
UNITARY_TOL = 1e-6

I2 = np.eye(2, dtype=complex)

SIGMA = np.array(
    [
        [[1, 0], [0, -1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
    ],
    dtype=complex,
)

# skew-symmetric generators of the 4D rotations used here
RHO = np.array(
    [
        [[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]],
        [[0, 0, 0, -1], [0, 0, 1, 0], [0, -1, 0, 0], [1, 0, 0, 0]],
        [[0, 0, 1, 0], [0, 0, 0, 1], [-1, 0, 0, 0], [0, -1, 0, 0]],
    ],
    dtype=float,
)
RHOBAR1 = np.array(
    [[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]], dtype=float
)


class NonUnitaryError(ValueError):
    """Raised when a matrix that should be unitary has drifted too far."""


def _sop_terms(alpha) -> tuple[float, float, float, float, float]:
    a1, a2, a3 = (float(a) for a in alpha)
    theta = math.sqrt(a1 * a1 + a2 * a2 + a3 * a3)
    if theta < SMALL_ANGLE:
        # first-order limit: I - i alpha.sigma
        return 1.0, 1.0, a1, a2, a3
    return math.cos(theta), math.sin(theta) / theta, a1, a2, a3


def jones_from_sop(alpha) -> np.ndarray:
    """``exp(-i alpha . sigma)`` in closed form (I cos t - i (a.sigma) sin t)."""
    c, sinc, a1, a2, a3 = _sop_terms(alpha)
    s1, s2, s3 = sinc * a1, sinc * a2, sinc * a3
    return np.array(
        [[complex(c, -s1), complex(-s3, -s2)], [complex(s3, -s2), complex(c, s1)]]
    )


def jones_combined(theta_phase: float, alpha) -> np.ndarray:
    """Phase noise and SOP rotation combined: ``exp(-i theta) R(alpha)``."""
    phase = complex(math.cos(theta_phase), -math.sin(theta_phase))
    return phase * jones_from_sop(alpha)


def unitarity_error(u: np.ndarray) -> float:
    u = np.asarray(u)
    return float(np.max(np.abs(u @ u.conj().T - np.eye(u.shape[0]))))


def jones_inverse(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    err = unitarity_error(u)
    if err > UNITARY_TOL:
        raise NonUnitaryError(f"matrix deviates from unitary by {err:.3g}")
    return u.conj().T


def reunitarize(u: np.ndarray) -> np.ndarray:
    """Project a nearly unitary/orthogonal matrix back onto the group.

    One Newton-Schulz polar step, ``U (3I - U^H U) / 2``; quadratic convergence
    makes a single step enough for drift at the 1e-12 level.
    """
    u = np.asarray(u)
    n = u.shape[0]
    return 0.5 * u @ (3.0 * np.eye(n) - u.conj().T @ u)


def stokes_from_jones(x) -> np.ndarray:
    """Stokes vector ``x^H sigma x`` (vectorized over leading axes)."""
    x = np.asarray(x, dtype=complex)
    x1, x2 = x[..., 0], x[..., 1]
    cross = np.conj(x1) * x2
    return np.stack(
        [np.abs(x1) ** 2 - np.abs(x2) ** 2, 2 * cross.real, 2 * cross.imag], axis=-1
    )


def cross_matrix(v) -> np.ndarray:
    v1, v2, v3 = (float(a) for a in v)
    return np.array([[0.0, -v3, v2], [v3, 0.0, -v1], [-v2, v1, 0.0]])


def mueller_from_sop(alpha) -> np.ndarray:
    """``exp(2 [alpha x])``: rotation of the Poincare sphere by 2|alpha| about alpha."""
    alpha = np.asarray(alpha, dtype=float)
    theta = float(np.linalg.norm(alpha))
    if theta < SMALL_ANGLE:
        return np.eye(3) + 2.0 * cross_matrix(alpha)
    k = cross_matrix(alpha / theta)
    phi = 2.0 * theta
    return np.eye(3) + math.sin(phi) * k + (1.0 - math.cos(phi)) * (k @ k)


def embed_jones(u: np.ndarray) -> np.ndarray:
    """Real 4x4 image of a complex 2x2 matrix acting on ``vec4`` vectors."""
    u = np.asarray(u, dtype=complex)
    out = np.empty((4, 4))
    for i in range(2):
        for j in range(2):
            a, b = u[i, j].real, u[i, j].imag
            out[2 * i : 2 * i + 2, 2 * j : 2 * j + 2] = [[a, -b], [b, a]]
    return out


def rot4_from_params(theta_phase: float, alpha) -> np.ndarray:
    return embed_jones(jones_combined(theta_phase, alpha))


def vec4_from_jones(z) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    return np.stack([z[..., 0].real, z[..., 0].imag, z[..., 1].real, z[..., 1].imag], axis=-1)


def jones_from_vec4(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.stack([v[..., 0] + 1j * v[..., 1], v[..., 2] + 1j * v[..., 3]], axis=-1)


def sop_from_unit4(g) -> np.ndarray:
    """Rotation vector ``alpha`` identified from a unit 4-vector.

    ``(cos t, a1 sin t, a2 sin t, a3 sin t) = g / |g|`` with ``t`` in [0, pi].
    """
    g = np.asarray(g, dtype=float)
    u = g / np.linalg.norm(g)
    theta = math.acos(min(1.0, max(-1.0, u[0])))
    rest = float(np.linalg.norm(u[1:]))
    if rest == 0.0:
        # pure +-identity; the axis is arbitrary when theta == pi
        return np.array([theta, 0.0, 0.0])
    return theta * u[1:] / rest
