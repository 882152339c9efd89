"""Compiled per-symbol loops.

Everything here mirrors a readable reference in ``channel``, ``tracker`` or
``baselines``; the tests hold the two in agreement.  Kernels release the GIL so
independent trials can run on a thread pool.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

RENORM_PERIOD = 1 << 16
_SMALL = 1e-9

jit = njit(cache=True, nogil=True)


@jit
def combined(theta, a1, a2, a3):
    """Entries (t00, t01, t10, t11) of exp(-i theta) exp(-i alpha.sigma)."""
    t = math.sqrt(a1 * a1 + a2 * a2 + a3 * a3)
    if t < _SMALL:
        c = 1.0
        sinc = 1.0
    else:
        c = math.cos(t)
        sinc = math.sin(t) / t
    s1 = sinc * a1
    s2 = sinc * a2
    s3 = sinc * a3
    ph = complex(math.cos(theta), -math.sin(theta))
    return (
        ph * complex(c, -s1),
        ph * complex(-s3, -s2),
        ph * complex(s3, -s2),
        ph * complex(c, s1),
    )


@jit
def _renorm(m):
    n = m.shape[0]
    g = m.conj().T @ m
    return 0.5 * m @ (3.0 * np.eye(n) - g)


@jit
def _renorm_real(m):
    g = m.T @ m
    return 0.5 * m @ (3.0 * np.eye(m.shape[0]) - g)


@jit
def _mul_right(h, t00, t01, t10, t11):
    a, b, c, d = h[0, 0], h[0, 1], h[1, 0], h[1, 1]
    h[0, 0] = a * t00 + b * t10
    h[0, 1] = a * t01 + b * t11
    h[1, 0] = c * t00 + d * t10
    h[1, 1] = c * t01 + d * t11


@jit
def _mul_left(h, t00, t01, t10, t11):
    a, b, c, d = h[0, 0], h[0, 1], h[1, 0], h[1, 1]
    h[0, 0] = t00 * a + t01 * c
    h[0, 1] = t00 * b + t01 * d
    h[1, 0] = t10 * a + t11 * c
    h[1, 1] = t10 * b + t11 * d


# ---- channel ---------------------------------------------------------------


@jit
def propagate(t, x, draws, sigma_nu, sigma_p, noise_std, k0, y):
    """y_k = T_k x_k + n_k, then T_{k+1} = T(nu'_k, alpha'_k) T_k (in place on t)."""
    for k in range(x.shape[0]):
        d = draws[k]
        x1 = x[k, 0]
        x2 = x[k, 1]
        y[k, 0] = t[0, 0] * x1 + t[0, 1] * x2 + noise_std * complex(d[0], d[1])
        y[k, 1] = t[1, 0] * x1 + t[1, 1] * x2 + noise_std * complex(d[2], d[3])
        u00, u01, u10, u11 = combined(sigma_nu * d[4], sigma_p * d[5], sigma_p * d[6], sigma_p * d[7])
        _mul_left(t, u00, u01, u10, u11)
        if (k0 + k + 1) % RENORM_PERIOD == 0:
            t[:, :] = _renorm(t)


# ---- decisions -------------------------------------------------------------


@jit
def _rail(v, unit, levels):
    i = round((v / unit + levels - 1) / 2.0)
    if i < 0:
        i = 0.0
    elif i > levels - 1:
        i = levels - 1.0
    return int(i)


@jit
def decide_point(z1, z2, points, unit, levels, rail_index):
    """Nearest 4D point index; rail slicing for square QAM, exhaustive otherwise."""
    if levels > 0:
        m2 = levels * levels
        ix = rail_index[_rail(z1.real, unit, levels), _rail(z1.imag, unit, levels)]
        iy = rail_index[_rail(z2.real, unit, levels), _rail(z2.imag, unit, levels)]
        return ix * m2 + iy
    best = 0
    dbest = np.inf
    for m in range(points.shape[0]):
        d1 = z1 - points[m, 0]
        d2 = z2 - points[m, 1]
        dist = d1.real * d1.real + d1.imag * d1.imag + d2.real * d2.real + d2.imag * d2.imag
        if dist < dbest:
            dbest = dist
            best = m
    return best


@jit
def _steps(k, switch_k, mu_conv, mu_ph, mu_sop):
    if k <= switch_k:
        return mu_conv, mu_conv
    return mu_ph, mu_sop


# ---- proposed tracker: Jones -------------------------------------------------


@jit
def track_jones(y, h, points, unit, levels, rail_index,
                mu_conv, mu_ph, mu_sop, switch_k, period, k0, decided, taps):
    """Decision-directed joint phase/SOP tracking; ``h`` (inverse channel) updated in place.

    ``taps`` is either empty or an (n, 4) array receiving (theta, a1, a2, a3).
    """
    record = taps.shape[0] > 0
    for k in range(y.shape[0]):
        kk = k0 + k
        y1 = y[k, 0]
        y2 = y[k, 1]
        u1 = h[0, 0] * y1
        u2 = h[1, 0] * y1
        w1 = h[0, 1] * y2
        w2 = h[1, 1] * y2
        z1 = u1 + w1
        z2 = u2 + w2
        idx = decide_point(z1, z2, points, unit, levels, rail_index)
        decided[k] = idx
        e1 = (z1 - points[idx, 0]).conjugate()
        e2 = (z2 - points[idx, 1]).conjugate()
        mph, msop = _steps(kk, switch_k, mu_conv, mu_ph, mu_sop)
        # -2 mu Re(i a^H v) == 2 mu Im(a^H v)
        th = 2.0 * mph * (e1 * z1 + e2 * z2).imag
        a1 = 0.0
        a2 = 0.0
        a3 = 0.0
        if kk % period == 0:
            # H sigma_i y from the column products already formed for z
            p1 = h[0, 0] * y2
            p2 = h[1, 0] * y2
            q1 = h[0, 1] * y1
            q2 = h[1, 1] * y1
            a1 = 2.0 * msop * (e1 * (u1 - w1) + e2 * (u2 - w2)).imag
            a2 = 2.0 * msop * (e1 * (p1 + q1) + e2 * (p2 + q2)).imag
            a3 = 2.0 * msop * (e1 * (1j * (q1 - p1)) + e2 * (1j * (q2 - p2))).imag
        t00, t01, t10, t11 = combined(-th, -a1, -a2, -a3)
        _mul_right(h, t00, t01, t10, t11)
        if (kk + 1) % RENORM_PERIOD == 0:
            h[:, :] = _renorm(h)
        if record:
            taps[k, 0] = th
            taps[k, 1] = a1
            taps[k, 2] = a2
            taps[k, 3] = a3


# ---- proposed tracker: real 4D ---------------------------------------------


@jit
def embed(t00, t01, t10, t11):
    out = np.empty((4, 4))
    ts = (t00, t01, t10, t11)
    for i in range(2):
        for j in range(2):
            a = ts[2 * i + j].real
            b = ts[2 * i + j].imag
            out[2 * i, 2 * j] = a
            out[2 * i, 2 * j + 1] = -b
            out[2 * i + 1, 2 * j] = b
            out[2 * i + 1, 2 * j + 1] = a
    return out


@jit
def track_rot4(vy, r, points, unit, levels, rail_index,
               mu_conv, mu_ph, mu_sop, switch_k, period, k0, decided, taps, rho, rhobar1):
    record = taps.shape[0] > 0
    v = np.empty(4)
    a = np.empty(4)
    for k in range(vy.shape[0]):
        kk = k0 + k
        yk = vy[k]
        for i in range(4):
            v[i] = r[i, 0] * yk[0] + r[i, 1] * yk[1] + r[i, 2] * yk[2] + r[i, 3] * yk[3]
        idx = decide_point(complex(v[0], v[1]), complex(v[2], v[3]), points, unit, levels, rail_index)
        decided[k] = idx
        a[0] = v[0] - points[idx, 0].real
        a[1] = v[1] - points[idx, 0].imag
        a[2] = v[2] - points[idx, 1].real
        a[3] = v[3] - points[idx, 1].imag
        mph, msop = _steps(kk, switch_k, mu_conv, mu_ph, mu_sop)
        th = 2.0 * mph * (a @ (r @ (rhobar1 @ yk)))
        a1 = 0.0
        a2 = 0.0
        a3 = 0.0
        if kk % period == 0:
            a1 = -2.0 * msop * (a @ (r @ (rho[0] @ yk)))
            a2 = -2.0 * msop * (a @ (r @ (rho[1] @ yk)))
            a3 = -2.0 * msop * (a @ (r @ (rho[2] @ yk)))
        t00, t01, t10, t11 = combined(-th, -a1, -a2, -a3)
        r[:, :] = r @ embed(t00, t01, t10, t11)
        if (kk + 1) % RENORM_PERIOD == 0:
            r[:, :] = _renorm_real(r)
        if record:
            taps[k, 0] = th
            taps[k, 1] = a1
            taps[k, 2] = a2
            taps[k, 3] = a3


# ---- proposed tracker: Stokes ------------------------------------------------


@jit
def mueller(a1, a2, a3):
    t = math.sqrt(a1 * a1 + a2 * a2 + a3 * a3)
    k = np.zeros((3, 3))
    if t < _SMALL:
        k[0, 1] = -a3
        k[0, 2] = a2
        k[1, 0] = a3
        k[1, 2] = -a1
        k[2, 0] = -a2
        k[2, 1] = a1
        return np.eye(3) + 2.0 * k
    n1 = a1 / t
    n2 = a2 / t
    n3 = a3 / t
    k[0, 1] = -n3
    k[0, 2] = n2
    k[1, 0] = n3
    k[1, 2] = -n1
    k[2, 0] = -n2
    k[2, 1] = n1
    return np.eye(3) + math.sin(2 * t) * k + (1.0 - math.cos(2 * t)) * (k @ k)


@jit
def track_stokes(sy, m, spoints, mu_conv, mu_sop, switch_k, period, k0, decided, taps):
    record = taps.shape[0] > 0
    u = np.empty(3)
    for k in range(sy.shape[0]):
        kk = k0 + k
        s = sy[k]
        for i in range(3):
            u[i] = m[i, 0] * s[0] + m[i, 1] * s[1] + m[i, 2] * s[2]
        best = 0
        dbest = np.inf
        for j in range(spoints.shape[0]):
            d = (u[0] - spoints[j, 0]) ** 2 + (u[1] - spoints[j, 1]) ** 2 + (u[2] - spoints[j, 2]) ** 2
            if d < dbest:
                dbest = d
                best = j
        decided[k] = best
        a = u - spoints[best]
        msop = mu_conv if kk <= switch_k else mu_sop
        a1 = 0.0
        a2 = 0.0
        a3 = 0.0
        if kk % period == 0:
            # e_i x s
            c1 = np.array([0.0, -s[2], s[1]])
            c2 = np.array([s[2], 0.0, -s[0]])
            c3 = np.array([-s[1], s[0], 0.0])
            a1 = 4.0 * msop * (a @ (m @ c1))
            a2 = 4.0 * msop * (a @ (m @ c2))
            a3 = 4.0 * msop * (a @ (m @ c3))
            m[:, :] = m @ mueller(-a1, -a2, -a3)
        if (kk + 1) % RENORM_PERIOD == 0:
            m[:, :] = _renorm_real(m)
        if record:
            taps[k, 0] = a1
            taps[k, 1] = a2
            taps[k, 2] = a3


# ---- baselines ---------------------------------------------------------------


@jit
def kabsch(vy, g, block, points, unit, levels, rail_index, decided):
    """Block-wise Procrustes tracking; ``g`` (inverse channel, 4x4) updated in place."""
    n = vy.shape[0]
    v = np.empty(4)
    for start in range(0, n, block):
        stop = min(start + block, n)
        b = np.zeros((4, 4))
        for k in range(start, stop):
            yk = vy[k]
            for i in range(4):
                v[i] = g[i, 0] * yk[0] + g[i, 1] * yk[1] + g[i, 2] * yk[2] + g[i, 3] * yk[3]
            idx = decide_point(complex(v[0], v[1]), complex(v[2], v[3]), points, unit, levels, rail_index)
            decided[k] = idx
            x = np.array([points[idx, 0].real, points[idx, 0].imag, points[idx, 1].real, points[idx, 1].imag])
            for i in range(4):
                for j in range(4):
                    b[i, j] += x[i] * yk[j]
        uu, s, vt = np.linalg.svd(b)
        if s[3] <= 1e-9 * s[0]:
            continue
        d = np.linalg.det(uu @ vt)
        dd = np.eye(4)
        dd[3, 3] = 1.0 if d > 0 else -1.0
        g[:, :] = uu @ dd @ vt


@jit
def cma(y, w, mu, radii, counts, boundaries, z):
    """One-tap (PS-)CMA/MMA; ``radii[s, :counts[s]]`` are the targets of stage ``s``."""
    stage = 0
    for k in range(y.shape[0]):
        while stage < boundaries.shape[0] and k >= boundaries[stage]:
            stage += 1
        y1 = y[k, 0]
        y2 = y[k, 1]
        z1 = w[0, 0] * y1 + w[0, 1] * y2
        z2 = w[1, 0] * y1 + w[1, 1] * y2
        z[k, 0] = z1
        z[k, 1] = z2
        r1 = abs(z1)
        r2 = abs(z2)
        t1 = radii[stage, 0]
        t2 = radii[stage, 0]
        for j in range(1, counts[stage]):
            rj = radii[stage, j]
            if abs(rj - r1) < abs(t1 - r1):
                t1 = rj
            if abs(rj - r2) < abs(t2 - r2):
                t2 = rj
        g1 = mu * (t1 * t1 - r1 * r1) * z1
        g2 = mu * (t2 * t2 - r2 * r2) * z2
        c1 = y1.conjugate()
        c2 = y2.conjugate()
        w[0, 0] += g1 * c1
        w[0, 1] += g1 * c2
        w[1, 0] += g2 * c1
        w[1, 1] += g2 * c2


@jit
def _min_dist_2d(z, alphabet, unit, levels):
    if levels > 0:
        ii = _rail(z.real, unit, levels)
        iq = _rail(z.imag, unit, levels)
        dr = z.real - unit * (2 * ii - levels + 1)
        di = z.imag - unit * (2 * iq - levels + 1)
        return dr * dr + di * di
    best = np.inf
    for m in range(alphabet.shape[0]):
        d = z - alphabet[m]
        dist = d.real * d.real + d.imag * d.imag
        if dist < best:
            best = dist
    return best


@jit
def bps(z, n_phases, window, alphabet, unit, levels, phase_out):
    """Blind phase search on one polarization with a centered sliding window."""
    n = z.shape[0]
    half = window // 2
    quarter = math.pi / 2
    rots = np.empty(n_phases, dtype=np.complex128)
    for b in range(n_phases):
        phi = b * quarter / n_phases - math.pi / 4
        rots[b] = complex(math.cos(phi), math.sin(phi))
    # ring buffer of per-sample distance rows, row j lives at j % window
    ring = np.empty((window, n_phases))
    filled = 0
    prev = 0.0
    for k in range(n):
        lo = max(0, k - half)
        hi = min(n, k + half + 1)
        while filled < hi:
            for b in range(n_phases):
                ring[filled % window, b] = _min_dist_2d(z[filled] * rots[b], alphabet, unit, levels)
            filled += 1
        best = 0
        dbest = np.inf
        for b in range(n_phases):
            s = 0.0
            for j in range(lo, hi):
                s += ring[j % window, b]
            if s < dbest:
                dbest = s
                best = b
        phi = best * quarter / n_phases - math.pi / 4
        phi += quarter * round((prev - phi) / quarter)
        phase_out[k] = phi
        prev = phi
