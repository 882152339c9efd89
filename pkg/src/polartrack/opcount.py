"""Operation counting for one tracker step.

A step is executed on counting scalars, so the totals come from running code
rather than from a formula.  Accounting rules:

* real add, subtract, multiply and divide count 1 each; a complex multiply is
  4 multiplies + 2 adds, a complex add is 2;
* multiplying by 0 or +-1, negation, conjugation and multiplying by +-i are free
  (wiring), as are table lookups of constellation points;
* cos and sinc are degree-14 Taylor polynomials in x**2 evaluated by Horner's
  rule (7 multiply-add steps each, error below 1e-12 for |x| <= 1);
* the periodic renormalization (once per 65536 symbols) is not counted;
* on symbols without an SOP update the SOP parameters are a register held at
  zero, so the rotation is still built and applied in full.  With ``P = 1``
  every step is a full step.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .algebra import (
    RHO, RHOBAR1, embed_jones, jones_combined, mueller_from_sop, sop_from_unit4,
    stokes_from_jones, vec4_from_jones,
)
from .constellations import Constellation, build_constellation

HORNER_STEPS = 7
_COS = [(-1) ** j / math.factorial(2 * j) for j in range(HORNER_STEPS + 1)]
_SINC = [(-1) ** j / math.factorial(2 * j + 1) for j in range(HORNER_STEPS + 1)]
_VERS = [(-1) ** j * 4 ** (j + 1) / math.factorial(2 * j + 2) for j in range(HORNER_STEPS + 1)]

INSTRUMENTED = ("proposed-jones", "proposed-4d", "proposed-stokes")


@dataclass
class Tally:
    add: int = 0
    mul: int = 0
    div: int = 0
    cmp: int = 0

    @property
    def ops(self) -> int:
        return self.add + self.mul + self.div


def _trivial(x) -> bool:
    return not isinstance(x, Real) and x in (0, 1, -1)


class Real:
    """A float that records every arithmetic operation in a shared :class:`Tally`."""

    __slots__ = ("v", "t")

    def __init__(self, v, t: Tally):
        self.v = float(v)
        self.t = t

    def _add(self, o, sign):
        if not isinstance(o, Real) and o == 0:
            return self
        self.t.add += 1
        return Real(self.v + sign * _val(o), self.t)

    def __add__(self, o):
        return self._add(o, 1)

    __radd__ = __add__

    def __sub__(self, o):
        return self._add(o, -1)

    def __rsub__(self, o):
        return (-self)._add(o, 1)

    def __neg__(self):
        return Real(-self.v, self.t)

    def __mul__(self, o):
        if _trivial(o):
            return 0.0 if o == 0 else (self if o == 1 else -self)
        self.t.mul += 1
        return Real(self.v * _val(o), self.t)

    __rmul__ = __mul__

    def __truediv__(self, o):
        self.t.div += 1
        return Real(self.v / _val(o), self.t)

    def __lt__(self, o):
        self.t.cmp += 1
        return self.v < _val(o)

    def __gt__(self, o):
        self.t.cmp += 1
        return self.v > _val(o)


def _val(x) -> float:
    return x.v if isinstance(x, Real) else float(x)


class Cplx:
    __slots__ = ("re", "im")

    def __init__(self, re, im):
        self.re = re
        self.im = im

    def __add__(self, o):
        return Cplx(self.re + o.re, self.im + o.im)

    def __sub__(self, o):
        return Cplx(self.re - o.re, self.im - o.im)

    def __neg__(self):
        return Cplx(-self.re, -self.im)

    def __mul__(self, o):
        if isinstance(o, Cplx):
            return Cplx(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
        return Cplx(self.re * o, self.im * o)

    def conj(self):
        return Cplx(self.re, -self.im)

    def times_i(self):
        return Cplx(-self.im, self.re)

    @property
    def value(self) -> complex:
        return complex(_val(self.re), _val(self.im))


def _wrap(x, t: Tally):
    if np.iscomplexobj(x):
        return [Cplx(Real(v.real, t), Real(v.imag, t)) for v in np.ravel(x)]
    return [Real(v, t) for v in np.ravel(x)]


def _horner(coef, x2):
    p = coef[-1]
    for cj in reversed(coef[:-1]):
        p = x2 * p + cj
    return p


def _cos_sinc(x2):
    return _horner(_COS, x2), _horner(_SINC, x2)


def _matvec(m, v, n):
    out = []
    for i in range(n):
        acc = m[i * n] * v[0]
        for j in range(1, n):
            acc = acc + m[i * n + j] * v[j]
        out.append(acc)
    return out


def _matmul(a, b, n):
    return [sum_terms([a[i * n + k] * b[k * n + j] for k in range(n)]) for i in range(n) for j in range(n)]


def sum_terms(terms):
    acc = terms[0]
    for x in terms[1:]:
        acc = acc + x
    return acc


def _const_matvec(m: np.ndarray, v):
    """Product with a constant 0/+-1 matrix: pure wiring, nothing counted."""
    out = []
    for row in m:
        acc = 0.0
        for coef, x in zip(row, v):
            if coef == 1:
                acc = x if _is_zero(acc) else acc + x
            elif coef == -1:
                acc = -x if _is_zero(acc) else acc - x
        out.append(acc)
    return out


def _is_zero(x) -> bool:
    return not isinstance(x, Real) and x == 0


# ---- rail / exhaustive decisions on counted values ----------------------------


def _rail_index(v, c: Constellation) -> int:
    """Nearest level by comparing against the L-1 midpoints (L-1 comparisons)."""
    idx = 0
    for j in range(c.levels - 1):
        threshold = c.unit * (2 * (j + 1) - c.levels)
        if v > threshold:
            idx += 1
    return idx


def _decide(z1: Cplx, z2: Cplx, c: Constellation) -> int:
    if c.is_qam:
        m2 = c.levels * c.levels
        ix = c.rail_index[_rail_index(z1.re, c), _rail_index(z1.im, c)]
        iy = c.rail_index[_rail_index(z2.re, c), _rail_index(z2.im, c)]
        return int(ix * m2 + iy)
    # PS-QPSK: equal-energy points, so maximize the correlation Re(x^H z)
    metrics = []
    for z in (z1, z2):
        r = z.re + z.im
        s = z.re - z.im
        metrics += [r, -s, -r, s]
    best = 0
    for m in range(1, 8):
        if metrics[m] > metrics[best]:
            best = m
    return best


# ---- counted tracker steps ----------------------------------------------------


def _jones_entries(theta, a, t: Tally):
    """Entries of exp(i theta) exp(i alpha.sigma), i.e. T(-theta, -alpha)."""
    t2 = a[0] * a[0] + a[1] * a[1] + a[2] * a[2]
    cs, sinc = _cos_sinc(t2)
    s = [sinc * ai for ai in a]
    cp, sp = _cos_sinc(theta * theta)
    ph = Cplx(cp, theta * sp)
    raw = [Cplx(cs, s[0]), Cplx(s[2], s[1]), Cplx(-s[2], s[1]), Cplx(cs, -s[0])]
    return [ph * e for e in raw]


@dataclass
class StepResult:
    index: int
    theta: float
    alpha: np.ndarray
    new_state: np.ndarray
    tally: Tally


def counted_jones_step(h, y, c, mu_ph, mu_sop, update_sop=True, factored=False) -> StepResult:
    t = Tally()
    hh = _wrap(np.asarray(h, dtype=complex), t)
    y1, y2 = _wrap(np.asarray(y, dtype=complex), t)
    u1, u2, w1, w2 = hh[0] * y1, hh[2] * y1, hh[1] * y2, hh[3] * y2
    z1, z2 = u1 + w1, u2 + w2
    idx = _decide(z1, z2, c)
    x1, x2 = _wrap(c.points[idx], t)
    a1, a2 = (z1 - x1).conj(), (z2 - x2).conj()

    def im_inner(v1, v2):
        if factored:
            return a1.re * v1.im + a1.im * v1.re + (a2.re * v2.im + a2.im * v2.re)
        return (a1 * v1 + a2 * v2).im

    theta = 2 * mu_ph * im_inner(z1, z2)
    alpha = [Real(0.0, t)] * 3  # a held-at-zero register, still fed through the datapath
    if update_sop:
        if factored:
            p1, p2, q1, q2 = hh[0] * y2, hh[2] * y2, hh[1] * y1, hh[3] * y1
            vs = [(u1 - w1, u2 - w2), (p1 + q1, p2 + q2), ((q1 - p1).times_i(), (q2 - p2).times_i())]
        else:
            sy = [(y1, -y2), (y2, y1), (-(y2.times_i()), y1.times_i())]
            vs = [(hh[0] * s1 + hh[1] * s2, hh[2] * s1 + hh[3] * s2) for s1, s2 in sy]
        alpha = [2 * mu_sop * im_inner(v1, v2) for v1, v2 in vs]
    e = _jones_entries(theta, alpha, t)
    new = [hh[0] * e[0] + hh[1] * e[2], hh[0] * e[1] + hh[1] * e[3],
           hh[2] * e[0] + hh[3] * e[2], hh[2] * e[1] + hh[3] * e[3]]
    h_new = np.array([v.value for v in new]).reshape(2, 2)
    return StepResult(idx, _val(theta), np.array([_val(x) for x in alpha]), h_new, t)


def counted_rot4_step(r, vy, c, mu_ph, mu_sop, update_sop=True) -> StepResult:
    t = Tally()
    rr = _wrap(np.asarray(r, dtype=float), t)
    yy = _wrap(np.asarray(vy, dtype=float), t)
    v = _matvec(rr, yy, 4)
    idx = _decide(Cplx(v[0], v[1]), Cplx(v[2], v[3]), c)
    p = c.points[idx]
    a = [v[0] - p[0].real, v[1] - p[0].imag, v[2] - p[1].real, v[3] - p[1].imag]

    def proj(gen):
        return sum_terms([ai * wi for ai, wi in zip(a, _matvec(rr, _const_matvec(gen, yy), 4))])

    theta = 2 * mu_ph * proj(RHOBAR1)
    alpha = [Real(0.0, t)] * 3
    if update_sop:
        alpha = [-2 * mu_sop * proj(rho) for rho in RHO]
    e = _jones_entries(theta, alpha, t)
    emb = [None] * 16
    for i in range(2):
        for j in range(2):
            x = e[2 * i + j]
            emb[(2 * i) * 4 + 2 * j] = x.re
            emb[(2 * i) * 4 + 2 * j + 1] = -x.im
            emb[(2 * i + 1) * 4 + 2 * j] = x.im
            emb[(2 * i + 1) * 4 + 2 * j + 1] = x.re
    new = _matmul(rr, emb, 4)
    return StepResult(idx, _val(theta), np.array([_val(x) for x in alpha]),
                      np.array([_val(x) for x in new]).reshape(4, 4), t)


def counted_stokes_step(m, s_y, c, mu_sop, update_sop=True) -> StepResult:
    t = Tally()
    mm = _wrap(np.asarray(m, dtype=float), t)
    s = _wrap(np.asarray(s_y, dtype=float), t)
    u = _matvec(mm, s, 3)
    best, dbest = 0, None
    for j, sp in enumerate(c.stokes_points):
        d = sum_terms([(u[i] - sp[i]) * (u[i] - sp[i]) for i in range(3)])
        if dbest is None or d < dbest:
            best, dbest = j, d
    alpha = [Real(0.0, t)] * 3
    if update_sop:
        a = [u[i] - c.stokes_points[best][i] for i in range(3)]
        crosses = [[0.0, -s[2], s[1]], [s[2], 0.0, -s[0]], [-s[1], s[0], 0.0]]
        alpha = [4 * mu_sop * sum_terms([ai * wi for ai, wi in zip(a, _matvec(mm, cr, 3))]) for cr in crosses]
    # Rodrigues with rotation angle 2|alpha| about -alpha
    t2 = alpha[0] * alpha[0] + alpha[1] * alpha[1] + alpha[2] * alpha[2]
    f1 = 2 * _horner(_SINC, 4 * t2)  # sin(2t)/t
    f2 = _horner(_VERS, t2)  # (1 - cos 2t)/t^2
    na = [-x for x in alpha]
    k = [0.0, -na[2], na[1], na[2], 0.0, -na[0], -na[1], na[0], 0.0]
    k2 = _matmul(k, k, 3)
    mu_m = [(1.0 if i % 4 == 0 else 0.0) + f1 * k[i] + f2 * k2[i] for i in range(9)]
    new = _matmul(mm, mu_m, 3)
    return StepResult(best, 0.0, np.array([_val(x) for x in alpha]),
                      np.array([_val(x) for x in new]).reshape(3, 3), t)


# ---- audit ----------------------------------------------------------------------


@dataclass(frozen=True)
class OpCount:
    algorithm: str
    format: str
    sop_period: int
    operations: float  # average real operations per symbol
    comparisons: int  # per decision
    memory_units: int
    full_step: int  # operations of a step that includes the SOP update
    phase_only_step: int  # operations of a step without it


MEMORY_UNITS = {"proposed-jones": 8, "proposed-4d": 16, "proposed-stokes": 9}


def _counted_step(algorithm, c, rng, sop, factored) -> StepResult:
    h = jones_combined(rng.uniform(0, 2 * np.pi), sop_from_unit4(rng.normal(size=4)))
    noise = 0.05 * (rng.normal(size=2) + 1j * rng.normal(size=2))
    y = np.linalg.inv(h) @ c.points[rng.integers(c.size)] + noise
    if algorithm == "proposed-jones":
        return counted_jones_step(h, y, c, 1e-3, 1e-3, sop, factored)
    if algorithm == "proposed-4d":
        return counted_rot4_step(embed_jones(h), vec4_from_jones(y), c, 1e-3, 1e-3, sop)
    m = mueller_from_sop(sop_from_unit4(rng.normal(size=4)))
    return counted_stokes_step(m, stokes_from_jones(y), c, 1e-3, sop)


def op_count_audit(algorithm: str, fmt: str, sop_period: int = 1, factored: bool = False,
                   seed: int = 0) -> OpCount:
    """Average counted cost per symbol over one SOP period of executed steps."""
    if algorithm not in INSTRUMENTED:
        raise ValueError(f"no instrumented step for {algorithm!r}; choose from {INSTRUMENTED}")
    if sop_period < 1:
        raise ValueError("sop_period must be >= 1")
    c = build_constellation(fmt)
    rng = np.random.default_rng(seed)
    steps = [_counted_step(algorithm, c, rng, k == 0, factored) for k in range(sop_period)]
    phase_only = _counted_step(algorithm, c, rng, False, factored)
    return OpCount(
        algorithm, fmt, sop_period,
        float(np.mean([s.tally.ops for s in steps])),
        max(s.tally.cmp for s in steps),
        MEMORY_UNITS[algorithm], steps[0].tally.ops, phase_only.tally.ops,
    )


def reference_trend(p: int) -> float:
    """Reference per-symbol operation count with SOP updates every ``p`` symbols."""
    return 203 + 143 / p
