"""Monte Carlo experiments: SER sweeps, 1 dB tolerance search, convergence curves.

Trials are independent and seeded by ``(seed, trial_index)``; they run on a
thread pool (the compiled kernels release the GIL) and are always merged in
trial-index order, so results do not depend on the number of workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
import math
import time

import numpy as np

from . import baselines as bl
from . import tracker as tr
from .algebra import embed_jones, mueller_from_sop, stokes_from_jones, vec4_from_jones
from .channel import NoiseParams, RngStream, init_channel, propagate
from .constellations import FORMATS, Constellation, build_constellation, decide_indices, diff_decode, diff_encode

ALGORITHMS = ("proposed-jones", "proposed-stokes", "proposed-4d", "kabsch", "cma-bps")
METRICS = ("ser", "stokes-ser")
AXES = ("delta_p", "delta_nu", "delta_p_t", "delta_nu_t", "snr_db")

TARGET_SER = 1e-3
SLIP_RUN = 100  # consecutive 4D errors that count as a cycle slip
BLIND_SETTLE = 5000  # symbols ignored by the slip detector after a blind start
WINDOW = 100  # convergence-curve window
LOW_CONFIDENCE_ERRORS = 100

# companion linewidths of the sweep experiments
POL_SWEEP_DELTA_NU_T = {"PS-QPSK": 3.6e-5, "PM-QPSK": 3.6e-5, "PM-16-QAM": 0.36e-5,
                        "PM-64-QAM": 0.18e-5, "PM-256-QAM": 0.04e-5}
LW_SWEEP_DELTA_P_T = 3.57e-8
DEFAULT_GRIDS = {
    "pol": (1e-7, 3e-7, 1e-6, 3e-6, 1e-5, 3e-5, 1e-4, 3e-4),  # delta_p * T
    "lw": (1e-6, 3e-6, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3),  # delta_nu * T
    "snr": (-2.0, -1.0, 0.0, 1.0, 2.0, 3.0),  # dB relative to the AWGN anchor
}


class ConfigError(ValueError):
    pass


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    format: str = "PM-16-QAM"
    algorithm: str = "proposed-jones"
    symbol_rate: float = 28e9  # baud
    delta_nu: float = 0.0  # Hz
    delta_p: float = 0.0  # Hz
    snr_db: float = math.inf  # Es/N0
    n_symbols: int = 100_000
    n_trials: int = 1
    seed: int = 0
    known_initial_channel: bool = True
    sop_period: int = 1
    axis: str | None = None
    grid: tuple = ()
    out: str | None = None
    workers: int = 1
    budget: float = 2e9  # max simulated symbols per command
    metric: str = "ser"
    frozen_tracker: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.format not in FORMATS:
            raise ConfigError(f"unknown format {self.format!r}; choose from {', '.join(FORMATS)}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {', '.join(ALGORITHMS)}")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        if (self.algorithm == "proposed-stokes") != (self.metric == "stokes-ser"):
            raise ConfigError("the Stokes tracker is phase-blind: use metric 'stokes-ser' with it and only with it")
        if self.n_symbols < 1 or self.n_trials < 1 or self.workers < 1 or self.sop_period < 1:
            raise ConfigError("symbols, trials, workers and sop_period must be >= 1")
        if self.symbol_rate <= 0 or self.delta_nu < 0 or self.delta_p < 0 or math.isnan(self.snr_db):
            raise ConfigError("need symbol_rate > 0, linewidths >= 0 and a numeric SNR")
        if self.axis is not None:
            if self.axis not in AXES:
                raise ConfigError(f"unknown axis {self.axis!r}; choose from {', '.join(AXES)}")
            if len(self.grid) == 0:
                raise ConfigError("sweep grid is empty")
        return self

    @property
    def constellation(self) -> Constellation:
        return build_constellation(self.format)

    @property
    def noise(self) -> NoiseParams:
        es = self.constellation.es
        n0 = 0.0 if math.isinf(self.snr_db) else es * 10 ** (-self.snr_db / 10)
        return NoiseParams(self.delta_nu, self.delta_p, 1 / self.symbol_rate, n0)

    def with_axis(self, axis: str, value: float) -> "ExperimentConfig":
        if axis == "delta_p_t":
            return replace(self, delta_p=value * self.symbol_rate)
        if axis == "delta_nu_t":
            return replace(self, delta_nu=value * self.symbol_rate)
        return replace(self, **{axis: value})


@dataclass
class TrialResult:
    errors: int
    symbols: int
    cycle_slip: bool
    trace: np.ndarray | None = None  # errors per WINDOW symbols
    wall_time: float = 0.0
    longest_run: int = 0

    @property
    def ser(self) -> float:
        return self.errors / self.symbols


@dataclass(frozen=True)
class SerPoint:
    value: float
    ser: float
    ci95: float
    errors: int
    symbols: int
    trials: int

    @property
    def low_confidence(self) -> bool:
        return self.errors < LOW_CONFIDENCE_ERRORS


def ci95(p: float, n: int) -> float:
    """Half-width of the normal-approximation binomial 95% interval."""
    return 1.96 * math.sqrt(p * (1 - p) / n) if n > 0 else math.inf


def ser_point(value, results: list[TrialResult]) -> SerPoint:
    errors = sum(r.errors for r in results)
    symbols = sum(r.symbols for r in results)
    p = errors / symbols
    return SerPoint(value, p, ci95(p, symbols), errors, symbols, len(results))


# ---- one trial ---------------------------------------------------------------


def _step_params(cfg: ExperimentConfig) -> tr.StepParams:
    steps = tr.StepParams.for_format(
        cfg.format, sop_period=cfg.sop_period, stage_switch_k=-1 if cfg.known_initial_channel else 2000,
    )
    return steps.frozen() if cfg.frozen_tracker else steps


def _receive(cfg: ExperimentConfig, c: Constellation, ch, y: np.ndarray, record: bool = False):
    """Run the configured receiver; returns ``(decided indices, taps or None)``."""
    h0 = np.linalg.inv(ch.t_matrix) if cfg.known_initial_channel else np.eye(2, dtype=complex)
    alg = cfg.algorithm
    if alg == "proposed-jones":
        dec, _, taps = tr.run_jones(tr.TrackerState(h0, _step_params(cfg), cfg.noise), y, c, record)
        return dec, taps
    if alg == "proposed-4d":
        st = tr.Rot4TrackerState(embed_jones(h0), _step_params(cfg), cfg.noise)
        dec, _, taps = tr.run_rot4(st, vec4_from_jones(y), c, record)
        return dec, taps
    if alg == "proposed-stokes":
        m0 = mueller_from_sop(ch.alpha0).T if cfg.known_initial_channel else np.eye(3)
        st = tr.StokesTrackerState(m0, _step_params(cfg), cfg.noise)
        dec, _, taps = tr.run_stokes(st, stokes_from_jones(y), c, record)
        return dec, taps
    if alg == "kabsch":
        dec, _ = bl.kabsch_track(vec4_from_jones(y), embed_jones(h0), c, bl.KabschConfig.for_format(c.name))
        return dec, None
    dec, _, _ = bl.mma_bps_chain(y, c, bl.CmaConfig.for_format(c.name), bl.BpsConfig.for_format(c.name),
                                 w0=h0, staged=not cfg.known_initial_channel)
    return dec, None


def symmetry_maps(c: Constellation) -> list[np.ndarray]:
    """Index maps of the receiver ambiguities differential coding does not absorb.

    Polarization swap and joint conjugation for every format; for PS-QPSK (one
    quadrant chain across both polarizations) also a relative quadrant turn of y.
    """
    pts = c.points
    transforms = [lambda p: p, lambda p: p[:, ::-1], np.conj, lambda p: np.conj(p[:, ::-1])]
    if not c.is_qam:
        turns = [np.array([1, 1j ** n]) for n in range(1, 4)]
        transforms += [lambda p, t=t, f=f: f(p) * t for t in turns for f in transforms[:4]]
    return [decide_indices(f(pts), c) for f in transforms]


def longest_run(err: np.ndarray) -> int:
    if not err.any():
        return 0
    d = np.diff(np.concatenate([[0], err.astype(np.int8), [0]]))
    return int(np.max(np.flatnonzero(d == -1) - np.flatnonzero(d == 1)))


def _settle(cfg: ExperimentConfig) -> int:
    if cfg.known_initial_channel:
        return 0
    if cfg.algorithm == "cma-bps":
        n_stages = len(bl.radius_stages(cfg.constellation))
        return max(BLIND_SETTLE, bl.CmaConfig.for_format(cfg.format).stage_len * n_stages)
    return BLIND_SETTLE


def run_trial(cfg: ExperimentConfig, trial_index: int, trace: bool = False) -> TrialResult:
    """Encode, transmit, track and decode one seeded realization."""
    start = time.perf_counter()
    c = cfg.constellation
    rng = RngStream(cfg.seed, trial_index)
    data = rng.child(0).integers(c.size, cfg.n_symbols)
    tx = diff_encode(data, c)
    ch = init_channel(cfg.noise, rng.child(1))
    y, _ = propagate(ch, c.points[tx])
    dec, _ = _receive(cfg, c, ch, y)
    if cfg.metric == "stokes-ser":
        err = dec != c.stokes_index[tx]
    else:
        maps = symmetry_maps(c)[:1] if cfg.known_initial_channel else symmetry_maps(c)
        half = cfg.n_symbols // 2
        candidates = [diff_decode(m[dec], c) != data for m in maps]
        err = min(candidates, key=lambda e: np.count_nonzero(e[half:]))
    run = longest_run(err[_settle(cfg):])
    windows = None
    if trace:
        n_win = cfg.n_symbols // WINDOW
        windows = err[:n_win * WINDOW].reshape(n_win, WINDOW).sum(axis=1)
    return TrialResult(int(np.count_nonzero(err)), cfg.n_symbols, run >= SLIP_RUN, windows,
                       time.perf_counter() - start, run)


def run_trials(cfg: ExperimentConfig, trace: bool = False) -> list[TrialResult]:
    cfg.validate()

    def one(i):
        return run_trial(cfg, i, trace)

    if cfg.workers == 1 or cfg.n_trials == 1:
        return [one(i) for i in range(cfg.n_trials)]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(one, range(cfg.n_trials)))


def check_budget(cfg: ExperimentConfig, runs: int = 1) -> None:
    total = cfg.n_symbols * cfg.n_trials * runs
    if total > cfg.budget:
        raise BudgetExceeded(f"{total:.3g} symbols requested, budget is {cfg.budget:.3g}")


# ---- experiments -------------------------------------------------------------


def sweep(cfg: ExperimentConfig) -> list[SerPoint]:
    cfg.validate()
    if cfg.axis is None:
        raise ConfigError("sweep needs an axis")
    check_budget(cfg, len(cfg.grid))
    return [ser_point(v, run_trials(cfg.with_axis(cfg.axis, v))) for v in cfg.grid]


@dataclass(frozen=True)
class ToleranceResult:
    axis: str
    threshold: float  # largest value with SER <= target
    lo: float
    hi: float
    status: str  # "ok", ">max" or "<min"
    snr_db: float
    evaluations: tuple = field(default=(), compare=False)

    @property
    def label(self) -> str:
        if self.status == ">max":
            return f">{self.hi:.4g}"
        if self.status == "<min":
            return f"<{self.lo:.4g}"
        return f"{self.threshold:.4g}"


def bisection_steps(lo: float, hi: float, ratio: float) -> int:
    return max(0, math.ceil(math.log2(math.log(hi / lo) / math.log(ratio))))


def find_1db_tolerance(cfg: ExperimentConfig, axis: str, lo: float = 1e-7, hi: float = 1e-2,
                       ratio: float = 1.1, snr_db: float | None = None) -> ToleranceResult:
    """Largest linewidth-time product with SER <= 1e-3 at the AWGN anchor + 1 dB.

    Log-bisection between ``lo`` and ``hi`` until ``hi / lo <= ratio``; SER is
    assumed to grow with the swept linewidth.
    """
    if axis not in ("delta_p_t", "delta_nu_t"):
        raise ConfigError("tolerance axis must be delta_p_t or delta_nu_t")
    if not 0 < lo < hi:
        raise ConfigError("need 0 < lo < hi")
    if snr_db is None:
        snr_db = awgn_anchor_snr(cfg.format) + 1.0
    cfg = replace(cfg, snr_db=snr_db).validate()
    check_budget(cfg, 2 + bisection_steps(lo, hi, ratio))
    log = []

    def passes(v):
        p = ser_point(v, run_trials(cfg.with_axis(axis, v)))
        log.append(p)
        return p.ser <= TARGET_SER

    if passes(hi):
        return ToleranceResult(axis, hi, lo, hi, ">max", snr_db, tuple(log))
    if not passes(lo):
        return ToleranceResult(axis, lo, lo, hi, "<min", snr_db, tuple(log))
    while hi / lo > ratio:
        mid = math.sqrt(lo * hi)
        if passes(mid):
            lo = mid
        else:
            hi = mid
    return ToleranceResult(axis, lo, lo, hi, "ok", snr_db, tuple(log))


@dataclass(frozen=True)
class ConvergencePoint:
    k: int  # first symbol index of the window
    ser_mean: float
    ci95: float
    realizations: int


def convergence_experiment(cfg: ExperimentConfig) -> list[ConvergencePoint]:
    """SER versus symbol index in windows of 100, averaged over realizations."""
    cfg.validate()
    if cfg.n_symbols < WINDOW:
        raise ConfigError(f"need at least {WINDOW} symbols per realization")
    check_budget(cfg)
    results = run_trials(cfg, trace=True)
    counts = np.sum([r.trace for r in results], axis=0)
    n = len(results) * WINDOW
    return [ConvergencePoint(i * WINDOW, float(e) / n, ci95(float(e) / n, n), len(results))
            for i, e in enumerate(counts)]


def window_ser(curve: list[ConvergencePoint], k0: int, k1: int) -> tuple[float, int]:
    """Pooled SER over windows starting in [k0, k1); returns ``(ser, symbols)``."""
    pts = [p for p in curve if k0 <= p.k < k1]
    n = sum(p.realizations * WINDOW for p in pts)
    return sum(p.ser_mean * p.realizations * WINDOW for p in pts) / n, n


# ---- tracking trace -------------------------------------------------------------


def tracking_demo(cfg: ExperimentConfig, trial_index: int = 0):
    """Cumulative true channel innovations next to the tracker's cumulative updates.

    Returns ``(array (n, 9), TrialResult)``; columns are k, the four true
    cumulative sums and the four estimated ones.
    """
    cfg.validate()
    if cfg.algorithm not in ("proposed-jones", "proposed-4d"):
        raise ConfigError("the tracking trace is available for proposed-jones and proposed-4d")
    check_budget(cfg)
    c = cfg.constellation
    rng = RngStream(cfg.seed, trial_index)
    data = rng.child(0).integers(c.size, cfg.n_symbols)
    tx = diff_encode(data, c)
    ch = init_channel(cfg.noise, rng.child(1))
    innov = np.empty((cfg.n_symbols, 4))
    y, _ = propagate(ch, c.points[tx], innov)
    dec, taps = _receive(cfg, c, ch, y, record=True)
    err = diff_decode(dec, c) != data
    run = longest_run(err)
    res = TrialResult(int(np.count_nonzero(err)), cfg.n_symbols, run >= SLIP_RUN, longest_run=run)
    k = np.arange(cfg.n_symbols, dtype=float)[:, None]
    return np.hstack([k, np.cumsum(innov, axis=0), np.cumsum(taps, axis=0)]), res


# ---- AWGN anchors -----------------------------------------------------------------


def awgn_ser(fmt: str, snr_db: float, n_symbols: int = 1_000_000, seed: int = 1) -> float:
    """Differentially decoded 4D SER with a known, frozen channel and AWGN only.

    With the inverse channel known exactly, ``H y = x + H n`` and ``H n`` has the
    law of ``n``, so the channel matrix drops out.
    """
    return _awgn_errors(fmt, n_symbols, seed)(snr_db) / n_symbols


@lru_cache(maxsize=32)
def _awgn_errors(fmt: str, n_symbols: int, seed: int):
    c = build_constellation(fmt)
    rng = RngStream(seed, 0)
    data = rng.child(0).integers(c.size, n_symbols)
    x = c.points[diff_encode(data, c)]
    g = rng.child(1).normal((n_symbols, 4))
    n = math.sqrt(0.5) * (g[:, 0::2] + 1j * g[:, 1::2])

    @lru_cache(maxsize=256)
    def errors(snr_db: float) -> int:
        std = math.sqrt(c.es * 10 ** (-snr_db / 10))
        dec = decide_indices(x + std * n, c)
        return int(np.count_nonzero(diff_decode(dec, c) != data))

    return errors


@lru_cache(maxsize=None)
def awgn_anchor_snr(fmt: str, target: float = TARGET_SER, n_symbols: int = 1_000_000, seed: int = 1,
                    tol_db: float = 1e-3) -> float:
    """SNR (dB) at which the AWGN-only SER equals ``target``, by bisection on one noise draw.

    Scaling one fixed noise draw makes the error count monotone in SNR (decision
    regions are convex), so bisection is well defined.
    """
    errors = _awgn_errors(fmt, n_symbols, seed)
    lo, hi = -5.0, 45.0
    goal = target * n_symbols
    while hi - lo > tol_db:
        mid = 0.5 * (lo + hi)
        if errors(round(mid, 9)) > goal:
            lo = mid
        else:
            hi = mid
    return round(0.5 * (lo + hi), 4)


# ---- experiment recipes ----------------------------------------------------------

RECIPES = ("pol", "lw", "snr", "converge", "demo")


def recipe(kind: str, fmt: str, **overrides) -> ExperimentConfig:
    """Experiment configurations with their fixed companion parameters.

    ``pol``: SOP-drift sweep (laser linewidth fixed per format, SNR at the anchor);
    ``lw``: phase-noise sweep (polarization linewidth 1 kHz at 28 Gbaud);
    ``snr``: SNR sweep at both companions; ``converge``: blind start at both
    companions and the anchor SNR; ``demo``: the tracking-trace conditions.
    """
    if kind not in RECIPES:
        raise ConfigError(f"unknown recipe {kind!r}; choose from {', '.join(RECIPES)}")
    if fmt not in FORMATS:
        raise ConfigError(f"unknown format {fmt!r}; choose from {', '.join(FORMATS)}")
    baud = overrides.get("symbol_rate", 28e9)
    nu = POL_SWEEP_DELTA_NU_T[fmt] * baud
    p = LW_SWEEP_DELTA_P_T * baud
    base = dict(format=fmt, symbol_rate=baud)

    def anchor():  # only computed when the caller did not fix the SNR
        return awgn_anchor_snr(fmt)

    if kind == "pol":
        base.update(delta_nu=nu, axis="delta_p_t", grid=DEFAULT_GRIDS["pol"])
    elif kind == "lw":
        base.update(delta_p=p, axis="delta_nu_t", grid=DEFAULT_GRIDS["lw"])
    elif kind == "snr":
        base.update(delta_nu=nu, delta_p=p, axis="snr_db")
        if "grid" not in overrides:
            base["grid"] = tuple(round(anchor() + d, 4) for d in DEFAULT_GRIDS["snr"])
    elif kind == "converge":
        base.update(delta_nu=nu, delta_p=p, known_initial_channel=False, n_symbols=10_000, n_trials=1000)
    elif kind == "demo":
        base.update(delta_nu=1e6, delta_p=1e3)
    if kind != "snr" and "snr_db" not in overrides:
        base["snr_db"] = anchor() + (1.0 if kind == "demo" else 0.0)
    base.update(overrides)
    return ExperimentConfig(**base).validate()
