"""Command-line entry point: ``polartrack <subcommand> [flags]``.

Every subcommand writes one CSV (to ``--out`` or stdout) and a short summary
to stderr.  Settings resolve as recipe defaults < ``--config`` TOML file < flags.
Exit codes: 0 success, 1 configuration error, 2 symbol budget exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import re
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import harness as hx
from .constellations import FORMATS, build_constellation
from .opcount import INSTRUMENTED, op_count_audit, reference_trend

SUBCOMMANDS = ("track-demo", "sweep-pol", "sweep-lw", "sweep-snr", "converge", "tolerance-1db",
               "op-audit", "dump-constellation")
RECIPE_OF = {"track-demo": "demo", "sweep-pol": "pol", "sweep-lw": "lw", "sweep-snr": "snr", "converge": "converge"}

# flag / config key -> ExperimentConfig field
FIELD_OF = {
    "format": "format", "algorithm": "algorithm", "snr_db": "snr_db", "delta_nu_hz": "delta_nu",
    "delta_p_hz": "delta_p", "baud": "symbol_rate", "symbols": "n_symbols", "trials": "n_trials",
    "seed": "seed", "sop_period": "sop_period", "known_initial_channel": "known_initial_channel",
    "grid": "grid", "out": "out", "workers": "workers", "budget": "budget", "metric": "metric",
    "frozen_tracker": "frozen_tracker",
}
EXTRA_KEYS = ("axis", "lo", "hi", "ratio", "factored")
SWEEP_HEADER = ("axis", "value", "ser", "ci95", "errors", "symbols", "trials")
CONVERGENCE_HEADER = ("k", "ser_mean", "ci95", "realizations")
DEMO_HEADER = ("k", "theta_cum", "alpha1_cum", "alpha2_cum", "alpha3_cum",
               "est_theta_cum", "est_alpha1_cum", "est_alpha2_cum", "est_alpha3_cum")
TOLERANCE_HEADER = ("axis", "threshold", "label", "status", "lo", "hi", "snr_db")
AUDIT_HEADER = ("algorithm", "format", "sop_period", "operations", "comparisons", "memory_units",
                "full_step", "phase_only_step", "reference_trend")
CONSTELLATION_HEADER = ("index", "x1_re", "x1_im", "x2_re", "x2_im", "stokes_index")
DEFAULT_AUDIT_PERIODS = (1, 4, 16)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are configuration errors (exit 1)
        self.print_usage(sys.stderr)
        raise hx.ConfigError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--algorithm", choices=hx.ALGORITHMS)
    p.add_argument("--snr-db", help="Es/N0 in dB, 'inf', or 'anchor[+-offset]' (AWGN SER=1e-3 anchor)")
    p.add_argument("--delta-nu-hz", type=float, help="sum laser linewidth")
    p.add_argument("--delta-p-hz", type=float, help="polarization linewidth")
    p.add_argument("--baud", type=float)
    p.add_argument("--symbols", type=int, help="symbols per trial")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--sop-period", type=int, help="update the SOP every P symbols")
    p.add_argument("--known-initial-channel", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--metric", choices=hx.METRICS)
    p.add_argument("--frozen-tracker", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--config", help="TOML file with the same keys as the flags")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--grid", help="comma-separated sweep values")
    p.add_argument("--workers", type=int)
    p.add_argument("--budget", type=float, help="max simulated symbols")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polartrack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "track-demo": "cumulative true vs. estimated channel parameters for one trial",
        "sweep-pol": "SER versus polarization linewidth",
        "sweep-lw": "SER versus laser linewidth",
        "sweep-snr": "SER versus SNR",
        "converge": "windowed SER versus symbol index after a blind start",
        "tolerance-1db": "largest linewidth with SER <= 1e-3 at the AWGN anchor + 1 dB",
        "op-audit": "operation counts of one instrumented tracker step",
        "dump-constellation": "4D constellation points and Stokes images",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=helps[name])
        _common(p)
        if name == "tolerance-1db":
            p.add_argument("--axis", choices=("delta_p_t", "delta_nu_t"))
            p.add_argument("--lo", type=float)
            p.add_argument("--hi", type=float)
            p.add_argument("--ratio", type=float, help="stop when hi/lo <= ratio")
        if name == "op-audit":
            p.add_argument("--factored", action=argparse.BooleanOptionalAction, default=None)
    return parser


# ---- settings ------------------------------------------------------------------


def parse_snr(value, fmt: str) -> float:
    """Number, 'inf', or 'anchor', 'anchor+1.5', 'anchor-2'."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip().lower()
    m = re.fullmatch(r"anchor\s*(?:([+-])\s*([0-9.eE+-]+))?", text)
    if m:
        offset = float(m.group(2)) * (-1 if m.group(1) == "-" else 1) if m.group(2) else 0.0
        return hx.awgn_anchor_snr(fmt) + offset
    try:
        return float(text)
    except ValueError:
        raise hx.ConfigError(f"cannot read SNR {value!r}") from None


def parse_grid(value) -> list:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    return list(value)


def load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as e:
        raise hx.ConfigError(f"cannot read config {path!r}: {e.strerror}") from None
    except tomllib.TOMLDecodeError as e:
        raise hx.ConfigError(f"bad config {path!r}: {e}") from None
    out = {}
    for key, val in raw.items():
        k = key.replace("-", "_")
        if k not in FIELD_OF and k not in EXTRA_KEYS:
            raise hx.ConfigError(f"unknown config key {key!r}")
        out[k] = val
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Merge config file and flags into one dict keyed like the flags."""
    settings = load_config(args.config) if args.config else {}
    for key in (*FIELD_OF, *EXTRA_KEYS):
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    return settings


def _overrides(settings: dict, fmt: str, axis: str | None) -> dict:
    out = {}
    for key, name in FIELD_OF.items():
        if key not in settings or key == "format":
            continue
        val = settings[key]
        if key == "snr_db":
            val = parse_snr(val, fmt)
        elif key == "grid":
            vals = parse_grid(val)
            val = tuple(parse_snr(v, fmt) if axis == "snr_db" else float(v) for v in vals)
        elif key in ("symbols", "trials", "seed", "sop_period", "workers"):
            val = int(val)
        elif key in ("delta_nu_hz", "delta_p_hz", "baud", "budget"):
            val = float(val)
        out[name] = val
    if out.get("algorithm") == "proposed-stokes" and "metric" not in out:
        out["metric"] = "stokes-ser"
    return out


def experiment_config(command: str, settings: dict) -> hx.ExperimentConfig:
    fmt = settings.get("format", "PM-16-QAM")
    if command == "tolerance-1db":
        axis = settings.get("axis", "delta_p_t")
        kind = "pol" if axis == "delta_p_t" else "lw"
        over = _overrides(settings, fmt, axis)
        over.setdefault("snr_db", parse_snr("anchor+1", fmt))
        over.update(axis=None, grid=())
        return hx.recipe(kind, fmt, **over)
    kind = RECIPE_OF[command]
    axis = {"pol": "delta_p_t", "lw": "delta_nu_t", "snr": "snr_db"}.get(kind)
    return hx.recipe(kind, fmt, **_overrides(settings, fmt, axis))


# ---- output --------------------------------------------------------------------


def fmt_value(x) -> str:
    """Deterministic text for one CSV cell (shortest round-trip float repr)."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def write_csv(path: str | None, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt_value(v) for v in row])
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---- subcommands -----------------------------------------------------------------


def cmd_sweep(cfg: hx.ExperimentConfig) -> None:
    points = hx.sweep(cfg)
    write_csv(cfg.out, SWEEP_HEADER,
              [(cfg.axis, p.value, p.ser, p.ci95, p.errors, p.symbols, p.trials) for p in points])
    low = sum(p.low_confidence for p in points)
    _note(f"{cfg.format} {cfg.algorithm}: {len(points)} points on {cfg.axis}"
          + (f", {low} low-confidence (< {hx.LOW_CONFIDENCE_ERRORS} errors)" if low else ""))


def cmd_converge(cfg: hx.ExperimentConfig) -> None:
    curve = hx.convergence_experiment(cfg)
    write_csv(cfg.out, CONVERGENCE_HEADER, [(p.k, p.ser_mean, p.ci95, p.realizations) for p in curve])
    tail, _ = hx.window_ser(curve, max(0, cfg.n_symbols - 500), cfg.n_symbols)
    _note(f"{cfg.format} {cfg.algorithm}: {cfg.n_trials} realizations, final-window SER {tail:.3g}")


def cmd_demo(cfg: hx.ExperimentConfig) -> None:
    trace, res = hx.tracking_demo(cfg)
    rows = ((int(r[0]), *r[1:]) for r in trace)
    write_csv(cfg.out, DEMO_HEADER, rows)
    _note(f"{cfg.format} {cfg.algorithm}: SER {res.ser:.3g} ({res.errors} errors), "
          f"cycle slip {'yes' if res.cycle_slip else 'no'}, longest error run {res.longest_run}")


def cmd_tolerance(cfg: hx.ExperimentConfig, settings: dict) -> None:
    axis = settings.get("axis", "delta_p_t")
    kw = {k: float(settings[k]) for k in ("lo", "hi", "ratio") if k in settings}
    res = hx.find_1db_tolerance(cfg, axis, snr_db=cfg.snr_db, **kw)
    write_csv(cfg.out, TOLERANCE_HEADER, [(res.axis, res.threshold, res.label, res.status, res.lo, res.hi, res.snr_db)])
    for p in res.evaluations:
        _note(f"  {axis}={p.value:.4g}: SER {p.ser:.3g} +- {p.ci95:.2g}")
    _note(f"{cfg.format} {cfg.algorithm}: {axis} tolerance {res.label} at {res.snr_db:.4f} dB")


def cmd_audit(settings: dict) -> None:
    fmt = settings.get("format", "PM-16-QAM")
    alg = settings.get("algorithm", "proposed-jones")
    if fmt not in FORMATS:
        raise hx.ConfigError(f"unknown format {fmt!r}")
    if alg not in INSTRUMENTED:
        raise hx.ConfigError(f"op-audit instruments {', '.join(INSTRUMENTED)} only")
    if "grid" in settings:
        periods = [int(float(v)) for v in parse_grid(settings["grid"])]
    elif "sop_period" in settings:
        periods = [int(settings["sop_period"])]
    else:
        periods = list(DEFAULT_AUDIT_PERIODS)
    if not periods or min(periods) < 1:
        raise hx.ConfigError("SOP periods must be >= 1")
    factored = bool(settings.get("factored", False))
    rows = []
    for p in periods:
        r = op_count_audit(alg, fmt, p, factored)
        rows.append((r.algorithm, r.format, r.sop_period, r.operations, r.comparisons, r.memory_units,
                     r.full_step, r.phase_only_step, reference_trend(p)))
        _note(f"P={p}: {r.operations:.1f} ops/symbol (trend {reference_trend(p):.1f}), "
              f"{r.comparisons} comparisons, {r.memory_units} memory units")
    write_csv(settings.get("out"), AUDIT_HEADER, rows)


def cmd_dump(settings: dict) -> None:
    fmt = settings.get("format", "PM-16-QAM")
    if fmt not in FORMATS:
        raise hx.ConfigError(f"unknown format {fmt!r}")
    c = build_constellation(fmt)
    rows = [(i, p[0].real, p[0].imag, p[1].real, p[1].imag, int(s))
            for i, (p, s) in enumerate(zip(c.points, c.stokes_index))]
    write_csv(settings.get("out"), CONSTELLATION_HEADER, rows)
    _note(f"{fmt}: {c.size} points, Es {c.es:.6g}, {len(c.stokes_points)} Stokes images")


def run(argv=None) -> None:
    args = build_parser().parse_args(argv)
    settings = resolve(args)
    if args.command == "op-audit":
        return cmd_audit(settings)
    if args.command == "dump-constellation":
        return cmd_dump(settings)
    try:
        cfg = experiment_config(args.command, settings)
    except TypeError as e:  # wrong value types from a config file
        raise hx.ConfigError(str(e)) from None
    if args.command == "tolerance-1db":
        return cmd_tolerance(cfg, settings)
    if args.command == "converge":
        return cmd_converge(cfg)
    if args.command == "track-demo":
        return cmd_demo(cfg)
    return cmd_sweep(cfg)


def main(argv=None) -> int:
    try:
        run(argv)
    except hx.BudgetExceeded as e:
        _note(f"budget exceeded: {e}")
        return 2
    except (hx.ConfigError, ValueError) as e:
        _note(f"config error: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
