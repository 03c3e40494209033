"""Command-line interface: predict / simulate / analyze / scan / inequality.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 fit
non-convergence.  The environment variable NSB_THREADS bounds the scan
worker pool.  Every CSV/JSON output embeds the resolved configuration and
master seed; event files use the fixed binary layout of
:mod:`nsbell.eventfile`.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import analysis, quantum
from .analysis import (
    AnalysisError,
    ScanPoint,
    angle_scan_summary,
    estimate_p12,
    expected_dip_fraction,
    fit_coincidence_model,
    histogram_from_detection,
    p12_from_ratio,
)
from .config import ConfigError, ExperimentConfig, load_config
from .eventfile import EventFileError, read_events, write_events
from .pipeline import run_pipeline
from .quantum import CorrelationParams, PolarizerPair, ResponseParams

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NO_CONVERGENCE = 4

NS = 1e-9


class DataError(ValueError):
    """Input data cannot be analyzed (missing, malformed, or empty)."""


class FitDidNotConverge(RuntimeError):
    pass


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def _parse_grid(spec: str) -> np.ndarray:
    """Parse START:STOP:STEP (inclusive of STOP when it lands on the grid)."""
    try:
        parts = [float(p) for p in spec.split(":")]
    except ValueError as exc:
        raise ConfigError(f"bad grid '{spec}': {exc}") from exc
    if len(parts) != 3:
        raise ConfigError(f"bad grid '{spec}': expected START:STOP:STEP")
    start, stop, step = parts
    if step <= 0 or stop < start:
        raise ConfigError(f"bad grid '{spec}': need STOP >= START and STEP > 0")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


def _meta(cfg: ExperimentConfig) -> dict:
    return {"master_seed": cfg.master_seed, "config": cfg.resolved_dict()}


def _write_csv(path, header_cols, rows, cfg: ExperimentConfig):
    lines = [f"# master_seed={cfg.master_seed}",
             f"# config={json.dumps(cfg.resolved_dict(), separators=(',', ':'))}",
             ",".join(header_cols)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    text = "\n".join(lines) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _write_json(path, payload: dict):
    Path(path).write_text(json.dumps(payload, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_predict(args) -> int:
    cfg = load_config(args.config)
    grid = _parse_grid(args.theta_grid)
    pol = cfg.polarizers
    rows = []
    for theta_deg in grid:
        th = quantum.theta_from_degrees(float(theta_deg))
        rows.append([
            float(theta_deg),
            float(quantum.p12_ideal(th)),
            float(quantum.p12_all_pairs_perfect(th)),
            float(quantum.p12_paper(th, pol)),
            float(quantum.p12_projector(th, pol)),
        ])
    _write_csv(args.out, ["theta_deg", "p12_ideal", "p12_all_pairs_perfect",
                          "p12_paper", "p12_projector"], rows, cfg)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    result = run_pipeline(cfg, args.theta)
    tick_ns = cfg.daq.clock_tick / NS
    if abs(tick_ns - round(tick_ns)) > 1e-9:
        raise ConfigError("clock tick must be an integer number of ns to write event files")
    out_d1, out_d2 = args.out
    cycle_ticks = cfg.daq.ticks_per_cycle
    write_events(out_d1, result.events_d1, int(round(tick_ns)), cycle_ticks)
    write_events(out_d2, result.events_d2, int(round(tick_ns)), cycle_ticks)
    report = {
        "theta_deg": args.theta,
        "ledger": result.ledger.as_dict(),
        "live_time_s": result.live_time,
        "files": {"d1": str(out_d1), "d2": str(out_d2)},
        "meta": _meta(cfg),
    }
    sys.stdout.write(json.dumps(report, indent=2, default=_json_default) + "\n")
    return EXIT_OK


def _load_event_pair(d1_path, d2_path, cfg: ExperimentConfig):
    events_d1, hdr1 = read_events(d1_path)
    events_d2, hdr2 = read_events(d2_path)
    if hdr1 != hdr2:
        raise DataError("event files carry inconsistent headers")
    if abs(hdr1.clock_tick - cfg.daq.clock_tick) > 1e-15:
        raise DataError(f"event file tick {hdr1.clock_tick_ns} ns does not match "
                        f"configured {cfg.daq.clock_tick / NS:g} ns")
    if len(events_d1) == 0 or len(events_d2) == 0:
        raise DataError("empty detection stream; nothing to analyze")
    return events_d1, events_d2, hdr1


def cmd_analyze(args) -> int:
    cfg = load_config(args.config)
    events_d1, events_d2, hdr = _load_event_pair(args.d1, args.d2, cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    cycle_len = hdr.cycle_length_ticks * hdr.clock_tick
    n_cycles = int(max(events_d1.cycle_id.max(), events_d2.cycle_id.max())) + 1
    live_time = n_cycles * (cycle_len - cfg.daq.dead_time_per_cycle)

    hist = histogram_from_detection(events_d1, events_d2, cfg.analysis.bin_width,
                                    cfg.analysis.max_delta, hdr.clock_tick,
                                    live_time=live_time)
    _write_csv(out_dir / "histogram.csv", ["delta_ns_low", "counts"],
               [[left / NS, int(c)] for left, c in zip(hist.bin_lefts, hist.counts)], cfg)

    plateau = cfg.analysis.plateau_range(cfg.daq.t_w, cfg.tau_c)
    window = cfg.analysis.window_params()
    est = estimate_p12(hist, window, plateau)
    dip = expected_dip_fraction(window, cfg.tau_c, cfg.daq.t_w,
                                source_rate=cfg.rate, clock_tick=cfg.daq.clock_tick)
    p12, p12_sigma = p12_from_ratio(est.value, est.sigma, dip, cfg.singlet_fraction)
    _write_json(out_dir / "p12.json", {
        "ratio": est.value, "ratio_sigma": est.sigma,
        "n_coinc_window": est.n_coinc_window, "plateau_mean": est.plateau_mean,
        "plateau_range_ns": [est.plateau_range[0] / NS, est.plateau_range[1] / NS],
        "window_dip_fraction": dip,
        "p12": p12, "p12_sigma": p12_sigma,
        "meta": _meta(cfg),
    })

    fit = fit_coincidence_model(hist, CorrelationParams(1.0, cfg.tau_c),
                                ResponseParams(cfg.daq.t_w),
                                plateau_range=plateau, kernel=args.kernel)
    sig = fit.sigmas
    _write_json(out_dir / "fit.json", {
        "alpha": fit.alpha, "alpha_sigma": float(sig[0]),
        "t_w_ns": fit.t_w / NS, "t_w_sigma_ns": float(sig[1]) / NS,
        "tau_c_ns": fit.tau_c / NS, "tau_c_sigma_ns": float(sig[2]) / NS,
        "covariance": fit.covariance, "chi2": fit.chi2, "dof": fit.dof,
        "converged": fit.converged, "kernel": fit.kernel,
        "plateau_amplitude": fit.plateau_amplitude,
        "diagnostics": fit.diagnostics,
        "meta": _meta(cfg),
    })

    deltas = np.arange(0.0, cfg.analysis.max_delta, 1e-9)
    curve = 1.0 - fit.alpha * analysis._window_average(fit.kernel)(
        deltas, hist.bin_width, fit.tau_c, fit.t_w)
    _write_csv(out_dir / "model_curve.csv", ["delta_ns", "ratio", "counts_per_bin"],
               [[d / NS, r, r * fit.plateau_amplitude] for d, r in zip(deltas, curve)], cfg)

    if not fit.converged:
        print("fit did not converge; see fit.json diagnostics", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def _scan_one(cfg: ExperimentConfig, theta_deg: float) -> dict:
    result = run_pipeline(cfg, theta_deg)
    if len(result.events_d1) == 0 or len(result.events_d2) == 0:
        raise DataError(f"theta={theta_deg:g}: empty detection stream")
    hist = histogram_from_detection(result.events_d1, result.events_d2,
                                    cfg.analysis.bin_width, cfg.analysis.max_delta,
                                    cfg.daq.clock_tick, live_time=result.live_time)
    window = cfg.analysis.window_params()
    est = estimate_p12(hist, window, cfg.analysis.plateau_range(cfg.daq.t_w, cfg.tau_c))
    dip = expected_dip_fraction(window, cfg.tau_c, cfg.daq.t_w,
                                source_rate=cfg.rate, clock_tick=cfg.daq.clock_tick)
    p12, sigma = p12_from_ratio(est.value, est.sigma, dip, cfg.singlet_fraction)
    return {"theta_deg": theta_deg, "p12": p12, "sigma": sigma,
            "ratio": est.value, "ratio_sigma": est.sigma,
            "n_coinc_window": est.n_coinc_window, "hist": hist,
            "ledger": result.ledger.as_dict()}


def _n_workers() -> int:
    env = os.environ.get("NSB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"NSB_THREADS must be an integer, got {env!r}") from exc
    return min(4, os.cpu_count() or 1)


def cmd_scan(args) -> int:
    cfg = load_config(args.config)
    if not cfg.angles_deg:
        raise ConfigError("config.angles_deg must be non-empty for a scan")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    results: dict[float, dict] = {}
    failures: dict[float, str] = {}
    with ThreadPoolExecutor(max_workers=_n_workers()) as pool:
        futures = {pool.submit(_scan_one, cfg, th): th for th in cfg.angles_deg}
        for fut, th in futures.items():
            try:
                results[th] = fut.result()
            except Exception as exc:  # per-angle failures are reported, not fatal
                failures[th] = f"{type(exc).__name__}: {exc}"

    pol = cfg.polarizers
    rows = []
    for th in cfg.angles_deg:
        theta = quantum.theta_from_degrees(th)
        model_paper = float(quantum.p12_paper(theta, pol))
        model_proj = float(quantum.p12_projector(theta, pol))
        model_ideal = float(quantum.p12_ideal(theta))
        if th in results:
            r = results[th]
            rows.append([th, r["p12"], r["sigma"], model_paper, model_proj,
                         model_ideal, "ok"])
            _write_csv(out_dir / f"histogram_theta{th:g}.csv", ["delta_ns_low", "counts"],
                       [[left / NS, int(c)] for left, c in
                        zip(r["hist"].bin_lefts, r["hist"].counts)], cfg)
        else:
            rows.append([th, float("nan"), float("nan"), model_paper, model_proj,
                         model_ideal, "failed"])
    _write_csv(out_dir / "scan.csv",
               ["theta_deg", "p12", "sigma", "p12_paper", "p12_projector",
                "p12_ideal", "status"], rows, cfg)

    report_payload: dict = {"failures": {f"{k:g}": v for k, v in failures.items()},
                            "meta": _meta(cfg)}
    if len(results) >= 2:
        points = [ScanPoint(th, r["p12"], r["sigma"]) for th, r in sorted(results.items())]
        report = angle_scan_summary(points, pol)
        report_payload.update({
            "points": report.points,
            "chi2_paper": report.chi2_paper,
            "chi2_projector": report.chi2_projector,
            "dof": report.dof,
            "ch": None if report.ch is None else asdict(report.ch),
            "notes": report.notes,
        })
    _write_json(out_dir / "report.json", report_payload)
    if failures:
        print(f"{len(failures)} angle(s) failed; partial results written", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _p12_source(args):
    """Resolve the inequality p12 source to (callable theta->p12, label)."""
    src = args.source
    if src.startswith("model:"):
        name = src.split(":", 1)[1]
        pol = load_config(args.config).polarizers if args.config else PolarizerPair(
            0.221, 0.084, 0.221, 0.084)
        table = {
            "ideal": quantum.p12_ideal,
            "paper": lambda th: quantum.p12_paper(th, pol),
            "projector": lambda th: quantum.p12_projector(th, pol),
        }
        if name not in table:
            raise ConfigError(f"unknown model '{name}'; expected ideal, paper or projector")
        return table[name], src
    path = Path(src)
    if not path.exists():
        raise DataError(f"p12 source file not found: {src}")
    thetas, p12s = _read_p12_csv(path)
    x = np.cos(np.radians(thetas))
    order = np.argsort(x)
    from scipy.interpolate import PchipInterpolator
    interp = PchipInterpolator(x[order], p12s[order])
    x_lo, x_hi = float(x.min()), float(x.max())

    def p12_of(theta_rel):
        c = np.cos(theta_rel)
        if np.any(c < x_lo - 1e-9) or np.any(c > x_hi + 1e-9):
            raise DataError("insufficient angle coverage in the p12 source for the "
                            "requested geometry; refusing to extrapolate")
        return interp(c)

    return p12_of, f"interpolated:{src}"


def _read_p12_csv(path) -> tuple[np.ndarray, np.ndarray]:
    thetas, p12s = [], []
    with open(path) as fh:
        header = None
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cells = line.split(",")
            if header is None:
                header = cells
                try:
                    i_th = header.index("theta_deg")
                    i_p = header.index("p12")
                except ValueError as exc:
                    raise DataError(f"{path}: need theta_deg and p12 columns") from exc
                continue
            try:
                th, p = float(cells[i_th]), float(cells[i_p])
            except ValueError:
                continue
            if np.isfinite(th) and np.isfinite(p):
                thetas.append(th)
                p12s.append(p)
    if len(thetas) < 2:
        raise DataError(f"{path}: fewer than 2 usable p12 rows")
    return np.asarray(thetas), np.asarray(p12s)


def cmd_inequality(args) -> int:
    p12, label = _p12_source(args)
    phi = np.radians(_parse_grid(args.phi_grid))
    scan = quantum.ch_geometry_scan(p12, 0.5, 0.5, phi)
    phi45 = math.radians(45.0)
    s45 = float(quantum.ch_functional(p12, 0.5, 0.5, 0.0, 2 * phi45, phi45, 3 * phi45))

    def correlation(theta_rel):
        return 4.0 * np.asarray(p12(theta_rel)) - 1.0

    a, a_p, b, b_p = (math.radians(v) for v in (0.0, 90.0, 45.0, 135.0))
    s_chsh = quantum.chsh_functional(correlation, a, a_p, b, b_p)

    ch_verdict = "VIOLATED" if (quantum.ch_violates(scan.s_min)
                                or quantum.ch_violates(scan.s_max)) else "NOT VIOLATED"
    chsh_verdict = "VIOLATED" if s_chsh > 2.0 else "NOT VIOLATED"
    lines = [
        f"p12 source: {label}",
        f"CH (bounds [-1, 0], singles p1 = p2 = 1/2):",
        f"  S at phi=45 deg geometry: {s45:.6f}",
        f"  extremal S over phi grid: min {scan.s_min:.6f} at {math.degrees(scan.phi_at_min):.2f} deg, "
        f"max {scan.s_max:.6f} at {math.degrees(scan.phi_at_max):.2f} deg",
        f"  verdict: {ch_verdict} (margin below -1: {-1.0 - scan.s_min:+.6f}, above 0: {scan.s_max:+.6f})",
        f"CHSH (classical bound 2) at angles 0/90/45/135 deg with E = 4*p12 - 1:",
        f"  S_CHSH = {s_chsh:.6f}  -> {chsh_verdict}",
    ]
    sys.stdout.write("\n".join(lines) + "\n")
    if args.out:
        _write_json(args.out, {
            "source": label,
            "ch": {"s_at_45_deg": s45, "s_min": scan.s_min,
                   "phi_at_min_deg": math.degrees(scan.phi_at_min),
                   "s_max": scan.s_max, "phi_at_max_deg": math.degrees(scan.phi_at_max),
                   "verdict": ch_verdict},
            "chsh": {"s": s_chsh, "angles_deg": [0.0, 90.0, 45.0, 135.0],
                     "verdict": chsh_verdict},
        })
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nsbell",
        description="Event-level simulator and analysis for a singlet neutron-pair "
                    "polarization-correlation experiment.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("predict", help="tabulate the analytic p12 curves")
    p.add_argument("--config", required=True)
    p.add_argument("--theta-grid", default="0:180:5", help="START:STOP:STEP in degrees")
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("simulate", help="run the event pipeline at one angle")
    p.add_argument("--config", required=True)
    p.add_argument("--theta", type=float, required=True, help="analyzer angle, degrees")
    p.add_argument("--out", nargs=2, required=True, metavar=("D1_EVT", "D2_EVT"))
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("analyze", help="histogram, ratio estimate and model fit")
    p.add_argument("--d1", required=True)
    p.add_argument("--d2", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--kernel", choices=analysis.FIT_KERNELS, default="two_sided",
                   help="response kernel for the fit (two_sided matches event data)")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("scan", help="simulate + analyze every configured angle")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_scan)

    p = sub.add_parser("inequality", help="CH / CHSH evaluation of a p12 source")
    p.add_argument("--source", required=True,
                   help="model:ideal | model:paper | model:projector | scan CSV path")
    p.add_argument("--config", default=None)
    p.add_argument("--phi-grid", default="0:90:0.5", help="START:STOP:STEP in degrees")
    p.add_argument("--out", default=None, help="optional JSON report path")
    p.set_defaults(fn=cmd_inequality)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, EventFileError, AnalysisError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FitDidNotConverge as exc:
        print(f"fit did not converge: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
