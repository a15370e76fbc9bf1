"""Scenario runners behind the CLI.

Each runner returns a dict ``{filename: (columns, rows)}``; :func:`write_tables`
turns that into CSV files.  Sweep points and repeated runs are farmed out to
a process pool and reassembled in sweep order, and every random stream is
derived from ``(master seed, point index)``, so output bytes never depend on
the worker count.
"""
from __future__ import annotations

import csv
import io
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ScenarioConfig
from .estimators import (
    axial_angle,
    block_row,
    BLOCK_COLUMNS,
    correlators,
    expected_axial_angle,
    transmission,
    zz_error_rate,
)
from .linksim import CountMatrix, simulate_block
from .security import (
    bb84_fraction,
    key_rate_report,
    rfi_closed_form_rate,
    secure_key_rate,
)
from .steering import (
    HandMotionParams,
    MotionSegment,
    ccdf_max_deviation,
    run_tracking,
    simulate_hand_trace,
    steering_birefringence,
)


def derive_seed(master: int, *keys: int) -> int:
    return int(np.random.SeedSequence([master, *keys]).generate_state(1)[0])


def _pmap(fn, items, workers: int):
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _simulate(cfg: ScenarioConfig, ch, key: tuple[int, ...]) -> CountMatrix:
    src = replace(cfg.source, pattern_seed=derive_seed(cfg.source.pattern_seed, cfg.seed, *key))
    return simulate_block(src, ch, cfg.background, derive_seed(cfg.seed, *key), backend=cfg.backend)


# --- fig4 -------------------------------------------------------------------

FIG4_COLUMNS = [
    "angle_deg",
    "rfi_fraction",
    "rfi_closed_form_fraction",
    "bb84_fraction",
    "s_min_bits",
    "E_ZZ",
    "omega_deg",
    "secure_rate_bps",
]


def _fig4_point(args):
    cfg, k, angle = args
    ch = replace(cfg.channel, axial_angle=angle, transmission=cfg.static_transmission, duration=cfg.block_duration)
    m = _simulate(cfg, ch, (4, k))
    c = correlators(m)
    rep = key_rate_report(m, cfg.source.mean_photon_number, "device-model", cfg.sigma, cfg.n_starts, derive_seed(cfg.seed, 40, k))
    omega = axial_angle(c)
    return [
        angle,
        rep.secret_key_fraction,
        rfi_closed_form_rate(c),
        bb84_fraction(c, cfg.sigma),
        rep.s_min,
        zz_error_rate(m)[0],
        np.nan if omega is None else omega,
        rep.secure_rate,
    ]


def run_fig4(cfg: ScenarioConfig) -> dict:
    """Key fraction versus axial angle for static 0.5 s blocks, RFI against BB84."""
    items = [(cfg, k, float(a)) for k, a in enumerate(sorted(cfg.angles))]
    rows = _pmap(_fig4_point, items, cfg.workers)
    return {"fig4.csv": (FIG4_COLUMNS, rows)}


# --- fig5 -------------------------------------------------------------------

FIG5_COLUMNS = [
    "time_s",
    "tx_mirror_x_deg",
    "tx_mirror_y_deg",
    "rx_mirror_x_deg",
    "rx_mirror_y_deg",
    "axial_true_deg",
    "omega_deg",
    "omega_expected_deg",
    "transmission",
    "E_ZZ",
    "rfi_fraction",
    "asymptotic_rate_bps",
    "flags",
]


def fig5_steering(cfg: ScenarioConfig):
    f5 = cfg.fig5
    motion = replace(cfg.motion, segments=tuple(f5.segments), dt=cfg.loop.period, seed=derive_seed(cfg.seed, 5, 0))
    trace = simulate_hand_trace(f5.duration + f5.sample_length, motion)
    loop = replace(cfg.loop, lock_time=f5.lock_time, seed=derive_seed(cfg.seed, 5, 1))
    return run_tracking(trace, loop)


def _fig5_sample(args):
    cfg, k, t0, eff, tx, rx, axial = args
    ret, axis = steering_birefringence(tx, rx, cfg.loop.mirror_range)
    ch = replace(
        cfg.channel,
        axial_angle=axial,
        birefringence_retardance=float(ret),
        birefringence_axis=float(axis),
        transmission=cfg.channel.transmission * eff,
        duration=cfg.fig5.sample_length,
    )
    m = _simulate(cfg, ch, (5, k))
    c = correlators(m)
    flags = []
    omega = axial_angle(c, cfg.fig5.min_counts)
    e, r, rate = np.nan, 0.0, 0.0
    if omega is None:
        # too few counts for any parameter estimate: no key is claimed
        flags.append("insufficient_data")
    if c.n("Z", "Z") > 0:
        e = zz_error_rate(m)[0]
    if omega is not None and c.n("Z", "Z") >= cfg.fig5.min_counts:
        r = rfi_closed_form_rate(c)
        rate = secure_key_rate(r, m, cfg.source.mean_photon_number)
    if rate == 0.0:
        flags.append("zero_key")
    return [
        t0,
        *tx,
        *rx,
        axial,
        np.nan if omega is None else omega,
        expected_axial_angle(axial),
        transmission(m, cfg.source.mean_photon_number),
        e,
        r,
        rate,
        "|".join(flags),
    ]


def run_fig5(cfg: ScenarioConfig) -> dict:
    """Short samples along a scripted handheld session: pointing, transmission, QBER, rate."""
    f5 = cfg.fig5
    st = fig5_steering(cfg)
    times = np.round(np.arange(0.0, f5.duration + 1e-9, f5.sample_interval), 9)
    items = []
    for k, t0 in enumerate(times):
        i = min(int(round(t0 / cfg.loop.period)), len(st.t) - 1)
        eff = st.window_efficiency(t0, f5.sample_length)
        items.append((cfg, k, float(t0), eff, tuple(st.tx_mirror[i]), tuple(st.rx_mirror[i]), float(st.axial[i])))
    rows = _pmap(_fig5_sample, items, cfg.workers)
    return {"fig5.csv": (FIG5_COLUMNS, rows)}


# --- finite key ---------------------------------------------------------------

FINITE_KEY_COLUMNS = [
    "run",
    "mean_coupling",
    "transmission",
    "E_ZZ",
    "s_min_bits",
    "secret_key_fraction",
    "sifted_rate_bps",
    "secure_rate_bps",
    "zero_key",
]


def _finite_key_run(args):
    cfg, k = args
    burn_in = 0.5
    motion = replace(cfg.motion, segments=(), dt=cfg.loop.period, seed=derive_seed(cfg.seed, 3, k, 0))
    trace = simulate_hand_trace(burn_in + cfg.block_duration, motion)
    st = run_tracking(trace, replace(cfg.loop, lock_time=0.0, seed=derive_seed(cfg.seed, 3, k, 1)))
    eff = st.window_efficiency(burn_in, cfg.block_duration)
    ch = replace(cfg.channel, transmission=cfg.static_transmission * eff, duration=cfg.block_duration)
    m = _simulate(cfg, ch, (3, k))
    rep = key_rate_report(m, cfg.source.mean_photon_number, "device-model", cfg.sigma, cfg.n_starts, derive_seed(cfg.seed, 30, k))
    try:
        e = zz_error_rate(m)[0]
    except ValueError:
        e = np.nan
    return [
        k,
        eff,
        transmission(m, cfg.source.mean_photon_number),
        e,
        rep.s_min,
        rep.secret_key_fraction,
        rep.sifted_rate,
        rep.secure_rate,
        int(rep.secure_rate == 0.0),
    ]


def run_finite_key(cfg: ScenarioConfig) -> dict:
    """Repeated 0.5 s handheld transactions analysed with the device model."""
    rows = _pmap(_finite_key_run, [(cfg, k) for k in range(cfg.finite_key_runs)], cfg.workers)
    rates = np.array([r[7] for r in rows])
    std = float(rates.std(ddof=1)) if len(rates) > 1 else 0.0
    summary = [["mean", "", "", "", "", "", "", float(rates.mean()), ""], ["std", "", "", "", "", "", "", std, ""]]
    return {"finite_key.csv": (FINITE_KEY_COLUMNS, rows + summary)}


# --- steering ---------------------------------------------------------------


def _coverage_point(args):
    cfg, k, offset = args
    s = cfg.steering
    motion = replace(
        cfg.motion,
        segments=(MotionSegment(0.0, 0.0, tilt_x=offset),),
        dt=cfg.loop.period,
        seed=derive_seed(cfg.seed, 6, k, 0),
    )
    st = run_tracking(simulate_hand_trace(s.coverage_duration, motion), replace(cfg.loop, lock_time=0.0, seed=derive_seed(cfg.seed, 6, k, 1)))
    return [offset, st.window_efficiency(s.coverage_settle, s.coverage_duration)]


def run_steering(cfg: ScenarioConfig) -> dict:
    """Hand-motion CCDFs per window, coverage curve and a per-step tracking log."""
    s = cfg.steering
    motion = replace(cfg.motion, dt=cfg.loop.period, seed=derive_seed(cfg.seed, 7, 0))
    trace = simulate_hand_trace(s.duration, motion)
    angles = np.linspace(0.0, s.ccdf_max_angle, s.ccdf_points)
    curves = [ccdf_max_deviation(trace, w, angles)[1] for w in s.windows]
    ccdf_rows = [[a, *(c[i] for c in curves)] for i, a in enumerate(angles)]
    ccdf_cols = ["angle_deg"] + [f"ccdf_{round(w * 1000)}ms" for w in s.windows]
    cov_rows = _pmap(_coverage_point, [(cfg, k, float(o)) for k, o in enumerate(s.coverage_offsets)], cfg.workers)
    st = run_tracking(trace, replace(cfg.loop, seed=derive_seed(cfg.seed, 7, 1)))
    err = st.error_magnitude
    trace_rows = [
        [st.t[i], *st.tx_mirror[i], *st.rx_mirror[i], err[i], st.axial[i], st.efficiency[i]] for i in range(len(st.t))
    ]
    return {
        "steering_ccdf.csv": (ccdf_cols, ccdf_rows),
        "steering_coverage.csv": (["offset_deg", "mean_efficiency"], cov_rows),
        "steering_trace.csv": (list(st.COLUMNS), trace_rows),
    }


# --- custom -------------------------------------------------------------------

REPORT_COLUMNS = ["method", "sigma", "s_min_bits", "secret_key_fraction", "sifted_rate_bps", "secure_rate_bps", "multiphoton_penalty"]


def run_custom(cfg: ScenarioConfig, counts_path=None) -> dict:
    """One block (simulated from ``cfg.channel`` or read from a CountMatrix CSV) through every estimator."""
    if counts_path is not None:
        m = CountMatrix.from_csv(counts_path)
    else:
        m = _simulate(cfg, cfg.channel, (9, 0))
    mu = cfg.source.mean_photon_number
    reports = [key_rate_report(m, mu, meth, cfg.sigma, cfg.n_starts, derive_seed(cfg.seed, 90)) for meth in ("device-model", "closed-form", "bb84")]
    return {
        "counts.csv": m.to_csv(),
        "estimates.csv": (BLOCK_COLUMNS, [block_row(0.0, m)]),
        "key_rate.csv": (REPORT_COLUMNS, [r.row() for r in reports]),
    }


RUNNERS = {
    "fig4": run_fig4,
    "fig5": run_fig5,
    "finite-key": run_finite_key,
    "steering": run_steering,
    "custom": run_custom,
}


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def render_table(columns, rows, comment: str) -> str:
    buf = io.StringIO()
    buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_tables(tables: dict, cfg: ScenarioConfig, out_dir=None) -> list[Path]:
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    comment = f"rfiqkd scenario={cfg.scenario} seed={cfg.seed} config_sha256={cfg.fingerprint()}"
    written = []
    for name, table in tables.items():
        if isinstance(table, str):
            text = f"# {comment}\n" + table if not table.startswith("# duration") else table
        else:
            text = render_table(*table, comment)
        path = out / name
        path.write_text(text)
        written.append(path)
    return written


def run_scenario(cfg: ScenarioConfig, **kwargs) -> dict:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return RUNNERS[cfg.scenario](cfg, **kwargs)
