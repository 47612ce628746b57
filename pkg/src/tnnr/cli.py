"""Experiment runner: image completion, partial-DCT synthetic recovery, rank
estimation traces, and baseline-vs-multistage comparisons.

Every run writes its resolved configuration, the operator index file, a
metrics CSV (one row per seed and method), a per-iteration trace CSV and a
rank-estimation profile CSV into the output directory. CSV outputs are
byte-identical across re-runs with the same configuration; wall-clock
timings go to a separate timings.csv that is exempt from that guarantee.
"""

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import SyntheticSpec, load_image, save_image, stream_rng, synth_lowrank
from .metrics import psnr, relative_error
from .operators import PartialDct2D, SamplingMask
from .solvers import (
    INNER_SOLVERS,
    SolverConfig,
    SolverDivergence,
    lrisd,
    solve_with_rank,
)
from .sve import SveConfig, estimate_rank

__all__ = ["ExperimentConfig", "run", "emit_plot_data", "main"]

COMMANDS = ("complete", "dct-synth", "sve-trace", "compare")

METRICS_COLUMNS = (
    "experiment", "seed", "method", "operator", "solver", "m", "n", "true_r",
    "sr", "std", "kappa", "delta", "mu", "rank_recovered", "stages",
    "inner_iters", "reer", "psnr_db", "se", "mse", "t_count",
)
TRACE_COLUMNS = ("seed", "method", "stage", "l", "k", "objective", "residual", "beta")
SVE_COLUMNS = ("seed", "method", "stage", "kappa", "r_hat", "index", "S", "St", "Stt")


@dataclass
class ExperimentConfig:
    """One experiment run, serializable to a line-oriented key = value file."""

    command: str = ""
    operator: str = "dct"
    m: int | None = None
    n: int | None = None
    rank: int | None = None
    sr: float = 0.5
    std: float = 0.0
    image: str | None = None
    mask_file: str | None = None
    keep_file: str | None = None
    keep_dc: bool = False
    solver: str = "admm"
    kappa_mode: str = "synthetic"
    kappa: float | None = None
    kappa_s: float = 1.0
    max_outer: int = 10
    stability: int = 2
    delta: float | None = None
    mu: float = 1.0
    beta: float = 1e-3
    inner_tol: float = 1e-4
    outer_tol: float = 1e-2
    max_inner_iters: int = 5000
    max_refit_iters: int = 30
    trials: int = 1
    seed: int = 0
    out: str = "out"
    adjust: int | None = None

    def validate(self) -> None:
        def fail(field, msg):
            raise ValueError(f"config field '{field}': {msg}")

        if self.command not in COMMANDS:
            fail("command", f"must be one of {COMMANDS}, got {self.command!r}")
        if self.operator not in ("mask", "dct"):
            fail("operator", f"must be 'mask' or 'dct', got {self.operator!r}")
        if self.solver not in INNER_SOLVERS:
            fail("solver", f"must be one of {INNER_SOLVERS}, got {self.solver!r}")
        if self.trials < 1:
            fail("trials", "must be >= 1")
        if self.command == "complete":
            if not self.image:
                fail("image", "the complete command requires an image path")
            for f in ("m", "n", "rank"):
                if getattr(self, f) is not None:
                    fail(f, "the complete command derives dimensions from the image")
        else:
            if self.image:
                fail("image", f"the {self.command} command takes no image input")
            for f in ("m", "n", "rank"):
                if getattr(self, f) is None:
                    fail(f, f"the {self.command} command requires {f}")
            if self.command == "dct-synth" and self.operator != "dct":
                fail("operator", "dct-synth uses the dct operator")
        if self.mask_file and self.operator != "mask":
            fail("mask_file", "only valid with operator = mask")
        if self.keep_file and self.operator != "dct":
            fail("keep_file", "only valid with operator = dct")
        if self.adjust is not None and self.adjust < 0:
            fail("adjust", "window must be >= 0")

    # ---- text round trip -------------------------------------------------

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as e:
            raise ValueError(f"config file {path}: {e}") from e
        for lineno, raw in enumerate(lines, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config file {path} line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ValueError(f"config file {path} line {lineno}: unknown field '{key}'")
            try:
                kwargs[key] = _coerce(key, value)
            except ValueError as e:
                raise ValueError(f"config file {path} line {lineno}, field '{key}': {e}") from e
        return cls(**kwargs)

    def to_file(self, path) -> None:
        with open(path, "w") as f:
            for fld in fields(self):
                value = getattr(self, fld.name)
                if value is None:
                    continue
                f.write(f"{fld.name} = {value}\n")


_INT_FIELDS = {"m", "n", "rank", "max_outer", "stability", "max_inner_iters",
               "max_refit_iters", "trials", "seed", "adjust"}
_FLOAT_FIELDS = {"sr", "std", "kappa", "kappa_s", "delta", "mu", "beta",
                 "inner_tol", "outer_tol"}
_BOOL_FIELDS = {"keep_dc"}


def _coerce(key: str, value: str):
    if key in _INT_FIELDS:
        return int(value)
    if key in _FLOAT_FIELDS:
        return float(value)
    if key in _BOOL_FIELDS:
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    return value


# ---- shared machinery ----------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _worker_count(trials: int) -> int:
    cap = os.environ.get("LOWRANK_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(trials, limit))


def _solver_config(cfg: ExperimentConfig, delta: float) -> SolverConfig:
    return SolverConfig(beta=cfg.beta, mu=cfg.mu, delta=delta,
                        inner_tol=cfg.inner_tol, outer_tol=cfg.outer_tol,
                        max_inner_iters=cfg.max_inner_iters,
                        max_refit_iters=cfg.max_refit_iters)


def _sve_config(cfg: ExperimentConfig, baseline: bool = False) -> SveConfig:
    mode = "explicit" if cfg.kappa is not None else cfg.kappa_mode
    return SveConfig(kappa_mode=mode, kappa=cfg.kappa, s=cfg.kappa_s,
                     max_outer=0 if baseline else cfg.max_outer,
                     stability=cfg.stability)


def _resolve_delta(cfg: ExperimentConfig, p: int) -> float:
    """Ball radius policy: explicit value if given, else sqrt(p) * std for
    noisy synthetic runs (the expected noise norm), else 0."""
    if cfg.delta is not None:
        return cfg.delta
    if cfg.std > 0:
        return cfg.std * float(np.sqrt(p))
    return 0.0


def _recovered_rank(x: np.ndarray, kappa: float) -> int:
    spectrum = np.linalg.svd(x, compute_uv=False)
    return estimate_rank(spectrum, kappa).r_hat


def _sve_rows(seed, method, traces):
    rows = []
    for t in traces:
        if t.sve is None:
            continue
        prof = t.sve
        for i in range(prof.S.size):
            st = prof.St[i] if i < prof.St.size else None
            stt = prof.Stt[i] if i < prof.Stt.size else None
            rows.append((seed, method, t.stage, prof.kappa, prof.r_hat,
                         i + 1, prof.S[i], st, stt))
    return rows


def _trace_rows(seed, method, traces):
    return [(seed, method, *row) for t in traces for row in t.rows()]


# ---- synthetic commands --------------------------------------------------


def _synthetic_trial(cfg: ExperimentConfig, seed: int):
    spec = SyntheticSpec(cfg.m, cfg.n, cfg.rank, cfg.sr, cfg.std, seed)
    x_star, a, b = synth_lowrank(spec, kind=cfg.operator, keep_dc=cfg.keep_dc)
    delta = _resolve_delta(cfg, a.p)
    solver_cfg = _solver_config(cfg, delta)
    kappa = _sve_config(cfg).resolve_kappa(cfg.m, cfg.n)

    methods = ["lrisd"] if cfg.command in ("dct-synth", "sve-trace") else ["lr", "lrisd"]
    if cfg.adjust is not None and cfg.command != "sve-trace":
        methods.append("lrisd-adjust")

    metrics, trace_rows, sve_rows, timings = [], [], [], []
    lrisd_x = lrisd_rank = None
    for method in methods:
        start = time.perf_counter()
        if method == "lr":
            x, traces = lrisd(a, b, cfg.solver, _sve_config(cfg, baseline=True), solver_cfg)
        elif method == "lrisd":
            x, traces = lrisd(a, b, cfg.solver, _sve_config(cfg), solver_cfg)
            lrisd_x, lrisd_rank = x, _recovered_rank(x, kappa)
        else:
            noisy_rank = lrisd_rank if lrisd_rank is not None else 0
            x, traces = _adjust_sweep(a, b, noisy_rank, cfg, solver_cfg,
                                      score=lambda xc: -relative_error(xc, x_star))
        elapsed = time.perf_counter() - start
        reer = relative_error(x, x_star)
        metrics.append((cfg.command, seed, method, cfg.operator, cfg.solver,
                        cfg.m, cfg.n, cfg.rank, cfg.sr, cfg.std, kappa, delta,
                        cfg.mu, _recovered_rank(x, kappa), len(traces),
                        sum(t.total_inner_iters for t in traces), reer,
                        None, None, None, None))
        trace_rows.extend(_trace_rows(seed, method, traces))
        sve_rows.extend(_sve_rows(seed, method, traces))
        timings.append((cfg.command, seed, method, elapsed))
    return metrics, trace_rows, sve_rows, timings


def _adjust_sweep(a, b, r_center, cfg, solver_cfg, score):
    """Re-solve with every rank in a window around the estimate and keep the
    best-scoring recovery (higher score wins; ties go to the smaller rank)."""
    w = cfg.adjust
    q = min(a.shape)
    best = None
    merged = []
    for r in range(max(0, r_center - w), min(q, r_center + w) + 1):
        x, trace = solve_with_rank(a, b, r, cfg.solver, solver_cfg)
        merged.append(trace)
        s = score(x)
        if best is None or s > best[0]:
            best = (s, x)
    return best[1], merged


def _run_synthetic(cfg: ExperimentConfig, out: Path) -> None:
    seeds = [cfg.seed + i for i in range(cfg.trials)]
    with ThreadPoolExecutor(max_workers=_worker_count(cfg.trials)) as pool:
        results = list(pool.map(lambda s: _synthetic_trial(cfg, s), seeds))
    metrics, traces, sves, timings = [], [], [], []
    for m, t, s, w in results:
        metrics.extend(m)
        traces.extend(t)
        sves.extend(s)
        timings.extend(w)
    order = {"lr": 0, "lrisd": 1, "lrisd-adjust": 2}
    metrics.sort(key=lambda r: (r[1], order[r[2]]))
    traces.sort(key=lambda r: (r[0], order[r[1]]))
    sves.sort(key=lambda r: (r[0], order[r[1]], r[2], r[5]))
    timings.sort(key=lambda r: (r[1], order[r[2]]))
    _write_csv(out / "metrics.csv", METRICS_COLUMNS, metrics)
    _write_csv(out / "trace.csv", TRACE_COLUMNS, traces)
    _write_csv(out / "sve.csv", SVE_COLUMNS, sves)
    _write_csv(out / "timings.csv", ("experiment", "seed", "method", "seconds"), timings)

    if cfg.command == "compare":
        by_method = {}
        for row in metrics:
            by_method.setdefault(row[2], []).append(row)
        summary = []
        for method in sorted(by_method, key=lambda m: order[m]):
            rows = by_method[method]
            median_reer = float(np.median([r[16] for r in rows]))
            rank_hits = sum(1 for r in rows if r[13] == cfg.rank)
            summary.append((method, len(rows), median_reer, rank_hits))
        _write_csv(out / "summary.csv",
                   ("method", "trials", "median_reer", "rank_hits"), summary)

    if cfg.command == "sve-trace":
        final = [r for r in metrics if r[2] == "lrisd"]
        for row in final:
            print(f"seed {row[1]}: estimated rank {row[13]} "
                  f"(true rank {cfg.rank}, kappa {row[10]:.6g})")


# ---- image completion ----------------------------------------------------


def _build_image_operator(cfg: ExperimentConfig, m: int, n: int, seed: int):
    if cfg.operator == "mask":
        if cfg.mask_file:
            a = SamplingMask.from_file(cfg.mask_file)
            if a.shape != (m, n):
                raise ValueError(f"mask file shape {a.shape} does not match image ({m}, {n})")
        else:
            a = SamplingMask.random(m, n, cfg.sr, stream_rng(seed, "mask"))
    else:
        if cfg.keep_file:
            a = PartialDct2D.from_file(cfg.keep_file)
            if a.shape != (m, n):
                raise ValueError(f"keep file shape {a.shape} does not match image ({m}, {n})")
        else:
            a = PartialDct2D.random(m, n, cfg.sr, stream_rng(seed, "freqs"), keep_dc=cfg.keep_dc)
    return a


def _image_trial(cfg: ExperimentConfig, channels, seed: int, out: Path):
    m, n = channels[0].shape
    a = _build_image_operator(cfg, m, n, seed)
    delta = cfg.delta if cfg.delta is not None else 0.0
    solver_cfg = _solver_config(cfg, delta)
    kappa = _sve_config(cfg).resolve_kappa(m, n)
    if cfg.operator == "mask":
        missing = ~a.observed()
        eval_mask = missing if missing.any() else None
    else:
        eval_mask = None  # transform-domain sampling leaves no pixel untouched

    methods = ["lr", "lrisd"]
    if cfg.adjust is not None:
        methods.append("lrisd-adjust")

    metrics, trace_rows, sve_rows, timings, images = [], [], [], [], {}
    lrisd_ranks = {}
    for method in methods:
        start = time.perf_counter()
        recovered, all_traces, ranks = [], [], []
        stages = iters = 0
        for ci, channel in enumerate(channels):
            b = a.apply(channel)
            if method == "lr":
                x, traces = lrisd(a, b, cfg.solver, _sve_config(cfg, baseline=True), solver_cfg)
            elif method == "lrisd":
                x, traces = lrisd(a, b, cfg.solver, _sve_config(cfg), solver_cfg)
                lrisd_ranks[ci] = _recovered_rank(x, kappa)
            else:
                x, traces = _adjust_sweep(
                    a, b, lrisd_ranks.get(ci, 0), cfg, solver_cfg,
                    score=lambda xc: psnr(np.clip(xc, 0, 255), channel, eval_mask).psnr_db)
            recovered.append(np.clip(x, 0.0, 255.0))
            ranks.append(_recovered_rank(x, kappa))
            stages = max(stages, len(traces))
            iters += sum(t.total_inner_iters for t in traces)
            all_traces.extend(_trace_rows(seed, method, traces))
            sve_rows.extend(_sve_rows(seed, method, traces))
        elapsed = time.perf_counter() - start
        report = psnr(recovered if len(recovered) > 1 else recovered[0],
                      channels if len(channels) > 1 else channels[0], eval_mask)
        reer = relative_error(np.hstack(recovered), np.hstack(channels))
        metrics.append((cfg.command, seed, method, cfg.operator, cfg.solver,
                        m, n, None, cfg.sr, cfg.std, kappa, delta, cfg.mu,
                        int(np.median(ranks)), stages, iters, reer,
                        report.psnr_db, report.se, report.mse, report.t_count))
        trace_rows.extend(all_traces)
        timings.append((cfg.command, seed, method, elapsed))
        images[method] = recovered
    return a, metrics, trace_rows, sve_rows, timings, images, eval_mask


def _run_complete(cfg: ExperimentConfig, out: Path) -> None:
    channels = load_image(cfg.image)
    ext = "pgm" if len(channels) == 1 else "ppm"
    all_metrics, all_traces, all_sves, all_timings = [], [], [], []
    for trial in range(cfg.trials):
        seed = cfg.seed + trial
        a, metrics, traces, sves, timings, images, eval_mask = _image_trial(
            cfg, channels, seed, out)
        tag = f"_seed{seed}" if cfg.trials > 1 else ""
        a.to_file(out / f"operator{tag}.txt")
        if cfg.operator == "mask":
            observed = a.observed()
            save_image([c * observed for c in channels], out / f"masked{tag}.{ext}")
        for method, recovered in images.items():
            save_image(recovered, out / f"recovered_{method}{tag}.{ext}")
        all_metrics.extend(metrics)
        all_traces.extend(traces)
        all_sves.extend(sves)
        all_timings.extend(timings)
    _write_csv(out / "metrics.csv", METRICS_COLUMNS, all_metrics)
    _write_csv(out / "trace.csv", TRACE_COLUMNS, all_traces)
    _write_csv(out / "sve.csv", SVE_COLUMNS, all_sves)
    _write_csv(out / "timings.csv", ("experiment", "seed", "method", "seconds"), all_timings)
    for row in all_metrics:
        print(f"seed {row[1]} {row[2]}: PSNR {row[17]:.3f} dB over {row[20]} pixels")


# ---- plot data -----------------------------------------------------------


def emit_plot_data(files, out_dir) -> None:
    """Aggregate metrics/profile CSVs into tidy per-figure-family CSVs:
    median Reer vs std, median Reer vs sr, recovered-vs-true rank per trial,
    and the second-difference series vs index."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metric_rows, sve_rows = [], []
    for path in files:
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            cols = set(reader.fieldnames or ())
            if {"reer", "std", "sr", "method"} <= cols:
                metric_rows.extend(reader)
            elif {"Stt", "index", "stage"} <= cols:
                sve_rows.extend(reader)
            else:
                raise ValueError(f"format error: {path} is neither a metrics nor a profile CSV")
    if metric_rows:
        _emit_median_series(metric_rows, "std", out / "reer_vs_std.csv")
        _emit_median_series(metric_rows, "sr", out / "reer_vs_sr.csv")
        rank_rows = [(r["true_r"], r["rank_recovered"], r["seed"], r["method"])
                     for r in metric_rows if r.get("true_r") and r.get("rank_recovered")]
        rank_rows.sort(key=lambda t: (float(t[0]), int(t[2]), t[3]))
        _write_csv(out / "rank_recovery.csv",
                   ("true_r", "recovered_r", "seed", "method"), rank_rows)
    if sve_rows:
        rows = [(r["seed"], r["method"], r["stage"], r["index"], r["Stt"])
                for r in sve_rows if r["Stt"] != ""]
        rows.sort(key=lambda t: (int(t[0]), t[1], int(t[2]), int(t[3])))
        _write_csv(out / "stt_vs_index.csv",
                   ("seed", "method", "stage", "index", "Stt"), rows)


def _emit_median_series(rows, x_field, path) -> None:
    groups = {}
    for r in rows:
        if r["reer"] == "":
            continue
        key = (float(r[x_field]), r["method"])
        groups.setdefault(key, []).append(float(r["reer"]))
    series = [(x, method, float(np.median(vals)))
              for (x, method), vals in sorted(groups.items())]
    _write_csv(path, (x_field, "method", "median_reer"), series)


# ---- entry point ---------------------------------------------------------


def run(cfg: ExperimentConfig) -> int:
    """Execute one experiment; returns a process exit status."""
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.to_file(out / "config.txt")
    if cfg.command == "complete":
        _run_complete(cfg, out)
    else:
        _run_synthetic(cfg, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tnnr",
        description="Truncated-nuclear-norm low-rank recovery experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key = value config file; flags override it")
        p.add_argument("--seed", type=int, help="base RNG seed (trial i uses seed + i)")
        p.add_argument("--trials", type=int, help="number of independent trials")
        p.add_argument("--solver", choices=INNER_SOLVERS)
        p.add_argument("--kappa", type=float, help="explicit jump threshold")
        p.add_argument("--kappa-mode", choices=("real", "synthetic"), dest="kappa_mode")
        p.add_argument("--kappa-s", type=float, dest="kappa_s", help="heuristic scale s")
        p.add_argument("--delta", type=float, help="measurement ball radius")
        p.add_argument("--mu", type=float, help="data-fit weight of the penalized model")
        p.add_argument("--beta", type=float, help="ADMM penalty")
        p.add_argument("--inner-tol", type=float, dest="inner_tol")
        p.add_argument("--outer-tol", type=float, dest="outer_tol")
        p.add_argument("--max-inner-iters", type=int, dest="max_inner_iters")
        p.add_argument("--max-refit-iters", type=int, dest="max_refit_iters")
        p.add_argument("--max-outer", type=int, dest="max_outer")
        p.add_argument("--out", help="output directory")
        p.add_argument("--adjust", type=int, nargs="?", const=2,
                       help="after estimation, search ranks within +/- W (default 2)")

    def add_synth(p):
        p.add_argument("--m", type=int)
        p.add_argument("--n", type=int)
        p.add_argument("--rank", type=int, help="ground-truth rank")
        p.add_argument("--sr", type=float, help="sample ratio")
        p.add_argument("--std", type=float, help="measurement noise std")
        p.add_argument("--keep-dc", action="store_const", const=True, dest="keep_dc")

    p = sub.add_parser("complete", help="recover an image from partial observations")
    add_common(p)
    p.add_argument("--image", help="binary PGM/PPM input image")
    p.add_argument("--operator", choices=("mask", "dct"))
    p.add_argument("--sr", type=float, help="observed fraction for random masks")
    p.add_argument("--mask-file", dest="mask_file")
    p.add_argument("--keep-file", dest="keep_file")
    p.add_argument("--keep-dc", action="store_const", const=True, dest="keep_dc")

    p = sub.add_parser("dct-synth", help="synthetic recovery from a partial DCT")
    add_common(p)
    add_synth(p)

    p = sub.add_parser("sve-trace", help="rank-estimation diagnostics on synthetic data")
    add_common(p)
    add_synth(p)
    p.add_argument("--operator", choices=("mask", "dct"))

    p = sub.add_parser("compare", help="baseline vs multi-stage comparison")
    add_common(p)
    add_synth(p)
    p.add_argument("--operator", choices=("mask", "dct"))

    p = sub.add_parser("plot-data", help="aggregate run CSVs into plot-ready series")
    p.add_argument("files", nargs="+", help="metrics.csv / sve.csv files")
    p.add_argument("--out", default="plots", help="output directory")
    return parser


def _config_from_args(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_file(args.config)
        if cfg.command and cfg.command != args.command:
            raise ValueError(
                f"config file command '{cfg.command}' conflicts with subcommand '{args.command}'")
    else:
        cfg = ExperimentConfig()
    cfg.command = args.command
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        setattr(cfg, key, value)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plot-data":
            emit_plot_data(args.files, args.out)
            return 0
        return run(_config_from_args(args))
    except SolverDivergence as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
