"""Command-line front end: ``salient-ba {simulate,fuse,solve,eval,sweep}``.

Output layout (every CSV starts with a ``# schema: <name> v<k>`` line)::

    simulate  OUT/config.ini, OUT/groundtruth.txt, OUT/saliency/*.pgm,
              OUT/runs/run_<k>/problem.txt
    fuse      OUT/<stem>.pgm, OUT/manifest.csv
    solve     OUT/<run>/trajectory.txt (TUM), OUT/<run>/report.csv
    eval      OUT/metrics.csv, OUT/summary.csv, OUT/heatmap.csv,
              OUT/heatmap.svg, OUT/trajectories.svg
    sweep     OUT/dataset/, OUT/solve/<variant>/, OUT/eval/<variant>/,
              OUT/comparison.csv, OUT/winloss.csv

Outputs contain no timestamps or host information, so re-running a
command with the same inputs rewrites byte-identical files. The exit code
is 0 on success and 1 on any error; the message names the file or field.
``SALIENT_BA_THREADS`` caps the number of worker processes a sweep uses.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import config as cfgmod
from .config import ExperimentConfig
from .errors import ConfigError, DatasetFormatError, DimensionMismatchError, SalientBAError
from .metrics import (
    STAT_FIELDS,
    Trajectory,
    aggregate_runs,
    alignment_transform,
    ate,
    format_tum,
    matched,
    read_tum,
    rpe,
)
from .pgm import encode_raster, load_raster
from .pipeline import VARIANTS, observation_weights, run_backend
from .saliency import DepthMap, FusionParams, fuse_saliency, fuse_unnormalized
from .svg import heatmap_svg, trajectory_svg
from .synthetic import export_dataset, generate_world, import_dataset, simulate_observations

THREADS_ENV = "SALIENT_BA_THREADS"
SCHEMA_VERSION = 1


# --------------------------------------------------------------------------
# small I/O helpers


def _write_text(path, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(schema: str, header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: salient_ba.{schema} v{SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def read_csv(path) -> tuple[str, list[dict]]:
    """Return the schema line and the rows of a CSV written by this tool."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# schema: "):
            raise DatasetFormatError(f"{path}: missing schema header line")
        return first[len("# schema: "):], list(csv.DictReader(fh))


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}: expected a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV}: expected a positive integer, got {raw!r}")
    return n


# --------------------------------------------------------------------------
# simulate


def cmd_simulate(cfg: ExperimentConfig, out_dir, quiet: bool = False) -> list[str]:
    world = generate_world(cfg.scene)
    sims = [simulate_observations(world, cfg.noise, cfg.run_seed(k), cfg.mode) for k in range(cfg.runs)]
    written = export_dataset(world, sims, out_dir, cfg.mode)
    cpath = os.path.join(out_dir, "config.ini")
    _write_text(cpath, cfgmod.dumps(cfg))
    if not quiet:
        n_obs = [len(s.observations) for s in sims]
        print(
            f"dataset {out_dir}: {cfg.scene.n_keyframes} keyframes, {cfg.scene.n_points} points, "
            f"{cfg.runs} runs ({cfg.mode}), observations per run {min(n_obs)}..{max(n_obs)}"
        )
    return written + [cpath]


# --------------------------------------------------------------------------
# fuse


def _pgm_stems(d) -> dict[str, str]:
    if not os.path.isdir(d):
        raise DatasetFormatError(f"{d}: not a directory")
    return {n[:-4]: os.path.join(d, n) for n in sorted(os.listdir(d)) if n.lower().endswith(".pgm")}


def cmd_fuse(saliency_dir, depth_dir, params: FusionParams, out_dir, depth_scale_mm: float = 1.0) -> list[str]:
    """Fuse ``<stem>.pgm`` pairs. 16-bit depth without a scale comment uses ``depth_scale_mm``;
    8-bit depth samples are read as meters."""
    s_files, d_files = _pgm_stems(saliency_dir), _pgm_stems(depth_dir)
    for stem in sorted(set(s_files) ^ set(d_files)):
        path = s_files.get(stem) or d_files.get(stem)
        raise DatasetFormatError(f"{path}: no matching file with stem {stem!r} in the other directory")
    rows, written = [], []
    for stem in sorted(s_files):
        s = load_raster(s_files[stem])
        d = load_raster(d_files[stem], depth_scale_mm)
        if not isinstance(d, DepthMap):
            d = DepthMap(d.values)
        if (s.width, s.height) != (d.width, d.height):
            raise DimensionMismatchError(
                f"{d_files[stem]}: depth is {d.width}x{d.height}, saliency is {s.width}x{s.height}"
            )
        if isinstance(s, DepthMap):
            raise DatasetFormatError(f"{s_files[stem]}: saliency must be an 8-bit raster")
        raw = fuse_unnormalized(s, d, params)
        fused = fuse_saliency(s, d, params)
        path = os.path.join(out_dir, f"{stem}.pgm")
        os.makedirs(out_dir, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(encode_raster(fused))
        written.append(path)
        rows.append([stem, s.width, s.height, float(raw.min()), float(raw.max())])
    mpath = os.path.join(out_dir, "manifest.csv")
    _write_text(mpath, csv_text("fuse_manifest", ["stem", "width", "height", "raw_min", "raw_max"], rows))
    return written + [mpath]


# --------------------------------------------------------------------------
# solve

REPORT_FIELDS = ["frame", "stage", "reason", "iterations", "initial_cost", "final_cost",
                 "n_observations", "rank_deficient"]


def _solve_task(problem, weights, cfg: ExperimentConfig):
    res = run_backend(problem, weights, cfg.noise_model, cfg.kernel, cfg.solver)
    return format_tum(res.trajectory), res.reports


def _dataset_config(dataset_dir, cfg: ExperimentConfig | None) -> ExperimentConfig:
    if cfg is not None:
        return cfg
    path = os.path.join(dataset_dir, "config.ini")
    return cfgmod.load_config(path) if os.path.isfile(path) else ExperimentConfig()


def _solve_outputs(out_dir, name, tum_text, reports) -> list[str]:
    tpath = os.path.join(out_dir, name, "trajectory.txt")
    rpath = os.path.join(out_dir, name, "report.csv")
    _write_text(tpath, tum_text)
    _write_text(rpath, csv_text("solve_report", REPORT_FIELDS, [[r[k] for k in REPORT_FIELDS] for r in reports]))
    return [tpath, rpath]


def _solve_jobs(dataset, variant, cfg):
    jobs = []
    for name, prob in zip(dataset.run_names, dataset.problems):
        try:
            w = observation_weights(prob, variant, cfg.weight, dataset.saliency_maps)
        except (ValueError, KeyError) as exc:
            raise DatasetFormatError(f"{dataset.root}/runs/{name}: {exc}") from None
        jobs.append((name, prob, w))
    return jobs


def cmd_solve(dataset_dir, variant: str, out_dir, cfg: ExperimentConfig | None = None) -> list[str]:
    if variant not in VARIANTS:
        raise ConfigError(f"--variant: unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")
    cfg = _dataset_config(dataset_dir, cfg)
    ds = import_dataset(dataset_dir)
    written = []
    for name, prob, w in _solve_jobs(ds, variant, cfg):
        tum, reports = _solve_task(prob, w, cfg)
        written += _solve_outputs(out_dir, name, tum, reports)
    return written


# --------------------------------------------------------------------------
# eval


def collect_trajectories(est_dir) -> list[tuple[str, str]]:
    """``(name, path)`` for ``est_dir/*.txt`` and ``est_dir/<name>/trajectory.txt``."""
    if not os.path.isdir(est_dir):
        raise DatasetFormatError(f"{est_dir}: not a directory")
    found = []
    for n in sorted(os.listdir(est_dir)):
        p = os.path.join(est_dir, n)
        if os.path.isfile(p) and n.endswith(".txt"):
            found.append((n[:-4], p))
        elif os.path.isfile(os.path.join(p, "trajectory.txt")):
            found.append((n, os.path.join(p, "trajectory.txt")))
    if not found:
        raise DatasetFormatError(f"{est_dir}: no trajectory files found")
    return sorted(found)


def cmd_eval(est_dir, gt_file, out_dir, alignment: str = "se3", delta: int = 1,
             max_dt: float = 0.02) -> dict:
    if alignment not in ("none", "se3", "sim3"):
        raise ConfigError(f"--align: expected none, se3 or sim3, got {alignment!r}")
    gt = read_tum(gt_file)
    names, ates, rpes, trajs = [], [], [], []
    for name, path in collect_trajectories(est_dir):
        est = read_tum(path)
        try:
            a = ate(est, gt, alignment, max_dt)
            r = rpe(est, gt, delta, max_dt=max_dt)
        except SalientBAError as exc:
            raise type(exc)(f"{path}: {exc}") from None
        names.append(name)
        ates.append(a)
        rpes.append(r)
        trajs.append(est)

    header = ["run"] + [f"ate_{k}" for k in STAT_FIELDS] + [f"rpe_{k}" for k in STAT_FIELDS] + ["n_matched"]
    rows = [[n] + [getattr(a, k) for k in STAT_FIELDS] + [getattr(r, k) for k in STAT_FIELDS] + [a.n]
            for n, a, r in zip(names, ates, rpes)]
    a_med, r_med = aggregate_runs(ates).median, aggregate_runs(rpes).median
    summary = [["ate"] + [getattr(a_med, k) for k in STAT_FIELDS] + [len(names)],
               ["rpe"] + [getattr(r_med, k) for k in STAT_FIELDS] + [len(names)]]
    grid_rows = ["ate_rmse", "rpe_rmse"]
    grid = np.array([[a.rmse for a in ates], [r.rmse for r in rpes]])

    _write_text(os.path.join(out_dir, "metrics.csv"), csv_text("eval_metrics", header, rows))
    _write_text(os.path.join(out_dir, "summary.csv"),
                csv_text("eval_summary", ["metric"] + list(STAT_FIELDS) + ["runs"], summary))
    _write_text(os.path.join(out_dir, "heatmap.csv"),
                csv_text("eval_heatmap", ["metric"] + names, [[m] + list(g) for m, g in zip(grid_rows, grid)]))
    _write_text(os.path.join(out_dir, "heatmap.svg"), heatmap_svg(grid_rows, names, grid))
    overlay = [("groundtruth", gt.positions())]
    for n, est in zip(names, trajs):
        _, T = _aligned(est, gt, alignment, max_dt)
        overlay.append((n, T))
    _write_text(os.path.join(out_dir, "trajectories.svg"), trajectory_svg(overlay))
    return {"names": names, "ate": ates, "rpe": rpes, "ate_median": a_med, "rpe_median": r_med}


def _aligned(est: Trajectory, gt: Trajectory, alignment, max_dt):
    e, g = matched(est, gt, max_dt)
    if alignment == "none":
        return g, e.positions()
    S = alignment_transform(e, g, alignment)
    return g, S.apply(e.positions())


# --------------------------------------------------------------------------
# sweep


def cmd_sweep(cfg: ExperimentConfig, out_dir, quiet: bool = False) -> dict:
    data_dir = os.path.join(out_dir, "dataset")
    cmd_simulate(cfg, data_dir, quiet=True)
    ds = import_dataset(data_dir)
    jobs = [(v, name, prob, w) for v in cfg.variants for name, prob, w in _solve_jobs(ds, v, cfg)]

    workers = min(thread_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_solve_task, prob, w, cfg) for _, _, prob, w in jobs]
            results = [f.result() for f in futs]
    else:
        results = [_solve_task(prob, w, cfg) for _, _, prob, w in jobs]
    for (v, name, _, _), (tum, reports) in zip(jobs, results):
        _solve_outputs(os.path.join(out_dir, "solve", v), name, tum, reports)

    align = cfg.resolved_alignment()
    gt_file = os.path.join(data_dir, "groundtruth.txt")
    evals = {
        v: cmd_eval(os.path.join(out_dir, "solve", v), gt_file, os.path.join(out_dir, "eval", v),
                    align, cfg.rpe_delta, cfg.max_dt)
        for v in cfg.variants
    }

    comp = [[v, e["ate_median"].rmse, e["ate_median"].mean, e["ate_median"].std,
             e["rpe_median"].rmse, e["rpe_median"].mean, e["rpe_median"].std]
            for v, e in evals.items()]
    _write_text(os.path.join(out_dir, "comparison.csv"), csv_text(
        "sweep_comparison",
        ["variant", "ate_rmse", "ate_mean", "ate_std", "rpe_rmse", "rpe_mean", "rpe_std"], comp))

    base = evals.get("uniform")
    wl = []
    for v, e in evals.items():
        if base is None:
            wl.append([v, "", "", "", len(e["names"])])
            continue
        ref = [a.rmse for a in base["ate"]]
        mine = [a.rmse for a in e["ate"]]
        wins = sum(m < r for m, r in zip(mine, ref))
        losses = sum(m > r for m, r in zip(mine, ref))
        wl.append([v, wins, losses, len(ref) - wins - losses, len(ref)])
    _write_text(os.path.join(out_dir, "winloss.csv"),
                csv_text("sweep_winloss", ["variant", "wins_vs_uniform", "losses", "ties", "runs"], wl))

    if not quiet:
        print(f"{'variant':<16}{'ATE rmse':>12}{'ATE mean':>12}{'ATE std':>12}  wins/runs")
        for c, w in zip(comp, wl):
            print(f"{c[0]:<16}{c[1]:>12.5f}{c[2]:>12.5f}{c[3]:>12.5f}  {w[1]}/{w[4]}")
    return {"evals": evals, "comparison": comp, "winloss": wl}


# --------------------------------------------------------------------------
# argument parsing


def _load(args) -> ExperimentConfig:
    cfg = cfgmod.load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    over = {}
    for key in ("seed", "runs", "mode", "align"):
        if getattr(args, key, None) is not None:
            over[key] = getattr(args, key)
    if getattr(args, "delta", None) is not None:
        over["rpe_delta"] = args.delta
    if getattr(args, "variant", None):
        over["variants"] = tuple(args.variant)
    try:
        return cfgmod.with_overrides(cfg, **over)
    except ConfigError as exc:
        raise ConfigError(f"command line: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="salient-ba", description="Saliency-weighted bundle adjustment experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, experiment=True):
        sp.add_argument("--config", help="INI experiment configuration")
        sp.add_argument("--out", required=True, help="output directory")
        if experiment:
            sp.add_argument("--seed", type=int, help="base seed (run k uses seed + k)")
            sp.add_argument("--runs", type=int, help="number of noise realizations")
            sp.add_argument("--mode", choices=("mono", "stereo"))

    sp = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(sp)

    sp = sub.add_parser("fuse", help="fuse saliency with depth rasters")
    sp.add_argument("saliency_dir")
    sp.add_argument("depth_dir")
    common(sp, experiment=False)

    sp = sub.add_parser("solve", help="run the back-end on every run of a dataset")
    sp.add_argument("dataset_dir")
    sp.add_argument("--variant", required=True, choices=VARIANTS)
    common(sp, experiment=False)

    sp = sub.add_parser("eval", help="evaluate estimated trajectories against ground truth")
    sp.add_argument("est_dir")
    sp.add_argument("gt_file")
    common(sp, experiment=False)
    sp.add_argument("--align", choices=("none", "se3", "sim3"), default="se3")
    sp.add_argument("--delta", type=int, default=1, help="RPE step in frames")

    sp = sub.add_parser("sweep", help="simulate, solve every variant, evaluate and compare")
    common(sp)
    sp.add_argument("--variant", action="append", choices=VARIANTS, help="restrict to these variants")
    sp.add_argument("--align", choices=("none", "se3", "sim3"))
    sp.add_argument("--delta", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            cmd_simulate(_load(args), args.out)
        elif args.command == "fuse":
            cfg = cfgmod.load_config(args.config) if args.config else ExperimentConfig()
            written = cmd_fuse(args.saliency_dir, args.depth_dir, cfg.fusion, args.out, cfg.depth_scale_mm)
            print(f"fused {len(written) - 1} rasters into {args.out}")
        elif args.command == "solve":
            cfg = cfgmod.load_config(args.config) if args.config else None
            written = cmd_solve(args.dataset_dir, args.variant, args.out, cfg)
            print(f"solved {len(written) // 2} runs ({args.variant}) into {args.out}")
        elif args.command == "eval":
            if args.delta < 1:
                raise ConfigError("--delta: must be >= 1")
            res = cmd_eval(args.est_dir, args.gt_file, args.out, args.align, args.delta)
            print(f"ATE rmse median {res['ate_median'].rmse:.6g} m, "
                  f"RPE rmse median {res['rpe_median'].rmse:.6g} m over {len(res['names'])} runs")
        elif args.command == "sweep":
            cmd_sweep(_load(args), args.out)
    except (SalientBAError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
