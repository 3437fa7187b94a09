"""Trajectory error metrics: ATE after alignment, RPE, multi-run medians.

A :class:`Trajectory` stores **world-from-camera** poses (the TUM
convention), so ``positions()`` are camera centres. Use
:meth:`Trajectory.from_camera_poses` to build one from the solver's
camera-from-world poses.
"""

from __future__ import annotations

import math
import os
import statistics
from dataclasses import dataclass, fields
from typing import Literal, Sequence

import numpy as np

from .errors import DatasetFormatError, NoMatchesError, TooFewPosesError
from .geometry import Pose, Rotation, SimTransform, umeyama_align

Alignment = Literal["none", "se3", "sim3"]


class Trajectory:
    __slots__ = ("_stamps", "_poses")

    def __init__(self, timestamps: Sequence[float], poses: Sequence[Pose]):
        stamps = np.array(timestamps, dtype=float).reshape(-1)
        if stamps.size != len(poses):
            raise ValueError(f"{stamps.size} timestamps for {len(poses)} poses")
        if stamps.size > 1 and not np.all(np.diff(stamps) > 0):
            raise ValueError("timestamps must be strictly increasing")
        stamps.setflags(write=False)
        self._stamps = stamps
        self._poses = tuple(poses)

    @classmethod
    def from_camera_poses(cls, timestamps, camera_from_world: Sequence[Pose]) -> Trajectory:
        return cls(timestamps, [p.inverse() for p in camera_from_world])

    @property
    def timestamps(self) -> np.ndarray:
        return self._stamps

    @property
    def poses(self) -> tuple[Pose, ...]:
        return self._poses

    def __len__(self):
        return len(self._poses)

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self._poses]).reshape(-1, 3)

    def transformed(self, T: Pose) -> Trajectory:
        """Apply a global rigid transform on the left of every pose."""
        return Trajectory(self._stamps, [T @ p for p in self._poses])

    def subset(self, indices) -> Trajectory:
        return Trajectory(self._stamps[list(indices)], [self._poses[i] for i in indices])


# --------------------------------------------------------------------------
# TUM format


def write_tum(traj: Trajectory, path) -> None:
    """``timestamp tx ty tz qx qy qz qw`` with 9 significant digits."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(format_tum(traj))


def format_tum(traj: Trajectory) -> str:
    lines = []
    for t, p in zip(traj.timestamps, traj.poses):
        w, x, y, z = p.rotation.quaternion
        vals = (t, *p.translation, x, y, z, w)
        lines.append(" ".join(f"{float(v):.9g}" for v in vals))
    return "\n".join(lines) + ("\n" if lines else "")


def read_tum(path) -> Trajectory:
    stamps, poses = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 8:
                raise DatasetFormatError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            try:
                t, tx, ty, tz, qx, qy, qz, qw = (float(v) for v in parts)
                pose = Pose(Rotation((qw, qx, qy, qz)), (tx, ty, tz))
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
            stamps.append(t)
            poses.append(pose)
    try:
        return Trajectory(stamps, poses)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class ErrorStats:
    """Summary of per-pose errors. ``std`` is the sample (n-1) deviation."""

    rmse: float
    mean: float
    std: float
    median: float
    min: float
    max: float
    n: int = 0

    @classmethod
    def from_errors(cls, errors) -> ErrorStats:
        e = np.asarray(errors, dtype=float).reshape(-1)
        if e.size == 0:
            raise ValueError("no errors to summarize")
        n = e.size
        return cls(
            rmse=float(math.sqrt(np.mean(e * e))),
            mean=float(np.mean(e)),
            std=float(np.std(e, ddof=1)) if n > 1 else 0.0,
            median=float(np.median(e)),
            min=float(np.min(e)),
            max=float(np.max(e)),
            n=n,
        )

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


STAT_FIELDS = ("rmse", "mean", "std", "median", "min", "max")


@dataclass(frozen=True)
class RunSummary:
    median: ErrorStats
    runs: tuple[ErrorStats, ...]


def aggregate_runs(runs: Sequence[ErrorStats]) -> RunSummary:
    """Per-statistic median across runs (lower median for even counts)."""
    runs = tuple(runs)
    if not runs:
        raise ValueError("need at least one run")
    med = {k: statistics.median_low([getattr(r, k) for r in runs]) for k in STAT_FIELDS}
    med["n"] = statistics.median_low([r.n for r in runs])
    return RunSummary(ErrorStats(**med), runs)


# --------------------------------------------------------------------------
# association and alignment


def associate(est: Trajectory, gt: Trajectory, max_dt: float = 0.02) -> list[tuple[int, int]]:
    """Greedy nearest-timestamp matching; returns ``(est_index, gt_index)`` pairs.

    Candidate pairs within ``max_dt`` are taken in order of increasing time
    difference; each estimate and each ground-truth pose is used at most
    once. The result is sorted by estimate index.
    """
    if len(est) == 0 or len(gt) == 0:
        raise NoMatchesError("cannot associate an empty trajectory")
    te, tg = est.timestamps, gt.timestamps
    cands = []
    for i, t in enumerate(te):
        lo = np.searchsorted(tg, t - max_dt, side="left")
        hi = np.searchsorted(tg, t + max_dt, side="right")
        for j in range(lo, hi):
            dt = abs(tg[j] - t)
            if dt <= max_dt:
                cands.append((dt, i, j))
    cands.sort()
    used_e, used_g, pairs = set(), set(), []
    for _, i, j in cands:
        if i in used_e or j in used_g:
            continue
        used_e.add(i)
        used_g.add(j)
        pairs.append((i, j))
    if not pairs:
        raise NoMatchesError(f"no timestamps match within {max_dt} s")
    pairs.sort()
    return pairs


def matched(est: Trajectory, gt: Trajectory, max_dt: float = 0.02) -> tuple[Trajectory, Trajectory]:
    """The associated sub-trajectories, index-aligned."""
    pairs = associate(est, gt, max_dt)
    return est.subset([i for i, _ in pairs]), gt.subset([j for _, j in pairs])


def alignment_transform(est: Trajectory, gt: Trajectory, alignment: Alignment) -> SimTransform:
    """Transform taking matched ``est`` positions onto ``gt``."""
    if alignment == "none":
        return SimTransform()
    if alignment not in ("se3", "sim3"):
        raise ValueError(f"alignment must be none, se3 or sim3, got {alignment!r}")
    return umeyama_align(est.positions(), gt.positions(), with_scale=alignment == "sim3")


def ate_errors(est: Trajectory, gt: Trajectory, alignment: Alignment = "se3", max_dt: float = 0.02):
    """Per-pose translation errors after alignment, plus the transform used."""
    e, g = matched(est, gt, max_dt)
    T = alignment_transform(e, g, alignment)
    err = np.linalg.norm(g.positions() - T.apply(e.positions()), axis=1)
    return err, T


def ate(est: Trajectory, gt: Trajectory, alignment: Alignment = "se3", max_dt: float = 0.02) -> ErrorStats:
    err, _ = ate_errors(est, gt, alignment, max_dt)
    return ErrorStats.from_errors(err)


def rpe(
    est: Trajectory,
    gt: Trajectory,
    delta: int = 1,
    normalize: bool = False,
    max_dt: float = 0.02,
) -> ErrorStats:
    """Translational relative pose error over ``delta``-frame steps.

    With ``normalize`` each error is divided by the ground-truth step length
    (meters per meter travelled).
    """
    if delta < 1:
        raise ValueError("delta must be >= 1")
    e, g = matched(est, gt, max_dt)
    if len(e) < delta + 1:
        raise TooFewPosesError(f"need at least {delta + 1} matched poses, got {len(e)}")
    errs = []
    for i in range(len(e) - delta):
        rel_gt = g.poses[i].inverse() @ g.poses[i + delta]
        rel_est = e.poses[i].inverse() @ e.poses[i + delta]
        E = rel_gt.inverse() @ rel_est
        err = float(np.linalg.norm(E.translation))
        if normalize:
            dist = float(np.linalg.norm(rel_gt.translation))
            if dist == 0.0:
                continue
            err /= dist
        errs.append(err)
    if not errs:
        raise TooFewPosesError("no relative motions with non-zero length")
    return ErrorStats.from_errors(errs)
