"""Versioned plain-text problem snapshots.

Schema (``salient_ba.problem`` version 1), one record per line, fields
separated by single spaces, floats written with ``repr`` so that a
save/load round trip is bit-exact::

    format salient_ba.problem 1
    mode <mono|stereo>
    intrinsics <fx> <fy> <cx> <cy> <baseline>
    noise <sigma_px> <octave_scale>
    image_size <width> <height>
    pose <frame_id> <timestamp> <qw> <qx> <qy> <qz> <tx> <ty> <tz>
    point <point_id> <x> <y> <z>
    obs <frame_id> <point_id> <octave> <weight> <saliency> <m0> <m1> [<m2>]

Poses are camera-from-world. ``saliency`` on an observation is the
ground-truth saliency score in [0, 1] of the observed landmark, or -1 when
unknown. Lines starting with ``#`` and blank lines are ignored.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .errors import SnapshotFormatError
from .geometry import CameraIntrinsics, MapPoint, Pose, Rotation
from .solver import NoiseModel, Observation

FORMAT_NAME = "salient_ba.problem"
FORMAT_VERSION = 1


@dataclass
class Problem:
    mode: str
    intrinsics: CameraIntrinsics
    noise: NoiseModel = field(default_factory=NoiseModel)
    image_size: tuple[int, int] = (640, 480)
    poses: dict[int, Pose] = field(default_factory=dict)
    timestamps: dict[int, float] = field(default_factory=dict)
    points: dict[int, MapPoint] = field(default_factory=dict)
    observations: list[Observation] = field(default_factory=list)
    saliency: list[float] = field(default_factory=list)

    def observations_by_frame(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for i, o in enumerate(self.observations):
            out.setdefault(o.frame_id, []).append(i)
        return out


def _r(x) -> str:
    return repr(float(x))


def dumps(problem: Problem) -> str:
    K = problem.intrinsics
    lines = [
        f"format {FORMAT_NAME} {FORMAT_VERSION}",
        f"mode {problem.mode}",
        "intrinsics " + " ".join(_r(v) for v in (K.fx, K.fy, K.cx, K.cy, K.baseline)),
        f"noise {_r(problem.noise.sigma_px)} {_r(problem.noise.octave_scale)}",
        f"image_size {int(problem.image_size[0])} {int(problem.image_size[1])}",
    ]
    for fid in sorted(problem.poses):
        p = problem.poses[fid]
        vals = [problem.timestamps.get(fid, float(fid)), *p.rotation.quaternion, *p.translation]
        lines.append(f"pose {fid} " + " ".join(_r(v) for v in vals))
    for pid in sorted(problem.points):
        lines.append(f"point {pid} " + " ".join(_r(v) for v in problem.points[pid].position))
    sal = problem.saliency if problem.saliency else [-1.0] * len(problem.observations)
    for o, s in zip(problem.observations, sal):
        lines.append(
            f"obs {o.frame_id} {o.point_id} {o.octave} {_r(o.weight)} {_r(s)} "
            + " ".join(_r(v) for v in o.measurement)
        )
    return "\n".join(lines) + "\n"


def loads(text: str, source: str = "<string>") -> Problem:
    header_seen = False
    mode = K = None
    noise = NoiseModel()
    image_size = (640, 480)
    poses, stamps, points = {}, {}, {}
    observations, saliency = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tag, *f = line.split()
        where = f"{source}:{lineno}"
        try:
            if tag == "format":
                if f[0] != FORMAT_NAME:
                    raise SnapshotFormatError(f"{where}: unknown format {f[0]!r}")
                if int(f[1]) != FORMAT_VERSION:
                    raise SnapshotFormatError(f"{where}: unsupported version {f[1]}")
                header_seen = True
                continue
            if not header_seen:
                raise SnapshotFormatError(f"{where}: missing 'format' header line")
            if tag == "mode":
                if f[0] not in ("mono", "stereo"):
                    raise SnapshotFormatError(f"{where}: mode must be mono or stereo")
                mode = f[0]
            elif tag == "intrinsics":
                K = CameraIntrinsics(*(float(v) for v in f[:5]))
            elif tag == "noise":
                noise = NoiseModel(float(f[0]), float(f[1]))
            elif tag == "image_size":
                image_size = (int(f[0]), int(f[1]))
            elif tag == "pose":
                v = [float(x) for x in f[1:9]]
                if len(v) != 8:
                    raise SnapshotFormatError(f"{where}: pose needs 9 fields")
                fid = int(f[0])
                stamps[fid] = v[0]
                poses[fid] = Pose(Rotation(v[1:5]), v[5:8])
            elif tag == "point":
                if len(f) != 4:
                    raise SnapshotFormatError(f"{where}: point needs 4 fields")
                pid = int(f[0])
                points[pid] = MapPoint(pid, [float(x) for x in f[1:4]])
            elif tag == "obs":
                m = [float(x) for x in f[5:]]
                observations.append(Observation(int(f[0]), int(f[1]), m, int(f[2]), float(f[3])))
                saliency.append(float(f[4]))
            else:
                raise SnapshotFormatError(f"{where}: unknown record {tag!r}")
        except SnapshotFormatError:
            raise
        except (ValueError, IndexError) as exc:
            raise SnapshotFormatError(f"{where}: malformed {tag!r} record ({exc})") from None
    if not header_seen:
        raise SnapshotFormatError(f"{source}: missing 'format' header line")
    if mode is None or K is None:
        raise SnapshotFormatError(f"{source}: 'mode' and 'intrinsics' records are required")
    expected = 3 if mode == "stereo" else 2
    for o in observations:
        if o.measurement.size != expected:
            raise SnapshotFormatError(
                f"{source}: {mode} problem has a {o.measurement.size}-vector observation"
            )
    return Problem(mode, K, noise, image_size, poses, stamps, points, observations, saliency)


def save_problem(problem: Problem, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps(problem))


def load_problem(path) -> Problem:
    with open(path) as fh:
        return loads(fh.read(), str(path))
