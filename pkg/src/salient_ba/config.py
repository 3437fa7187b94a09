"""Experiment configuration: an INI file with one section per component.

Every key is optional; omitted keys take the defaults below. Unknown
sections or keys are rejected so that typos do not silently fall back to
defaults. Errors name the offending ``section.key``.

.. code-block:: ini

    [scene]
    seed = 7                      ; base seed; run k uses seed + k
    n_keyframes = 12
    n_points = 60
    trajectory_shape = loop       ; line | arc | loop
    point_box = 6.0 3.0 6.0       ; full extents (m), centred at the origin
    fx = 450.0
    fy = 450.0
    cx = 320.0
    cy = 240.0
    baseline = 0.5
    image_width = 640
    image_height = 480
    camera_distance = 12.0
    frame_dt = 0.1

    [noise]
    sigma_min = 0.3
    sigma_max = 2.0
    outlier_rate_low_saliency = 0.05
    outlier_magnitude = 20.0
    dynamic_point_fraction = 0.2
    dynamic_drift = 0.02

    [weight]
    a_w = 1.0
    b_w = 0.1
    normalize_saliency = true

    [fusion]
    a_fuse = 1.0
    b_fuse = 0.0
    depth_floor = 0.1
    depth_scale_mm = 1.0

    [solver]
    max_iterations = 20
    initial_lambda = 1e-4
    lambda_up = 10
    lambda_down = 10
    step_tolerance = 1e-10
    cost_tolerance = 1e-8
    normalize_weights = true
    sigma_px = 1.0
    octave_scale = 1.2
    delta_mono = 5.991
    delta_stereo = 7.815

    [experiment]
    runs = 10
    mode = mono                   ; mono | stereo
    variants = uniform, salient-oracle, salient-raster
    align = auto                  ; none | se3 | sim3 | auto (sim3 mono, se3 stereo)
    rpe_delta = 1
    max_dt = 0.02
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError
from .geometry import CameraIntrinsics
from .pipeline import VARIANTS
from .saliency import FusionParams, WeightParams
from .solver import NoiseModel, RobustKernel, SolverConfig
from .synthetic import NoiseProfile, SceneConfig

ALIGNMENTS = ("none", "se3", "sim3", "auto")


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    noise: NoiseProfile = field(default_factory=NoiseProfile)
    weight: WeightParams = field(default_factory=WeightParams)
    fusion: FusionParams = field(default_factory=FusionParams)
    depth_scale_mm: float = 1.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    noise_model: NoiseModel = field(default_factory=NoiseModel)
    kernel: RobustKernel = field(default_factory=RobustKernel)
    runs: int = 10
    mode: str = "mono"
    variants: tuple[str, ...] = VARIANTS
    align: str = "auto"
    rpe_delta: int = 1
    max_dt: float = 0.02

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("experiment.runs: must be >= 1")
        if self.mode not in ("mono", "stereo"):
            raise ConfigError(f"experiment.mode: expected mono or stereo, got {self.mode!r}")
        if not self.variants:
            raise ConfigError("experiment.variants: must list at least one variant")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"experiment.variants: unknown variant {v!r}")
        if self.align not in ALIGNMENTS:
            raise ConfigError(f"experiment.align: expected one of {ALIGNMENTS}, got {self.align!r}")
        if self.rpe_delta < 1:
            raise ConfigError("experiment.rpe_delta: must be >= 1")

    def run_seed(self, k: int) -> int:
        return self.scene.seed + k

    def resolved_alignment(self) -> str:
        if self.align != "auto":
            return self.align
        return "sim3" if self.mode == "mono" else "se3"


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _names(text: str):
    return tuple(v.strip() for v in text.split(",") if v.strip())


# section -> key -> parser
_SCHEMA = {
    "scene": {
        "seed": int, "n_keyframes": int, "n_points": int, "trajectory_shape": str,
        "point_box": _floats, "fx": float, "fy": float, "cx": float, "cy": float,
        "baseline": float, "image_width": int, "image_height": int,
        "camera_distance": float, "frame_dt": float,
    },
    "noise": {f.name: float for f in dataclasses.fields(NoiseProfile)},
    "weight": {"a_w": float, "b_w": float, "normalize_saliency": _bool},
    "fusion": {"a_fuse": float, "b_fuse": float, "depth_floor": float, "depth_scale_mm": float},
    "solver": {
        "max_iterations": int, "initial_lambda": float, "lambda_up": float,
        "lambda_down": float, "step_tolerance": float, "cost_tolerance": float,
        "max_lambda": float, "normalize_weights": _bool, "z_min": float,
        "sigma_px": float, "octave_scale": float, "delta_mono": float, "delta_stereo": float,
    },
    "experiment": {
        "runs": int, "mode": str, "variants": _names, "align": str,
        "rpe_delta": int, "max_dt": float,
    },
}


def _parse(parser: configparser.ConfigParser, source: str) -> dict:
    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            conv = _SCHEMA[section].get(key)
            if conv is None:
                raise ConfigError(f"{source}: unknown key {section}.{key}")
            try:
                values.setdefault(section, {})[key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: {section}.{key}: {exc}") from None
    return values


def _build(values: dict, source: str) -> ExperimentConfig:
    def sect(name):
        return dict(values.get(name, {}))

    def make(section, cls, kw):
        try:
            return cls(**kw)
        except ValueError as exc:
            raise ConfigError(f"{source}: [{section}] {exc}") from None

    sc = sect("scene")
    if "trajectory_shape" in sc and sc["trajectory_shape"] not in ("line", "arc", "loop"):
        raise ConfigError(
            f"{source}: scene.trajectory_shape: expected line, arc or loop, got {sc['trajectory_shape']!r}"
        )
    dK = SceneConfig().intrinsics
    K = make("scene", CameraIntrinsics, {
        k: sc.pop(k, getattr(dK, k)) for k in ("fx", "fy", "cx", "cy", "baseline")
    })
    size = (sc.pop("image_width", 640), sc.pop("image_height", 480))
    if "point_box" in sc and len(sc["point_box"]) != 3:
        raise ConfigError(f"{source}: scene.point_box: expected three extents")
    scene = make("scene", SceneConfig, {**sc, "intrinsics": K, "image_size": size})

    fu = sect("fusion")
    depth_scale = fu.pop("depth_scale_mm", 1.0)
    if not depth_scale > 0:
        raise ConfigError(f"{source}: fusion.depth_scale_mm: must be positive")

    so = sect("solver")
    nm = make("solver", NoiseModel, {k: so.pop(k) for k in ("sigma_px", "octave_scale") if k in so})
    kern = make("solver", RobustKernel, {k: so.pop(k) for k in ("delta_mono", "delta_stereo") if k in so})

    ex = sect("experiment")
    try:
        return ExperimentConfig(
            scene=scene,
            noise=make("noise", NoiseProfile, sect("noise")),
            weight=make("weight", WeightParams, sect("weight")),
            fusion=make("fusion", FusionParams, fu),
            depth_scale_mm=depth_scale,
            solver=make("solver", SolverConfig, so),
            noise_model=nm,
            kernel=kern,
            **ex,
        )
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def loads(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return _build(_parse(parser, source), source)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return loads(text, str(path))


def dumps(cfg: ExperimentConfig) -> str:
    """Canonical INI text; ``loads(dumps(cfg)) == cfg``."""
    s, K = cfg.scene, cfg.scene.intrinsics

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, tuple):
            return " ".join(fmt(x) for x in v)
        return str(v)

    sections = {
        "scene": {
            "seed": s.seed, "n_keyframes": s.n_keyframes, "n_points": s.n_points,
            "trajectory_shape": s.trajectory_shape,
            "point_box": tuple(float(v) for v in s.point_box),
            "fx": float(K.fx), "fy": float(K.fy), "cx": float(K.cx), "cy": float(K.cy),
            "baseline": float(K.baseline),
            "image_width": s.image_size[0], "image_height": s.image_size[1],
            "camera_distance": float(s.camera_distance), "frame_dt": float(s.frame_dt),
        },
        "noise": {k: float(v) for k, v in dataclasses.asdict(cfg.noise).items()},
        "weight": {"a_w": float(cfg.weight.a_w), "b_w": float(cfg.weight.b_w),
                   "normalize_saliency": cfg.weight.normalize_saliency},
        "fusion": {**{k: float(v) for k, v in dataclasses.asdict(cfg.fusion).items()},
                   "depth_scale_mm": float(cfg.depth_scale_mm)},
        "solver": {
            **{k: (v if isinstance(v, (bool, int)) else float(v))
               for k, v in dataclasses.asdict(cfg.solver).items()},
            "sigma_px": float(cfg.noise_model.sigma_px),
            "octave_scale": float(cfg.noise_model.octave_scale),
            "delta_mono": float(cfg.kernel.delta_mono),
            "delta_stereo": float(cfg.kernel.delta_stereo),
        },
        "experiment": {
            "runs": cfg.runs, "mode": cfg.mode, "variants": ", ".join(cfg.variants),
            "align": cfg.align, "rpe_delta": cfg.rpe_delta, "max_dt": float(cfg.max_dt),
        },
    }
    out = []
    for name, kv in sections.items():
        out.append(f"[{name}]")
        out.extend(f"{k} = {fmt(v)}" for k, v in kv.items())
        out.append("")
    return "\n".join(out)


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    """Apply command-line overrides (``seed``, ``runs``, ``mode``, ``variants``, ``align``, ``rpe_delta``)."""
    kw = {k: v for k, v in kw.items() if v is not None}
    scene = cfg.scene
    if "seed" in kw:
        scene = dataclasses.replace(scene, seed=int(kw.pop("seed")))
    return dataclasses.replace(cfg, scene=scene, **kw)
