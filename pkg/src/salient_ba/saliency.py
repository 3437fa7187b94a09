"""Saliency/depth rasters, depth-corrected saliency fusion and salient weights."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, OutOfBoundsError


class _Raster:
    __slots__ = ("_values",)

    def __init__(self, values):
        arr = np.array(values, dtype=float)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"raster values must be a non-empty 2-D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("raster values must be finite")
        self._check(arr)
        arr.setflags(write=False)
        self._values = arr

    def _check(self, arr):
        pass

    @classmethod
    def from_flat(cls, width: int, height: int, values):
        flat = np.asarray(values, dtype=float).ravel()
        if flat.size != width * height:
            raise DimensionMismatchError(
                f"{width}x{height} raster needs {width * height} values, got {flat.size}"
            )
        return cls(flat.reshape(height, width))

    @property
    def values(self) -> np.ndarray:
        """Row-major grid of shape ``(height, width)``."""
        return self._values

    @property
    def width(self) -> int:
        return self._values.shape[1]

    @property
    def height(self) -> int:
        return self._values.shape[0]

    def __eq__(self, other):
        return type(self) is type(other) and np.array_equal(self._values, other._values)

    def __repr__(self):
        return f"{type(self).__name__}({self.width}x{self.height})"


class SaliencyMap(_Raster):
    """Per-pixel saliency in ``[0, 255]``."""

    __slots__ = ()

    def _check(self, arr):
        if arr.min() < 0.0 or arr.max() > 255.0:
            raise ValueError("saliency values must lie in [0, 255]")


class DepthMap(_Raster):
    """Per-pixel depth in meters; ``0`` marks an invalid pixel."""

    __slots__ = ()

    def _check(self, arr):
        if arr.min() < 0.0:
            raise ValueError("depth values must be non-negative")


@dataclass(frozen=True)
class FusionParams:
    a_fuse: float = 1.0
    b_fuse: float = 0.0
    depth_floor: float = 0.1

    def __post_init__(self):
        if not self.a_fuse > 0:
            raise ValueError("a_fuse must be positive")
        if not self.depth_floor > 0:
            raise ValueError("depth_floor must be positive")


@dataclass(frozen=True)
class WeightParams:
    """``w = a_w * s_n**2 + b_w`` where ``s_n`` is saliency scaled to [0, 1].

    With ``normalize_saliency=False`` the raw 0-255 value is squared instead.
    """

    a_w: float = 1.0
    b_w: float = 0.1
    normalize_saliency: bool = True

    def __post_init__(self):
        if not self.a_w >= 0:
            raise ValueError("a_w must be non-negative")
        if not self.b_w > 0:
            raise ValueError("b_w must be strictly positive")


def fuse_unnormalized(s_init: SaliencyMap, depth: DepthMap, params: FusionParams = FusionParams()) -> np.ndarray:
    """Per-pixel ``a * S_init / D + b`` before normalization.

    Depths below ``depth_floor`` (including the invalid value 0) are clamped
    to the floor.
    """
    if (s_init.width, s_init.height) != (depth.width, depth.height):
        raise DimensionMismatchError(
            f"saliency is {s_init.width}x{s_init.height} but depth is {depth.width}x{depth.height}"
        )
    d = np.maximum(depth.values, params.depth_floor)
    return params.a_fuse * s_init.values / d + params.b_fuse


def normalize_0_255(raw: np.ndarray) -> np.ndarray:
    lo = float(raw.min())
    hi = float(raw.max())
    if hi == lo:
        return np.full(raw.shape, 255.0)
    out = (raw - lo) / (hi - lo) * 255.0
    return np.clip(out, 0.0, 255.0)


def fuse_saliency(s_init: SaliencyMap, depth: DepthMap, params: FusionParams = FusionParams()) -> SaliencyMap:
    """Depth-corrected saliency, min-max normalized to ``[0, 255]``.

    A constant pre-normalization field maps to a uniform 255.
    """
    return SaliencyMap(normalize_0_255(fuse_unnormalized(s_init, depth, params)))


def sample_saliency(smap: SaliencyMap, u: float, v: float) -> float:
    """Bilinear sample at sub-pixel ``(u, v)`` (column, row)."""
    w, h = smap.width, smap.height
    if not (0.0 <= u <= w - 1 and 0.0 <= v <= h - 1):
        raise OutOfBoundsError(f"({u}, {v}) outside [0, {w - 1}] x [0, {h - 1}]")
    vals = smap.values
    u0 = min(int(math.floor(u)), max(w - 2, 0))
    v0 = min(int(math.floor(v)), max(h - 2, 0))
    u1 = min(u0 + 1, w - 1)
    v1 = min(v0 + 1, h - 1)
    fu = u - u0
    fv = v - v0
    top = (1.0 - fu) * vals[v0, u0] + fu * vals[v0, u1]
    bottom = (1.0 - fu) * vals[v1, u0] + fu * vals[v1, u1]
    return float((1.0 - fv) * top + fv * bottom)


def salient_weight(s, params: WeightParams = WeightParams()):
    """Observation weight from a saliency value (or array of values) in [0, 255]."""
    arr = np.asarray(s, dtype=float)
    if np.any(~((arr >= 0.0) & (arr <= 255.0))):
        raise OutOfBoundsError("saliency must lie in [0, 255]")
    sn = arr / 255.0 if params.normalize_saliency else arr
    w = params.a_w * sn * sn + params.b_w
    return float(w) if w.ndim == 0 else w
