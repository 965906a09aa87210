"""Split-feature pool for the pixel forest: appearance box features, position
features, and the shape-model (SM) distance feature.

The SM feature of a pixel is the signed shortest distance from the pixel
center to a contour generated by the shape model from sampled coefficients;
it depends only on the pixel coordinate, never on the image, so each sampled
coefficient vector defines one distance table shared by every image at the
working resolution.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

import numpy as np

from .errors import ConfigError, InvalidTableId
from .imaging import Image2D, padded_integral, signed_distance_map, signed_distances
from .shape_model import ShapeModel, ShapeParams, generate_shape, sample_params


@dataclass(frozen=True)
class BoxSpec:
    """Axis-aligned pixel box displaced from the reference pixel: the box of
    size (w, h) whose center pixel sits at (pixel + offset)."""

    dx: int
    dy: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ConfigError(f"box sides must be >= 1 px, got {self.w}x{self.h}")


@dataclass(frozen=True)
class BoxMean:
    box: BoxSpec


@dataclass(frozen=True)
class BoxDiff:
    a: BoxSpec
    b: BoxSpec


class Axis(Enum):
    X = "x"
    Y = "y"


@dataclass(frozen=True)
class Position:
    axis: Axis


@dataclass(frozen=True)
class SMFeature:
    table_id: int


FeatureDescriptor = Union[BoxMean, BoxDiff, Position, SMFeature]


class Branch(Enum):
    LEFT = 1
    RIGHT = 0


@dataclass(frozen=True)
class SplitTest:
    """Binary node test: send a pixel LEFT iff feature value > tau (strict)."""

    feature: FeatureDescriptor
    tau: float


@dataclass(frozen=True)
class FeaturePoolConfig:
    """Sampling distribution over feature families.

    weights are (box_mean, box_diff, position, sm) probabilities; offsets are
    drawn uniformly in [-max_offset, max_offset] and box sides uniformly in
    [box_min, box_max].  Defaults target the 242x208 working resolution.
    """

    weights: tuple[float, float, float, float] = (0.4, 0.2, 0.1, 0.3)
    max_offset: int = 60
    box_min: int = 3
    box_max: int = 31

    def __post_init__(self):
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ConfigError(f"family weights must sum to 1, got {self.weights}")
        if any(w < 0 for w in self.weights):
            raise ConfigError("family weights must be non-negative")
        if not (1 <= self.box_min <= self.box_max):
            raise ConfigError("need 1 <= box_min <= box_max")


def classic_pool(max_offset: int = 60, box_min: int = 3, box_max: int = 31) -> FeaturePoolConfig:
    """Appearance-only pool (box means and box differences)."""
    return FeaturePoolConfig(weights=(0.6, 0.4, 0.0, 0.0),
                             max_offset=max_offset, box_min=box_min, box_max=box_max)


def position_pool(max_offset: int = 60, box_min: int = 3, box_max: int = 31) -> FeaturePoolConfig:
    """Appearance plus pixel-coordinate position features."""
    return FeaturePoolConfig(weights=(0.45, 0.25, 0.3, 0.0),
                             max_offset=max_offset, box_min=box_min, box_max=box_max)


def sm_pool(max_offset: int = 60, box_min: int = 3, box_max: int = 31,
            sm_weight: float = 0.45) -> FeaturePoolConfig:
    """Appearance, position and shape-model distance features, SM-heavy so
    shallow trees already benefit from the shape prior."""
    rest = 1.0 - sm_weight
    return FeaturePoolConfig(weights=(rest * 4 / 7, rest * 2 / 7, rest * 1 / 7, sm_weight),
                             max_offset=max_offset, box_min=box_min, box_max=box_max)


class SMTableCache:
    """Shape-model distance tables, one per sampled coefficient vector.

    Registration appends under a lock (training-time writers); lookups are
    read-only and safe to share.  Full maps are materialized lazily because
    training typically needs values at small pixel subsets only; a
    materialized table is bit-identical to the subset computation since both
    run through :func:`shapeforest.imaging.signed_distances`.
    """

    def __init__(self, model: ShapeModel, width: int, height: int):
        self.model = model
        self.width = int(width)
        self.height = int(height)
        self._params: list[ShapeParams] = []
        self._maps: list[Image2D | None] = []
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._params)

    def register(self, params: ShapeParams) -> int:
        with self._lock:
            self._params.append(params)
            self._maps.append(None)
            return len(self._params) - 1

    def _check(self, table_id: int) -> None:
        if not (0 <= table_id < len(self._params)):
            raise InvalidTableId(f"table id {table_id} not in cache of size {len(self._params)}")

    def params(self, table_id: int) -> ShapeParams:
        self._check(table_id)
        return self._params[table_id]

    def table(self, table_id: int) -> Image2D:
        self._check(table_id)
        if self._maps[table_id] is None:
            shape = generate_shape(self.model, self._params[table_id])
            self._maps[table_id] = signed_distance_map(shape, self.width, self.height)
        return self._maps[table_id]

    def values_at(self, table_id: int, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Signed distances at pixel coordinates (xs, ys) without forcing a
        full-map materialization; duplicate coordinates are computed once."""
        self._check(table_id)
        tab = self._maps[table_id]
        if tab is not None:
            return tab.array()[ys, xs].astype(float, copy=True)
        shape = generate_shape(self.model, self._params[table_id])
        key = np.asarray(ys, np.int64) * self.width + np.asarray(xs, np.int64)
        uniq, inverse = np.unique(key, return_inverse=True)
        pts = np.column_stack([(uniq % self.width) + 0.5, (uniq // self.width) + 0.5])
        return signed_distances(shape, pts)[inverse]


@dataclass(frozen=True, eq=False)
class EvalContext:
    """Per-image evaluation state: padded integral array plus the shared
    distance-table cache."""

    integral: np.ndarray  # (H+1, W+1) padded cumulative sums
    width: int
    height: int
    cache: SMTableCache | None = None

    @classmethod
    def for_image(cls, img: Image2D, cache: SMTableCache | None = None) -> "EvalContext":
        return cls(integral=padded_integral(img), width=img.width, height=img.height,
                   cache=cache)


def _box_sums(integral, xs, ys, box: BoxSpec, width: int, height: int, imgs=None):
    """Clipped box sums and pixel counts for each reference pixel.

    The box covers columns [cx - w//2, cx - w//2 + w - 1] (same for rows)
    where (cx, cy) = pixel + offset; it is clipped to the raster and a box
    with no in-bounds pixels contributes sum 0 over count 0.  ``integral`` is
    a padded integral array, or a stack of them indexed by ``imgs``.
    """
    x0 = xs + box.dx - box.w // 2
    y0 = ys + box.dy - box.h // 2
    x1 = np.clip(x0 + box.w - 1, 0, width - 1)
    y1 = np.clip(y0 + box.h - 1, 0, height - 1)
    x0 = np.clip(x0, 0, width - 1)
    y0 = np.clip(y0, 0, height - 1)
    p = integral
    if imgs is None:
        sums = p[y1 + 1, x1 + 1] - p[y0, x1 + 1] - p[y1 + 1, x0] + p[y0, x0]
    else:
        sums = (p[imgs, y1 + 1, x1 + 1] - p[imgs, y0, x1 + 1]
                - p[imgs, y1 + 1, x0] + p[imgs, y0, x0])
    counts = (x1 - x0 + 1) * (y1 - y0 + 1)
    empty = (x1 < x0) | (y1 < y0)
    return np.where(empty, 0.0, sums), np.where(empty, 0, counts)


def eval_feature_multi(feature: FeatureDescriptor, xs: np.ndarray, ys: np.ndarray,
                       integral, width: int, height: int,
                       cache: SMTableCache | None, imgs=None) -> np.ndarray:
    """Vectorized feature evaluation at integer pixel coordinates, optionally
    across a stack of images (``integral`` stacked, ``imgs`` per pixel)."""
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    if isinstance(feature, BoxMean):
        s, c = _box_sums(integral, xs, ys, feature.box, width, height, imgs)
        return np.where(c > 0, s / np.maximum(c, 1), 0.0)
    if isinstance(feature, BoxDiff):
        sa, ca = _box_sums(integral, xs, ys, feature.a, width, height, imgs)
        sb, cb = _box_sums(integral, xs, ys, feature.b, width, height, imgs)
        return (np.where(ca > 0, sa / np.maximum(ca, 1), 0.0)
                - np.where(cb > 0, sb / np.maximum(cb, 1), 0.0))
    if isinstance(feature, Position):
        return (xs if feature.axis is Axis.X else ys).astype(float)
    if isinstance(feature, SMFeature):
        if cache is None:
            raise InvalidTableId("evaluation context has no SM table cache")
        return cache.values_at(feature.table_id, xs, ys)
    raise TypeError(f"unknown feature descriptor {feature!r}")


def eval_feature_batch(feature: FeatureDescriptor, xs: np.ndarray, ys: np.ndarray,
                       ctx: EvalContext) -> np.ndarray:
    """Vectorized feature evaluation at integer pixel coordinates of one image."""
    return eval_feature_multi(feature, xs, ys, ctx.integral, ctx.width, ctx.height,
                              ctx.cache)


def eval_feature(feature: FeatureDescriptor, pixel: tuple[int, int], ctx: EvalContext) -> float:
    """Evaluate one feature at one pixel (x, y)."""
    x, y = pixel
    return float(eval_feature_batch(feature, np.array([x]), np.array([y]), ctx)[0])


def apply_test(test: SplitTest, pixel: tuple[int, int], ctx: EvalContext) -> Branch:
    """LEFT iff the feature value strictly exceeds tau."""
    return Branch.LEFT if eval_feature(test.feature, pixel, ctx) > test.tau else Branch.RIGHT


def sample_feature(rng: np.random.Generator, config: FeaturePoolConfig,
                   model: ShapeModel | None = None,
                   cache: SMTableCache | None = None) -> FeatureDescriptor:
    """Draw one feature descriptor.

    The family is chosen by the configured weights; appearance offsets and
    sizes are uniform over their ranges; an SM draw samples fresh plausible
    shape coefficients and registers their distance table in the cache.
    Deterministic for a fixed generator state.
    """
    fam = rng.choice(4, p=np.asarray(config.weights, dtype=float))
    if fam <= 1:
        def draw_box():
            dx, dy = rng.integers(-config.max_offset, config.max_offset + 1, size=2)
            w, h = rng.integers(config.box_min, config.box_max + 1, size=2)
            return BoxSpec(dx=int(dx), dy=int(dy), w=int(w), h=int(h))

        if fam == 0:
            return BoxMean(draw_box())
        return BoxDiff(draw_box(), draw_box())
    if fam == 2:
        return Position(Axis.X if rng.integers(2) == 0 else Axis.Y)
    if model is None or cache is None:
        raise ConfigError("SM feature sampling needs a shape model and a table cache")
    params = sample_params(model, rng)
    return SMFeature(table_id=cache.register(params))
