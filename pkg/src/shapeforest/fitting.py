"""Fit the shape model to a probability map.

The static objective is the sum-of-squared differences between the
probability map and the binary mask rasterized from the posed model shape,
plus an eigenvalue-weighted L1 penalty on the shape coefficients:

    E(b, theta) = sum_p (I(p) - M(p; b, theta))^2 + alpha * (1/K) * sum_i |b_i| / sqrt(lambda_i)

subject to |b_i| <= s * sqrt(lambda_i).  Sequence fitting adds
beta/(2M) * ||x - x_prev||^2 on the posed landmark vector.  The mask makes
the objective non-differentiable, so optimization uses bound-constrained
coordinate pattern search with expanding/contracting step sizes.

Note: the data term sums raw per-pixel squared differences, so a given
``alpha`` weighs differently at different map resolutions; scale it with
pixel count when moving between resolutions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InfeasibleInit
from .imaging import Image2D, rasterize_mask
from .shape_model import LandmarkSet, ShapeModel, ShapeParams, generate_shape

N_POSE = 4  # tx, ty, log_scale, rot


@dataclass(frozen=True)
class PoseParams:
    """Similarity pose: translate (tx, ty) pixels, scale exp(log_scale) and
    rotate ``rot`` degrees about the shape centroid.  All-zero is identity."""

    tx: float = 0.0
    ty: float = 0.0
    log_scale: float = 0.0
    rot: float = 0.0

    def as_vector(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.log_scale, self.rot])

    @classmethod
    def from_vector(cls, v) -> "PoseParams":
        return cls(tx=float(v[0]), ty=float(v[1]), log_scale=float(v[2]), rot=float(v[3]))


@dataclass(frozen=True)
class FitConfig:
    """Fitting weights and pattern-search controls.

    ``init_step_b`` defaults to ``step_b_factor`` times each coefficient's
    plausibility half-width; termination uses per-coordinate tolerances
    ``step_tol`` * initial step (steps below ~0.01 px cannot change the
    rasterized mask, so smaller tolerances buy nothing).
    """

    alpha: float = 3000.0
    beta: float = 10.0
    s: float = 2.0
    step_b_factor: float = 0.25
    step_translate: float = 4.0
    step_log_scale: float = 0.05
    step_rot: float = 2.0
    expand: float = 2.0
    contract: float = 0.5
    step_tol: float = 0.01
    max_evals: int = 20000

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.step_tol <= 0:
            raise ValueError("step_tol must be positive")


@dataclass(frozen=True, eq=False)
class FitResult:
    b: ShapeParams
    theta: PoseParams
    landmarks: LandmarkSet | None
    energy: float
    n_evals: int
    converged: bool
    trace: tuple = ()  # accepted-energy sequence, diagnostic


def apply_pose(theta: PoseParams, shape: LandmarkSet) -> LandmarkSet:
    """Rotate then scale about the shape centroid, then translate."""
    pts = shape.points
    c = pts.mean(axis=0)
    th = np.deg2rad(theta.rot)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    scaled = (pts - c) @ rot.T * np.exp(theta.log_scale)
    return LandmarkSet(scaled + c + np.array([theta.tx, theta.ty]))


def _posed_shape(model: ShapeModel, b: ShapeParams, theta: PoseParams) -> LandmarkSet:
    return apply_pose(theta, generate_shape(model, b))


def _regularizer(model: ShapeModel, b: ShapeParams, alpha: float) -> float:
    if model.K == 0:
        return 0.0
    return float(alpha / model.K * np.sum(np.abs(b.b) / np.sqrt(model.eigenvalues)))


def energy_static(prob_map: Image2D, model: ShapeModel, b: ShapeParams,
                  theta: PoseParams, alpha: float) -> float:
    """Data SSD against the rasterized posed shape plus the shape penalty."""
    shape = _posed_shape(model, b, theta)
    mask = rasterize_mask(shape, prob_map.width, prob_map.height)
    ssd = float(np.sum((prob_map.data - mask.data) ** 2))
    return ssd + _regularizer(model, b, alpha)


def energy_temporal(prob_map: Image2D, model: ShapeModel, b: ShapeParams,
                    theta: PoseParams, alpha: float, x_prev: LandmarkSet,
                    beta: float) -> float:
    """Static energy plus beta/(2M) * squared landmark displacement from the
    previous frame, both measured on posed landmarks."""
    if x_prev.M != model.M:
        raise DimensionMismatch(f"x_prev has {x_prev.M} landmarks, model expects {model.M}")
    shape = _posed_shape(model, b, theta)
    mask = rasterize_mask(shape, prob_map.width, prob_map.height)
    ssd = float(np.sum((prob_map.data - mask.data) ** 2))
    temporal = beta / (2.0 * model.M) * float(np.sum((shape.vector - x_prev.vector) ** 2))
    return ssd + _regularizer(model, b, alpha) + temporal


def pattern_search(objective, bounds, init, cfg: FitConfig,
                   init_steps: np.ndarray | None = None) -> FitResult:
    """Bound-constrained coordinate pattern search.

    ``objective(b_vector, PoseParams) -> float``; ``bounds`` is (lower,
    upper) arrays for the shape coefficients (pose is unbounded); ``init`` is
    ``(b0_vector, PoseParams0)``.  Polls +/- each coordinate at its current
    step in fixed order (shape coordinates first, then tx, ty, log-scale,
    rotation) with first-improvement acceptance; an accepted move expands
    that coordinate's step, a full failed poll contracts every step.  Poll
    points outside the bounds are skipped.  Terminates when every step drops
    below its tolerance or the evaluation budget is spent; the accepted
    energy sequence is non-increasing.
    """
    lower, upper = (np.asarray(a, dtype=float) for a in bounds)
    b0 = np.asarray(init[0], dtype=float)
    theta0 = init[1]
    k = b0.size
    if lower.shape != (k,) or upper.shape != (k,):
        raise DimensionMismatch(f"bounds must match the {k} shape coefficients")
    if np.any(b0 < lower) or np.any(b0 > upper):
        raise InfeasibleInit(f"initial coefficients {b0} violate the bounds")

    x = np.concatenate([b0, theta0.as_vector()])
    lo = np.concatenate([lower, np.full(N_POSE, -np.inf)])
    hi = np.concatenate([upper, np.full(N_POSE, np.inf)])

    if init_steps is None:
        half = (upper - lower) / 2.0
        b_steps = np.where(np.isfinite(half), cfg.step_b_factor * half, 1.0)
        steps = np.concatenate([b_steps, [cfg.step_translate, cfg.step_translate,
                                          cfg.step_log_scale, cfg.step_rot]])
    else:
        steps = np.asarray(init_steps, dtype=float).copy()
        if steps.shape != (k + N_POSE,):
            raise DimensionMismatch(f"init_steps must have length {k + N_POSE}")
    steps = steps.copy()
    tol = cfg.step_tol * steps

    def call(vec):
        return float(objective(vec[:k], PoseParams.from_vector(vec[k:])))

    f_cur = call(x)
    n_evals = 1
    trace = [f_cur]
    budget_hit = False
    while np.any(steps >= tol) and not budget_hit:
        improved = False
        for i in range(x.size):
            for sign in (1.0, -1.0):
                if n_evals >= cfg.max_evals:
                    budget_hit = True
                    break
                cand = x.copy()
                cand[i] += sign * steps[i]
                if cand[i] < lo[i] or cand[i] > hi[i]:
                    continue
                f_new = call(cand)
                n_evals += 1
                if f_new < f_cur:
                    x, f_cur = cand, f_new
                    trace.append(f_cur)
                    steps[i] *= cfg.expand
                    improved = True
                    break  # first improvement: move to the next coordinate
            if budget_hit:
                break
        if not improved and not budget_hit:
            steps *= cfg.contract

    return FitResult(b=ShapeParams(x[:k]), theta=PoseParams.from_vector(x[k:]),
                     landmarks=None, energy=f_cur, n_evals=n_evals,
                     converged=bool(np.all(steps < tol)), trace=tuple(trace))


def fit_shape(prob_map: Image2D, model: ShapeModel, cfg: FitConfig,
              init: tuple[np.ndarray, PoseParams] | None = None,
              x_prev: LandmarkSet | None = None) -> FitResult:
    """Fit the model to one probability map, starting from zero shape and
    pose unless ``init`` is given.  When ``x_prev`` is supplied the temporal
    penalty joins the objective (sequence mode)."""
    half = model.bounds()
    bounds = (-half, half)
    if init is None:
        init = (np.zeros(model.K), PoseParams())

    if x_prev is None:
        def objective(bv, theta):
            return energy_static(prob_map, model, ShapeParams(bv), theta, cfg.alpha)
    else:
        def objective(bv, theta):
            return energy_temporal(prob_map, model, ShapeParams(bv), theta,
                                   cfg.alpha, x_prev, cfg.beta)

    res = pattern_search(objective, bounds, init, cfg)
    landmarks = _posed_shape(model, res.b, res.theta)
    return FitResult(b=res.b, theta=res.theta, landmarks=landmarks,
                     energy=res.energy, n_evals=res.n_evals,
                     converged=res.converged, trace=res.trace)


def fit_sequence(prob_maps, model: ShapeModel, cfg: FitConfig) -> list[FitResult]:
    """Fit a sequence of probability maps frame by frame.

    Frame 0 is fitted statically from the zero initialization; every later
    frame starts from the previous frame's solution and adds the temporal
    penalty against the previous frame's posed landmarks.
    """
    prob_maps = list(prob_maps)
    if not prob_maps:
        raise DimensionMismatch("sequence fitting needs at least one frame")
    results = [fit_shape(prob_maps[0], model, cfg)]
    for pm in prob_maps[1:]:
        prev = results[-1]
        init = (prev.b.b.copy(), prev.theta)
        results.append(fit_shape(pm, model, cfg, init=init, x_prev=prev.landmarks))
    return results
