"""Point-distribution shape model: PCA over landmark sets, shape synthesis,
projection and plausible-parameter sampling.

A shape with M landmarks is handled as the interleaved 2M-vector
(x1, y1, ..., xM, yM).  The model is  x = mean + modes @ b  with orthonormal
mode columns sorted by descending eigenvalue; each coefficient b_i is
considered plausible while |b_i| <= s * sqrt(eigenvalue_i).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateShape,
    DimensionMismatch,
    EmptyTrainingSet,
    InconsistentLandmarkCount,
    IoError,
)

MODEL_FORMAT = "shapeforest/shape-model"
MODEL_VERSION = 1


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    """Ordered list of M landmarks, (x, y) in pixels, defining one closed contour.

    The ordering is the canonical contour ordering; the last landmark connects
    back to the first.  Immutable after construction.
    """

    points: np.ndarray  # (M, 2) float64

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
            raise DegenerateShape(
                f"a closed contour needs at least 3 landmarks, got array of shape {pts.shape}"
            )
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def vector(self) -> np.ndarray:
        """Interleaved (x1, y1, ..., xM, yM) copy of length 2M."""
        return self.points.reshape(-1).copy()

    @classmethod
    def from_vector(cls, vec) -> "LandmarkSet":
        vec = np.asarray(vec, dtype=float)
        if vec.ndim != 1 or vec.size % 2 != 0:
            raise DimensionMismatch(f"landmark vector must have even length, got {vec.shape}")
        return cls(vec.reshape(-1, 2))


@dataclass(frozen=True, eq=False)
class ShapeParams:
    """Shape-space coefficients b (length K)."""

    b: np.ndarray

    def __post_init__(self):
        b = np.ascontiguousarray(np.asarray(self.b, dtype=float))
        if b.ndim != 1:
            raise DimensionMismatch(f"shape parameters must be a 1-D vector, got {b.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "b", b)

    @property
    def K(self) -> int:
        return self.b.shape[0]


@dataclass(frozen=True, eq=False)
class ShapeModel:
    """Linear point-distribution model over M-landmark contours.

    Attributes
    ----------
    mean : (2M,) mean shape vector, pixels.
    modes : (2M, K) orthonormal mode columns.
    eigenvalues : (K,) descending, strictly positive, pixels^2.
    s : plausibility bound multiplier; |b_i| <= s*sqrt(eigenvalues[i]).
    p_var : retained variance fraction requested at build time.
    """

    mean: np.ndarray
    modes: np.ndarray
    eigenvalues: np.ndarray
    M: int
    K: int
    s: float
    p_var: float

    def __post_init__(self):
        for name in ("mean", "modes", "eigenvalues"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def bounds(self) -> np.ndarray:
        """Per-coefficient plausibility half-widths s*sqrt(lambda_i), length K."""
        return self.s * np.sqrt(self.eigenvalues)

    def mean_shape(self) -> LandmarkSet:
        return LandmarkSet.from_vector(self.mean)


def build_model(shapes, p_var: float = 0.99, K_cap: int = 16, s: float = 2.0) -> ShapeModel:
    """Build the point-distribution model from pose-normalized training shapes.

    The mean is the arithmetic mean of the shape vectors; modes and
    eigenvalues come from the sample covariance (divisor N-1).  The retained
    mode count K is the minimum of ``K_cap``, the smallest k whose cumulative
    explained-variance fraction reaches ``p_var``, and the number of strictly
    positive eigenvalues.  No rigid alignment is performed: callers supply
    shapes that are already pose-normalized.

    Eigenvector sign is fixed by making each mode's largest-magnitude
    component positive, so serialization is deterministic.
    """
    shapes = list(shapes)
    if len(shapes) < 2:
        raise EmptyTrainingSet(f"need at least 2 training shapes, got {len(shapes)}")
    M = shapes[0].M
    for i, sh in enumerate(shapes):
        if sh.M != M:
            raise InconsistentLandmarkCount(
                f"shape {i} has {sh.M} landmarks, expected {M}"
            )
    X = np.stack([sh.vector for sh in shapes])  # (N, 2M)
    n = X.shape[0]
    mean = X.mean(axis=0)
    dev = X - mean

    # SVD of the centered data; eigenvalues of the covariance are s^2/(N-1).
    _, sing, vt = np.linalg.svd(dev, full_matrices=False)
    lam = sing**2 / (n - 1)

    total = float(lam.sum())
    # variance below the float-noise floor of the coordinate scale is zero
    noise_floor = (np.finfo(float).eps * 64 * max(1.0, float(np.abs(X).max()))) ** 2
    if total <= noise_floor:
        return ShapeModel(mean=mean, modes=np.zeros((2 * M, 0)), eigenvalues=np.zeros(0),
                          M=M, K=0, s=float(s), p_var=float(p_var))

    positive = lam > max(total * 1e-12, noise_floor)
    n_pos = int(np.count_nonzero(positive))
    cum = np.cumsum(lam) / total
    k_pvar = int(np.searchsorted(cum, p_var - 1e-15) + 1)
    K = min(int(K_cap), k_pvar, n_pos)

    modes = vt[:K].T.copy()  # (2M, K)
    lam = lam[:K].copy()
    for j in range(K):
        col = modes[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            modes[:, j] = -col
    return ShapeModel(mean=mean, modes=modes, eigenvalues=lam,
                      M=M, K=K, s=float(s), p_var=float(p_var))


def generate_shape(model: ShapeModel, params: ShapeParams) -> LandmarkSet:
    """Return mean + modes @ b as an M-point contour.  No plausibility clamping."""
    if params.K != model.K:
        raise DimensionMismatch(f"params have {params.K} entries, model has K={model.K}")
    vec = model.mean + model.modes @ params.b
    return LandmarkSet.from_vector(vec)


def project_shape(model: ShapeModel, shape: LandmarkSet) -> tuple[ShapeParams, float]:
    """Project a shape into the model: b = modes^T (x - mean).

    Returns the coefficients together with the out-of-span residual norm
    ||x - mean - modes b||.
    """
    if shape.M != model.M:
        raise DimensionMismatch(f"shape has {shape.M} landmarks, model expects {model.M}")
    d = shape.vector - model.mean
    b = model.modes.T @ d
    residual = float(np.linalg.norm(d - model.modes @ b))
    return ShapeParams(b), residual


def sample_params(model: ShapeModel, rng: np.random.Generator) -> ShapeParams:
    """Draw each b_i independently uniform on [-s*sqrt(lambda_i), +s*sqrt(lambda_i)]."""
    if model.K == 0:
        return ShapeParams(np.zeros(0))
    half = model.bounds()
    return ShapeParams(rng.uniform(-half, half))


# --- serialization -----------------------------------------------------------

def _model_doc(model: ShapeModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "M": model.M,
        "K": model.K,
        "s": model.s,
        "p_var": model.p_var,
        "mean": model.mean.tolist(),
        "eigenvalues": model.eigenvalues.tolist(),
        "modes": model.modes.tolist(),
    }


def model_sha256(model: ShapeModel) -> str:
    """Content checksum of the canonical serialized form."""
    doc = json.dumps(_model_doc(model), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(doc.encode()).hexdigest()


def save_model(model: ShapeModel, path) -> None:
    """Write the model as a versioned JSON document.

    Floats are emitted in their shortest round-tripping decimal form
    (up to 17 significant digits), so load(save(m)) is bit-exact.
    """
    Path(path).write_text(json.dumps(_model_doc(model), indent=1) + "\n")


def load_model(path) -> ShapeModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"cannot read shape model from {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise IoError(f"{path} is not a shape-model document")
    if doc.get("version") != MODEL_VERSION:
        raise IoError(f"unsupported shape-model version {doc.get('version')!r} in {path}")
    return ShapeModel(
        mean=np.asarray(doc["mean"], float),
        modes=np.asarray(doc["modes"], float).reshape(2 * doc["M"], doc["K"]),
        eigenvalues=np.asarray(doc["eigenvalues"], float),
        M=int(doc["M"]),
        K=int(doc["K"]),
        s=float(doc["s"]),
        p_var=float(doc["p_var"]),
    )


# --- landmark CSV ------------------------------------------------------------

def write_landmarks(shapes, path, key_indices=()) -> None:
    """Write shapes as CSV: one row per shape, 2M columns x1,y1,...,xM,yM.

    The header row records M and the key-landmark indices, e.g.
    ``M=76,keys=0;19;38;57``.
    """
    shapes = list(shapes)
    if not shapes:
        raise IoError("refusing to write an empty landmark file")
    M = shapes[0].M
    keys = ";".join(str(int(k)) for k in key_indices)
    lines = [f"M={M},keys={keys}"]
    for sh in shapes:
        if sh.M != M:
            raise InconsistentLandmarkCount("all shapes in one file must share M")
        lines.append(",".join(repr(float(v)) for v in sh.vector))
    Path(path).write_text("\n".join(lines) + "\n")


def read_landmarks(path) -> tuple[list[LandmarkSet], tuple[int, ...]]:
    """Read a landmark CSV; returns (shapes, key_indices)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read landmarks from {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("M="):
        raise IoError(f"{path}: missing landmark header row (expected 'M=<n>,keys=...')")
    header = lines[0]
    try:
        m_part, key_part = header.split(",", 1)
        M = int(m_part[2:])
        key_str = key_part.split("=", 1)[1]
        keys = tuple(int(k) for k in key_str.split(";") if k != "")
    except (ValueError, IndexError) as exc:
        raise IoError(f"{path}: malformed landmark header {header!r}") from exc
    shapes = []
    for i, ln in enumerate(lines[1:], start=2):
        vals = np.array([float(v) for v in ln.split(",")])
        if vals.size != 2 * M:
            raise IoError(f"{path}:{i}: expected {2*M} values, got {vals.size}")
        shapes.append(LandmarkSet.from_vector(vals))
    return shapes, keys
