"""End-to-end segmentation: supplied bounding box -> oriented crop/resample ->
histogram equalization -> forest probability map -> shape-model fitting ->
contour mapped back to original image coordinates.  Sequence segmentation
adds the temporal penalty and frame-to-frame initialization.

The bounding box is an input (file or ground-truth channel); any detector can
stand in front of this module.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .errors import BoxOutsideImage, IoError, LengthMismatch, ModelMismatch
from .fitting import FitConfig, FitResult, fit_sequence, fit_shape
from .imaging import (
    BinaryMask,
    BoundingBox,
    Image2D,
    crop_resample,
    histogram_equalize,
    load_pgm,
    map_contour_back,
    map_contour_to_box,
    rasterize_mask,
)
from .shape_model import LandmarkSet, ShapeModel

MANIFEST_MAGIC = "# shapeforest manifest v1"


@dataclass(eq=False)
class PipelineConfig:
    """Wiring for one segmentation run: working resolution, the classifier
    (anything with ``predict_map(Image2D) -> Image2D``), the shape model and
    the fitting controls."""

    sub_w: int = 242
    sub_h: int = 208
    forest: object = None
    shape_model: ShapeModel | None = None
    fit: FitConfig = field(default_factory=FitConfig)

    def validate(self) -> None:
        if self.forest is None or self.shape_model is None:
            raise ModelMismatch("pipeline needs both a classifier and a shape model")
        fw = getattr(self.forest, "sub_w", self.sub_w)
        fh = getattr(self.forest, "sub_h", self.sub_h)
        if (fw, fh) != (self.sub_w, self.sub_h):
            raise ModelMismatch(
                f"classifier works at {fw}x{fh} but the pipeline is configured"
                f" for {self.sub_w}x{self.sub_h}"
            )
        sha = getattr(self.forest, "shape_model_sha256", None)
        if sha is not None:
            from .shape_model import model_sha256

            if sha != model_sha256(self.shape_model):
                raise ModelMismatch("forest was trained against a different shape model")


def _prepare_sub(img: Image2D, box: BoundingBox, cfg: PipelineConfig) -> Image2D:
    if not (0.0 <= box.cx < img.width and 0.0 <= box.cy < img.height):
        raise BoxOutsideImage(
            f"box center ({box.cx}, {box.cy}) outside {img.width}x{img.height} raster"
        )
    sub = crop_resample(img, box, cfg.sub_w, cfg.sub_h)
    return histogram_equalize(sub)


def segment_image(img: Image2D, box: BoundingBox, cfg: PipelineConfig
                  ) -> tuple[LandmarkSet, Image2D, FitResult]:
    """Segment one image; returns (contour in original coordinates,
    probability map in sub-image space, fit result)."""
    cfg.validate()
    sub = _prepare_sub(img, box, cfg)
    prob_map = cfg.forest.predict_map(sub)
    fit = fit_shape(prob_map, cfg.shape_model, cfg.fit)
    contour = map_contour_back(fit.landmarks, box, cfg.sub_w, cfg.sub_h)
    return contour, prob_map, fit


def segment_sequence(frames, boxes, cfg: PipelineConfig, n_jobs: int = 1) -> list:
    """Segment an ordered sequence; returns per-frame (contour, probability
    map, fit result) triples.  Prediction is per-frame independent; fitting is
    sequential with the temporal penalty."""
    frames = list(frames)
    boxes = list(boxes)
    if len(frames) != len(boxes):
        raise LengthMismatch(f"{len(frames)} frames vs {len(boxes)} boxes")
    if not frames:
        raise LengthMismatch("sequence must contain at least one frame")
    cfg.validate()

    subs = [_prepare_sub(img, box, cfg) for img, box in zip(frames, boxes)]
    if n_jobs == 1:
        maps = [cfg.forest.predict_map(s) for s in subs]
    else:
        maps = Parallel(n_jobs=n_jobs)(delayed(cfg.forest.predict_map)(s) for s in subs)
    fits = fit_sequence(maps, cfg.shape_model, cfg.fit)
    out = []
    for box, pm, fit in zip(boxes, maps, fits):
        contour = map_contour_back(fit.landmarks, box, cfg.sub_w, cfg.sub_h)
        out.append((contour, pm, fit))
    return out


def perturb_box(box: BoundingBox, sigmas, rng: np.random.Generator) -> BoundingBox:
    """Add independent zero-mean normal noise to each box parameter.

    Side lengths are floored at 1 px and theta is wrapped back into
    (-180, 180] so the result is always a valid box.
    """
    sigmas = np.asarray(sigmas, dtype=float)
    if sigmas.shape != (5,):
        raise ValueError(f"need 5 sigma values (cx, cy, w, h, theta), got {sigmas.shape}")
    if np.any(sigmas < 0):
        raise ValueError(f"sigmas must be non-negative, got {sigmas}")
    d = rng.normal(0.0, 1.0, size=5) * sigmas
    theta = box.theta + d[4]
    theta = (theta + 180.0) % 360.0 - 180.0
    if theta == -180.0:
        theta = 180.0
    return BoundingBox(
        cx=box.cx + d[0],
        cy=box.cy + d[1],
        w=max(box.w + d[2], 1.0),
        h=max(box.h + d[3], 1.0),
        theta=theta,
    )


# --- manifests ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ManifestEntry:
    image_path: Path
    box: BoundingBox
    landmarks: LandmarkSet | None = None

    def load_image(self) -> Image2D:
        return load_pgm(self.image_path)


def write_manifest(entries, path, key_indices=()) -> None:
    """Text listing of (image path, box row, optional ground-truth landmark
    row) triplets; image paths are stored relative to the manifest file."""
    path = Path(path)
    keys = ";".join(str(int(k)) for k in key_indices)
    lines = [f"{MANIFEST_MAGIC} keys={keys}"]
    for e in entries:
        rel = Path(e.image_path)
        try:
            rel = rel.relative_to(path.parent)
        except ValueError:
            pass
        row = [str(rel)] + [repr(float(v)) for v in
                            (e.box.cx, e.box.cy, e.box.w, e.box.h, e.box.theta)]
        if e.landmarks is not None:
            row += [repr(float(v)) for v in e.landmarks.vector]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def read_manifest(path) -> tuple[list[ManifestEntry], tuple[int, ...]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(MANIFEST_MAGIC):
        raise IoError(f"{path}: not a manifest (missing {MANIFEST_MAGIC!r} header)")
    keys: tuple[int, ...] = ()
    if "keys=" in lines[0]:
        key_str = lines[0].split("keys=", 1)[1].strip()
        keys = tuple(int(k) for k in key_str.split(";") if k != "")
    entries = []
    for i, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) < 6:
            raise IoError(f"{path}:{i}: expected at least image,cx,cy,w,h,theta")
        img_path = (path.parent / parts[0]).resolve()
        try:
            cx, cy, w, h, th = (float(p) for p in parts[1:6])
            box = BoundingBox(cx=cx, cy=cy, w=w, h=h, theta=th)
        except ValueError as exc:
            raise IoError(f"{path}:{i}: bad box row: {exc}") from exc
        landmarks = None
        if len(parts) > 6:
            vals = np.array([float(p) for p in parts[6:]])
            if vals.size % 2:
                raise IoError(f"{path}:{i}: landmark row must have an even value count")
            landmarks = LandmarkSet.from_vector(vals)
        entries.append(ManifestEntry(image_path=img_path, box=box, landmarks=landmarks))
    return entries, keys


# --- dataset assembly ----------------------------------------------------------


def sub_landmarks(entries, sub_w: int, sub_h: int) -> list[LandmarkSet]:
    """Ground-truth contours expressed in each entry's sub-image frame."""
    out = []
    for e in entries:
        if e.landmarks is None:
            raise IoError(f"{e.image_path} has no ground-truth landmarks in the manifest")
        out.append(map_contour_to_box(e.landmarks, e.box, sub_w, sub_h))
    return out


def training_pairs(entries, sub_w: int, sub_h: int) -> list[tuple[Image2D, BinaryMask]]:
    """(equalized sub-image, rasterized ground-truth mask) pairs for forest
    training, built exactly like the prediction-time crop."""
    pairs = []
    for e, sub_shape in zip(entries, sub_landmarks(entries, sub_w, sub_h)):
        img = e.load_image()
        sub = histogram_equalize(crop_resample(img, e.box, sub_w, sub_h))
        mask = rasterize_mask(sub_shape, sub_w, sub_h)
        pairs.append((sub, mask))
    return pairs
