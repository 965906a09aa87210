"""Synthetic desk-scale data: annulus-sector "myocardium-like" bands rendered
into noisy images with chamber distractors, attenuation and known ground
truth.

Every contour uses the canonical landmark layout: M = 76 points with 4 key
landmarks at indices (0, 19, 38, 57) - left basal endpoint, epicardial apex,
right basal endpoint, endocardial apex - and 18 arc-length-uniform landmarks
between each consecutive pair of keys.

The generator's latent parameters (mid radius, wall thickness, angular span,
bending) are deliberately different from the PCA basis that will be learned
from its output, so shape-model training on this data is not circular.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import BinaryMask, BoundingBox, Image2D, points_inside, rasterize_mask
from .shape_model import LandmarkSet

M_LANDMARKS = 76
KEY_INDICES = (0, 19, 38, 57)
_PER_CHAIN = 18

MYO_LEVEL = 0.6
BG_LEVEL = 0.15
BOX_INFLATE = 0.15


@dataclass(frozen=True)
class SynthConfig:
    n_images: int = 90
    width: int = 160
    height: int = 160
    r_mid_range: tuple[float, float] = (26.0, 34.0)
    thickness_range: tuple[float, float] = (9.0, 15.0)
    span_range_deg: tuple[float, float] = (150.0, 210.0)
    bend_range: tuple[float, float] = (-3.0, 3.0)
    tilt_range_deg: tuple[float, float] = (-20.0, 20.0)
    center_jitter: float = 8.0
    n_modes_gen: int = 4
    noise_std: float = 0.12
    distractor_count: tuple[int, int] = (4, 7)
    distractor_size: tuple[float, float] = (3.0, 9.0)
    attenuation: float = 0.4
    seed: int = 0

    def __post_init__(self):
        for name in ("r_mid_range", "thickness_range", "span_range_deg",
                     "tilt_range_deg", "distractor_size"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be (lo, hi) with lo <= hi")
        if self.noise_std < 0 or self.attenuation < 0:
            raise ValueError("noise_std and attenuation must be non-negative")
        if not (0 <= self.n_modes_gen <= 4):
            raise ValueError("n_modes_gen must lie in 0..4")


@dataclass(frozen=True, eq=False)
class Sample:
    image: Image2D
    mask: BinaryMask
    landmarks: LandmarkSet
    box: BoundingBox


def _unit(angle_deg):
    a = np.deg2rad(angle_deg)
    return np.array([np.cos(a), np.sin(a)])


def _resample_open(path_pts: np.ndarray, n: int) -> np.ndarray:
    """n arc-length-uniform samples along an open polyline, endpoints included."""
    seg = np.linalg.norm(np.diff(path_pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    at = np.linspace(0.0, cum[-1], n)
    xs = np.interp(at, cum, path_pts[:, 0])
    ys = np.interp(at, cum, path_pts[:, 1])
    return np.column_stack([xs, ys])


def band_contour(center, r_mid, thickness, span_deg, bend, tilt_deg) -> LandmarkSet:
    """Canonical 76-landmark contour of an annulus-sector band.

    The epicardial arc has radius r_mid + thickness/2 about ``center``; the
    endocardial arc has radius r_mid - thickness/2 about a center displaced
    by ``bend`` perpendicular to the apex axis; straight caps join the arcs
    at the angular ends.  ``tilt_deg`` rotates the apex axis away from
    straight up (-y).
    """
    center = np.asarray(center, dtype=float)
    apex_angle = -90.0 + tilt_deg
    psi = span_deg / 2.0
    r_out = r_mid + thickness / 2.0
    r_in = max(r_mid - thickness / 2.0, 1.0)
    c_in = center + bend * _unit(apex_angle + 90.0)

    def epi(ts):
        return center[None, :] + r_out * np.column_stack(
            [np.cos(np.deg2rad(apex_angle + ts)), np.sin(np.deg2rad(apex_angle + ts))])

    def endo(ts):
        return c_in[None, :] + r_in * np.column_stack(
            [np.cos(np.deg2rad(apex_angle + ts)), np.sin(np.deg2rad(apex_angle + ts))])

    dense = np.linspace(0.0, 1.0, 256)
    a_in = endo(np.array([-psi]))[0]
    b_in = endo(np.array([+psi]))[0]
    epi_apex = epi(np.array([0.0]))[0]
    endo_apex = endo(np.array([0.0]))[0]

    # chains between consecutive key landmarks, each resampled to 18 interior points
    up_left = np.vstack([[a_in], epi(-psi + dense * psi)])            # cap + epi arc to apex
    down_right = np.vstack([epi(dense * psi), [b_in]])                 # epi arc + cap
    endo_right = endo(psi - dense * psi)                               # basal right -> endo apex
    endo_left = endo(-dense * psi)                                     # endo apex -> basal left

    chains = [_resample_open(p, _PER_CHAIN + 2)[1:-1]
              for p in (up_left, down_right, endo_right, endo_left)]
    pts = np.vstack([[a_in], chains[0], [epi_apex], chains[1],
                     [b_in], chains[2], [endo_apex], chains[3]])
    assert pts.shape == (M_LANDMARKS, 2)
    return LandmarkSet(pts)


def tight_box(shape: LandmarkSet, tilt_deg: float, inflate: float = BOX_INFLATE) -> BoundingBox:
    """Tight oriented box around the landmarks, aligned with the tilt axis and
    inflated on both sides."""
    pts = shape.points
    c = pts.mean(axis=0)
    th = np.deg2rad(tilt_deg)
    rot = np.array([[np.cos(th), np.sin(th)], [-np.sin(th), np.cos(th)]])  # rotate by -tilt
    local = (pts - c) @ rot.T
    lo = local.min(axis=0)
    hi = local.max(axis=0)
    size = (hi - lo) * (1.0 + inflate)
    lc = (lo + hi) / 2.0
    fwd = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    cxy = c + fwd @ lc
    return BoundingBox(cx=float(cxy[0]), cy=float(cxy[1]),
                       w=float(size[0]), h=float(size[1]), theta=float(tilt_deg))


def _mid(rng_pair):
    return (rng_pair[0] + rng_pair[1]) / 2.0


def _draw_latents(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Shape latents (r_mid, thickness, span, bend); only the first
    cfg.n_modes_gen vary, the rest are pinned at their range midpoints."""
    ranges = [cfg.r_mid_range, cfg.thickness_range, cfg.span_range_deg, cfg.bend_range]
    out = np.array([_mid(r) for r in ranges])
    for i in range(cfg.n_modes_gen):
        lo, hi = ranges[i]
        out[i] = rng.uniform(lo, hi)
    return out


def _render(cfg: SynthConfig, rng: np.random.Generator, shape: LandmarkSet) -> tuple:
    mask = rasterize_mask(shape, cfg.width, cfg.height)
    img = BG_LEVEL + (MYO_LEVEL - BG_LEVEL) * mask.array().astype(float)

    lo, hi = cfg.distractor_count
    n_blobs = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
    if n_blobs > 0:
        keys = KEY_INDICES
        chain = np.arange(keys[2], keys[2] + (keys[0] - keys[2]) % shape.M + 1) % shape.M
        cavity = LandmarkSet(shape.points[chain])
        c_lo = cavity.points.min(axis=0)
        c_hi = cavity.points.max(axis=0)
        ys, xs = np.mgrid[0:cfg.height, 0:cfg.width]
        for _ in range(n_blobs):
            center = None
            for _try in range(100):
                cand = rng.uniform(c_lo, c_hi)
                if points_inside(cavity, cand[None, :])[0]:
                    center = cand
                    break
            if center is None:
                continue
            rx, ry = rng.uniform(*cfg.distractor_size, size=2)
            ang = rng.uniform(0.0, np.pi)
            level = rng.uniform(0.5, 0.65)
            dx = (xs + 0.5) - center[0]
            dy = (ys + 0.5) - center[1]
            u = dx * np.cos(ang) + dy * np.sin(ang)
            v = -dx * np.sin(ang) + dy * np.cos(ang)
            blob = ((u / rx) ** 2 + (v / ry) ** 2 <= 1.0) & (mask.array() == 0)
            img[blob] = level

    if cfg.attenuation > 0:
        ramp = 1.0 - cfg.attenuation * (np.arange(cfg.height) + 0.5) / cfg.height
        img = img * ramp[:, None]
    if cfg.noise_std > 0:
        img = img + rng.normal(0.0, cfg.noise_std, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    return Image2D.from_array(img), mask


def _make_sample(cfg: SynthConfig, rng: np.random.Generator) -> Sample:
    latents = _draw_latents(cfg, rng)
    tilt = rng.uniform(*cfg.tilt_range_deg)
    center = (np.array([cfg.width, cfg.height]) / 2.0
              + rng.uniform(-cfg.center_jitter, cfg.center_jitter, size=2))
    shape = band_contour(center, *latents, tilt_deg=tilt)
    box = tight_box(shape, tilt)
    img, mask = _render(cfg, rng, shape)
    return Sample(image=img, mask=mask, landmarks=shape, box=box)


def generate_dataset(cfg: SynthConfig) -> list[Sample]:
    """Deterministic sample list; sample i depends only on (cfg.seed, i)."""
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_images)
    return [_make_sample(cfg, np.random.default_rng(ss)) for ss in children]


def cycle_latents(cfg: SynthConfig, T: int) -> np.ndarray:
    """Per-frame shape latents for one cycle: p(t) = mid + amp*cos(2*pi*t/T),
    sweeping the full configured range of the first n_modes_gen latents."""
    ranges = [cfg.r_mid_range, cfg.thickness_range, cfg.span_range_deg, cfg.bend_range]
    mid = np.array([_mid(r) for r in ranges])
    amp = np.array([(r[1] - r[0]) / 2.0 for r in ranges])
    amp[cfg.n_modes_gen:] = 0.0
    t = np.arange(T)
    return mid[None, :] + amp[None, :] * np.cos(2.0 * np.pi * t / T)[:, None]


def generate_sequence(cfg: SynthConfig, T: int) -> list[Sample]:
    """One synthetic cardiac-like cycle: pose is fixed over the sequence, the
    shape latents sweep sinusoidally, and one shared bounding box covers every
    frame (frame 0 and frame T would coincide)."""
    if T < 2:
        raise ValueError("a sequence needs at least 2 frames")
    ss = np.random.SeedSequence(cfg.seed)
    pose_rng = np.random.default_rng(ss.spawn(1)[0])
    tilt = pose_rng.uniform(*cfg.tilt_range_deg)
    center = (np.array([cfg.width, cfg.height]) / 2.0
              + pose_rng.uniform(-cfg.center_jitter, cfg.center_jitter, size=2))

    latents = cycle_latents(cfg, T)
    shapes = [band_contour(center, *latents[t], tilt_deg=tilt) for t in range(T)]
    union = LandmarkSet(np.vstack([s.points for s in shapes]))
    box = tight_box(union, tilt)

    frame_seeds = ss.spawn(1 + T)[1:]
    samples = []
    for t in range(T):
        rng = np.random.default_rng(frame_seeds[t])
        img, mask = _render(cfg, rng, shapes[t])
        samples.append(Sample(image=img, mask=mask, landmarks=shapes[t], box=box))
    return samples
