"""Raster containers, PGM I/O, histogram equalization, integral images,
polygon rasterization, signed distance transforms, and oriented-box
crop/resample geometry.

Conventions used throughout:

* Pixel (x, y) occupies the unit square [x, x+1) x [y, y+1); its center is
  (x + 0.5, y + 0.5).  Rasters are row-major, y down.
* "Inside" a closed polygon is decided by the even-odd rule applied to the
  query point, casting a ray toward +x and counting edge crossings with
  crossing-x >= point-x.  Horizontal-line/vertex ties are broken by treating
  each edge as half-open in y.
* Box rotation ``theta`` is in degrees, counter-clockwise in the (x right,
  y down) coordinate frame, about the box centroid.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateShape,
    DimensionMismatch,
    IoError,
    MalformedHeader,
    TruncatedData,
    UnsupportedMagic,
)
from .shape_model import LandmarkSet


@dataclass(frozen=True, eq=False)
class Image2D:
    """Grayscale raster of real intensities, flat row-major.

    Loaded images and probability maps keep every value in [0, 1]; signed
    distance maps reuse the container with unbounded values in pixels.
    """

    width: int
    height: int
    data: np.ndarray  # (width*height,) float64

    def __post_init__(self):
        data = np.ascontiguousarray(np.asarray(self.data, dtype=float)).reshape(-1)
        if data.size != self.width * self.height:
            raise DimensionMismatch(
                f"data length {data.size} != {self.width}x{self.height}"
            )
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, arr) -> "Image2D":
        arr = np.asarray(arr, dtype=float)
        if arr.ndim != 2:
            raise DimensionMismatch(f"expected a 2-D array, got shape {arr.shape}")
        return cls(width=arr.shape[1], height=arr.shape[0], data=arr.reshape(-1))

    def array(self) -> np.ndarray:
        """Read-only (height, width) view."""
        return self.data.reshape(self.height, self.width)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Row-major {0,1} raster."""

    width: int
    height: int
    data: np.ndarray  # (width*height,) uint8

    def __post_init__(self):
        data = np.ascontiguousarray(np.asarray(self.data)).reshape(-1).astype(np.uint8)
        if data.size != self.width * self.height:
            raise DimensionMismatch(
                f"data length {data.size} != {self.width}x{self.height}"
            )
        if data.size and data.max() > 1:
            raise DimensionMismatch("mask values must be exactly 0 or 1")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, arr) -> "BinaryMask":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise DimensionMismatch(f"expected a 2-D array, got shape {arr.shape}")
        return cls(width=arr.shape[1], height=arr.shape[0], data=arr.reshape(-1))

    def array(self) -> np.ndarray:
        return self.data.reshape(self.height, self.width)

    def count(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True)
class BoundingBox:
    """Oriented box: centroid (cx, cy), side lengths (w, h) in pixels,
    orientation theta in degrees counter-clockwise about the centroid."""

    cx: float
    cy: float
    w: float
    h: float
    theta: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box sides must be positive, got w={self.w}, h={self.h}")
        if not (-180.0 < self.theta <= 180.0):
            raise ValueError(f"theta must lie in (-180, 180], got {self.theta}")


# --- PGM I/O -------------------------------------------------------------------

_WS = b" \t\r\n"


def _pgm_tokens(blob: bytes):
    """Yield (token, byte_offset) over a PGM header, skipping '#' comments."""
    i = 0
    n = len(blob)
    while i < n:
        c = blob[i : i + 1]
        if c in (b" ", b"\t", b"\r", b"\n"):
            i += 1
        elif c == b"#":
            while i < n and blob[i : i + 1] != b"\n":
                i += 1
        else:
            start = i
            while i < n and blob[i : i + 1] not in (b" ", b"\t", b"\r", b"\n", b"#"):
                i += 1
            yield blob[start:i], start, i
            # the single whitespace byte after a token is consumed lazily by callers


def load_pgm(path) -> Image2D:
    """Load a P2 (ASCII) or P5 (binary) PGM; intensities are divided by maxval
    so every value lies in [0, 1].  Maxval up to 65535 is supported (two-byte
    big-endian samples in P5)."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    tokens = _pgm_tokens(blob)

    def next_token(what):
        try:
            return next(tokens)
        except StopIteration:
            raise TruncatedData(
                f"{path}: file ended at byte {len(blob)} while reading {what}"
            ) from None

    magic, magic_off, _ = next_token("magic number")
    if magic not in (b"P2", b"P5"):
        raise UnsupportedMagic(
            f"{path}: unsupported magic {magic[:8]!r} at byte {magic_off} (want P2 or P5)"
        )

    header_vals = []
    end = 0
    for what in ("width", "height", "maxval"):
        tok, off, end = next_token(what)
        if not re.fullmatch(rb"\d+", tok):
            raise MalformedHeader(f"{path}: bad {what} token {tok[:16]!r} at byte {off}")
        header_vals.append(int(tok))
    width, height, maxval = header_vals
    if width <= 0 or height <= 0:
        raise MalformedHeader(f"{path}: non-positive dimensions at byte {end}")
    if not (0 < maxval <= 65535):
        raise MalformedHeader(f"{path}: maxval {maxval} out of range at byte {end}")

    n = width * height
    if magic == b"P2":
        vals = []
        for _ in range(n):
            tok, off, end = next_token("pixel data")
            if not re.fullmatch(rb"\d+", tok):
                raise MalformedHeader(f"{path}: bad pixel token {tok[:16]!r} at byte {off}")
            v = int(tok)
            if v > maxval:
                raise MalformedHeader(f"{path}: pixel {v} > maxval at byte {off}")
            vals.append(v)
        raw = np.array(vals, dtype=float)
    else:
        # exactly one whitespace byte separates the header from the raster
        start = end + 1
        bytes_per = 1 if maxval <= 255 else 2
        need = n * bytes_per
        if len(blob) - start < need:
            raise TruncatedData(
                f"{path}: raster needs {need} bytes from byte {start}, file ends at byte {len(blob)}"
            )
        dt = np.uint8 if bytes_per == 1 else np.dtype(">u2")
        raw = np.frombuffer(blob, dtype=dt, count=n, offset=start).astype(float)

    return Image2D(width=width, height=height, data=raw / float(maxval))


def save_pgm(img, path, binary: bool = True) -> None:
    """Write an Image2D (values clipped to [0,1], scaled to maxval 255) or a
    BinaryMask (0 -> 0, 1 -> 255) as PGM."""
    if isinstance(img, BinaryMask):
        pix = img.array().astype(np.uint8) * 255
    else:
        pix = np.rint(np.clip(img.array(), 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = pix.shape
    if binary:
        Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + pix.tobytes())
    else:
        body = "\n".join(" ".join(str(v) for v in row) for row in pix)
        Path(path).write_text(f"P2\n{w} {h}\n255\n{body}\n")


# --- intensity transforms ------------------------------------------------------

def histogram_equalize(img: Image2D) -> Image2D:
    """Equalize intensities using 256 equal-width bins over [0, 1].

    out = (cdf(v) - cdf_min) / (N - cdf_min).  If every pixel falls in a
    single bin the formula divides by zero, so the image is returned
    unchanged.  The mapping is monotone in the input.
    """
    v = img.data
    bins = np.minimum((v * 256.0).astype(np.int64), 255)
    counts = np.bincount(bins, minlength=256)
    cdf = np.cumsum(counts)
    cdf_min = int(counts[counts > 0][0]) if v.size else 0
    n = v.size
    if n == cdf_min:
        return Image2D(img.width, img.height, v.copy())
    out = (cdf[bins] - cdf_min) / float(n - cdf_min)
    return Image2D(img.width, img.height, out)


def integral_image(img: Image2D) -> Image2D:
    """Inclusive prefix-sum raster: out(x, y) = sum of img over i<=x, j<=y."""
    arr = img.array()
    return Image2D.from_array(np.cumsum(np.cumsum(arr, axis=0), axis=1))


def box_mean(integral: Image2D, x0: int, y0: int, x1: int, y1: int) -> float:
    """Mean of the source image over the inclusive rectangle [x0,x1]x[y0,y1],
    computed from its integral image with 4 lookups.  The rectangle is clipped
    to the raster; a rectangle with no in-bounds pixels has mean 0."""
    s = integral.array()
    h, w = s.shape
    x0c, x1c = max(x0, 0), min(x1, w - 1)
    y0c, y1c = max(y0, 0), min(y1, h - 1)
    if x0c > x1c or y0c > y1c:
        return 0.0
    total = s[y1c, x1c]
    if x0c > 0:
        total -= s[y1c, x0c - 1]
    if y0c > 0:
        total -= s[y0c - 1, x1c]
    if x0c > 0 and y0c > 0:
        total += s[y0c - 1, x0c - 1]
    return float(total) / ((x1c - x0c + 1) * (y1c - y0c + 1))


def padded_integral(img: Image2D) -> np.ndarray:
    """(H+1, W+1) zero-padded integral array; box sums need no edge guards."""
    p = np.zeros((img.height + 1, img.width + 1))
    p[1:, 1:] = np.cumsum(np.cumsum(img.array(), axis=0), axis=1)
    return p


# --- polygon geometry ----------------------------------------------------------

def _closed_edges(shape: LandmarkSet):
    a = shape.points
    b = np.roll(a, -1, axis=0)
    return a, b


def _crossings(shape: LandmarkSet, ys: np.ndarray):
    """Edge crossings of horizontal lines.

    Returns (cross, cx): boolean (len(ys), E) crossing flags (half-open in y
    so shared vertices count once) and the crossing x-coordinates.
    """
    a, b = _closed_edges(shape)
    y0 = a[:, 1][None, :]
    y1 = b[:, 1][None, :]
    yq = ys[:, None]
    cross = ((y0 <= yq) & (yq < y1)) | ((y1 <= yq) & (yq < y0))
    dy = np.where(y1 == y0, 1.0, y1 - y0)
    t = (yq - y0) / dy
    cx = a[:, 0][None, :] + t * (b[:, 0][None, :] - a[:, 0][None, :])
    return cross, cx


def points_inside(shape: LandmarkSet, points: np.ndarray) -> np.ndarray:
    """Even-odd inside test for an (N, 2) array of query points."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    cross, cx = _crossings(shape, points[:, 1])
    right = cross & (cx >= points[:, 0][:, None])
    return (np.count_nonzero(right, axis=1) % 2) == 1


def _segment_distances(points: np.ndarray, shape: LandmarkSet, chunk: int = 16384) -> np.ndarray:
    """Unsigned min distance from each of N points to the closed polyline."""
    a, b = _closed_edges(shape)
    ax, ay = a[:, 0], a[:, 1]
    abx, aby = b[:, 0] - ax, b[:, 1] - ay
    denom = abx * abx + aby * aby
    zero = denom == 0.0
    safe = np.where(zero, 1.0, denom)
    out = np.empty(points.shape[0])
    for lo in range(0, points.shape[0], chunk):
        p = points[lo : lo + chunk]
        apx = p[:, 0:1] - ax[None, :]
        apy = p[:, 1:2] - ay[None, :]
        t = np.clip((apx * abx + apy * aby) / safe, 0.0, 1.0)
        if np.any(zero):
            t[:, zero] = 0.0
        dx = apx - t * abx
        dy = apy - t * aby
        d2 = dx * dx + dy * dy
        out[lo : lo + chunk] = np.sqrt(d2.min(axis=1))
    return out


def signed_distances(shape: LandmarkSet, points: np.ndarray) -> np.ndarray:
    """Signed shortest distance from each query point to the closed contour:
    positive inside, negative outside, exactly 0 on the boundary."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    d = _segment_distances(points, shape)
    inside = points_inside(shape, points)
    out = np.where(inside, d, -d)
    out[d == 0.0] = 0.0
    return out


def _inside_grid(shape: LandmarkSet, width: int, height: int) -> np.ndarray:
    """Even-odd inside flags at all pixel centers, shape (height, width).

    Scanline formulation of the same rule as :func:`points_inside`: a pixel
    center is inside iff the number of crossings with cx >= center_x is odd.
    """
    ys = np.arange(height) + 0.5
    cross, cx = _crossings(shape, ys)
    rows, _ = np.nonzero(cross)
    cxs = cx[cross]
    # crossing c contributes to "cx < center(x)" exactly for pixels x >= floor(c + 0.5)
    start = np.clip(np.floor(cxs + 0.5).astype(np.int64), 0, width)
    acc = np.zeros((height, width + 1), dtype=np.int64)
    np.add.at(acc, (rows, start), 1)
    n_less = np.cumsum(acc, axis=1)[:, :width]
    total = np.count_nonzero(cross, axis=1)[:, None]
    return ((total - n_less) % 2) == 1


def rasterize_mask(shape: LandmarkSet, width: int, height: int) -> BinaryMask:
    """Binary mask of the closed polygon: pixel (x, y) is 1 iff its center
    lies inside under the even-odd rule.  Pixels outside the raster are
    simply not represented."""
    if shape.M < 3:
        raise DegenerateShape("polygon rasterization needs at least 3 landmarks")
    return BinaryMask.from_array(_inside_grid(shape, width, height).astype(np.uint8))


def signed_distance_map(shape: LandmarkSet, width: int, height: int) -> Image2D:
    """Signed distance transform of the closed contour sampled at pixel
    centers: positive inside, negative outside, units pixels."""
    if shape.M < 3:
        raise DegenerateShape("signed distance transform needs at least 3 landmarks")
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.reshape(-1), gy.reshape(-1)])
    d = _segment_distances(pts, shape)
    inside = _inside_grid(shape, width, height).reshape(-1)
    vals = np.where(inside, d, -d)
    vals[d == 0.0] = 0.0
    return Image2D(width=width, height=height, data=vals)


# --- oriented-box crop geometry --------------------------------------------------

def _box_to_image(box: BoundingBox, sub_w: int, sub_h: int, a: np.ndarray, b: np.ndarray):
    """Map sub-image coordinates (a, b) to source-image coordinates.

    The sub-image frame spans the box: local x in [-w/2, w/2] along the box
    axis rotated by theta, then translated to (cx, cy)."""
    lx = a * (box.w / sub_w) - box.w / 2.0
    ly = b * (box.h / sub_h) - box.h / 2.0
    th = np.deg2rad(box.theta)
    c, s = np.cos(th), np.sin(th)
    return box.cx + lx * c - ly * s, box.cy + lx * s + ly * c


def _image_to_box(box: BoundingBox, sub_w: int, sub_h: int, x: np.ndarray, y: np.ndarray):
    """Exact inverse of :func:`_box_to_image`."""
    th = np.deg2rad(box.theta)
    c, s = np.cos(th), np.sin(th)
    dx = x - box.cx
    dy = y - box.cy
    lx = dx * c + dy * s
    ly = -dx * s + dy * c
    return (lx + box.w / 2.0) * (sub_w / box.w), (ly + box.h / 2.0) * (sub_h / box.h)


def _bilinear(img: Image2D, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear sample at continuous coordinates; pixel values live at pixel
    centers and samples outside the raster clamp to the nearest edge pixel."""
    arr = img.array()
    h, w = arr.shape
    gx = x - 0.5
    gy = y - 0.5
    i0 = np.floor(gx).astype(np.int64)
    j0 = np.floor(gy).astype(np.int64)
    tx = gx - i0
    ty = gy - j0
    i0c = np.clip(i0, 0, w - 1)
    i1c = np.clip(i0 + 1, 0, w - 1)
    j0c = np.clip(j0, 0, h - 1)
    j1c = np.clip(j0 + 1, 0, h - 1)
    v00 = arr[j0c, i0c]
    v01 = arr[j0c, i1c]
    v10 = arr[j1c, i0c]
    v11 = arr[j1c, i1c]
    top = v00 * (1 - tx) + v01 * tx
    bot = v10 * (1 - tx) + v11 * tx
    return top * (1 - ty) + bot * ty


def crop_resample(img: Image2D, box: BoundingBox, out_w: int, out_h: int) -> Image2D:
    """Resample the oriented box region into an (out_w, out_h) raster with
    bilinear interpolation; out-of-source samples clamp to the edge."""
    if out_w <= 0 or out_h <= 0:
        raise DimensionMismatch(f"output size must be positive, got {out_w}x{out_h}")
    us = np.arange(out_w) + 0.5
    vs = np.arange(out_h) + 0.5
    gu, gv = np.meshgrid(us, vs)
    sx, sy = _box_to_image(box, out_w, out_h, gu, gv)
    return Image2D(width=out_w, height=out_h, data=_bilinear(img, sx, sy).reshape(-1))


def map_contour_back(shape: LandmarkSet, box: BoundingBox, sub_w: int, sub_h: int) -> LandmarkSet:
    """Map landmarks from sub-image coordinates back into the original image
    frame (the exact inverse of the crop_resample coordinate map)."""
    x, y = _box_to_image(box, sub_w, sub_h, shape.points[:, 0], shape.points[:, 1])
    return LandmarkSet(np.column_stack([x, y]))


def map_contour_to_box(shape: LandmarkSet, box: BoundingBox, sub_w: int, sub_h: int) -> LandmarkSet:
    """Express original-image landmarks in the sub-image frame of the box."""
    a, b = _image_to_box(box, sub_w, sub_h, shape.points[:, 0], shape.points[:, 1])
    return LandmarkSet(np.column_stack([a, b]))


# --- bounding-box CSV ------------------------------------------------------------

BOX_HEADER = "cx,cy,w,h,theta_deg"


def write_boxes(boxes, path) -> None:
    """One row per image under the header ``cx,cy,w,h,theta_deg``."""
    lines = [BOX_HEADER]
    for b in boxes:
        lines.append(",".join(repr(float(v)) for v in (b.cx, b.cy, b.w, b.h, b.theta)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_boxes(path) -> list[BoundingBox]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read boxes from {path}: {exc}") from exc
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != BOX_HEADER:
        raise IoError(f"{path}: expected header {BOX_HEADER!r}")
    boxes = []
    for i, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != 5:
            raise IoError(f"{path}:{i}: expected 5 comma-separated values")
        try:
            cx, cy, w, h, th = (float(p) for p in parts)
            boxes.append(BoundingBox(cx=cx, cy=cy, w=w, h=h, theta=th))
        except ValueError as exc:
            raise IoError(f"{path}:{i}: {exc}") from exc
    return boxes
