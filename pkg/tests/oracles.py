"""Independent reference implementations used to verify the library.

Everything here recomputes results from first principles (loops, textbook
formulas) and must stay independent of the library code paths it checks.
"""
from __future__ import annotations

import math

import numpy as np


# --- polygon geometry -----------------------------------------------------------

def point_in_polygon(poly: np.ndarray, px: float, py: float) -> bool:
    """Even-odd rule by explicit ray casting toward +x: count edge crossings
    whose crossing-x is >= the point's x; edges are half-open in y."""
    n = len(poly)
    count = 0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        if (y0 <= py < y1) or (y1 <= py < y0):
            t = (py - y0) / (y1 - y0)
            cx = x0 + t * (x1 - x0)
            if cx >= px:
                count += 1
    return count % 2 == 1


def point_segment_distance(px, py, ax, ay, bx, by) -> float:
    dx, dy = bx - ax, by - ay
    denom = dx * dx + dy * dy
    if denom == 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * dx + (py - ay) * dy) / denom
    t = min(max(t, 0.0), 1.0)
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def brute_signed_distance(poly: np.ndarray, px: float, py: float) -> float:
    d = min(point_segment_distance(px, py, *poly[i], *poly[(i + 1) % len(poly)])
            for i in range(len(poly)))
    if d == 0.0:
        return 0.0
    return d if point_in_polygon(poly, px, py) else -d


def brute_box_mean(arr: np.ndarray, x0: int, y0: int, x1: int, y1: int) -> float:
    """Clipped inclusive-rectangle mean by direct summation."""
    h, w = arr.shape
    x0c, x1c = max(x0, 0), min(x1, w - 1)
    y0c, y1c = max(y0, 0), min(y1, h - 1)
    if x0c > x1c or y0c > y1c:
        return 0.0
    total = 0.0
    cnt = 0
    for y in range(y0c, y1c + 1):
        for x in range(x0c, x1c + 1):
            total += arr[y, x]
            cnt += 1
    return total / cnt


# --- PCA -------------------------------------------------------------------------

def pca_oracle(vectors: np.ndarray):
    """Dense eigendecomposition of the explicit sample covariance (divisor
    N-1); returns (mean, eigenvalues descending, eigenvectors as columns)."""
    n = vectors.shape[0]
    mean = vectors.mean(axis=0)
    dev = vectors - mean
    cov = dev.T @ dev / (n - 1)
    lam, vec = np.linalg.eigh(cov)
    order = np.argsort(lam)[::-1]
    return mean, lam[order], vec[:, order]


# --- entropy / greedy training ----------------------------------------------------

def entropy_bits(n1: int, n: int) -> float:
    if n == 0:
        return 0.0
    p = n1 / n
    h = 0.0
    for q in (p, 1.0 - p):
        if q > 0.0:
            h -= q * math.log2(q)
    return h


def info_gain_oracle(parent, left, right) -> float:
    n = parent[0] + parent[1]
    nl = left[0] + left[1]
    nr = right[0] + right[1]
    return (entropy_bits(parent[1], n)
            - nl / n * entropy_bits(left[1], nl)
            - nr / n * entropy_bits(right[1], nr))


def greedy_tree_oracle(images, masks, config, model):
    """Re-derive one tree (tree index 0) of the greedy trainer from scratch.

    Follows the documented determinism contract: spawned per-tree seed,
    stratified per-image/per-class subsampling, depth-first left-first
    expansion with child ids allocated at split time, candidate features from
    shapeforest.features.sample_feature, quantile thresholds
    sorted[int(q*(n-1))], strict ``value > tau`` going LEFT, empty children
    rejected, earliest candidate winning ties, and leaves on depth, size,
    purity or non-positive gain.  Feature values are recomputed here by
    direct summation / geometry, independent of the library evaluators.
    """
    from shapeforest.features import (
        BoxDiff, BoxMean, Position, SMFeature, SMTableCache, sample_feature, Axis,
    )
    from shapeforest.shape_model import generate_shape

    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(config.n_trees)[0])
    w, h = images[0].width, images[0].height
    arrays = [img.array() for img in images]
    cache = SMTableCache(model, w, h)

    img_idx, xs, ys, labels = [], [], [], []
    for i, msk in enumerate(masks):
        flat_mask = msk.array().reshape(-1)
        for cls in (0, 1):
            pool = np.nonzero(flat_mask == cls)[0]
            if pool.size == 0:
                continue
            k = max(1, int(round(config.pixel_fraction * pool.size)))
            take = pool[rng.choice(pool.size, size=k, replace=False)]
            for f in take:
                img_idx.append(i)
                xs.append(int(f % w))
                ys.append(int(f // w))
                labels.append(int(flat_mask[f]))
    img_idx = np.array(img_idx)
    xs = np.array(xs)
    ys = np.array(ys)
    labels = np.array(labels)

    def box_val(arr, x, y, spec):
        cx, cy = x + spec.dx, y + spec.dy
        x0 = cx - spec.w // 2
        y0 = cy - spec.h // 2
        return brute_box_mean(arr, x0, y0, x0 + spec.w - 1, y0 + spec.h - 1)

    def feature_value(feat, k):
        arr = arrays[img_idx[k]]
        x, y = int(xs[k]), int(ys[k])
        if isinstance(feat, BoxMean):
            return box_val(arr, x, y, feat.box)
        if isinstance(feat, BoxDiff):
            return box_val(arr, x, y, feat.a) - box_val(arr, x, y, feat.b)
        if isinstance(feat, Position):
            return float(x if feat.axis is Axis.X else y)
        if isinstance(feat, SMFeature):
            poly = generate_shape(model, cache.params(feat.table_id)).points
            return brute_signed_distance(poly, x + 0.5, y + 0.5)
        raise TypeError(feat)

    nodes = [None]
    stack = [(0, list(range(len(labels))), 0)]
    while stack:
        node_id, idx, depth = stack.pop()
        n = len(idx)
        n1 = sum(labels[k] for k in idx)
        n0 = n - n1
        if depth >= config.max_depth or n < config.min_samples or n1 == 0 or n0 == 0:
            nodes[node_id] = ("leaf", n1 / n, n)
            continue
        best = None  # (gain, feature, tau, values)
        for _ in range(config.n_candidate_features):
            feat = sample_feature(rng, config.pool, model, cache)
            vals = np.array([feature_value(feat, k) for k in idx])
            sv = np.sort(vals, kind="stable")
            for j in range(config.n_thresholds):
                q = (j + 1) / (config.n_thresholds + 1)
                tau = sv[int(q * (n - 1))]
                left = [k for k, v in zip(idx, vals) if v > tau]
                right = [k for k, v in zip(idx, vals) if v <= tau]
                if not left or not right:
                    continue
                l1 = sum(labels[k] for k in left)
                r1 = sum(labels[k] for k in right)
                gain = info_gain_oracle((n0, n1), (len(left) - l1, l1),
                                        (len(right) - r1, r1))
                if best is None or gain > best[0]:
                    best = (gain, feat, tau, vals)
        if best is None or best[0] <= 0.0:
            nodes[node_id] = ("leaf", n1 / n, n)
            continue
        gain, feat, tau, vals = best
        left_idx = [k for k, v in zip(idx, vals) if v > tau]
        right_idx = [k for k, v in zip(idx, vals) if v <= tau]
        left_id = len(nodes)
        right_id = left_id + 1
        nodes.extend([None, None])
        nodes[node_id] = ("split", feat, float(tau), left_id, right_id, n0, n1)
        stack.append((right_id, right_idx, depth + 1))
        stack.append((left_id, left_idx, depth + 1))
    return nodes, cache


def route_pixel_oracle(tree, x, y, arr, cache_lookup) -> float:
    """Route one pixel through a trained tree by direct recomputation."""
    from shapeforest.features import Axis, BoxDiff, BoxMean, Position, SMFeature
    from shapeforest.forest import Leaf

    def box_val(spec):
        cx, cy = x + spec.dx, y + spec.dy
        x0 = cx - spec.w // 2
        y0 = cy - spec.h // 2
        return brute_box_mean(arr, x0, y0, x0 + spec.w - 1, y0 + spec.h - 1)

    node = tree[0]
    while not isinstance(node, Leaf):
        feat = node.test.feature
        if isinstance(feat, BoxMean):
            v = box_val(feat.box)
        elif isinstance(feat, BoxDiff):
            v = box_val(feat.a) - box_val(feat.b)
        elif isinstance(feat, Position):
            v = float(x if feat.axis is Axis.X else y)
        elif isinstance(feat, SMFeature):
            v = cache_lookup(feat.table_id, x, y)
        else:
            raise TypeError(feat)
        node = tree[node.left] if v > node.test.tau else tree[node.right]
    return node.p_myo


# --- energies ---------------------------------------------------------------------

def energy_oracle(prob_arr: np.ndarray, mask_arr: np.ndarray, b: np.ndarray,
                  eigenvalues: np.ndarray, alpha: float,
                  posed: np.ndarray | None = None,
                  x_prev: np.ndarray | None = None, beta: float = 0.0) -> float:
    """Direct summation of all energy terms with plain Python loops."""
    h, w = prob_arr.shape
    total = 0.0
    for y in range(h):
        for x in range(w):
            diff = prob_arr[y, x] - mask_arr[y, x]
            total += diff * diff
    if len(b):
        reg = 0.0
        for bi, lam in zip(b, eigenvalues):
            reg += abs(bi) / math.sqrt(lam)
        total += alpha * reg / len(b)
    if x_prev is not None:
        m = len(x_prev) // 2
        acc = 0.0
        for v, vp in zip(posed, x_prev):
            acc += (v - vp) ** 2
        total += beta / (2.0 * m) * acc
    return total


# --- contour distances --------------------------------------------------------------

def nearest_polyline_distance(pt: np.ndarray, poly: np.ndarray) -> float:
    return min(point_segment_distance(pt[0], pt[1], *poly[i], *poly[(i + 1) % len(poly)])
               for i in range(len(poly)))


def directed_contour_distance(samples: np.ndarray, poly: np.ndarray, kind: str) -> float:
    ds = [nearest_polyline_distance(p, poly) for p in samples]
    return max(ds) if kind == "max" else sum(ds) / len(ds)


# --- statistics ----------------------------------------------------------------------

def pearson_oracle(x: np.ndarray, y: np.ndarray) -> float:
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def paired_t_oracle(x: np.ndarray, y: np.ndarray):
    """(t, p) from the textbook formula; p via the regularized incomplete
    beta function rather than a t-distribution object."""
    from scipy.special import betainc

    d = np.asarray(x, float) - np.asarray(y, float)
    n = len(d)
    mean = d.mean()
    sd = math.sqrt(sum((v - mean) ** 2 for v in d) / (n - 1))
    t = mean / (sd / math.sqrt(n))
    nu = n - 1
    p = betainc(nu / 2.0, 0.5, nu / (nu + t * t))
    return t, p
