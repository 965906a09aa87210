"""Binary-classification random forest over image pixels.

Training is per-node greedy maximization of Shannon information gain over a
randomly sampled candidate pool of (feature, threshold) tests; prediction
routes every pixel through every tree and averages the leaf myocardium
fractions.

Determinism contract (relied on by oracle tests and reproducible runs):

* tree ``t`` draws from ``default_rng(SeedSequence(config.seed).spawn(n_trees)[t])``;
* per tree, training pixels are subsampled image by image (dataset order) and
  class 0 before class 1 within an image, taking
  ``max(1, round(pixel_fraction * n_class))`` indices without replacement;
* nodes are expanded depth-first, left child first; child ids are allocated
  at split time, left then right;
* at each expanded node the candidate features are drawn in order via
  :func:`shapeforest.features.sample_feature`; thresholds for a candidate are
  the empirical quantiles ``sorted_vals[int(q * (n - 1))]`` at
  ``q = (j + 1) / (n_thresholds + 1)``;
* candidates are scored feature-major then threshold-minor; splits with an
  empty child are rejected outright; among equal gains the earliest candidate
  wins; a node becomes a leaf when depth reaches ``max_depth``, its sample
  count falls below ``min_samples``, it is pure, or no candidate has
  positive gain.

Split nodes keep their class counts, so evaluating a tree truncated at depth
``d`` is exactly the tree that training with ``max_depth=d`` would have
produced (greedy growth is top-down and never looks deeper).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Union

import numpy as np
from joblib import Parallel, delayed

from .errors import (
    CountMismatch,
    EmptyDataset,
    IoError,
    ModelMismatch,
    ResolutionMismatch,
    SingleClassDataset,
)
from .features import (
    Axis,
    BoxDiff,
    BoxMean,
    BoxSpec,
    EvalContext,
    FeaturePoolConfig,
    Position,
    SMFeature,
    SMTableCache,
    SplitTest,
    eval_feature_batch,
    eval_feature_multi,
    sample_feature,
)
from .imaging import BinaryMask, Image2D, padded_integral
from .shape_model import ShapeModel, ShapeParams, model_sha256

FOREST_FORMAT = "shapeforest/forest"
FOREST_VERSION = 1


@dataclass(frozen=True)
class Leaf:
    p_myo: float
    n_train: int


@dataclass(frozen=True)
class Split:
    test: SplitTest
    left: int
    right: int
    n0: int
    n1: int


TreeNode = Union[Leaf, Split]
Tree = list  # list[TreeNode], node 0 is the root


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 20
    max_depth: int = 24
    min_samples: int = 8
    n_candidate_features: int = 100
    n_thresholds: int = 10
    pixel_fraction: float = 0.10
    seed: int = 0
    pool: FeaturePoolConfig = field(default_factory=FeaturePoolConfig)

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not (0.0 < self.pixel_fraction <= 1.0):
            raise ValueError("pixel_fraction must lie in (0, 1]")


@dataclass(eq=False)
class Forest:
    trees: list
    config: TrainConfig
    cache: SMTableCache
    shape_model_sha256: str
    sub_w: int
    sub_h: int

    def predict_map(self, sub_image: Image2D, depth_cap: int | None = None) -> Image2D:
        return predict_map(self, sub_image, depth_cap=depth_cap)

    def n_nodes(self) -> int:
        return sum(len(t) for t in self.trees)


# --- information gain ---------------------------------------------------------


def _entropy(n1, n):
    """Shannon entropy (bits) of a binary distribution given positive-class
    and total counts; 0 log 0 = 0.  Vectorized."""
    n1 = np.asarray(n1, dtype=float)
    n = np.asarray(n, dtype=float)
    p = np.divide(n1, n, out=np.zeros_like(n1), where=n > 0)
    out = np.zeros_like(p)
    interior = (p > 0.0) & (p < 1.0)
    pi = p[interior]
    out[interior] = -(pi * np.log2(pi) + (1 - pi) * np.log2(1 - pi))
    return out


def information_gain(parent, left, right) -> float:
    """H(parent) - [n_L/n H(left) + n_R/n H(right)], entropy base 2.

    Counts are (background, myocardium) pairs; left + right must equal parent.
    """
    parent = np.asarray(parent, dtype=np.int64)
    left = np.asarray(left, dtype=np.int64)
    right = np.asarray(right, dtype=np.int64)
    if parent.shape != (2,) or left.shape != (2,) or right.shape != (2,):
        raise CountMismatch("class counts must be pairs (n_background, n_myocardium)")
    if not np.array_equal(left + right, parent):
        raise CountMismatch(f"left {left} + right {right} != parent {parent}")
    n = int(parent.sum())
    if n <= 0:
        raise CountMismatch("parent node must contain at least one sample")
    nl, nr = int(left.sum()), int(right.sum())
    h_p = float(_entropy(parent[1], n))
    h_l = float(_entropy(left[1], nl)) if nl else 0.0
    h_r = float(_entropy(right[1], nr)) if nr else 0.0
    return h_p - (nl / n) * h_l - (nr / n) * h_r


# --- training -------------------------------------------------------------------


def _subsample(masks_flat, rng, fraction):
    """Stratified per-image, per-class subsample; returns (img_idx, flat_pos)."""
    img_ids, positions = [], []
    for i, m in enumerate(masks_flat):
        for cls in (0, 1):
            pool = np.nonzero(m == cls)[0]
            if pool.size == 0:
                continue
            k = max(1, int(round(fraction * pool.size)))
            take = pool[rng.choice(pool.size, size=k, replace=False)]
            img_ids.append(np.full(take.size, i, dtype=np.int64))
            positions.append(take)
    return np.concatenate(img_ids), np.concatenate(positions)


def _candidate_taus(sorted_vals: np.ndarray, n_thresholds: int) -> np.ndarray:
    """Empirical quantile thresholds: sorted_vals[int(q*(n-1))] at
    q = (j+1)/(n_thresholds+1)."""
    n = sorted_vals.size
    qs = (np.arange(1, n_thresholds + 1)) / (n_thresholds + 1)
    idx = (qs * (n - 1)).astype(np.int64)
    return sorted_vals[idx]


def _best_split(vals: np.ndarray, labels: np.ndarray, n_thresholds: int):
    """Best (gain, tau) for one feature over its quantile thresholds; Nones
    when every threshold leaves a child empty.  LEFT is the strict > side."""
    order = np.argsort(vals, kind="stable")
    sv = vals[order]
    cum1 = np.cumsum(labels[order])
    n = vals.size
    n1 = int(cum1[-1])
    taus = _candidate_taus(sv, n_thresholds)
    pos = np.searchsorted(sv, taus, side="right")  # samples with val <= tau go RIGHT
    valid = (pos > 0) & (pos < n)
    if not np.any(valid):
        return None, None
    pos_v = pos[valid]
    n_right = pos_v
    n1_right = cum1[pos_v - 1]
    n_left = n - n_right
    n1_left = n1 - n1_right
    h_parent = _entropy(n1, n)
    gains = (h_parent
             - (n_left / n) * _entropy(n1_left, n_left)
             - (n_right / n) * _entropy(n1_right, n_right))
    j = int(np.argmax(gains))  # first maximal gain in threshold order
    valid_idx = np.nonzero(valid)[0]
    return float(gains[j]), float(taus[valid_idx[j]])


def _grow_tree(images, masks_flat, config: TrainConfig, model: ShapeModel, seed_seq):
    """Grow one tree; returns (nodes, sm_params) with SMFeature ids local to
    this tree's sampling order."""
    rng = np.random.default_rng(seed_seq)
    w, h = images[0].width, images[0].height
    local_cache = SMTableCache(model, w, h)
    stacked = np.stack([padded_integral(img) for img in images])

    img_idx, flat = _subsample(masks_flat, rng, config.pixel_fraction)
    xs = (flat % w).astype(np.int64)
    ys = (flat // w).astype(np.int64)
    labels = np.empty(flat.size, dtype=np.int64)
    for i in range(len(masks_flat)):
        sel = img_idx == i
        labels[sel] = masks_flat[i][flat[sel]]

    nodes: list = [None]
    stack = [(0, np.arange(flat.size), 0)]  # (node id, sample indices, depth)
    while stack:
        node_id, idx, depth = stack.pop()
        n = idx.size
        node_labels = labels[idx]
        n1 = int(node_labels.sum())
        n0 = n - n1
        pure = n1 == 0 or n0 == 0
        if depth >= config.max_depth or n < config.min_samples or pure:
            nodes[node_id] = Leaf(p_myo=n1 / n, n_train=n)
            continue

        node_xs, node_ys, node_img = xs[idx], ys[idx], img_idx[idx]
        best = None  # (gain, feature, tau, values)
        for _ in range(config.n_candidate_features):
            feat = sample_feature(rng, config.pool, model, local_cache)
            vals = eval_feature_multi(feat, node_xs, node_ys, stacked, w, h,
                                      local_cache, imgs=node_img)
            gain, tau = _best_split(vals, node_labels, config.n_thresholds)
            if gain is not None and (best is None or gain > best[0]):
                best = (gain, feat, tau, vals)
        if best is None or best[0] <= 0.0:
            nodes[node_id] = Leaf(p_myo=n1 / n, n_train=n)
            continue

        gain, feat, tau, vals = best
        go_left = vals > tau
        left_id = len(nodes)
        right_id = left_id + 1
        nodes.extend([None, None])
        nodes[node_id] = Split(test=SplitTest(feature=feat, tau=tau),
                               left=left_id, right=right_id, n0=n0, n1=n1)
        # LIFO stack: push right first so the left child is expanded next
        stack.append((right_id, idx[~go_left], depth + 1))
        stack.append((left_id, idx[go_left], depth + 1))

    return nodes, [local_cache.params(i) for i in range(len(local_cache))]


def _remap_sm_ids(nodes, local_params, cache: SMTableCache):
    out = []
    for node in nodes:
        if isinstance(node, Split) and isinstance(node.test.feature, SMFeature):
            new_id = cache.register(local_params[node.test.feature.table_id])
            out.append(replace(node, test=SplitTest(feature=SMFeature(new_id),
                                                    tau=node.test.tau)))
        else:
            out.append(node)
    return out


def train_forest(dataset, config: TrainConfig, model: ShapeModel, n_jobs: int = 1) -> Forest:
    """Train a forest on (sub-image, ground-truth mask) pairs.

    Each tree trains on its own stratified pixel subsample; trees are
    independent and run in parallel when ``n_jobs`` allows.  Results are
    bit-identical for a fixed config regardless of ``n_jobs``.
    """
    dataset = list(dataset)
    if not dataset:
        raise EmptyDataset("training needs at least one (image, mask) pair")
    w, h = dataset[0][0].width, dataset[0][0].height
    for img, msk in dataset:
        if (img.width, img.height) != (w, h) or (msk.width, msk.height) != (w, h):
            raise ResolutionMismatch(
                f"all sub-images and masks must be {w}x{h}, got {img.width}x{img.height}"
                f" / {msk.width}x{msk.height}"
            )
    masks_flat = [msk.data.astype(np.int64) for _, msk in dataset]
    totals = np.sum([(np.count_nonzero(m == 0), np.count_nonzero(m == 1)) for m in masks_flat],
                    axis=0)
    if totals[0] == 0 or totals[1] == 0:
        raise SingleClassDataset(
            f"dataset must contain both classes, got counts background={totals[0]},"
            f" myocardium={totals[1]}"
        )

    images = [img for img, _ in dataset]
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_trees)
    if n_jobs == 1:
        grown = [_grow_tree(images, masks_flat, config, model, s) for s in seeds]
    else:
        grown = Parallel(n_jobs=n_jobs)(
            delayed(_grow_tree)(images, masks_flat, config, model, s) for s in seeds
        )

    cache = SMTableCache(model, w, h)
    trees = [_remap_sm_ids(nodes, params, cache) for nodes, params in grown]
    return Forest(trees=trees, config=config, cache=cache,
                  shape_model_sha256=model_sha256(model), sub_w=w, sub_h=h)


# --- prediction -----------------------------------------------------------------


def _node_fraction(node) -> float:
    if isinstance(node, Leaf):
        return node.p_myo
    return node.n1 / (node.n0 + node.n1)


def _tree_route(tree, ctx: EvalContext, width: int, height: int, caps):
    """Route all pixels once; returns {cap: （HW,) probabilities}.

    ``caps`` is a sorted list of depth caps; ``None`` entries mean the full
    tree.  A cap of d evaluates the tree exactly as if training had stopped
    at depth d (interior nodes fall back to their stored class fraction).
    """
    n_pix = width * height
    xs0 = np.tile(np.arange(width, dtype=np.int64), height)
    ys0 = np.repeat(np.arange(height, dtype=np.int64), width)
    out = np.zeros(n_pix)
    snapshots = {}
    finite = sorted({c for c in caps if c is not None})
    frontier = [(0, np.arange(n_pix))]
    depth = 0
    while frontier:
        if finite and depth == finite[0]:
            snap = out.copy()
            for node_id, idx in frontier:
                snap[idx] = _node_fraction(tree[node_id])
            snapshots[finite.pop(0)] = snap
        nxt = []
        for node_id, idx in frontier:
            node = tree[node_id]
            if isinstance(node, Leaf):
                out[idx] = node.p_myo
            else:
                vals = eval_feature_batch(node.test.feature, xs0[idx], ys0[idx], ctx)
                go_left = vals > node.test.tau
                nxt.append((node.left, idx[go_left]))
                nxt.append((node.right, idx[~go_left]))
        frontier = nxt
        depth += 1
    for cap in finite:  # caps at or beyond the deepest leaf
        snapshots[cap] = out.copy()
    if None in caps:
        snapshots[None] = out
    return snapshots


def predict_map(forest: Forest, sub_image: Image2D, depth_cap: int | None = None) -> Image2D:
    """Per-pixel myocardium probability, averaged over trees."""
    maps = predict_map_depths(forest, sub_image, [depth_cap])
    return maps[depth_cap]


def predict_map_depths(forest: Forest, sub_image: Image2D, depths) -> dict:
    """Probability maps for several depth caps from a single routing pass."""
    if (sub_image.width, sub_image.height) != (forest.sub_w, forest.sub_h):
        raise ResolutionMismatch(
            f"forest was trained at {forest.sub_w}x{forest.sub_h}, image is"
            f" {sub_image.width}x{sub_image.height}"
        )
    caps = list(depths)
    ctx = EvalContext.for_image(sub_image, cache=forest.cache)
    acc = {c: np.zeros(sub_image.width * sub_image.height) for c in caps}
    for tree in forest.trees:
        snaps = _tree_route(tree, ctx, sub_image.width, sub_image.height, caps)
        for c in caps:
            acc[c] += snaps[c]
    n = len(forest.trees)
    return {c: Image2D(sub_image.width, sub_image.height, acc[c] / n) for c in caps}


# --- serialization ----------------------------------------------------------------


def _feature_doc(feature, cache: SMTableCache):
    if isinstance(feature, BoxMean):
        b = feature.box
        return {"box_mean": [b.dx, b.dy, b.w, b.h]}
    if isinstance(feature, BoxDiff):
        return {"box_diff": [[feature.a.dx, feature.a.dy, feature.a.w, feature.a.h],
                             [feature.b.dx, feature.b.dy, feature.b.w, feature.b.h]]}
    if isinstance(feature, Position):
        return {"position": feature.axis.value}
    if isinstance(feature, SMFeature):
        return {"sm": cache.params(feature.table_id).b.tolist()}
    raise TypeError(f"unknown feature {feature!r}")


def _feature_from_doc(doc, cache: SMTableCache):
    if "box_mean" in doc:
        return BoxMean(BoxSpec(*doc["box_mean"]))
    if "box_diff" in doc:
        a, b = doc["box_diff"]
        return BoxDiff(BoxSpec(*a), BoxSpec(*b))
    if "position" in doc:
        return Position(Axis(doc["position"]))
    if "sm" in doc:
        return SMFeature(cache.register(ShapeParams(np.asarray(doc["sm"], float))))
    raise IoError(f"unknown feature document {doc!r}")


def _config_doc(config: TrainConfig) -> dict:
    return {
        "n_trees": config.n_trees,
        "max_depth": config.max_depth,
        "min_samples": config.min_samples,
        "n_candidate_features": config.n_candidate_features,
        "n_thresholds": config.n_thresholds,
        "pixel_fraction": config.pixel_fraction,
        "seed": config.seed,
        "pool": {
            "weights": list(config.pool.weights),
            "max_offset": config.pool.max_offset,
            "box_min": config.pool.box_min,
            "box_max": config.pool.box_max,
        },
    }


def _config_from_doc(doc) -> TrainConfig:
    pool = doc["pool"]
    return TrainConfig(
        n_trees=doc["n_trees"],
        max_depth=doc["max_depth"],
        min_samples=doc["min_samples"],
        n_candidate_features=doc["n_candidate_features"],
        n_thresholds=doc["n_thresholds"],
        pixel_fraction=doc["pixel_fraction"],
        seed=doc["seed"],
        pool=FeaturePoolConfig(weights=tuple(pool["weights"]),
                               max_offset=pool["max_offset"],
                               box_min=pool["box_min"],
                               box_max=pool["box_max"]),
    )


def save_forest(forest: Forest, path) -> None:
    """Versioned JSON document.  SM distance tables are not serialized; only
    their shape coefficients are, and tables regenerate bit-identically on
    load.  The document embeds the training config and the checksum of the
    shape model it depends on."""
    trees_doc = []
    for tree in forest.trees:
        nodes_doc = []
        for node in tree:
            if isinstance(node, Leaf):
                nodes_doc.append({"leaf": {"p": node.p_myo, "n": node.n_train}})
            else:
                nodes_doc.append({"split": {
                    "feature": _feature_doc(node.test.feature, forest.cache),
                    "tau": node.test.tau,
                    "left": node.left,
                    "right": node.right,
                    "n0": node.n0,
                    "n1": node.n1,
                }})
        trees_doc.append(nodes_doc)
    doc = {
        "format": FOREST_FORMAT,
        "version": FOREST_VERSION,
        "sub_w": forest.sub_w,
        "sub_h": forest.sub_h,
        "shape_model_sha256": forest.shape_model_sha256,
        "config": _config_doc(forest.config),
        "trees": trees_doc,
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def load_forest(path, model: ShapeModel) -> Forest:
    """Load a forest and regenerate its SM table cache from the given shape
    model; raises ModelMismatch when the model checksum disagrees."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"cannot read forest from {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FOREST_FORMAT:
        raise IoError(f"{path} is not a forest document")
    if doc.get("version") != FOREST_VERSION:
        raise IoError(f"unsupported forest version {doc.get('version')!r} in {path}")
    sha = model_sha256(model)
    if doc["shape_model_sha256"] != sha:
        raise ModelMismatch(
            f"forest in {path} was trained against shape model"
            f" {doc['shape_model_sha256'][:12]}..., supplied model is {sha[:12]}..."
        )
    cache = SMTableCache(model, doc["sub_w"], doc["sub_h"])
    trees = []
    for nodes_doc in doc["trees"]:
        tree = []
        for nd in nodes_doc:
            if "leaf" in nd:
                tree.append(Leaf(p_myo=nd["leaf"]["p"], n_train=nd["leaf"]["n"]))
            else:
                sp = nd["split"]
                tree.append(Split(
                    test=SplitTest(feature=_feature_from_doc(sp["feature"], cache),
                                   tau=sp["tau"]),
                    left=sp["left"], right=sp["right"], n0=sp["n0"], n1=sp["n1"],
                ))
        trees.append(tree)
    return Forest(trees=trees, config=_config_from_doc(doc["config"]), cache=cache,
                  shape_model_sha256=doc["shape_model_sha256"],
                  sub_w=doc["sub_w"], sub_h=doc["sub_h"])
