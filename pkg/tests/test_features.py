import numpy as np
import pytest

import shapeforest as sf
from shapeforest.errors import ConfigError, InvalidTableId
from shapeforest.features import eval_feature_batch

from oracles import brute_box_mean


@pytest.fixture()
def model():
    rng = np.random.default_rng(101)
    base = rng.uniform(10, 80, (8, 2))
    shapes = [sf.LandmarkSet(base + rng.normal(0, 4, (8, 2))) for _ in range(10)]
    return sf.build_model(shapes)


@pytest.fixture()
def ctx(model):
    rng = np.random.default_rng(7)
    img = sf.Image2D.from_array(rng.uniform(0, 1, (96, 96)))
    cache = sf.SMTableCache(model, 96, 96)
    return sf.EvalContext.for_image(img, cache=cache), img, cache


def test_sm_feature_zero_on_boundary(model):
    # flat model whose mean contour has an edge through pixel center (10.5, y)
    shape = sf.LandmarkSet(np.array([[10.5, 0.0], [10.5, 30.0], [25.0, 15.0]]))
    flat = sf.build_model([shape, shape, shape])
    assert flat.K == 0
    cache = sf.SMTableCache(flat, 32, 32)
    tid = cache.register(sf.ShapeParams(np.zeros(0)))
    img = sf.Image2D.from_array(np.zeros((32, 32)))
    ctx = sf.EvalContext.for_image(img, cache=cache)
    val = sf.eval_feature(sf.SMFeature(tid), (10, 15), ctx)
    assert val == 0.0


def test_box_diff_identical_boxes_zero(ctx):
    context, _, _ = ctx
    spec = sf.BoxSpec(dx=3, dy=-2, w=5, h=7)
    feat = sf.BoxDiff(spec, spec)
    rng = np.random.default_rng(11)
    for _ in range(10):
        pixel = (int(rng.integers(0, 96)), int(rng.integers(0, 96)))
        assert sf.eval_feature(feat, pixel, context) == 0.0


def test_box_mean_matches_brute_force():
    rng = np.random.default_rng(42)
    arr = rng.uniform(0, 1, (8, 8))
    img = sf.Image2D.from_array(arr)
    context = sf.EvalContext.for_image(img)
    for _ in range(5):
        px, py = (int(v) for v in rng.integers(0, 8, 2))
        dx, dy = (int(v) for v in rng.integers(-4, 5, 2))
        w, h = (int(v) for v in rng.integers(1, 6, 2))
        feat = sf.BoxMean(sf.BoxSpec(dx=dx, dy=dy, w=w, h=h))
        got = sf.eval_feature(feat, (px, py), context)
        x0 = px + dx - w // 2
        y0 = py + dy - h // 2
        ref = brute_box_mean(arr, x0, y0, x0 + w - 1, y0 + h - 1)
        assert abs(got - ref) < 1e-12


def test_apply_test_strict_inequality(ctx):
    context, _, _ = ctx
    feat = sf.Position(sf.Axis.X)
    val = sf.eval_feature(feat, (17, 3), context)
    assert val == 17.0
    assert sf.apply_test(sf.SplitTest(feat, tau=17.0), (17, 3), context) is sf.Branch.RIGHT
    assert sf.apply_test(sf.SplitTest(feat, tau=16.999), (17, 3), context) is sf.Branch.LEFT


def test_apply_test_always_left_with_sentinel(model, ctx):
    context, _, cache = ctx
    rng = np.random.default_rng(5)
    tid = cache.register(sf.sample_params(model, rng))
    test = sf.SplitTest(sf.SMFeature(tid), tau=-1e18)
    for _ in range(10):
        pixel = (int(rng.integers(0, 96)), int(rng.integers(0, 96)))
        assert sf.apply_test(test, pixel, context) is sf.Branch.LEFT


def test_apply_test_matches_eval(model, ctx):
    context, _, cache = ctx
    rng = np.random.default_rng(13)
    cfg = sf.FeaturePoolConfig(max_offset=20, box_min=1, box_max=9)
    for _ in range(100):
        feat = sf.sample_feature(rng, cfg, model, cache)
        pixel = (int(rng.integers(0, 96)), int(rng.integers(0, 96)))
        tau = float(rng.normal(0, 1))
        got = sf.apply_test(sf.SplitTest(feat, tau), pixel, context)
        expect = sf.Branch.LEFT if sf.eval_feature(feat, pixel, context) > tau else sf.Branch.RIGHT
        assert got is expect


def test_sample_feature_families(model):
    cache = sf.SMTableCache(model, 96, 96)
    rng = np.random.default_rng(3)
    cfg = sf.FeaturePoolConfig(weights=(0.0, 0.0, 0.0, 1.0))
    for _ in range(20):
        assert isinstance(sf.sample_feature(rng, cfg, model, cache), sf.SMFeature)

    r1, r2 = np.random.default_rng(4), np.random.default_rng(4)
    c1 = sf.SMTableCache(model, 96, 96)
    c2 = sf.SMTableCache(model, 96, 96)
    cfg = sf.FeaturePoolConfig()
    seq1 = [sf.sample_feature(r1, cfg, model, c1) for _ in range(50)]
    seq2 = [sf.sample_feature(r2, cfg, model, c2) for _ in range(50)]
    for f1, f2 in zip(seq1, seq2):
        assert type(f1) is type(f2)
        if isinstance(f1, sf.SMFeature):
            assert np.array_equal(c1.params(f1.table_id).b, c2.params(f2.table_id).b)
        else:
            assert f1 == f2


def test_sample_feature_frequencies(model):
    cache = sf.SMTableCache(model, 96, 96)
    rng = np.random.default_rng(8)
    cfg = sf.FeaturePoolConfig(weights=(0.4, 0.2, 0.1, 0.3))
    counts = {sf.BoxMean: 0, sf.BoxDiff: 0, sf.Position: 0, sf.SMFeature: 0}
    n = 10_000
    for _ in range(n):
        counts[type(sf.sample_feature(rng, cfg, model, cache))] += 1
    assert abs(counts[sf.BoxMean] / n - 0.4) < 0.02
    assert abs(counts[sf.BoxDiff] / n - 0.2) < 0.02
    assert abs(counts[sf.Position] / n - 0.1) < 0.02
    assert abs(counts[sf.SMFeature] / n - 0.3) < 0.02


def test_sm_feature_image_independent(model):
    rng = np.random.default_rng(23)
    cache = sf.SMTableCache(model, 48, 48)
    tid = cache.register(sf.sample_params(model, rng))
    img1 = sf.Image2D.from_array(rng.uniform(0, 1, (48, 48)))
    img2 = sf.Image2D.from_array(rng.uniform(0, 1, (48, 48)))
    c1 = sf.EvalContext.for_image(img1, cache=cache)
    c2 = sf.EvalContext.for_image(img2, cache=cache)
    xs = rng.integers(0, 48, 30)
    ys = rng.integers(0, 48, 30)
    v1 = eval_feature_batch(sf.SMFeature(tid), xs, ys, c1)
    v2 = eval_feature_batch(sf.SMFeature(tid), xs, ys, c2)
    assert np.array_equal(v1, v2)


def test_sm_tables_lipschitz(model):
    rng = np.random.default_rng(29)
    cache = sf.SMTableCache(model, 64, 64)
    for _ in range(3):
        tid = cache.register(sf.sample_params(model, rng))
        tab = cache.table(tid).array()
        assert np.abs(np.diff(tab, axis=0)).max() <= 1.0 + 1e-9
        assert np.abs(np.diff(tab, axis=1)).max() <= 1.0 + 1e-9


def test_values_at_matches_table(model):
    rng = np.random.default_rng(31)
    cache = sf.SMTableCache(model, 64, 64)
    tid = cache.register(sf.sample_params(model, rng))
    xs = rng.integers(0, 64, 200)
    ys = rng.integers(0, 64, 200)
    lazy = cache.values_at(tid, xs, ys)  # before materialization
    tab = cache.table(tid).array()      # forces materialization
    assert np.array_equal(lazy, tab[ys, xs])
    assert np.array_equal(cache.values_at(tid, xs, ys), tab[ys, xs])


def test_box_diff_shift_invariance(model):
    rng = np.random.default_rng(37)
    arr = rng.uniform(0, 0.5, (32, 32))
    shifted = arr + 0.25
    feat = sf.BoxDiff(sf.BoxSpec(2, 1, 5, 3), sf.BoxSpec(-4, -2, 3, 7))
    c1 = sf.EvalContext.for_image(sf.Image2D.from_array(arr))
    c2 = sf.EvalContext.for_image(sf.Image2D.from_array(shifted))
    for _ in range(20):
        pixel = (int(rng.integers(4, 28)), int(rng.integers(4, 28)))
        v1 = sf.eval_feature(feat, pixel, c1)
        v2 = sf.eval_feature(feat, pixel, c2)
        assert v1 == pytest.approx(v2, abs=1e-12)


def test_invalid_table_id(model, ctx):
    context, _, cache = ctx
    with pytest.raises(InvalidTableId):
        sf.eval_feature(sf.SMFeature(99), (0, 0), context)
    with pytest.raises(InvalidTableId):
        cache.table(0)


def test_pool_config_validation():
    with pytest.raises(ConfigError):
        sf.FeaturePoolConfig(weights=(0.5, 0.5, 0.5, 0.0))
    with pytest.raises(ConfigError):
        sf.FeaturePoolConfig(box_min=5, box_max=3)
    with pytest.raises(ConfigError):
        sf.BoxSpec(0, 0, 0, 3)
