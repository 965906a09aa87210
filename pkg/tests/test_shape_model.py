import numpy as np
import pytest

import shapeforest as sf
from shapeforest.errors import (
    DimensionMismatch,
    EmptyTrainingSet,
    InconsistentLandmarkCount,
)

from oracles import pca_oracle


def random_shapes(rng, n, M=10, spread=5.0):
    base = rng.uniform(0, 50, (M, 2))
    return [sf.LandmarkSet(base + rng.normal(0, spread, (M, 2))) for _ in range(n)]


def test_identical_shapes_zero_variance():
    shape = sf.LandmarkSet(np.array([[0, 0], [4, 0], [4, 4], [0, 4]], float))
    model = sf.build_model([shape] * 5)
    assert model.K == 0
    assert np.allclose(model.mean, shape.vector)


def test_two_shape_closed_form():
    rng = np.random.default_rng(0)
    a = sf.LandmarkSet(rng.uniform(0, 10, (6, 2)))
    b = sf.LandmarkSet(a.points + rng.normal(0, 2, (6, 2)))
    model = sf.build_model([a, b], p_var=0.99, K_cap=16, s=2.0)
    diff = b.vector - a.vector
    assert model.K == 1
    assert model.eigenvalues[0] == pytest.approx(np.dot(diff, diff) / 2.0, rel=1e-12)
    mode = model.modes[:, 0]
    unit = diff / np.linalg.norm(diff)
    assert min(np.abs(mode - unit).max(), np.abs(mode + unit).max()) < 1e-12


def test_pca_matches_eig_oracle():
    rng = np.random.default_rng(19)
    shapes = random_shapes(rng, 20, M=12)
    model = sf.build_model(shapes, p_var=0.99, K_cap=16, s=2.0)
    X = np.stack([s.vector for s in shapes])
    mean_o, lam_o, _ = pca_oracle(X)
    assert np.allclose(model.mean, mean_o)
    total = lam_o[lam_o > 0].sum()
    frac_model = model.eigenvalues / total
    frac_oracle = lam_o[: model.K] / total
    assert np.abs(frac_model - frac_oracle).max() < 1e-8
    # K honors the p_var rule against the oracle spectrum
    cum = np.cumsum(lam_o) / total
    k_rule = int(np.searchsorted(cum, 0.99 - 1e-15) + 1)
    assert model.K == min(16, k_rule)


def test_mode_orthonormality_and_order():
    rng = np.random.default_rng(29)
    model = sf.build_model(random_shapes(rng, 15, M=8))
    gram = model.modes.T @ model.modes
    assert np.abs(gram - np.eye(model.K)).max() < 1e-9
    assert np.all(np.diff(model.eigenvalues) <= 1e-12)
    assert np.all(model.eigenvalues >= 0)
    assert model.K <= min(2 * model.M, 15 - 1)


def test_generate_zero_is_mean():
    rng = np.random.default_rng(31)
    model = sf.build_model(random_shapes(rng, 6))
    out = sf.generate_shape(model, sf.ShapeParams(np.zeros(model.K)))
    assert np.allclose(out.vector, model.mean)


def test_generate_two_shape_on_line():
    rng = np.random.default_rng(2)
    a = sf.LandmarkSet(rng.uniform(0, 10, (5, 2)))
    b = sf.LandmarkSet(a.points + rng.normal(0, 1.5, (5, 2)))
    model = sf.build_model([a, b])
    out = sf.generate_shape(model, sf.ShapeParams(np.array([np.sqrt(model.eigenvalues[0])])))
    # mean + mode*sqrt(lambda) lies on the line through the two training
    # shapes, sqrt(lambda_1) = |B-A|/sqrt(2) away from the mean
    diff = b.vector - a.vector
    unit = diff / np.linalg.norm(diff)
    dev = out.vector - model.mean
    perp = dev - np.dot(dev, unit) * unit
    assert np.linalg.norm(perp) < 1e-9
    assert np.linalg.norm(dev) == pytest.approx(np.linalg.norm(diff) / np.sqrt(2))


def test_generate_project_roundtrip():
    rng = np.random.default_rng(37)
    model = sf.build_model(random_shapes(rng, 12))
    b0 = sf.sample_params(model, rng)
    shape = sf.generate_shape(model, b0)
    b1, residual = sf.project_shape(model, shape)
    assert np.abs(b1.b - b0.b).max() < 1e-9
    assert residual < 1e-9


def test_project_mean_zero():
    rng = np.random.default_rng(41)
    model = sf.build_model(random_shapes(rng, 9))
    b, residual = sf.project_shape(model, model.mean_shape())
    assert np.abs(b.b).max() < 1e-12
    assert residual < 1e-12


def test_full_rank_reconstructs_training():
    rng = np.random.default_rng(43)
    shapes = random_shapes(rng, 7, M=6)
    model = sf.build_model(shapes, p_var=1.0, K_cap=100)
    for shp in shapes:
        _, residual = sf.project_shape(model, shp)
        assert residual < 1e-8


def test_reconstruction_error_budget():
    rng = np.random.default_rng(47)
    shapes = random_shapes(rng, 25, M=10)
    model = sf.build_model(shapes, p_var=0.99, K_cap=16)
    X = np.stack([s.vector for s in shapes])
    total_var = ((X - X.mean(0)) ** 2).sum() / (len(shapes) - 1)
    sq = 0.0
    for shp in shapes:
        _, residual = sf.project_shape(model, shp)
        sq += residual**2
    assert sq / (len(shapes) - 1) <= 0.01 * total_var + 1e-12


def test_sample_params():
    rng = np.random.default_rng(53)
    model = sf.build_model(random_shapes(rng, 10))
    empty_model = sf.build_model([model.mean_shape()] * 3)
    assert sf.sample_params(empty_model, rng).K == 0

    draws = np.stack([sf.sample_params(model, rng).b for _ in range(100_000)])
    half = model.bounds()
    assert np.all(np.abs(draws) <= half[None, :])
    sigma = 2 * half[0] / np.sqrt(12)
    assert abs(draws[:, 0].mean()) < 3 * sigma / np.sqrt(len(draws))

    r1 = np.random.default_rng(99)
    r2 = np.random.default_rng(99)
    assert np.array_equal(sf.sample_params(model, r1).b, sf.sample_params(model, r2).b)


def test_build_model_errors():
    shape = sf.LandmarkSet(np.array([[0, 0], [1, 0], [0, 1]], float))
    with pytest.raises(EmptyTrainingSet):
        sf.build_model([shape])
    other = sf.LandmarkSet(np.array([[0, 0], [1, 0], [0, 1], [1, 1]], float))
    with pytest.raises(InconsistentLandmarkCount):
        sf.build_model([shape, other])


def test_dimension_mismatches():
    rng = np.random.default_rng(59)
    model = sf.build_model(random_shapes(rng, 5))
    with pytest.raises(DimensionMismatch):
        sf.generate_shape(model, sf.ShapeParams(np.zeros(model.K + 1)))
    with pytest.raises(DimensionMismatch):
        sf.project_shape(model, sf.LandmarkSet(np.zeros((model.M + 1, 2))))


def test_model_serialization_roundtrip(tmp_path):
    rng = np.random.default_rng(61)
    model = sf.build_model(random_shapes(rng, 8))
    path = tmp_path / "model.json"
    sf.save_model(model, path)
    back = sf.load_model(path)
    assert back.M == model.M and back.K == model.K
    assert np.array_equal(back.mean, model.mean)
    assert np.array_equal(back.modes, model.modes)
    assert np.array_equal(back.eigenvalues, model.eigenvalues)
    assert sf.model_sha256(back) == sf.model_sha256(model)


def test_landmark_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(67)
    shapes = random_shapes(rng, 4, M=7)
    path = tmp_path / "lm.csv"
    sf.write_landmarks(shapes, path, key_indices=(0, 2, 4, 6))
    back, keys = sf.read_landmarks(path)
    assert keys == (0, 2, 4, 6)
    for a, b in zip(shapes, back):
        assert np.array_equal(a.points, b.points)
