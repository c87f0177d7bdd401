import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from repsketch.distill import (
    DistillConfig, KernelModel, Task, batch_gradients, decide, deserialize_model, export_points, fit,
    import_points, kernel_gradients, load_model, mse, predict, predict_batch, save_model, select_bandwidth,
    serialize_model, to_sketch, train, BANDWIDTH_GRID, median_pairwise_distance,
)
from repsketch.errors import ConfigError, FormatError, InputError, TrainingError
from repsketch.kde import KernelConfig, exact_weighted_kde
from repsketch.lsh import Family, LshFamilyConfig
from repsketch.sketch import query_mean


def kern(d, r=1.0, K=1, family=Family.L2PStable):
    return KernelConfig(LshFamilyConfig(family, d, r), K)


def random_model(rng, M=5, d=3, p=None, K=1, r=1.5):
    if p is None:
        return KernelModel(rng.standard_normal((M, d)), rng.standard_normal(M), kern(d, r, K))
    return KernelModel(rng.standard_normal((M, p)), rng.standard_normal(M), kern(p, r, K),
                       rng.standard_normal((d, p)) / np.sqrt(d))


def loss(model, Q, y):
    return float(np.mean((predict_batch(model, Q) - y) ** 2))


def finite_difference(model, Q, y, h=1e-5):
    """Central differences of the batch MSE with respect to every parameter."""
    out = []
    for arr in (model.alphas, model.points, model.projection):
        if arr is None:
            out.append(None)
            continue
        g = np.zeros_like(arr)
        for i in np.ndindex(arr.shape):
            old = arr[i]
            arr[i] = old + h
            up = loss(model, Q, y)
            arr[i] = old - h
            down = loss(model, Q, y)
            arr[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_rel_err(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.mark.parametrize("p,K", [(None, 1), (None, 3), (2, 1), (2, 2)])
def test_gradients_match_finite_differences(p, K):
    rng = np.random.default_rng(0 if p is None else 1)
    for _ in range(5):
        model = random_model(rng, p=p, K=K)
        Q, y = rng.standard_normal((4, 3)), rng.standard_normal(4)
        g = batch_gradients(model, Q, y)
        fd = finite_difference(model, Q, y)
        assert max_rel_err(g.alphas, fd[0]) < 1e-4
        assert max_rel_err(g.points, fd[1]) < 1e-4
        if p is not None:
            assert max_rel_err(g.projection, fd[2]) < 1e-4
        assert g.loss == pytest.approx(loss(model, Q, y), rel=1e-12)


def test_single_example_gradient_matches_batch():
    rng = np.random.default_rng(2)
    model = random_model(rng)
    q = rng.standard_normal(3)
    a, b = kernel_gradients(model, q, 0.7), batch_gradients(model, q[None], np.array([0.7]))
    assert np.array_equal(a.alphas, b.alphas) and np.array_equal(a.points, b.points)


def test_point_at_query_has_zero_position_gradient():
    model = KernelModel(np.array([[1.0, 2.0]]), np.array([0.5]), kern(2))
    g = kernel_gradients(model, np.array([1.0, 2.0]), 3.0)
    assert np.all(g.points == 0.0)
    assert g.alphas[0] == pytest.approx(2 * (0.5 - 3.0))


def test_far_point_has_negligible_gradient():
    model = KernelModel(np.array([[0.0, 0.0], [1e6, 0.0]]), np.array([0.5, 0.5]), kern(2))
    g = kernel_gradients(model, np.zeros(2), 1.0)
    assert abs(g.alphas[1]) < 1e-6 and np.all(np.abs(g.points[1]) < 1e-9)


def test_predict_examples():
    model = KernelModel(np.zeros((3, 2)), np.zeros(3), kern(2))
    assert predict(model, np.array([5.0, 1.0])) == 0.0
    rng = np.random.default_rng(3)
    model = random_model(rng)
    q = rng.standard_normal(3)
    assert abs(predict(model, q) - exact_weighted_kde(q, export_points(model), model.kernel)) < 1e-12
    with pytest.raises(InputError):
        predict(model, np.zeros(4))


def test_identity_projection_matches_no_projection():
    rng = np.random.default_rng(4)
    m = random_model(rng)
    mp = KernelModel(m.points, m.alphas, m.kernel, np.eye(3))
    Q = rng.standard_normal((10, 3))
    assert np.max(np.abs(predict_batch(m, Q) - predict_batch(mp, Q))) < 1e-12


def test_zero_teacher_is_a_fixed_point():
    rng = np.random.default_rng(5)
    Q = rng.standard_normal((40, 2))
    init = KernelModel(Q[:4].copy(), np.zeros(4), kern(2))
    res = train((Q, np.zeros(40)), DistillConfig(num_points_M=4, epochs=3), kern(2), init=init)
    assert np.array_equal(res.model.alphas, np.zeros(4))
    assert np.array_equal(res.model.points, Q[:4])
    assert res.train_loss == [0.0] * 4


def test_training_is_seed_deterministic():
    rng = np.random.default_rng(6)
    Q = rng.standard_normal((100, 3))
    y = np.sin(Q[:, 0])
    cfg = DistillConfig(num_points_M=8, projected_dim=2, epochs=5, batch_size=16, seed=9)
    a, b = fit((Q, y), cfg, kern(2)), fit((Q, y), cfg, kern(2))
    assert a == b
    assert serialize_model(a) == serialize_model(b)


def test_training_reduces_loss():
    rng = np.random.default_rng(7)
    Q = rng.uniform(-2, 2, (400, 2))
    y = np.exp(-np.sum(Q**2, axis=1))
    res = train((Q, y), DistillConfig(num_points_M=20, epochs=30, batch_size=32, learning_rate=0.05), kern(2, 2.0))
    assert res.train_loss[-1] < 0.2 * res.train_loss[0]
    assert len(res.train_loss) == 31


def test_adam_optimizer_trains():
    rng = np.random.default_rng(8)
    Q = rng.uniform(-2, 2, (300, 2))
    y = np.exp(-np.sum(Q**2, axis=1))
    res = train((Q, y), DistillConfig(num_points_M=10, epochs=20, optimizer="adam", learning_rate=0.01), kern(2, 2.0))
    assert res.train_loss[-1] < 0.5 * res.train_loss[0]


def test_divergence_raises_training_error():
    rng = np.random.default_rng(9)
    Q = rng.standard_normal((50, 2))
    with pytest.raises(TrainingError) as exc:
        train((Q, 1e150 * np.ones(50)), DistillConfig(num_points_M=3, epochs=5, learning_rate=1e10), kern(2))
    assert exc.value.epoch >= 1


def test_bad_training_inputs():
    with pytest.raises(InputError):
        train((np.zeros((0, 2)), np.zeros(0)), DistillConfig(), kern(2))
    with pytest.raises(InputError):
        train((np.zeros((3, 2)), np.zeros(2)), DistillConfig(), kern(2))
    with pytest.raises(ConfigError):
        train((np.zeros((3, 2)), np.zeros(3)), DistillConfig(), kern(2, family=Family.SignProjection))
    with pytest.raises(ConfigError):
        DistillConfig(optimizer="rmsprop")


def test_select_bandwidth_picks_from_grid():
    rng = np.random.default_rng(10)
    Q = rng.standard_normal((120, 2))
    y = (Q[:, 0] > 0).astype(float)
    cfg = DistillConfig(num_points_M=6, epochs=3)
    best, scores = select_bandwidth((Q[:100], y[:100]), cfg, kern(2), (Q[100:], y[100:]))
    med = median_pairwise_distance(Q[:100], cfg.seed)
    assert sorted(scores) == pytest.approx([m * med for m in BANDWIDTH_GRID])
    assert scores[best] == min(scores.values())


def test_decide():
    assert decide(0.7, "classification") == 1
    assert decide(0.5, "classification") == 1
    assert decide(0.49, Task.BinaryClassification) == 0
    assert decide(-0.2, "classification", "sign") == 0
    assert decide(0.0, "classification", "sign") == 1
    assert decide(3.25, "regression") == 3.25
    assert list(decide(np.array([0.2, 0.9]), "classification")) == [0, 1]
    with pytest.raises(ConfigError):
        decide(0.3, "classification", "logit")


def test_export_import_roundtrip():
    m = KernelModel(np.array([[1.0, -2.0]]), np.array([0.75]), kern(2))
    back = import_points(export_points(m), m.kernel)
    assert back == m


@pytest.mark.parametrize("p", [None, 2])
def test_model_file_roundtrip(tmp_path, p):
    m = random_model(np.random.default_rng(11), M=7, d=4, p=p, K=2)
    path = tmp_path / "m.rkm"
    save_model(m, path)
    blob = path.read_bytes()
    back = load_model(path)
    assert back == m
    assert serialize_model(back) == blob


@pytest.mark.parametrize("fmt,offset,value", [
    ("<4s", 0, b"NOPE"), ("<I", 4, 2), ("<I", 8, 0), ("<I", 12, 0), ("<I", 20, 0), ("<B", 24, 9),
    ("<d", 36, 0.0),
])
def test_model_corrupted_header_offsets(fmt, offset, value):
    b = bytearray(serialize_model(random_model(np.random.default_rng(12))))
    struct.pack_into(fmt, b, offset, value)
    with pytest.raises(FormatError) as exc:
        deserialize_model(bytes(b))
    assert exc.value.offset == offset


def test_model_truncated_and_trailing():
    blob = serialize_model(random_model(np.random.default_rng(13)))
    with pytest.raises(FormatError) as exc:
        deserialize_model(blob[:-3])
    assert exc.value.offset == len(blob) - 3
    with pytest.raises(FormatError) as exc:
        deserialize_model(blob + b"xx")
    assert exc.value.offset == len(blob)


def test_to_sketch_self_query():
    m = KernelModel(np.array([[0.0, 0.0]]), np.array([2.5]), kern(2))
    sk = to_sketch(m, 10, 50, master_seed=3)
    assert query_mean(sk, np.zeros(2)).value == 2.5
    assert sk.params_count == 500


@given(st.integers(1, 6), st.integers(1, 4), st.booleans(), st.integers(0, 2**32))
def test_model_roundtrip_property(M, d, proj, seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, M=M, d=d, p=(2 if proj else None))
    blob = serialize_model(m)
    assert serialize_model(deserialize_model(blob)) == blob


def test_loss_descent_on_synthetic_benchmark():
    from scipy.stats import multivariate_normal
    from repsketch.distill import median_pairwise_distance

    rng = np.random.default_rng(21)
    centers = np.array([[1.5, 1.5], [-1.5, -1.5], [1.5, -1.5], [-1.5, 1.5]])
    X = centers[rng.integers(0, 4, 2000)] + rng.standard_normal((2000, 2))
    dens = np.stack([multivariate_normal(c, np.eye(2)).pdf(X) for c in centers], axis=1)
    y = dens[:, :2].sum(axis=1) / dens.sum(axis=1)
    kernel = kern(2, median_pairwise_distance(X))
    res = train((X, y), DistillConfig(num_points_M=200, seed=21), kernel)
    steps = np.diff(res.train_loss)
    assert np.mean(steps <= 0) >= 0.95
    assert res.train_loss[-1] < res.train_loss[0]
