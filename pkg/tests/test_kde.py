import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from repsketch.errors import InputError
from repsketch.kde import KernelConfig, WeightedPoint, batch_kde, exact_root_kde, exact_weighted_kde
from repsketch.lsh import Family, LshFamilyConfig


def naive_kde(q, X, alpha, r, K=1, root=False):
    """Plain double loop with the kernel written out from its closed form."""
    total = 0.0
    for x, a in zip(X, alpha):
        c = math.sqrt(sum((qi - xi) ** 2 for qi, xi in zip(q, x)))
        if c == 0:
            k = 1.0
        else:
            s = r / c
            phi = 0.5 * math.erfc(s / math.sqrt(2))
            k = 1 - 2 * phi - (2 / (math.sqrt(2 * math.pi) * s)) * (1 - math.exp(-s * s / 2))
        k = k ** K
        total += a * (math.sqrt(k) if root else k)
    return total


def kern(d, r=1.0, K=1, family=Family.L2PStable):
    return KernelConfig(LshFamilyConfig(family, d, r), K)


def test_empty_set_is_zero():
    assert exact_weighted_kde(np.zeros(3), [], kern(3)) == 0.0
    assert exact_root_kde(np.zeros(3), [], kern(3)) == 0.0


def test_single_point_at_query():
    pts = [WeightedPoint([1.0, 2.0], 3.5)]
    assert exact_weighted_kde([1.0, 2.0], pts, kern(2)) == 3.5
    assert exact_root_kde([1.0, 2.0], pts, kern(2)) == 3.5


@pytest.mark.parametrize("K", [1, 2, 3])
def test_against_naive_double_loop(K):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((10, 4))
    alpha = rng.uniform(-1, 2, 10)
    pts = [WeightedPoint(x, a) for x, a in zip(X, alpha)]
    for q in rng.standard_normal((5, 4)):
        assert abs(exact_weighted_kde(q, pts, kern(4, 1.3, K)) - naive_kde(q, X, alpha, 1.3, K)) < 1e-12
        assert abs(exact_root_kde(q, pts, kern(4, 1.3, K)) - naive_kde(q, X, alpha, 1.3, K, root=True)) < 1e-12


def test_batch_matches_single():
    rng = np.random.default_rng(1)
    X, alpha, Q = rng.standard_normal((30, 3)), rng.uniform(0, 1, 30), rng.standard_normal((7, 3))
    pts = [WeightedPoint(x, a) for x, a in zip(X, alpha)]
    b = batch_kde(Q, X, alpha, kern(3, 2.0))
    for q, v in zip(Q, b):
        assert abs(v - exact_weighted_kde(q, pts, kern(3, 2.0))) < 1e-12


def test_projection_is_applied_to_query():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((6, 2))
    X, alpha = rng.standard_normal((8, 2)), rng.uniform(0, 1, 8)
    pts = [WeightedPoint(x, a) for x, a in zip(X, alpha)]
    q = rng.standard_normal(6)
    assert abs(exact_weighted_kde(q, pts, kern(2), projection=A) - exact_weighted_kde(q @ A, pts, kern(2))) < 1e-12


def test_sign_family_kernel():
    pts = [WeightedPoint([1.0, 0.0], 2.0), WeightedPoint([0.0, 1.0], 1.0)]
    assert abs(exact_weighted_kde([3.0, 0.0], pts, kern(2, family=Family.SignProjection)) - 2.5) < 1e-12


def test_rejects_bad_points():
    with pytest.raises(InputError):
        WeightedPoint([1.0, float("inf")], 1.0)
    with pytest.raises(InputError):
        WeightedPoint([1.0], float("nan"))
    with pytest.raises(InputError):
        exact_weighted_kde([0.0, 0.0], [WeightedPoint([1.0, 2.0, 3.0], 1.0)], kern(2))


finite = st.floats(-10, 10)


@given(arrays(np.float64, (6, 3), elements=finite), arrays(np.float64, 6, elements=st.floats(0, 5)),
       arrays(np.float64, 3, elements=finite), st.floats(0.1, 10))
def test_bounds_and_root_dominance(X, alpha, q, r):
    pts = [WeightedPoint(x, a) for x, a in zip(X, alpha)]
    f = exact_weighted_kde(q, pts, kern(3, r))
    ft = exact_root_kde(q, pts, kern(3, r))
    assert -1e-12 <= f <= alpha.sum() + 1e-9
    assert ft >= f - 1e-12


@given(arrays(np.float64, (5, 2), elements=finite), arrays(np.float64, 5, elements=st.floats(-3, 3)),
       arrays(np.float64, 2, elements=finite), st.floats(-4, 4))
def test_linear_in_weights(X, alpha, q, s):
    k = kern(2, 1.5)
    f = exact_weighted_kde(q, [WeightedPoint(x, a) for x, a in zip(X, alpha)], k)
    fs = exact_weighted_kde(q, [WeightedPoint(x, s * a) for x, a in zip(X, alpha)], k)
    assert abs(fs - s * f) <= 1e-9 * (1 + abs(s) * np.abs(alpha).sum())


@given(arrays(np.float64, 3, elements=finite), arrays(np.float64, 3, elements=finite))
def test_symmetry(x, y):
    k = kern(3, 2.0)
    assert exact_weighted_kde(x, [WeightedPoint(y, 1.0)], k) == pytest.approx(
        exact_weighted_kde(y, [WeightedPoint(x, 1.0)], k), abs=1e-15)
