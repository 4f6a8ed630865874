import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from sparse_mefm.dafl import BlockSets
from sparse_mefm.errors import DataValidityError, DimensionError
from sparse_mefm.metrics import ReplicationReport, aggregate, block_scores, mse, space_distance


def test_mse_values():
    x = np.random.default_rng(0).standard_normal((5, 3))
    assert mse(x, x) == 0.0
    assert mse(np.zeros((4, 6)), np.ones((4, 6))) == 1.0
    truth = np.array([[[1.0, 2.0], [0.0, -1.0]], [[0.5, 0.5], [3.0, 0.0]]])
    est = np.array([[[1.5, 2.0], [0.0, 0.0]], [[0.5, -0.5], [1.0, 0.0]]])
    # squared errors 0.25 + 1 + 1 + 4 over 8 cells
    assert mse(truth, est) == pytest.approx(6.25 / 8)
    with pytest.raises(DimensionError):
        mse(np.zeros(3), np.zeros(4))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mse_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 3, 4, 5))
    perm = [rng.permutation(n) for n in a.shape]
    pa = a[np.ix_(*perm)]
    pb = b[np.ix_(*perm)]
    assert mse(pa, pb) == pytest.approx(mse(a, b), rel=1e-12)


def test_space_distance_basics():
    rng = np.random.default_rng(1)
    q = rng.standard_normal((10, 2))
    r = rng.standard_normal((2, 2)) + 3 * np.eye(2)
    assert space_distance(q, q @ r) <= 1e-10
    e = np.eye(5)
    assert space_distance(e[:, :1], e[:, 1:2]) == pytest.approx(1.0)
    with pytest.raises(DataValidityError):
        space_distance(np.ones((5, 2)), e[:, :2])
    with pytest.raises(DimensionError):
        space_distance(e[:, :2], np.eye(4)[:, :2])


def test_space_distance_dense_projector_oracle():
    rng = np.random.default_rng(2024)
    q, qh = rng.standard_normal((2, 10, 2))
    proj = lambda a: a @ np.linalg.inv(a.T @ a) @ a.T  # noqa: E731
    ref = np.linalg.svd(proj(q) - proj(qh), compute_uv=False)[0]
    assert space_distance(q, qh) == pytest.approx(ref, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_space_distance_symmetric_and_invariant(seed):
    rng = np.random.default_rng(seed)
    q, qh = rng.standard_normal((2, 8, 3))
    r = rng.standard_normal((3, 3)) + 4 * np.eye(3)
    d = space_distance(q, qh)
    assert 0.0 <= d <= 1.0
    assert space_distance(qh, q) == pytest.approx(d, abs=1e-12)
    assert space_distance(q @ r, qh) == pytest.approx(d, abs=1e-9)


def test_block_scores_examples():
    blocks = [BlockSets.from_mask(np.array([True, False, True, False]))]
    assert block_scores(blocks, np.array([[0.0], [0.5], [0.2], [0.9]])) == (1.0, 0.5)
    mask = np.array([[True, False], [False, False]])
    assert block_scores(mask, np.array([[0.0, 1.0], [2.0, 3.0]])) == (1.0, 1.0)
    assert block_scores(mask, np.ones((2, 2))) == (1.0, 0.0)
    assert block_scores(np.zeros((2, 2), bool), np.ones((2, 2))) == (1.0, None)
    assert block_scores(np.ones((2, 2), bool), np.ones((2, 2))) == (None, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_block_scores_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    est = np.where(rng.random((6, 4)) < 0.4, 0.0, rng.random((6, 4)) + 0.1)
    mask = rng.random((6, 4)) < 0.5
    assert block_scores(mask, c * est) == block_scores(mask, est)


def report(**kw):
    base = dict(mse={"alpha": 0.0}, sensitivity={"alpha": 1.0}, specificity={"alpha": None}, lambdas={"alpha": [0.5, 1.0]})
    base.update(kw)
    return ReplicationReport(**base)


def test_aggregate_single_and_pair():
    s = aggregate([report()])
    assert s["mse_alpha"].mean == 0.0 and math.isnan(s["mse_alpha"].sd) and s["mse_alpha"].n == 1
    assert s["specificity_alpha"].n == 0 and s["specificity_alpha"].n_undefined == 1
    assert s["lambda_alpha_median"].mean == 0.75
    s = aggregate([report(), report(mse={"alpha": 1.0})])
    assert s["mse_alpha"].mean == 0.5
    assert s["mse_alpha"].sd == pytest.approx(np.sqrt(0.5))
    assert s["mse_alpha"].median == 0.5
    with pytest.raises(ValueError):
        aggregate([])


def test_report_round_trip_and_order():
    r = report(mse={"beta": 2.0, "alpha": 1.0}, space_distance={"row": 0.1})
    r2 = ReplicationReport.from_dict(r.to_dict())
    assert r2 == r
    assert list(r.flat())[:3] == ["mse_alpha", "mse_beta", "dist_row"]
    assert_allclose(r2.flat()["mse_beta"], 2.0)
