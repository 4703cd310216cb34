import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsgn.sketch import (
    DimensionError,
    ParameterError,
    SketchKind,
    apply_transpose,
    apply_vec,
    column_support,
    draw,
    embedding_trial,
    operator_norm_estimate,
    sampling_matrix,
)

ALL_KINDS = [SketchKind.gaussian(), SketchKind.hashing(1), SketchKind.hashing(3), SketchKind.sampling()]


def test_identity_is_identity():
    S = draw(SketchKind.identity(), 3, 3, 0)
    np.testing.assert_array_equal(S.to_dense(), np.eye(3))
    y = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(apply_vec(S, y), y)
    np.testing.assert_array_equal(apply_transpose(draw("identity", 2, 2, 0), np.array([1.0, 2.0])), [1.0, 2.0])
    assert column_support(S).tolist() == [0, 1, 2]


def test_sampling_one_by_one():
    S = draw(SketchKind.sampling(), 1, 1, 0)
    np.testing.assert_array_equal(S.to_dense(), [[1.0]])


def test_hashing_structure_seed0():
    S = draw(SketchKind.hashing(2), 4, 10, 0)
    M = S.to_dense()
    for j in range(10):
        nz = np.flatnonzero(M[:, j])
        assert nz.size == 2
        np.testing.assert_allclose(np.abs(M[nz, j]), 1 / np.sqrt(2), rtol=0, atol=1e-15)
    # payload: distinct rows per column, sorted by column
    assert np.all(np.diff(S.cols) >= 0)
    for j in range(10):
        assert len(set(S.rows[S.cols == j].tolist())) == 2
    np.testing.assert_allclose(np.linalg.norm(M, axis=0), 1.0, atol=1e-15)
    assert column_support(S) is None


@pytest.mark.parametrize("s,l", [(1, 5), (2, 4), (3, 9), (5, 6), (7, 7)])
def test_hashing_columns_have_s_distinct_rows(s, l):
    S = draw(SketchKind.hashing(s), l, 40, 5)
    M = S.to_dense()
    assert np.all((M != 0).sum(axis=0) == s)
    np.testing.assert_allclose(np.abs(M[M != 0]), 1 / np.sqrt(s), atol=1e-15)


def test_sampling_apply_by_hand():
    S = sampling_matrix([3, 1], 4)
    y = np.array([10.0, 20.0, 30.0, 40.0])
    np.testing.assert_allclose(apply_vec(S, y), np.sqrt(2) * np.array([40.0, 20.0]), rtol=1e-15)
    S1 = sampling_matrix([2], 3)
    np.testing.assert_allclose(apply_transpose(S1, np.array([5.0])), [0.0, 0.0, 5 * np.sqrt(3)], rtol=1e-15)


def test_sampling_structure_and_repeats():
    S = sampling_matrix([7, 7], 10)
    assert column_support(S).tolist() == [7, 7]
    M = draw("sampling", 12, 30, 3).to_dense()
    assert np.all((M != 0).sum(axis=1) == 1)
    np.testing.assert_allclose(M[M != 0], np.sqrt(30 / 12), rtol=1e-15)


def test_sampling_support_only_touched():
    S = sampling_matrix([4, 0, 4], 9)
    out = apply_transpose(S, np.array([1.0, 2.0, 3.0]))
    assert set(np.flatnonzero(out).tolist()) == {0, 4}
    np.testing.assert_allclose(out[4], 4 * np.sqrt(3))


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from(ALL_KINDS + [SketchKind.identity()]),
    d=st.integers(3, 40),
    frac=st.floats(0.1, 1.0),
    seed=st.integers(0, 2**32 - 1),
)
def test_adjoint_identity(kind, d, frac, seed):
    l = d if kind.name == "identity" else max(kind.s, int(round(frac * d)), 1)
    l = min(l, d)
    rng = np.random.default_rng(seed)
    S = draw(kind, l, d, rng)
    s, y = rng.standard_normal(l), rng.standard_normal(d)
    lhs = apply_transpose(S, s) @ y
    rhs = s @ apply_vec(S, y)
    assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(s) * np.linalg.norm(y)
    np.testing.assert_allclose(S.to_dense() @ y, apply_vec(S, y), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("kind", ALL_KINDS + [SketchKind.identity()], ids=str)
def test_determinism(kind):
    l = 6 if kind.name == "identity" else 4
    a, b = draw(kind, l, 6, 99), draw(kind, l, 6, 99)
    np.testing.assert_array_equal(a.to_dense(), b.to_dense())


def test_payload_is_immutable():
    S = draw("hashing:2", 3, 5, 0)
    with pytest.raises(ValueError):
        S.vals[0] = 1.0
    G = draw("gaussian", 3, 5, 0)
    with pytest.raises(ValueError):
        G.dense[0, 0] = 1.0


@pytest.mark.parametrize(
    "kind,l,d,exc",
    [
        ("gaussian", 5, 4, DimensionError),
        ("gaussian", 0, 4, DimensionError),
        ("identity", 3, 4, DimensionError),
        ("hashing:5", 4, 10, ParameterError),
    ],
)
def test_draw_errors(kind, l, d, exc):
    with pytest.raises(exc):
        draw(kind, l, d, 0)


def test_apply_dimension_errors():
    S = draw("sampling", 2, 5, 0)
    with pytest.raises(DimensionError):
        apply_vec(S, np.ones(4))
    with pytest.raises(DimensionError):
        apply_transpose(S, np.ones(5))


def test_kind_parsing():
    assert SketchKind.parse("hashing:3") == SketchKind.hashing(3)
    assert SketchKind.parse("Gaussian") == SketchKind.gaussian()
    assert str(SketchKind.hashing(4)) == "hashing:4"
    with pytest.raises(ParameterError):
        SketchKind.parse("srht")
    with pytest.raises(ParameterError):
        SketchKind.parse("sampling:2")


def test_gaussian_mean_square_norm():
    # E||Sy||^2 = ||y||^2 for N(0, 1/l) entries
    rng = np.random.default_rng(0)
    y = rng.standard_normal(500)
    y /= np.linalg.norm(y)
    vals = [np.sum(apply_vec(draw("gaussian", 50, 500, rng), y) ** 2) for _ in range(1000)]
    assert 0.9 <= np.mean(vals) <= 1.1


@pytest.mark.parametrize("kind", ALL_KINDS, ids=str)
def test_unbiased_norm(kind):
    rng = np.random.default_rng(2024)
    d, l = 40, 10
    y = rng.standard_normal(d)
    y /= np.linalg.norm(y)
    vals = np.array([np.sum(draw(kind, l, d, rng).apply(y) ** 2) for _ in range(10_000)])
    se = vals.std(ddof=1) / np.sqrt(vals.size)
    assert abs(vals.mean() - 1.0) <= 3 * se


def test_norm_estimates():
    assert abs(operator_norm_estimate(draw("identity", 7, 7, 0), 100) - 1.0) <= 1e-8
    S = sampling_matrix([1, 5], 8)
    assert abs(operator_norm_estimate(S, 100) - 2.0) <= 1e-6
    H = draw("hashing:1", 5, 30, 1)
    assert operator_norm_estimate(H, 100) >= 1.0 - 1e-12


def test_norm_estimate_is_lower_bound_and_converges():
    G = draw("gaussian", 20, 60, 4)
    exact = np.linalg.norm(G.to_dense(), 2)
    est = operator_norm_estimate(G, 200)
    assert est <= exact * (1 + 1e-12)
    assert est >= exact * (1 - 1e-6)
    with pytest.raises(ParameterError):
        operator_norm_estimate(G, 0)


def test_embedding_identity_never_fails():
    assert embedding_trial("identity", 30, 30, 0.1, 50, 0) == 0.0


def test_embedding_sampling_matches_closed_form():
    # P(||Sy||^2 < (1-eps)) for y = e_1 is P(coordinate 0 never drawn) = (1 - 1/d)^l
    d, l = 100, 25
    expected = (1 - 1 / d) ** l
    rate = embedding_trial("sampling", l, d, 0.5, 10_000, 7, y=np.eye(d)[0], one_sided=True)
    assert abs(rate - expected) <= 0.05


def test_embedding_sampling_two_sided_fails_for_spike():
    # a sampled spike has ||Sy||^2 = (d/l) k, never within (1 +- eps) for eps < 1 when d/l = 4
    assert embedding_trial("sampling", 25, 100, 0.5, 200, 0, y=np.eye(100)[0]) == 1.0


def test_sampling_nonuniformity_sensitivity():
    d, l = 100, 25
    spike = embedding_trial("sampling", l, d, 0.3, 2000, 1, y=np.eye(d)[0])
    flat = embedding_trial("sampling", l, d, 0.3, 2000, 1, y=np.ones(d) / np.sqrt(d))
    assert spike > flat


def test_embedding_argument_checks():
    with pytest.raises(ParameterError):
        embedding_trial("gaussian", 3, 5, 1.5, 10, 0)
    with pytest.raises(ParameterError):
        embedding_trial("gaussian", 3, 5, 0.5, 0, 0)
