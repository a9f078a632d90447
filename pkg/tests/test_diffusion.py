import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from grae import diffusion
from grae.datasets import make_swiss_roll
from grae.diffusion import (
    DiffusionError,
    alpha_decay_kernel,
    build_diffusion_model,
    conjugate_spectrum,
    knee_second_difference,
    knee_two_segment,
    knn_bandwidths,
    matrix_power,
    potential_distances,
    row_normalize,
    select_t,
    von_neumann_entropy,
    vne_curve,
)
from grae.numerics import pairwise_distances, pairwise_sq_distances


@pytest.fixture(scope="module")
def roll_model():
    ds = make_swiss_roll(100, 0)
    return build_diffusion_model(ds.features, knn_k=5, decay_alpha=40.0, t_max=100)


def test_bandwidths_collinear():
    x = np.array([[0.0], [1.0], [3.0]])
    np.testing.assert_allclose(knn_bandwidths(pairwise_sq_distances(x), 1), [1, 1, 2])


def test_bandwidths_k_is_n_minus_1(rng):
    x = rng.normal(size=(7, 2))
    d = pairwise_distances(x)
    np.testing.assert_allclose(knn_bandwidths(d**2, 6), d.max(axis=1))


def test_bandwidths_match_sort(rng):
    x = rng.normal(size=(20, 3))
    d = pairwise_distances(x)
    expected = np.sort(d, axis=1)[:, 5]  # column 0 is the point itself
    np.testing.assert_allclose(knn_bandwidths(d**2, 5), expected, rtol=1e-12)


def test_bandwidths_duplicates_warn():
    x = np.array([[0.0], [0.0], [1.0], [3.0]])
    with pytest.warns(RuntimeWarning, match="zero bandwidth"):
        s = knn_bandwidths(pairwise_sq_distances(x), 1)
    assert np.all(s > 0)
    np.testing.assert_allclose(s, [1.0, 1.0, 1.0, 2.0])


def test_bandwidths_k_out_of_range():
    with pytest.raises(DiffusionError):
        knn_bandwidths(np.zeros((3, 3)), 3)
    with pytest.raises(DiffusionError):
        knn_bandwidths(np.zeros((3, 3)), 0)


def test_kernel_zero_distance_is_one():
    k = alpha_decay_kernel(np.zeros((2, 2)), [1.0, 2.0], 40.0)
    np.testing.assert_array_equal(k, np.ones((2, 2)))


@pytest.mark.parametrize("alpha", [0.5, 2.0, 40.0])
def test_kernel_at_bandwidth_is_inverse_e(alpha):
    d2 = np.array([[0.0, 4.0], [4.0, 0.0]])
    k = alpha_decay_kernel(d2, [2.0, 2.0], alpha)
    assert k[0, 1] == pytest.approx(math.exp(-1), abs=1e-15)


def test_kernel_large_alpha_inside_bandwidth():
    d2 = np.array([[0.0, 0.81], [0.81, 0.0]])
    k = alpha_decay_kernel(d2, [1.0, 1.0], 200.0)
    assert abs(k[0, 1] - 1.0) < 1e-6


def test_kernel_matches_direct_formula(rng):
    x = rng.normal(size=(9, 2))
    d = pairwise_distances(x)
    s = knn_bandwidths(d**2, 3)
    a = 2.5
    direct = 0.5 * np.exp(-((d / s[:, None]) ** a)) + 0.5 * np.exp(-((d / s[None, :]) ** a))
    np.testing.assert_allclose(alpha_decay_kernel(d**2, s, a), direct, rtol=1e-12, atol=1e-300)


def test_kernel_rejects_bad_params():
    with pytest.raises(DiffusionError):
        alpha_decay_kernel(np.zeros((2, 2)), [1, 1], 0.0)
    with pytest.raises(DiffusionError):
        alpha_decay_kernel(np.zeros((2, 2)), [1, 0], 2.0)


def test_row_normalize_examples(rng):
    np.testing.assert_allclose(row_normalize(np.ones((2, 2))), 0.5)
    np.testing.assert_array_equal(row_normalize(np.eye(4)), np.eye(4))
    p = row_normalize(rng.random((6, 6)) + 0.01)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_row_normalize_isolated_point():
    k = np.eye(3)
    k[1, 1] = 0.0
    with pytest.raises(DiffusionError, match="isolated point"):
        row_normalize(k)


def test_vne_uniform_and_point_mass():
    for t in (1, 3, 10):
        assert von_neumann_entropy([1, 1, 1, 1], t) == pytest.approx(math.log(4), abs=1e-12)
        assert von_neumann_entropy([1, 0, 0, 0], t) == 0.0


def test_vne_direct_evaluation():
    w = np.array([1.0, 0.25, 0.0625])
    mu = w / w.sum()
    expected = float(-np.sum(mu * np.log(mu)))
    assert von_neumann_entropy([1, 0.5, 0.25], 2) == pytest.approx(expected, abs=1e-14)
    assert expected == pytest.approx(0.6680178186607535, abs=1e-14)


def test_vne_all_zero_errors():
    with pytest.raises(DiffusionError):
        von_neumann_entropy([0.0, -0.5], 1)


@given(arrays(np.float64, st.integers(2, 30), elements=st.floats(-1, 1)))
def test_vne_curve_non_increasing(spectrum):
    spectrum[0] = 1.0
    curve = vne_curve(spectrum, 40)
    assert np.all(np.diff(curve) <= 1e-9)


def test_select_t_flat_curve_warns():
    with pytest.warns(RuntimeWarning, match="flat"):
        t, curve = select_t(np.ones(5), 10)
    assert t == 1 and curve.size == 10


def test_select_t_convex_curve_second_difference():
    curve = np.exp(-0.3 * np.arange(1, 31)) + 0.01 * np.arange(30)[::-1] ** 0
    assert knee_second_difference(curve) == int(np.argmax(np.diff(curve, 2))) + 1


def test_select_t_brute_force_scan():
    spectrum = [1.0, 0.9, 0.5] + [0.1] * 18
    t, curve = select_t(spectrum, 50, strategy="second_difference")
    brute = [vne_curve(spectrum, 50)[i] - 2 * vne_curve(spectrum, 50)[i + 1] + vne_curve(spectrum, 50)[i + 2] for i in range(48)]
    assert t == int(np.argmax(brute)) + 1
    assert 1 <= t <= 50


def test_two_segment_finds_elbow():
    tt = np.arange(1, 61, dtype=float)
    curve = np.where(tt <= 12, 5.0 - 0.3 * (tt - 1), 5.0 - 0.3 * 11 - 0.01 * (tt - 12))
    assert knee_two_segment(curve) == 12


def test_select_t_validation():
    with pytest.raises(DiffusionError):
        select_t([1.0, 0.5], 2)
    with pytest.raises(DiffusionError):
        select_t([1.0, 0.5], 10, strategy="nope")


def test_matrix_power_matches_repeated_product(rng):
    p = row_normalize(rng.random((5, 5)))
    ref = np.eye(5)
    for t in range(1, 12):
        ref = ref @ p
        np.testing.assert_allclose(matrix_power(p, t), ref, atol=1e-14)


def test_potential_identity_operator():
    d = potential_distances(np.eye(3), 1, 1e-7)
    expected = math.sqrt(2) * abs(math.log(1e-7))
    off = d[~np.eye(3, dtype=bool)]
    np.testing.assert_allclose(off, expected, rtol=1e-12)
    np.testing.assert_array_equal(np.diag(d), 0.0)


def test_potential_identical_rows_zero():
    p = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.2, 0.3, 0.5]])
    assert potential_distances(p, 2)[0, 1] == 0.0


def test_potential_triangle_inequality(roll_model):
    d = roll_model.potential
    r = np.random.default_rng(0)
    idx = r.integers(0, d.shape[0], size=(500, 3))
    i, j, k = idx.T
    assert np.all(d[i, k] <= d[i, j] + d[j, k] + 1e-9)


def test_potential_validation():
    with pytest.raises(DiffusionError):
        potential_distances(np.eye(2), 0)
    with pytest.raises(DiffusionError):
        potential_distances(np.eye(2), 1, log_floor=0.0)


def test_model_invariants(roll_model):
    m = roll_model
    np.testing.assert_allclose(m.operator.sum(axis=1), 1.0, atol=1e-10)
    assert np.all(m.operator >= 0)
    np.testing.assert_array_equal(m.kernel, m.kernel.T)
    assert np.all((m.kernel >= 0) & (m.kernel <= 1))
    np.testing.assert_array_equal(m.potential, m.potential.T)
    np.testing.assert_array_equal(np.diag(m.potential), 0.0)
    assert 1 <= m.t <= 100
    assert np.all(np.diff(m.vne_curve) <= 1e-9)
    assert m.spectrum[0] == pytest.approx(1.0, abs=1e-8)


def test_spectrum_matches_operator_eigenvalues(roll_model):
    ev = np.sort(np.linalg.eigvals(roll_model.operator).real)[::-1]
    np.testing.assert_allclose(ev, roll_model.spectrum, atol=1e-8)


@pytest.mark.parametrize("t", [1, 7, 50, 200])
def test_operator_powers_stay_stochastic(roll_model, t):
    np.testing.assert_allclose(matrix_power(roll_model.operator, t).sum(axis=1), 1.0, atol=1e-8)


def test_model_deterministic():
    x = make_swiss_roll(80, 4).features
    a = build_diffusion_model(x)
    b = build_diffusion_model(x)
    for field in ("kernel", "operator", "potential", "vne_curve"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
    assert a.t == b.t


def test_model_duplicates_have_zero_potential():
    x = make_swiss_roll(60, 1).features
    x = np.vstack([x, x[:1]])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        m = build_diffusion_model(x, knn_k=3, t_max=20)
    assert m.potential[0, -1] == 0.0


def test_model_fixed_t_and_strategies():
    x = make_swiss_roll(80, 2).features
    assert build_diffusion_model(x, t=9).t == 9
    m2 = build_diffusion_model(x, knee="second_difference")
    assert m2.t == knee_second_difference(m2.vne_curve)
    with pytest.raises(DiffusionError):
        build_diffusion_model(x[:4], knn_k=5)
