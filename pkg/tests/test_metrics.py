import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from oracles import grid_cost, transport_lp, transport_vertices
from txuxi.errors import ConfigurationError, DegenerateMapError, PreconditionError
from txuxi.metrics import GroundDistance, downsample, emd, min_similarity, normalize, solve_transport, transport_plan


def rand_prob(rng, shape, sparsity=0.0):
    p = rng.random(shape)
    if sparsity:
        p[rng.random(shape) < sparsity] = 0
        if p.sum() == 0:
            p.flat[0] = 1
    return p / p.sum()


seeds = st.integers(0, 2 ** 32 - 1)


# normalize / downsample ----------------------------------------------------

def test_normalize_uniform():
    np.testing.assert_allclose(normalize(np.ones((4, 8))), np.full((4, 8), 1 / 32))


@settings(max_examples=30, deadline=None)
@given(seed=seeds, c=st.floats(1e-3, 1e3))
def test_normalize_scale_invariant(seed, c):
    m = np.random.default_rng(seed).random((5, 5))
    np.testing.assert_allclose(normalize(m * c), normalize(m), rtol=1e-12)


def test_normalize_errors():
    with pytest.raises(DegenerateMapError):
        normalize(np.zeros((3, 3)))
    with pytest.raises(PreconditionError):
        normalize(-np.ones((2, 2)))
    with pytest.raises(PreconditionError):
        normalize(np.array([[np.nan, 1.0]]))


def test_downsample_uniform_and_point_mass():
    np.testing.assert_allclose(downsample(normalize(np.ones((64, 64)))), np.full((16, 16), 1 / 256))
    p = np.zeros((64, 64))
    p[0, 0] = 1
    q = downsample(p)
    assert q[0, 0] == 1 and q.sum() == 1


@settings(max_examples=30, deadline=None)
@given(seed=seeds)
def test_downsample_conserves_mass(seed):
    p = rand_prob(np.random.default_rng(seed), (64, 64), 0.5)
    assert downsample(p).sum() == pytest.approx(1.0, abs=1e-12)


def test_downsample_rejects_non_divisor():
    with pytest.raises(ConfigurationError):
        downsample(np.ones((10, 10)) / 100, (3, 3))


# ground distance -----------------------------------------------------------

def test_ground_distance_properties():
    d = GroundDistance((4, 5)).matrix()
    assert (d >= 0).all() and np.allclose(np.diag(d), 0) and np.allclose(d, d.T)
    assert d.max() == pytest.approx(1.0)
    # d[i, k] <= d[i, j] + d[j, k] for every triple
    assert (d[:, None, :] <= d[:, :, None] + d[None, :, :] + 1e-12).all()


# EMD -------------------------------------------------------------------------

def test_emd_identity():
    p = rand_prob(np.random.default_rng(0), (16, 16))
    assert emd(p, p) < 1e-9


def test_emd_point_masses_on_a_line():
    p = np.array([[1.0, 0, 0, 0]])
    q = np.array([[0, 0, 0, 1.0]])
    assert emd(p, q) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=seeds)
def test_emd_matches_vertex_enumeration_on_2x2(seed):
    rng = np.random.default_rng(seed)
    p, q = rand_prob(rng, (2, 2), 0.3), rand_prob(rng, (2, 2), 0.3)
    expected = transport_vertices(p.ravel(), q.ravel(), grid_cost((2, 2)))
    assert emd(p, q) == pytest.approx(expected, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(seed=seeds, shape=st.sampled_from([(3, 3), (4, 4), (2, 5)]), sparsity=st.sampled_from([0.0, 0.4]))
def test_emd_matches_lp_solver(seed, shape, sparsity):
    rng = np.random.default_rng(seed)
    p, q = rand_prob(rng, shape, sparsity), rand_prob(rng, shape, sparsity)
    assert emd(p, q) == pytest.approx(transport_lp(p.ravel(), q.ravel(), grid_cost(shape)), abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(seed=seeds)
def test_emd_is_a_metric(seed):
    rng = np.random.default_rng(seed)
    p, q, r = (rand_prob(rng, (4, 4), 0.3) for _ in range(3))
    assert abs(emd(p, q) - emd(q, p)) < 1e-9
    assert emd(p, r) <= emd(p, q) + emd(q, r) + 1e-9
    assert 0 <= emd(p, q) <= 1 + 1e-12


def test_emd_grows_as_mass_moves_away():
    base = np.zeros((1, 8))
    base[0, 0] = 0.5
    values = []
    for pos in range(1, 8):
        q = base.copy()
        q[0, pos] += 0.5
        values.append(emd(q, np.array([[1.0] + [0.0] * 7])))
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


def test_emd_full_grid_is_fast_and_in_range():
    rng = np.random.default_rng(3)
    p, q = rand_prob(rng, (16, 16)), rand_prob(rng, (16, 16), 0.9)
    v = emd(p, q)
    assert 0 < v < 1


def test_flow_plan_respects_marginals():
    rng = np.random.default_rng(4)
    p, q = rand_prob(rng, (3, 4), 0.3), rand_prob(rng, (3, 4), 0.3)
    plan = transport_plan(p, q)
    f = plan.dense(12)
    assert (plan.mass >= 0).all()
    np.testing.assert_allclose(f.sum(axis=1), p.ravel(), atol=1e-12)
    np.testing.assert_allclose(f.sum(axis=0), q.ravel(), atol=1e-12)
    d = GroundDistance((3, 4)).matrix()
    assert (f * d).sum() == pytest.approx(plan.cost, abs=1e-12)


def test_emd_preconditions():
    with pytest.raises(PreconditionError):
        emd(np.ones((2, 2)) / 4, np.ones((2, 2)))
    with pytest.raises(PreconditionError):
        emd(np.ones((2, 2)) / 4, np.ones((1, 4)) / 4)
    with pytest.raises(PreconditionError):
        solve_transport([0.5, 0.5], [1.0], np.ones((2, 2)))


@settings(max_examples=30, deadline=None)
@given(seed=seeds, c=st.floats(0.01, 100))
def test_metrics_invariant_to_raw_rescaling(seed, c):
    rng = np.random.default_rng(seed)
    a, b = rng.random((4, 4)), rng.random((4, 4))
    assert emd(normalize(a * c), normalize(b)) == pytest.approx(emd(normalize(a), normalize(b)), abs=1e-12)
    assert min_similarity(normalize(a * c), normalize(b)) == pytest.approx(
        min_similarity(normalize(a), normalize(b)), abs=1e-12)


# MIN ---------------------------------------------------------------------------

def test_min_similarity_examples():
    p = rand_prob(np.random.default_rng(1), (8, 8))
    assert min_similarity(p, p) == pytest.approx(1.0, abs=1e-12)
    a = np.array([[1.0, 0.0]])
    assert min_similarity(a, a[:, ::-1]) == 0.0
    assert min_similarity(np.array([[0.5, 0.5]]), np.array([[0.25, 0.75]])) == 0.75


@settings(max_examples=40, deadline=None)
@given(seed=seeds)
def test_min_similarity_bounds_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    p, q = rand_prob(rng, (6, 6), 0.5), rand_prob(rng, (6, 6), 0.5)
    assume(not np.allclose(p, q))
    v = min_similarity(p, q)
    assert 0 <= v < 1 and v == min_similarity(q, p)


def test_min_similarity_shape_mismatch():
    with pytest.raises(PreconditionError):
        min_similarity(np.ones((2, 2)) / 4, np.ones((4, 1)) / 4)
    assert math.isclose(min_similarity(np.ones((2, 2)) / 4, np.ones((2, 2)) / 4), 1.0)
