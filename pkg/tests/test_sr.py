import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distsm import DomainError, NumericError, Policy, TabularMdp, build_ppi, compute_sm, recover_transition, value_from_sm
from distsm.io import read_csv
from distsm.sr import SuccessorMatrix, sm_to_csv

from conftest import ENV_NAMES, discounted


def neumann(p, gamma, terms=200):
    out = np.zeros_like(p)
    power = np.eye(len(p))
    for t in range(terms + 1):
        out += (1 - gamma) * gamma**t * power
        power = power @ p
    return out


def from_matrix(p, gamma):
    p = np.asarray(p, dtype=float)
    n = len(p)
    return build_ppi(TabularMdp(p[:, None, :], np.eye(n)), Policy(np.ones((n, 1))), gamma)


def test_single_absorbing_state():
    assert compute_sm(from_matrix([[1.0]], 0.9)).psi.tolist() == [[1.0]]


def test_zero_discount_is_identity(c1):
    assert np.array_equal(compute_sm(discounted("three_state_c1", 0.0)).psi, np.eye(3))


def test_three_state_matches_truncated_series(c1):
    np.testing.assert_allclose(compute_sm(c1).psi, neumann(c1.p_pi, 0.7), rtol=0, atol=1e-9)


@pytest.mark.parametrize("name", ENV_NAMES)
@pytest.mark.parametrize("gamma", [0.5, 0.7, 0.95])
def test_rows_are_distributions(name, gamma):
    dm = discounted(name, gamma)
    psi = compute_sm(dm).psi
    assert np.abs(psi.sum(axis=1) - 1).max() <= 1e-10
    assert psi.min() >= -1e-12
    direct = (1 - gamma) * np.linalg.inv(np.eye(dm.n_states) - gamma * dm.p_pi)
    np.testing.assert_allclose(psi, direct, rtol=0, atol=1e-9)


def test_value_trivial_rewards(c1):
    sm = compute_sm(c1)
    assert np.array_equal(value_from_sm(sm, np.zeros(3)), np.zeros(3))
    np.testing.assert_allclose(value_from_sm(sm, np.ones(3)), np.full(3, 1 / 0.3), rtol=1e-13)


def test_value_matches_direct_solve(c1):
    r = np.array([1.0, 0.0, 0.0])
    v = np.linalg.solve(np.eye(3) - 0.7 * c1.p_pi, r)
    np.testing.assert_allclose(value_from_sm(compute_sm(c1), r), v, rtol=0, atol=1e-9)


def test_value_length_mismatch(c1):
    with pytest.raises(DomainError):
        value_from_sm(compute_sm(c1), np.ones(4))
    with pytest.raises(DomainError):
        value_from_sm(compute_sm(c1), np.array([1.0, np.nan, 0.0]))


def test_self_loop_round_trip():
    rec = recover_transition(compute_sm(from_matrix(np.eye(3), 0.6)))
    np.testing.assert_allclose(rec.transition, np.eye(3), atol=1e-12)


def test_three_state_round_trip(c1):
    rec = recover_transition(compute_sm(c1))
    assert np.abs(rec.transition - c1.p_pi).max() < 1e-9
    assert rec.condition_number >= 1.0


def test_uniform_three_round_trip():
    rec = recover_transition(compute_sm(discounted("uniform_three", 0.5)))
    np.testing.assert_allclose(rec.transition, np.full((3, 3), 1 / 3), rtol=0, atol=1e-9)
    assert np.abs(rec.transition.sum(axis=1) - 1).max() < 1e-8


def test_recover_needs_positive_gamma():
    with pytest.raises(DomainError):
        recover_transition(compute_sm(discounted("uniform_three", 0.0)))


def test_ill_conditioned_successor_matrix():
    psi = np.array([[1.0, 0.0], [1.0, 1e-14]])
    with pytest.raises(NumericError):
        recover_transition(SuccessorMatrix(psi, 0.5))


@given(
    n=st.integers(2, 6),
    gamma=st.floats(0.05, 0.95),
    seed=st.integers(0, 2**32 - 1),
    horizon=st.integers(5, 40),
)
def test_operator_view_truncation_bound(n, gamma, seed, horizon):
    rng = np.random.default_rng(seed)
    p = rng.exponential(size=(n, n))
    p /= p.sum(axis=1, keepdims=True)
    f = rng.uniform(-1, 1, size=n)
    psi = compute_sm(from_matrix(p, gamma)).psi
    truncated = neumann(p, gamma, horizon) @ f
    assert np.abs(psi @ f - truncated).max() <= gamma ** (horizon + 1) * np.abs(f).max() + 1e-12


@given(n=st.integers(2, 6), gamma=st.floats(0.05, 0.9), seed=st.integers(0, 2**32 - 1))
def test_round_trip_property(n, gamma, seed):
    rng = np.random.default_rng(seed)
    p = rng.exponential(size=(n, n))
    p /= p.sum(axis=1, keepdims=True)
    rec = recover_transition(compute_sm(from_matrix(p, gamma)))
    assert np.abs(rec.transition - p).max() < 1e-9


def test_csv_export(tmp_path, c1):
    sm = compute_sm(c1)
    sm_to_csv(sm, tmp_path / "sm.csv")
    meta, columns, data = read_csv(tmp_path / "sm.csv")
    assert meta["schema"] == "successor_matrix" and meta["gamma"] == 0.7
    assert columns == ["state", "psi_0", "psi_1", "psi_2"]
    assert np.array_equal(data[:, 1:], sm.psi)
