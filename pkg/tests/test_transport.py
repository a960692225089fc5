import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from distsm import CostMatrix, DeltaModel, DomainError, wasserstein_inner, wasserstein_outer, wbar

from conftest import random_simplex


def euclid(rng, n):
    return CostMatrix.from_embedding(rng.uniform(size=(n, 2)))


def vertex_enumeration(p, q, c):
    """Minimum of the transport LP over all basic feasible solutions."""
    n = len(p)
    rows = []
    for i in range(n):
        row = np.zeros((n, n))
        row[i, :] = 1
        rows.append(row.ravel())
    for j in range(n - 1):  # one marginal constraint is redundant
        col = np.zeros((n, n))
        col[:, j] = 1
        rows.append(col.ravel())
    a = np.array(rows)
    b = np.concatenate([p, q[:-1]])
    best = np.inf
    for basis in itertools.combinations(range(n * n), 2 * n - 1):
        sub = a[:, basis]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        x = np.linalg.solve(sub, b)
        if x.min() < -1e-12:
            continue
        best = min(best, float(x @ c.ravel()[list(basis)]))
    return best


def test_inner_identical_is_zero(rng):
    cost = euclid(rng, 4)
    p = random_simplex(rng, 4)
    assert wasserstein_inner(p, p, cost).distance == 0.0


def test_inner_point_masses(rng):
    cost = euclid(rng, 4)
    e = np.eye(4)
    assert wasserstein_inner(e[1], e[3], cost).distance == pytest.approx(cost.cost[1, 3], rel=1e-14)


def test_inner_matches_vertex_enumeration(rng):
    for _ in range(3):
        cost = euclid(rng, 4)
        p, q = random_simplex(rng, 4), random_simplex(rng, 4)
        oracle = vertex_enumeration(p, q, cost.cost)
        assert wasserstein_inner(p, q, cost).distance == pytest.approx(oracle, abs=1e-9)


def test_inner_plan_marginals(rng):
    cost = euclid(rng, 5)
    p, q = random_simplex(rng, 5), random_simplex(rng, 5)
    res = wasserstein_inner(p, q, cost, return_plan=True)
    np.testing.assert_allclose(res.plan.sum(axis=1), p, atol=1e-9)
    np.testing.assert_allclose(res.plan.sum(axis=0), q, atol=1e-9)
    assert np.sum(res.plan * cost.cost) == pytest.approx(res.distance, abs=1e-12)


def test_uniform_cost_shortcut_matches_network_simplex(rng):
    cost = CostMatrix.from_embedding(np.eye(5))
    p, q = random_simplex(rng, 5), random_simplex(rng, 5)
    fast = wasserstein_inner(p, q, cost).distance
    plan = wasserstein_inner(p, q, cost, return_plan=True).plan
    assert fast == pytest.approx(np.sqrt(2) * 0.5 * np.abs(p - q).sum(), rel=1e-14)
    assert fast == pytest.approx(np.sum(plan * cost.cost), abs=1e-12)


def test_inner_rejects_non_simplex(rng):
    cost = euclid(rng, 3)
    with pytest.raises(DomainError):
        wasserstein_inner([0.5, 0.6, 0.0], [1, 0, 0], cost)
    with pytest.raises(DomainError):
        wasserstein_inner([1.2, -0.2, 0.0], [1, 0, 0], cost)
    with pytest.raises(DomainError):
        wasserstein_inner([1, 0], [1, 0, 0], cost)


def test_cost_matrix_validation():
    with pytest.raises(DomainError):
        CostMatrix(np.array([[0.0, -1.0], [-1.0, 0.0]]))
    with pytest.raises(DomainError):
        CostMatrix(np.array([[1.0, 1.0], [1.0, 0.0]]))


@given(st.integers(0, 2**32 - 1))
def test_inner_metric_axioms(seed):
    rng = np.random.default_rng(seed)
    cost = euclid(rng, 5)
    p, q, s = random_simplex(rng, 3, 5)
    pq = wasserstein_inner(p, q, cost).distance
    assert pq == wasserstein_inner(q, p, cost).distance
    assert pq <= wasserstein_inner(p, s, cost).distance + wasserstein_inner(s, q, cost).distance + 1e-9


def test_cost_triangle_inequality(rng):
    cost = euclid(rng, 7).cost
    for x, y, z in itertools.permutations(range(7), 3):
        assert cost[x, z] <= cost[x, y] + cost[y, z] + 1e-10


def test_outer_identical_models(rng):
    cost = euclid(rng, 4)
    a = random_simplex(rng, 3, 4)
    assert wasserstein_outer(a, a, cost) == pytest.approx(0.0, abs=1e-15)


def test_outer_single_atom(rng):
    cost = euclid(rng, 4)
    a, b = random_simplex(rng, 1, 4), random_simplex(rng, 1, 4)
    assert wasserstein_outer(a, b, cost) == pytest.approx(wasserstein_inner(a[0], b[0], cost).distance, abs=1e-15)


def test_outer_matches_all_assignments(rng):
    cost = euclid(rng, 4)
    a, b = random_simplex(rng, 3, 4), random_simplex(rng, 3, 4)
    d = np.array([[wasserstein_inner(x, y, cost).distance for y in b] for x in a])
    best = min(sum(d[i, perm[i]] for i in range(3)) for perm in itertools.permutations(range(3))) / 3
    assert wasserstein_outer(a, b, cost) == pytest.approx(best, abs=1e-10)
    assert wasserstein_outer(a, b, cost, lazy=False) == pytest.approx(best, abs=1e-10)


def test_outer_weighted_matches_linear_program(rng):
    cost = euclid(rng, 4)
    a, b = random_simplex(rng, 3, 4), random_simplex(rng, 5, 4)
    wa, wb = random_simplex(rng, 3), random_simplex(rng, 5)
    d = np.array([[wasserstein_inner(x, y, cost).distance for y in b] for x in a])
    eq = [np.kron(np.eye(3)[i], np.ones(5)) for i in range(3)] + [np.kron(np.ones(3), np.eye(5)[j]) for j in range(5)]
    lp = linprog(d.ravel(), A_eq=np.array(eq), b_eq=np.concatenate([wa, wb]), bounds=(0, None), method="highs")
    assert wasserstein_outer(a, b, cost, wa, wb) == pytest.approx(lp.fun, abs=1e-9)


def test_outer_empty():
    with pytest.raises(DomainError):
        wasserstein_outer(np.empty((0, 2)), np.empty((0, 2)), CostMatrix(np.zeros((2, 2))))


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_outer_permutation_invariant_and_lazy_exact(seed, m):
    rng = np.random.default_rng(seed)
    cost = euclid(rng, 5)
    a, b = random_simplex(rng, m, 5), random_simplex(rng, m, 5)
    base = wasserstein_outer(a, b, cost, lazy=False)
    assert wasserstein_outer(a, b, cost) == pytest.approx(base, abs=1e-12)
    assert wasserstein_outer(a[rng.permutation(m)], b[::-1], cost) == pytest.approx(base, abs=1e-12)


def test_wbar_identical_and_single_difference(rng):
    cost = euclid(rng, 3)
    atoms = random_simplex(rng, 3, 2, 3)
    a = DeltaModel(atoms, 0.5)
    assert wbar(a, a, cost) == (0.0, 0)
    other = atoms.copy()
    other[2] = random_simplex(rng, 2, 3)
    dist, x, per_state = wbar(a, DeltaModel(other, 0.5), cost, return_all=True)
    assert x == 2
    assert dist == pytest.approx(wasserstein_outer(atoms[2], other[2], cost), abs=1e-15)
    assert per_state[:2].tolist() == [0.0, 0.0]


def test_wbar_zero_iff_equal_multisets(rng):
    cost = euclid(rng, 3)
    atoms = random_simplex(rng, 3, 4, 3)
    shuffled = atoms[:, ::-1]
    assert wbar(DeltaModel(atoms, 0.5), DeltaModel(shuffled, 0.5), cost)[0] <= 1e-8
    moved = atoms.copy()
    moved[1, 0] = random_simplex(rng, 3)
    assert wbar(DeltaModel(atoms, 0.5), DeltaModel(moved, 0.5), cost)[0] > 1e-8


def test_wbar_state_mismatch(rng):
    cost = euclid(rng, 3)
    with pytest.raises(DomainError):
        wbar([random_simplex(rng, 2, 3)], [random_simplex(rng, 2, 3)] * 2, cost)
