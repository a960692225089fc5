import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from distsm import DomainError, GramCache, ModelKernelSpec, StateKernelSpec, mmd2_exact, model_mmd2
from distsm.io import read_csv
from distsm.kernels import SIGMA2_FLOOR, median_bandwidth, mmd2_unbiased, model_kernel, pairwise_mmd2, state_kernel_eval

from conftest import random_simplex

DEFAULT = StateKernelSpec()
finite = st.floats(-3, 3, allow_nan=False)


def test_self_similarity_is_mixture_size():
    assert state_kernel_eval(DEFAULT, [0.3, 0.1], [0.3, 0.1]) == 5.0


def test_single_alpha_value():
    spec = StateKernelSpec(mixture_alphas=(1.0,))
    assert state_kernel_eval(spec, [0, 0], [1, 0]) == pytest.approx(2 / 3, abs=1e-15)


@given(arrays(float, 2, elements=finite), arrays(float, 2, elements=finite))
def test_kernel_symmetric(z1, z2):
    assert state_kernel_eval(DEFAULT, z1, z2) == state_kernel_eval(DEFAULT, z2, z1)


def test_kernel_errors():
    with pytest.raises(DomainError):
        state_kernel_eval(DEFAULT, [0, 0], [0])
    with pytest.raises(DomainError):
        state_kernel_eval(DEFAULT, [0, np.nan], [0, 0])
    with pytest.raises(DomainError):
        StateKernelSpec(mixture_alphas=(1.0, -2.0))
    with pytest.raises(DomainError):
        StateKernelSpec(family="laplace")


def test_gaussian_family():
    spec = StateKernelSpec(family="gaussian", length_scale=2.0)
    assert state_kernel_eval(spec, [0.0], [2.0]) == pytest.approx(np.exp(-0.5))


@given(arrays(float, (6, 2), elements=finite), st.sampled_from([(0.2, 0.5, 1.0, 2.0, 5.0), (1.0,), (0.3, 7.0)]))
def test_gram_is_psd(emb, alphas):
    gram = GramCache.build(StateKernelSpec(mixture_alphas=alphas), emb).gram
    assert np.array_equal(gram, gram.T)
    np.testing.assert_allclose(np.diag(gram), len(alphas))
    assert np.linalg.eigvalsh(gram).min() >= -1e-8


def test_mmd_identical_is_zero(rng):
    gram = GramCache.build(DEFAULT, rng.uniform(size=(5, 2)))
    p = random_simplex(rng, 5)
    assert mmd2_exact(p, p, gram) == 0.0


def test_mmd_kronecker_kernel():
    gram = GramCache(np.eye(3))
    assert mmd2_exact(np.eye(3)[0], np.eye(3)[2], gram) == 2.0


def test_mmd_matches_double_sum(rng):
    gram = GramCache.build(DEFAULT, rng.uniform(size=(5, 2)))
    p, q = random_simplex(rng, 5), random_simplex(rng, 5)
    oracle = sum((p[x] - q[x]) * gram.gram[x, y] * (p[y] - q[y]) for x in range(5) for y in range(5))
    assert mmd2_exact(p, q, gram) == pytest.approx(oracle, abs=1e-12)


def test_mmd_shape_mismatch():
    with pytest.raises(DomainError):
        mmd2_exact(np.ones(3) / 3, np.ones(4) / 4, GramCache(np.eye(3)))


def test_pairwise_matches_exact(rng):
    gram = GramCache.build(DEFAULT, rng.uniform(size=(4, 2)))
    a, b = random_simplex(rng, 3, 4), random_simplex(rng, 2, 4)
    d = pairwise_mmd2(a, b, gram)
    for i, j in itertools.product(range(3), range(2)):
        assert d[i, j] == pytest.approx(mmd2_exact(a[i], b[j], gram), abs=1e-13)


def test_zero_mmd_implies_equal_distributions(rng):
    gram = GramCache.build(DEFAULT, rng.uniform(size=(6, 2)))
    for _ in range(200):
        p, q = random_simplex(rng, 6), random_simplex(rng, 6)
        q = p + 1e-3 * (q - p)
        if mmd2_exact(p, q, gram) == 0.0:
            assert np.abs(p - q).sum() < 1e-6


def test_unbiased_toy_values():
    gram = GramCache(np.eye(2))
    assert mmd2_unbiased([0, 0], [1, 1], gram) == 2.0
    const = GramCache(np.full((3, 3), 0.7))
    assert mmd2_unbiased([0, 1, 2], [2, 2, 1, 0], const) == pytest.approx(0.0, abs=1e-15)


def test_unbiased_needs_two_samples():
    with pytest.raises(DomainError):
        mmd2_unbiased([0], [1, 2], GramCache(np.eye(3)))


def test_unbiased_on_coordinates_matches_gram_path(rng):
    emb = rng.uniform(size=(4, 2))
    gram = GramCache.build(DEFAULT, emb)
    xs, ys = rng.integers(0, 4, 7), rng.integers(0, 4, 5)
    assert mmd2_unbiased(emb[xs], emb[ys], DEFAULT) == pytest.approx(mmd2_unbiased(xs, ys, gram), abs=1e-12)


def test_unbiased_mean_is_zero_for_equal_laws(rng):
    gram = GramCache.build(DEFAULT, rng.uniform(size=(4, 2)))
    p = np.array([0.1, 0.2, 0.3, 0.4])
    draws = rng.choice(4, p=p, size=(10_000, 2, 6))
    est = np.array([mmd2_unbiased(x, y, gram) for x, y in draws])
    assert abs(est.mean()) <= 3 * est.std(ddof=1) / np.sqrt(len(est))


def test_unbiased_tracks_exact_value(rng):
    gram = GramCache.build(DEFAULT, rng.uniform(size=(4, 2)))
    p, q = np.array([0.1, 0.2, 0.3, 0.4]), np.array([0.4, 0.3, 0.2, 0.1])
    exact = mmd2_exact(p, q, gram)
    est = np.array([mmd2_unbiased(rng.choice(4, p=p, size=300), rng.choice(4, p=q, size=300), gram) for _ in range(100)])
    se = est.std(ddof=1)
    assert np.mean(np.abs(est - exact) < 5 * se) >= 0.99
    assert abs(est.mean() - exact) <= 3 * se / 10


def test_model_kernel_values(rng):
    gram = GramCache.build(DEFAULT, rng.uniform(size=(4, 2)))
    a, b = random_simplex(rng, 4), random_simplex(rng, 4)
    assert model_kernel(a, a, gram, sigma=0.3) == 1.0
    sigma = np.sqrt(mmd2_exact(a, b, gram))
    assert model_kernel(a, b, gram, sigma=sigma) == pytest.approx(2**-0.5, rel=1e-12)
    mmd = np.sqrt(mmd2_exact(a, b, gram))
    assert model_kernel(a, b, gram, sigma=0.5) == pytest.approx(1 / np.sqrt(1 + (mmd / 0.5) ** 2), rel=1e-14)
    with pytest.raises(DomainError):
        model_kernel(a, b, gram, sigma=0.0)
    with pytest.raises(DomainError):
        ModelKernelSpec(-1.0)


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 10))
def test_model_kernel_symmetric_and_bounded(seed, sigma):
    rng = np.random.default_rng(seed)
    gram = GramCache.build(DEFAULT, rng.uniform(size=(4, 2)))
    a, b = random_simplex(rng, 4), random_simplex(rng, 4)
    k = model_kernel(a, b, gram, sigma=sigma)
    assert k == model_kernel(b, a, gram, sigma=sigma)
    assert 0 < k <= 1
    assert (k == 1) == (mmd2_exact(a, b, gram) == 0)


def test_median_all_identical():
    gram = GramCache(np.eye(3))
    atoms = np.tile([0.2, 0.3, 0.5], (2, 1))
    assert median_bandwidth(atoms, atoms, gram) == pytest.approx(np.sqrt(SIGMA2_FLOOR))


def test_median_hand_sorted(rng):
    gram = GramCache.build(DEFAULT, rng.uniform(size=(3, 2)))
    src, tgt = random_simplex(rng, 2, 3), random_simplex(rng, 2, 3)
    vals = []
    for block_a, block_b in ((src, src), (tgt, tgt), (src, tgt)):
        for pa in block_a:
            for pb in block_b:
                vals.append(mmd2_exact(pa, pb, gram))
    assert len(vals) == 12
    lower_middle = sorted(vals)[5]
    assert median_bandwidth(src, tgt, gram) ** 2 == pytest.approx(lower_middle, rel=1e-12)


def test_median_scales_with_gram(rng):
    gram = GramCache.build(DEFAULT, rng.uniform(size=(4, 2)))
    src, tgt = random_simplex(rng, 3, 4), random_simplex(rng, 3, 4)
    assert median_bandwidth(src, tgt, gram.scaled(4.0)) == pytest.approx(2 * median_bandwidth(src, tgt, gram), rel=1e-12)


def test_median_needs_two_atoms():
    with pytest.raises(DomainError):
        median_bandwidth(np.empty((0, 2)), [[1.0, 0.0]], GramCache(np.eye(2)))


def test_model_mmd_identical_models(rng):
    gram = GramCache.build(DEFAULT, rng.uniform(size=(4, 2)))
    a = random_simplex(rng, 5, 4)
    assert model_mmd2(a, a, gram) == pytest.approx(0.0, abs=1e-12)


def test_model_mmd_single_atom(rng):
    gram = GramCache.build(DEFAULT, rng.uniform(size=(4, 2)))
    a, b = random_simplex(rng, 1, 4), random_simplex(rng, 1, 4)
    k = model_kernel(a[0], b[0], gram, sigma=0.4)
    assert model_mmd2(a, b, gram, sigma=0.4) == pytest.approx(2 - 2 * k, abs=1e-14)


@pytest.mark.parametrize("fixed", [0.7, None])
def test_model_mmd_term_by_term(rng, fixed):
    gram = GramCache.build(DEFAULT, rng.uniform(size=(3, 2)))
    a, b = random_simplex(rng, 2, 3), random_simplex(rng, 2, 3)
    sigma = fixed if fixed is not None else median_bandwidth(a, b, gram)
    terms = 0.0
    for i in range(2):
        for j in range(2):
            terms += model_kernel(a[i], a[j], gram, sigma=sigma)
            terms += model_kernel(b[i], b[j], gram, sigma=sigma)
            terms -= 2 * model_kernel(a[i], b[j], gram, sigma=sigma)
    mks = ModelKernelSpec(fixed)
    assert model_mmd2(a, b, gram, mks) == pytest.approx(terms / 4, abs=1e-13)


def test_model_mmd_count_mismatch(rng):
    with pytest.raises(DomainError):
        model_mmd2(random_simplex(rng, 2, 3), random_simplex(rng, 3, 3), GramCache(np.eye(3)))


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_model_mmd_symmetric_and_permutation_invariant(seed, m):
    rng = np.random.default_rng(seed)
    gram = GramCache.build(DEFAULT, rng.uniform(size=(4, 2)))
    a, b = random_simplex(rng, m, 4), random_simplex(rng, m, 4)
    ab = model_mmd2(a, b, gram)
    assert ab == pytest.approx(model_mmd2(b, a, gram), abs=1e-13)
    assert ab == pytest.approx(model_mmd2(a[rng.permutation(m)], b[rng.permutation(m)], gram), abs=1e-13)
    assert ab >= 0


def test_gram_csv(tmp_path, rng):
    gram = GramCache.build(DEFAULT, rng.uniform(size=(3, 2)))
    gram.to_csv(tmp_path / "gram.csv")
    meta, columns, data = read_csv(tmp_path / "gram.csv")
    assert meta["schema"] == "gram" and columns == ["k_0", "k_1", "k_2"]
    assert np.array_equal(data, gram.gram)
