import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distsm import ConfigurationError, DomainError, GramCache, ModelKernelSpec, StateKernelSpec, compute_sm
from distsm._rng import stream
from distsm.kernels import median_bandwidth, model_mmd2
from distsm.td import (
    ParamModel,
    TdConfig,
    batch_loss_and_grad,
    geometric_offsets,
    nstep_target_sample,
    nstep_weights,
    sample_windows,
    softmax,
    td_loss_and_grad,
    train,
)

from conftest import discounted, kernels, random_simplex
from test_dp import cycle


def fd_gradient(logits, targets, gram, sigma, h=1e-5, full=False):
    out = np.zeros_like(logits)
    pick = 1 if full else 0
    for idx in np.ndindex(*logits.shape):
        up, down = logits.copy(), logits.copy()
        up[idx] += h
        down[idx] -= h
        lu = batch_loss_and_grad(up[None], targets[None], gram, sigma)[pick][0]
        ld = batch_loss_and_grad(down[None], targets[None], gram, sigma)[pick][0]
        out[idx] = (lu - ld) / (2 * h)
    return out


def rel_error(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)


def test_one_step_target():
    out = nstep_target_sample([0, 2], [[0.0, 0.0, 1.0]], 0.7)
    np.testing.assert_allclose(out, [[0.3, 0.0, 0.7]], atol=1e-15)


def test_nstep_weights_values():
    w, boot = nstep_weights(0.95, 5)
    np.testing.assert_allclose(w, [0.05, 0.0475, 0.045125, 0.04286875, 0.0407253125], rtol=1e-13)
    assert boot == pytest.approx(0.7737809375, rel=1e-14)
    assert w.sum() + boot == pytest.approx(1.0, abs=1e-15)


def test_exact_target_is_simplex_per_atom(rng):
    atoms = random_simplex(rng, 4, 3)
    out = nstep_target_sample([0, 1, 1, 2], atoms, 0.8)
    assert out.shape == (4, 3) and np.abs(out.sum(axis=1) - 1).max() < 1e-14


def test_target_errors():
    with pytest.raises(DomainError):
        nstep_target_sample([0], [[1.0, 0.0]], 0.5)
    with pytest.raises(DomainError):
        nstep_target_sample([0, 5], [[1.0, 0.0]], 0.5)
    with pytest.raises(ConfigurationError):
        nstep_target_sample([0, 1], [[1.0, 0.0]], 0.5, mode="mean")


def test_geometric_offsets_frequencies():
    n_draws, gamma, n = 100_000, 0.95, 5
    y = geometric_offsets(gamma, n, n_draws, stream(8))
    counts = np.bincount(y, minlength=n + 1)
    w, boot = nstep_weights(gamma, n)
    for k, p in enumerate(list(w) + [boot]):
        assert abs(counts[k] - n_draws * p) <= 3 * np.sqrt(n_draws * p * (1 - p))


def test_sampled_targets_are_unbiased(rng):
    gamma, window = 0.8, np.array([0, 1, 1, 2])
    atoms = random_simplex(rng, 5, 3)
    tiled = np.tile(atoms, (4000, 1))
    draws = nstep_target_sample(window, tiled, gamma, mode="sample", rng=stream(3))
    freq = np.bincount(draws, minlength=3) / len(draws)
    expected = nstep_target_sample(window, atoms, gamma).mean(axis=0)
    sd = np.sqrt(expected * (1 - expected) / len(draws))
    assert np.all(np.abs(freq - expected) <= 3 * sd)


def test_fixed_point_has_zero_gradient(rng):
    gram = GramCache.build(StateKernelSpec(), rng.uniform(size=(3, 2)))
    logits = rng.normal(size=(4, 3))
    loss, full, grad = td_loss_and_grad(logits[None].repeat(3, axis=0), 1, softmax(logits), gram)
    assert full == pytest.approx(0.0, abs=1e-12)
    assert np.linalg.norm(grad) < 1e-8


def test_two_state_single_atom_by_hand():
    k = np.array([[1.0, 0.3], [0.3, 1.0]])
    gram, sigma = GramCache(k), 0.8
    logits = np.array([[0.4, -0.2]])
    t = np.array([0.25, 0.75])
    a = softmax(logits)[0, 0]
    c = k[0, 0] + k[1, 1] - 2 * k[0, 1]
    d = (a - t[0]) ** 2 * c
    loss_hand = 1.0 - 2.0 * (1.0 + d / sigma**2) ** -0.5
    dloss_da = (1.0 + d / sigma**2) ** -1.5 / sigma**2 * 2.0 * (a - t[0]) * c
    grad_hand = dloss_da * a * (1 - a) * np.array([1.0, -1.0])
    loss, full, grad = td_loss_and_grad(logits[None], 0, t[None], gram, ModelKernelSpec(sigma))
    assert loss == pytest.approx(loss_hand, abs=1e-15)
    assert full == pytest.approx(loss_hand + 1.0, abs=1e-15)
    np.testing.assert_allclose(grad[0], grad_hand, rtol=1e-12, atol=1e-16)


@pytest.mark.parametrize("name", ["three_state_c1", "t_maze", "uniform_three"])
def test_gradient_matches_finite_differences(name, rng):
    gram, _ = kernels(discounted(name, 0.7))
    s = gram.n_states
    for _ in range(3):
        logits = rng.normal(size=(5, s))
        targets = random_simplex(rng, 7, s)
        _, _, grad, sigma = batch_loss_and_grad(logits[None], targets[None], gram)
        assert rel_error(grad[0], fd_gradient(logits, targets, gram, sigma[0])) < 1e-5


def test_truncated_and_full_loss_share_gradients(rng):
    gram, _ = kernels(discounted("three_state_c1", 0.7))
    logits, targets = rng.normal(size=(4, 3)), random_simplex(rng, 4, 3)
    _, _, grad, sigma = batch_loss_and_grad(logits[None], targets[None], gram)
    assert rel_error(grad[0], fd_gradient(logits, targets, gram, sigma[0], full=True)) < 1e-5


def test_gradient_near_zero_discrepancy(rng):
    gram, _ = kernels(discounted("three_state_c1", 0.7))
    logits = rng.normal(size=(4, 3))
    targets = softmax(logits + 1e-3 * rng.normal(size=(4, 3)))
    _, full, grad, _ = batch_loss_and_grad(logits[None], targets[None], gram, 0.5)
    assert full[0] < 1e-5
    assert rel_error(grad[0], fd_gradient(logits, targets, gram, 0.5)) < 1e-5


def test_loss_matches_model_mmd(rng):
    gram, _ = kernels(discounted("three_state_c1", 0.7))
    logits, targets = rng.normal(size=(5, 3)), random_simplex(rng, 5, 3)
    _, full, _, sigma = batch_loss_and_grad(logits[None], targets[None], gram)
    assert sigma[0] == pytest.approx(median_bandwidth(softmax(logits), targets, gram), rel=1e-12)
    assert full[0] == pytest.approx(model_mmd2(softmax(logits), targets, gram), abs=1e-13)


def test_target_shape_mismatch(rng):
    with pytest.raises(DomainError):
        td_loss_and_grad(rng.normal(size=(3, 2, 3)), 0, np.ones((2, 4)) / 4, GramCache(np.eye(3)))


def test_config_validation():
    for bad in ({"gamma": 1.0}, {"n_step": 0}, {"learning_rate": 0.0}, {"polyak_lambda": 1.5}, {"batch_size": 0}, {"sigma_policy": "fixed"}, {"sigma_policy": "silverman"}, {"eval_every": -1}):
        with pytest.raises(ConfigurationError):
            TdConfig(**bad)
    cfg = TdConfig()
    assert (cfg.gamma, cfg.n_step, cfg.learning_rate, cfg.polyak_lambda, cfg.batch_size) == (0.95, 5, 1e-2, 0.01, 32)
    assert cfg.replace(m=4).to_dict()["m"] == 4


def test_windows_follow_the_kernel(c1):
    cfg = TdConfig(gamma=0.7, batch_size=500, n_step=3)
    win = sample_windows(c1, cfg, 0)
    assert win.shape == (500, 4)
    assert np.all(c1.p_pi[win[:, :-1], win[:, 1:]] > 0)
    assert set(np.unique(win[:, 0])) == {0, 1, 2}
    point = sample_windows(c1, cfg, 1, init_dist=np.array([0.0, 1.0, 0.0]))
    assert np.all(point[:, 0] == 1) and np.all(point[:, 1] == 2)


def test_cycle_single_atom_learns_successor_rows():
    dm = cycle(0.5)
    gram, _ = kernels(dm)
    cfg = TdConfig(gamma=0.5, m=1, steps=5000, learning_rate=0.1, sigma_policy="fixed", sigma=0.5)
    params, _ = train(dm, cfg, gram)
    tv = 0.5 * np.abs(params.atoms[:, 0] - compute_sm(dm).psi).sum(axis=1)
    assert tv.max() < 1e-3


def test_full_copy_on_deterministic_chain_descends_monotonically():
    dm = discounted("chain", 0.5, k=3)
    gram, _ = kernels(dm)
    cfg = TdConfig(gamma=0.5, m=4, n_step=40, polyak_lambda=1.0, steps=400, learning_rate=0.05, sigma_policy="fixed", sigma=0.5, eval_every=1)
    _, trace = train(dm, cfg, gram, init_dist=np.array([1.0, 0.0, 0.0]))
    tail = np.array(trace.loss[len(trace.loss) // 10 :])
    assert np.all(np.diff(tail) <= 1e-15)


def test_frozen_target_never_moves(c1):
    gram, _ = kernels(c1)
    seen = []
    cfg = TdConfig(gamma=0.7, m=3, steps=30, polyak_lambda=0.0)
    init = ParamModel.initial(3, 3, 0.7, seed=2)
    params, _ = train(c1, cfg, gram, init=init, callback=lambda step, logits, target: seen.append(target.copy()))
    assert all(np.array_equal(t, init.target_logits) for t in seen)
    assert np.array_equal(params.target_logits, init.target_logits)
    assert not np.array_equal(params.logits, init.logits)


def test_training_is_deterministic(c1):
    gram, cost = kernels(c1)
    cfg = TdConfig(gamma=0.7, m=4, steps=50, seed=9, eval_every=10)
    a, ta = train(c1, cfg, gram)
    b, tb = train(c1, cfg, gram)
    assert np.array_equal(a.logits, b.logits) and np.array_equal(a.target_logits, b.target_logits)
    assert ta.loss == tb.loss and ta.full_mmd == tb.full_mmd and ta.step == [10, 20, 30, 40, 50]
    c, _ = train(c1, cfg.replace(seed=10), gram)
    assert not np.array_equal(a.logits, c.logits)


def test_trace_reports_reference_distance(c1):
    gram, cost = kernels(c1)
    cfg = TdConfig(gamma=0.7, m=2, steps=20, eval_every=10)
    ref = ParamModel.initial(3, 2, 0.7, seed=5).to_delta()
    _, trace = train(c1, cfg, gram, reference=ref, cost=cost)
    assert trace.step == [10, 20] and all(np.isfinite(trace.wbar_ref))


def test_train_errors(c1):
    gram, _ = kernels(c1)
    with pytest.raises(ConfigurationError):
        train(c1, TdConfig(gamma=0.9, steps=1), gram)
    with pytest.raises(DomainError):
        train(c1, TdConfig(gamma=0.7, steps=1), gram, init=ParamModel.initial(4, 2, 0.7))
    with pytest.raises(DomainError):
        train(c1, TdConfig(gamma=0.7, steps=1), gram, init_dist=np.array([0.5, 0.6, 0.0]))


@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 4))
def test_softmax_atoms_are_distributions(seed, m, s):
    logits = 30 * np.random.default_rng(seed).normal(size=(2, m, s))
    atoms = softmax(logits)
    assert np.abs(atoms.sum(axis=-1) - 1).max() < 1e-12 and atoms.min() >= 0
