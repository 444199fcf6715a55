import numpy as np
import pytest

from mofa import oracle
from mofa import optimizers as opt
from mofa.linalg import ContractError, svd_small
from mofa.optimizers import Kind, OptimizerConfig


def fro(A):
    return np.linalg.norm(A)


def run(kind, grads, W0, **kw):
    cfg = OptimizerConfig(kind=kind, **kw)
    state = opt.init_state(cfg)
    W = W0
    Ws = [W]
    for G in grads:
        W, state = opt.step(W, G, state, cfg)
        Ws.append(W)
    return Ws, state


def quadratic_grad(W, W_star, A):
    return A @ (W - W_star)


# -- config ----------------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [dict(eta=0.0), dict(beta=1.0), dict(beta=-0.1), dict(beta2=1.0), dict(rank=0), dict(tau=0)],
)
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        OptimizerConfig(**kw)


def test_grad_scale_modes():
    assert OptimizerConfig(beta=0.9).grad_scale == 1.0
    assert OptimizerConfig(beta=0.9, grad_scale_mode="one_minus_beta").grad_scale == pytest.approx(0.1)


# -- MoFaSGD ---------------------------------------------------------------


def test_mofasgd_diagonal_steps_discard_magnitude():
    cfg = OptimizerConfig(kind=Kind.MOFASGD, eta=0.1, beta=0.5, rank=2)
    state = opt.init_state(cfg)
    W = np.zeros((2, 2))
    W, state = opt.step_mofasgd(W, np.diag([100.0, 0.01]), state, cfg)
    np.testing.assert_allclose(W, -0.1 * np.eye(2), atol=1e-14)
    W, state = opt.step_mofasgd(W, np.diag([3.0, 7.0]), state, cfg)
    np.testing.assert_allclose(W, -0.2 * np.eye(2), atol=1e-14)


def test_mofasgd_first_step_uses_top_singular_vectors():
    rng = np.random.default_rng(0)
    G0 = rng.standard_normal((7, 5))
    W0 = rng.standard_normal((7, 5))
    cfg = OptimizerConfig(kind=Kind.MOFASGD, eta=0.05, rank=2)
    W1, _ = opt.step_mofasgd(W0, G0, opt.init_state(cfg), cfg)
    U, _, V = oracle.dense_truncate(G0, 2)
    assert fro(W1 - (W0 - 0.05 * U @ V.T)) <= 1e-12


@pytest.mark.parametrize("mode", ["unit", "one_minus_beta"])
def test_mofasgd_trajectory_matches_dense_reimplementation(mode):
    rng = np.random.default_rng(1)
    m, n, r, eta, beta = 10, 8, 3, 0.05, 0.8
    A = np.diag(np.linspace(1, 3, m))
    W_star = rng.standard_normal((m, n))
    W0 = np.zeros((m, n))
    cfg = OptimizerConfig(kind=Kind.MOFASGD, eta=eta, beta=beta, rank=r, grad_scale_mode=mode)
    s = cfg.grad_scale

    W, state = W0, opt.init_state(cfg)
    Wd = W0
    Ud = sd = Vd = None
    for t in range(5):
        G = quadratic_grad(W, W_star, A)
        Gd = quadratic_grad(Wd, W_star, A)
        W, state = opt.step_mofasgd(W, G, state, cfg)
        if Ud is None:
            Ud, sd, Vd = oracle.dense_truncate(s * Gd, r)
        else:
            Ud, sd, Vd, target = oracle.dense_umf_step(Gd, Ud, sd, Vd, beta, r, s)
            gap = np.linalg.svd(target, compute_uv=False)
            assert gap[r - 1] - gap[r] > 1e-6
        Wd = Wd - eta * Ud @ Vd.T
        assert fro(W - Wd) <= 1e-7


def test_mofasgd_update_has_spectral_norm_eta():
    rng = np.random.default_rng(2)
    grads = [rng.standard_normal((9, 6)) for _ in range(20)]
    Ws, _ = run(Kind.MOFASGD, grads, np.zeros((9, 6)), eta=0.03, rank=3)
    for a, b in zip(Ws, Ws[1:]):
        assert abs(svd_small(a - b).sigma[0] - 0.03) <= 1e-10


def test_mofasgd_scale_invariance():
    rng = np.random.default_rng(3)
    A = np.diag(np.linspace(0.5, 2, 8))
    W_star = rng.standard_normal((8, 6))
    cfg = OptimizerConfig(kind=Kind.MOFASGD, eta=0.02, rank=2)
    paths = []
    for c in (1.0, 0.1, 10.0):
        W, state = np.zeros((8, 6)), opt.init_state(cfg)
        path = []
        for _ in range(30):
            W, state = opt.step_mofasgd(W, c * quadratic_grad(W, W_star, A), state, cfg)
            path.append(W)
        paths.append(path)
    for other in paths[1:]:
        for a, b in zip(paths[0], other):
            assert fro(a - b) <= 1e-9


def test_mofasgd_rejects_nan_gradient():
    cfg = OptimizerConfig(kind=Kind.MOFASGD, rank=1)
    G = np.ones((3, 2))
    G[1, 1] = np.nan
    with pytest.raises(opt.NonFiniteGradientError):
        opt.step_mofasgd(np.zeros((3, 2)), G, opt.init_state(cfg), cfg)


def test_mofasgd_shape_mismatch():
    cfg = OptimizerConfig(kind=Kind.MOFASGD, rank=1)
    with pytest.raises(ContractError):
        opt.step_mofasgd(np.zeros((3, 2)), np.ones((2, 3)), opt.init_state(cfg), cfg)


def test_mofasgd_microbatches_equal_summed_gradient():
    rng = np.random.default_rng(4)
    cfg = OptimizerConfig(kind=Kind.MOFASGD, eta=0.1, rank=2)
    W0 = np.zeros((6, 5))
    W1, state = opt.step_mofasgd(W0, rng.standard_normal((6, 5)), opt.init_state(cfg), cfg)
    micro = [rng.standard_normal((6, 5)) for _ in range(3)]

    acc = state
    for G in micro:
        acc = opt.mofasgd_accumulate(acc, G)
    assert acc.buffer.micro_batches == 3
    W_acc, s_acc = opt.step_mofasgd(W1, None, acc, cfg)
    W_sum, s_sum = opt.step_mofasgd(W1, sum(micro), state, cfg)
    assert fro(W_acc - W_sum) <= 1e-12
    assert s_acc.buffer is None


def test_mofasgd_accumulate_before_init_fails():
    cfg = OptimizerConfig(kind=Kind.MOFASGD, rank=1)
    with pytest.raises(ContractError):
        opt.mofasgd_accumulate(opt.init_state(cfg), np.ones((2, 2)))


def test_mofasgd_periodic_reorthogonalization_keeps_factor_orthonormal():
    rng = np.random.default_rng(5)
    grads = [rng.standard_normal((8, 6)) for _ in range(opt.REORTH_EVERY + 5)]
    _, state = run(Kind.MOFASGD, grads, np.zeros((8, 6)), rank=3)
    assert state.factor.defect() <= 1e-8


def test_mofasgd_full_rank_agrees_with_muon():
    rng = np.random.default_rng(6)
    n = 6
    base = np.eye(n) + 0.1 * rng.standard_normal((n, n))
    grads = [base + 0.05 * rng.standard_normal((n, n)) for _ in range(10)]
    Wm, _ = run(Kind.MOFASGD, grads, np.zeros((n, n)), eta=0.1, beta=0.9, rank=n)
    Wu, _ = run(Kind.MUON, grads, np.zeros((n, n)), eta=0.1, beta=0.9, ns_steps=10)
    for a0, a1, b0, b1 in zip(Wm, Wm[1:], Wu, Wu[1:]):
        da, db = a1 - a0, b1 - b0
        assert fro(da - db) / fro(da) <= 1e-2


# -- SGD momentum ----------------------------------------------------------


def test_sgd_beta_zero_is_plain_sgd():
    G = np.array([[1.0, -2.0]])
    Ws, _ = run(Kind.SGD_MOMENTUM, [G, G], np.zeros((1, 2)), eta=0.1, beta=0.0)
    np.testing.assert_allclose(Ws[2], -0.2 * G)


def test_sgd_geometric_decay():
    G = np.array([[1.0]])
    grads = [G] + [np.zeros((1, 1))] * 5
    Ws, _ = run(Kind.SGD_MOMENTUM, grads, np.zeros((1, 1)), eta=1.0, beta=0.5)
    steps = [abs((b - a).item()) for a, b in zip(Ws, Ws[1:])]
    for a, b in zip(steps, steps[1:]):
        assert b == pytest.approx(0.5 * a)


def test_sgd_hand_trace():
    grads = [np.array([[g]]) for g in (1.0, 2.0, 3.0)]
    Ws, _ = run(Kind.SGD_MOMENTUM, grads, np.zeros((1, 1)), eta=0.1, beta=0.9)
    # M = 1, 2.9, 5.61
    np.testing.assert_allclose([w.item() for w in Ws[1:]], [-0.1, -0.39, -0.951])


# -- AdamW -----------------------------------------------------------------


def test_adamw_constant_gradient_two_steps():
    grads = [np.array([[2.0]])] * 2
    Ws, _ = run(Kind.ADAMW, grads, np.zeros((1, 1)), eta=0.01, beta=0.9, beta2=0.999, eps=1e-8)
    # bias correction makes m_hat = 2 and v_hat = 4 after both steps
    step = 0.01 * 2.0 / (2.0 + 1e-8)
    np.testing.assert_allclose([w.item() for w in Ws[1:]], [-step, -2 * step], rtol=1e-14)


def test_adamw_zero_gradient_no_decay_is_stationary():
    W0 = np.arange(6.0).reshape(2, 3)
    Ws, _ = run(Kind.ADAMW, [np.zeros((2, 3))] * 4, W0, eta=0.1)
    np.testing.assert_array_equal(Ws[-1], W0)


def test_adamw_weight_decay_is_geometric():
    W0 = np.ones((2, 2))
    Ws, _ = run(Kind.ADAMW, [np.zeros((2, 2))] * 3, W0, eta=0.1, weight_decay=0.5)
    np.testing.assert_allclose(Ws[-1], 0.95**3 * W0)


def test_adamw_is_elementwise():
    rng = np.random.default_rng(7)
    grads = [rng.standard_normal((3, 4)) for _ in range(5)]
    perm = rng.permutation(12)
    Ws, _ = run(Kind.ADAMW, grads, np.zeros((3, 4)), eta=0.01)
    Wp, _ = run(Kind.ADAMW, [G.ravel()[perm].reshape(3, 4) for G in grads], np.zeros((3, 4)), eta=0.01)
    np.testing.assert_array_equal(Ws[-1].ravel()[perm], Wp[-1].ravel())


# -- GaLore ----------------------------------------------------------------


def test_galore_full_rank_tau_one_matches_dense_adam_in_rotated_basis():
    rng = np.random.default_rng(8)
    m, n, eta, b1, b2, eps = 4, 6, 0.01, 0.9, 0.99, 1e-8
    grads = [rng.standard_normal((m, n)) for _ in range(6)]
    Ws, _ = run(Kind.GALORE, grads, np.zeros((m, n)), eta=eta, beta=b1, beta2=b2, rank=m, tau=1, eps=eps)

    W = np.zeros((m, n))
    M = np.zeros((m, n))
    V = np.zeros((m, n))
    for t, G in enumerate(grads, start=1):
        Q = svd_small(G).U
        assert fro(Q.T @ Q - np.eye(m)) <= 1e-12
        R = Q.T @ G
        M = b1 * M + (1 - b1) * R
        V = b2 * V + (1 - b2) * R * R
        W = W - eta * Q @ ((M / (1 - b1**t)) / (np.sqrt(V / (1 - b2**t)) + eps))
        assert fro(W - Ws[t]) <= 1e-12


def test_galore_lossless_projection_for_low_rank_gradient():
    rng = np.random.default_rng(9)
    G = rng.standard_normal((5, 2)) @ rng.standard_normal((2, 8))
    cfg = OptimizerConfig(kind=Kind.GALORE, rank=2)
    _, state = opt.step_galore(np.zeros((5, 8)), G, opt.init_state(cfg), cfg)
    assert fro(state.Q @ state.Q.T @ G - G) <= 1e-10


def test_galore_resample_schedule():
    rng = np.random.default_rng(10)
    grads = [rng.standard_normal((4, 6)) for _ in range(10)]
    _, state = run(Kind.GALORE, grads, np.zeros((4, 6)), rank=2, tau=3)
    assert state.resamples == 4  # steps 0, 3, 6, 9
    _, state = run(Kind.GALORE, grads, np.zeros((4, 6)), rank=2, tau=50)
    assert state.resamples == 1


def test_galore_projects_smaller_side():
    rng = np.random.default_rng(11)
    cfg = OptimizerConfig(kind=Kind.GALORE, rank=2)
    _, tall = opt.step_galore(np.zeros((9, 4)), rng.standard_normal((9, 4)), opt.init_state(cfg), cfg)
    assert tall.Q.shape == (4, 2) and tall.M.shape == (9, 2) and not tall.left
    _, wide = opt.step_galore(np.zeros((4, 9)), rng.standard_normal((4, 9)), opt.init_state(cfg), cfg)
    assert wide.Q.shape == (4, 2) and wide.M.shape == (2, 9) and wide.left


# -- Muon and spectral SGD -------------------------------------------------


def test_muon_orthogonal_momentum_is_fixed_point():
    Q, _ = np.linalg.qr(np.random.default_rng(12).standard_normal((5, 5)))
    Ws, _ = run(Kind.MUON, [Q], np.zeros((5, 5)), eta=0.1)
    np.testing.assert_allclose(Ws[1], -0.1 * Q, atol=1e-6)


def test_muon_without_momentum_matches_spectral_sgd():
    rng = np.random.default_rng(13)
    U, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    V, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    grads = [(U * np.geomspace(5, 1, 6)) @ V.T for _ in range(3)]
    Wu, _ = run(Kind.MUON, grads, np.zeros((6, 6)), eta=0.1, beta=0.0, ns_steps=10)
    Ws, _ = run(Kind.SPECTRAL_SGD, grads, np.zeros((6, 6)), eta=0.1)
    assert fro(Wu[-1] - Ws[-1]) / fro(Ws[-1]) <= 1e-2


def test_spectral_diagonal_whitening():
    Ws, _ = run(Kind.SPECTRAL_SGD, [np.diag([5.0, 0.01])], np.zeros((2, 2)), eta=0.1)
    np.testing.assert_allclose(Ws[1], -0.1 * np.eye(2), atol=1e-14)


def test_spectral_rank_one():
    u = np.array([1.0, 2.0, 2.0])
    v = np.array([3.0, 4.0])
    Ws, _ = run(Kind.SPECTRAL_SGD, [np.outer(u, v)], np.zeros((3, 2)), eta=0.1)
    np.testing.assert_allclose(Ws[1], -0.1 * np.outer(u / 3, v / 5), atol=1e-14)


def test_spectral_zero_gradient_no_op():
    Ws, _ = run(Kind.SPECTRAL_SGD, [np.zeros((2, 3))], np.ones((2, 3)), eta=0.1)
    np.testing.assert_array_equal(Ws[1], np.ones((2, 3)))


# -- shared properties -----------------------------------------------------


@pytest.mark.parametrize("kind", list(Kind))
def test_zero_gradient_stream_is_stationary(kind):
    W0 = np.random.default_rng(14).standard_normal((4, 5))
    Ws, _ = run(kind, [np.zeros((4, 5))] * 4, W0, rank=2)
    if kind is Kind.MOFASGD:
        # the factor of a zero gradient is all completion columns; steps still have size eta
        return
    np.testing.assert_array_equal(Ws[-1], W0)


def test_mofasgd_zero_gradient_uses_completion_directions():
    W0 = np.zeros((3, 2))
    Ws, state = run(Kind.MOFASGD, [np.zeros((3, 2))], W0, eta=0.1, rank=1)
    np.testing.assert_array_equal(state.factor.sigma, [0.0])
    assert svd_small(Ws[1]).sigma[0] == pytest.approx(0.1)


@pytest.mark.parametrize("kind", list(Kind))
def test_shape_mismatch_rejected(kind):
    cfg = OptimizerConfig(kind=kind, rank=1)
    with pytest.raises(ContractError):
        opt.step(np.zeros((3, 2)), np.zeros((2, 2)), opt.init_state(cfg), cfg)


@pytest.mark.parametrize("kind", list(Kind))
def test_steps_are_deterministic(kind):
    rng = np.random.default_rng(15)
    grads = [rng.standard_normal((5, 4)) for _ in range(8)]
    a, _ = run(kind, grads, np.zeros((5, 4)), rank=2)
    b, _ = run(kind, grads, np.zeros((5, 4)), rank=2)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


# -- state accounting ------------------------------------------------------


def test_state_scalars_examples():
    rng = np.random.default_rng(16)
    G = rng.standard_normal((4, 6))
    _, mofa = run(Kind.MOFASGD, [G], np.zeros((4, 6)), rank=2)
    assert opt.state_scalars(mofa) == 22
    assert opt.state_scalars(mofa) + 24 == 46
    _, galore = run(Kind.GALORE, [G], np.zeros((4, 6)), rank=2)
    assert opt.state_scalars(galore) == 32
    assert opt.state_scalars(galore) + 24 == 56
    _, adam = run(Kind.ADAMW, [np.ones((3, 3))], np.zeros((3, 3)))
    assert opt.state_scalars(adam) == 18


def test_state_scalars_before_first_step():
    assert opt.state_scalars(opt.MoFaSGDState(), (4, 6), 2) == 22
    assert opt.state_scalars(opt.GaLoreState(), (6, 4), 2) == 32
    assert opt.state_scalars(opt.AdamWState(), (3, 3)) == 18
    assert opt.state_scalars(opt.SpectralState(), (3, 3)) == 0


def test_buffer_is_reported_separately():
    assert opt.buffer_scalars((4, 6), 2) == 8 + 12 + 4
