import dataclasses
import math

import numpy as np
import pytest
from conftest import brute_window
from hypothesis import given, settings
from hypothesis import strategies as st

from vaca.diffcalc import NonFiniteError, Tensor, check_gradients, check_param_gradients
from vaca.losses import (
    ElboTerms,
    LossConfig,
    _batch_terms,
    compatibility_loss,
    elbo,
    label_corr_loss,
    local_similarity,
    neighborhood_value,
    neighbour_index,
    reconstruction_loss,
    reg_loss,
    risk,
    risk_logic,
    sup_loss,
    vi_loss,
    vi_loss_logic,
)
from vaca.models import Arch, VacaModel

NARROW = Arch(geom_hidden=5, topo_hidden=5, dec_hidden=5, reg_hidden=5)


def _randomized(model, seed):
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        p.data[...] = rng.normal(scale=0.3, size=p.shape)
    return model


# -- neighbourhood indexing --------------------------------------------------------


def test_neighborhood_value_examples():
    one = np.array([[7.0]])
    assert all(neighborhood_value(one, 0, 0, h, w, 1) == 7.0 for h in range(3) for w in range(3))
    m = np.arange(16.0).reshape(4, 4)
    assert neighborhood_value(m, 2, 1, 1, 1, 1) == m[2, 1]
    assert neighborhood_value(np.arange(9.0).reshape(3, 3), 0, 0, 0, 0, 1) == 0.0
    assert neighborhood_value(m, 2, 1, 0, 2, 1) == m[1, 2]


@pytest.mark.parametrize("H,W,a", [(1, 1, 1), (3, 5, 1), (4, 4, 2), (2, 6, 3)])
def test_neighbour_index_matches_bruteforce(H, W, a):
    grid = np.random.default_rng(0).normal(size=(H, W))
    idx = neighbour_index(H, W, a)
    for j in range(H):
        for k in range(W):
            np.testing.assert_array_equal(grid.reshape(-1)[idx[j, k]], brute_window(grid, j, k, a))


# -- label-correlation regularizer -------------------------------------------------


def test_label_corr_examples():
    M = np.random.default_rng(1).uniform(size=(3, 3))
    assert label_corr_loss(np.full((3, 3), 2.0), M, 1, 1).item() == 0.0
    assert label_corr_loss(np.arange(9.0).reshape(3, 3), np.zeros((3, 3)), 1, 1).item() == 0.0
    # 1x2 map: only the slot mapping to the right-hand bin differs from the centre
    assert label_corr_loss(np.array([[1.0, 3.0]]), np.ones((3, 3)), 0, 0).item() == 2.0
    assert label_corr_loss(np.array([[1.0, 3.0]]), np.ones((3, 3)), 0, 1).item() == 2.0


def _reg_bruteforce(pred, M):
    H, W = pred.shape
    a = (M.shape[-1] - 1) // 2
    return sum(
        float(np.sum(M[j, k] * np.abs(pred[j, k] - brute_window(pred, j, k, a)))) for j in range(H) for k in range(W)
    )


@pytest.mark.parametrize("a", [1, 2])
def test_reg_loss_matches_bruteforce(a):
    rng = np.random.default_rng(a)
    pred = rng.normal(size=(4, 4))
    M = rng.uniform(size=(4, 4, 2 * a + 1, 2 * a + 1))
    assert reg_loss(pred, M).item() == pytest.approx(_reg_bruteforce(pred, M), rel=1e-13)
    per_bin = sum(label_corr_loss(pred, M[j, k], j, k).item() for j in range(4) for k in range(4))
    assert reg_loss(pred, M).item() == pytest.approx(per_bin, rel=1e-13)


@given(seed=st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_reg_loss_nonnegative_zero_on_constant(seed):
    rng = np.random.default_rng(seed)
    M = rng.uniform(0.01, 2, size=(3, 4, 3, 3))
    assert reg_loss(rng.normal(size=(3, 4)), M).item() > 0
    assert reg_loss(np.full((3, 4), rng.normal()), M).item() == 0.0


def test_risk_examples():
    rng = np.random.default_rng(2)
    pred, target = rng.uniform(1, 2, (4, 4)), rng.uniform(1, 2, (4, 4))
    M = rng.uniform(size=(4, 4, 3, 3))
    cfg0 = LossConfig(lam=0.0)
    assert risk([Tensor(pred)], [target], [M], cfg0).item() == pytest.approx(np.sum((pred - target) ** 2))
    mean_cfg = LossConfig(lam=0.0, sup_reduction="mean")
    assert risk([Tensor(pred)], [target], [M], mean_cfg).item() == pytest.approx(np.mean((pred - target) ** 2))
    assert risk([Tensor(target)], [target], [np.zeros_like(M)], LossConfig()).item() == 0.0
    batch = risk([Tensor(pred), Tensor(target)], [target, target], [M, M], LossConfig(lam=0.3)).item()
    single = sup_loss(pred, target, "sum").item() + 0.3 * reg_loss(pred, M).item() + 0.3 * reg_loss(target, M).item()
    assert batch == pytest.approx(single / 2)


def test_risk_monotone_in_lambda():
    rng = np.random.default_rng(3)
    pred, target, M = rng.normal(size=(4, 4)), rng.normal(size=(4, 4)), rng.uniform(size=(4, 4, 3, 3))
    values = [risk([Tensor(pred)], [target], [M], LossConfig(lam=lam)).item() for lam in (0, 0.01, 0.1, 1, 10)]
    assert values == sorted(values)


def test_risk_logic_zero_at_target():
    t = np.random.default_rng(4).uniform(1, 2, (3, 3))
    assert risk_logic([Tensor(t)], [t]).item() == 0.0


# -- reconstruction, similarity, compatibility --------------------------------------


def test_reconstruction_examples():
    rng = np.random.default_rng(5)
    phi, psi = rng.normal(size=(4, 4, 3)), rng.normal(size=(5, 8))
    A = np.zeros((5, 5))
    big = np.full((5, 5), -50.0)  # sigmoid(-50) ~ 0
    assert reconstruction_loss(phi, phi, psi, psi, A, big).item() == pytest.approx(0.0, abs=1e-40)
    zero_logits = np.zeros((5, 5))
    assert reconstruction_loss(None, None, psi, psi, A, zero_logits).item() == pytest.approx(0.25 * 25)
    r = rng.normal(size=psi.shape)
    one = reconstruction_loss(None, None, psi, psi + r, A, big).item()
    two = reconstruction_loss(None, None, psi, psi + 2 * r, A, big).item()
    assert two == pytest.approx(4 * one, rel=1e-12)


def test_local_similarity_examples():
    cfg = LossConfig(sigma_sim=0.5)
    y = np.array([[1.0, 1.5]])  # |dy| = 0.5 = 2 sigma^2
    S = local_similarity(y, cfg)
    assert S[0, 0, 1, 2] == pytest.approx(math.exp(-1.0))
    assert S[0, 0, 1, 1] == 1.0
    np.testing.assert_array_equal(local_similarity(np.full((4, 4), 3.0), LossConfig()), np.ones((4, 4, 3, 3)))


@given(seed=st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_similarity_centre_plane_and_reflection(seed):
    y = np.random.default_rng(seed).uniform(0.1, 5, (5, 6))
    S = local_similarity(y, LossConfig(a=2))
    assert np.all(S[:, :, 2, 2] == 1.0)
    assert np.all((S > 0) & (S <= 1))
    # slot (h, w) of (j, k) and the mirrored slot of its neighbour see the same pair
    for j in range(1, 4):
        for k in range(1, 5):
            assert S[j, k, 1, 3] == S[j - 1, k + 1, 3, 1]


def test_compatibility_examples():
    rng = np.random.default_rng(6)
    S = rng.uniform(size=(3, 3, 3, 3))
    assert compatibility_loss([S], [S]).item() == 0.0
    M = S.copy()
    M[1, 2, 0, 0] += 0.1
    assert compatibility_loss([M], [S]).item() == pytest.approx(0.1)
    M2 = rng.uniform(size=S.shape)
    assert compatibility_loss([M2, M], [S, S]).item() == pytest.approx(np.abs(M2 - S).sum() + 0.1)


# -- ELBO and VI objectives --------------------------------------------------------


def test_tau_zero_gives_negative_elbo(tiny_batch):
    m = _randomized(VacaModel(NARROW, seed=0), 1)
    cfg = LossConfig(tau=0.0)
    assert vi_loss(tiny_batch, m, cfg, seed=3).item() == -elbo(tiny_batch, m, cfg, seed=3).item()
    cfg2 = LossConfig(tau=2.0)
    base = vi_loss(tiny_batch, m, cfg, seed=3).item()
    compat = sum(t.compat.item() for t in _batch_terms(tiny_batch, m, cfg2, 3, True, "marsaglia_tsang"))
    assert vi_loss(tiny_batch, m, cfg2, seed=3).item() == pytest.approx(base + 2.0 * compat, rel=1e-12)


def test_elbo_zero_for_perfect_terms():
    zero = Tensor(np.array(0.0))
    terms = [ElboTerms(zero, zero, zero, Tensor(np.array(1.5)))]
    assert elbo([None], None, LossConfig(), 0, terms=terms).item() == 0.0


def test_vi_loss_is_deterministic_given_seed(tiny_batch):
    m = VacaModel(NARROW, seed=1)
    assert vi_loss(tiny_batch, m, LossConfig(), 4).item() == vi_loss(tiny_batch, m, LossConfig(), 4).item()
    assert vi_loss(tiny_batch, m, LossConfig(), 4).item() != vi_loss(tiny_batch, m, LossConfig(), 5).item()


def test_vi_loss_gradients(tiny_batch):
    m = _randomized(VacaModel(NARROW, seed=2), 7)
    cfg = LossConfig()
    params = [p for _, p in m.groups["vi"]]
    err = check_param_gradients(lambda: vi_loss(tiny_batch, m, cfg, 11, gamma_method="inverse_cdf"), params)
    assert err <= 1e-4


def test_vi_loss_logic_gradients(tiny_batch):
    m = _randomized(VacaModel(dataclasses.replace(NARROW, mode="logic"), seed=3), 8)
    params = [p for _, p in m.groups["vi"]]
    assert check_param_gradients(lambda: vi_loss_logic(tiny_batch, m, LossConfig(), 12), params) <= 1e-4


def test_risk_gradients(tiny_batch):
    rng = np.random.default_rng(9)
    M = rng.uniform(size=(4, 4, 3, 3))
    x = rng.uniform(1, 3, (4, 4))
    t = tiny_batch[0].target
    assert check_gradients(lambda p: risk([p], [t], [M], LossConfig(lam=0.5)), x) <= 1e-4


def test_negative_elbo_decreases_under_adam(tiny_batch):
    from vaca.trainer import Adam

    m = VacaModel(NARROW, seed=4)
    opt = Adam(m.groups["vi"], lr=1e-3)
    cfg = LossConfig()
    history = []
    for _ in range(51):
        opt.zero_grad()
        # common random numbers: the same draw each step isolates the optimizer's trend from MC noise
        loss = -elbo(tiny_batch, m, cfg, seed=0)
        history.append(loss.item())
        loss.backward()
        opt.step()
    ups = sum(b > a for a, b in zip(history, history[1:]))
    assert history[-1] < history[0]
    assert ups <= 5


def test_non_finite_term_is_named(tiny_batch):
    m = VacaModel(NARROW, seed=5)
    m.eta.topo2.bias.data[:] = 1e200
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError, match="VI objective diverged"):
        vi_loss(tiny_batch, m, LossConfig(), 0)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(lam=-1)
    with pytest.raises(ValueError):
        LossConfig(a=0)
    with pytest.raises(ValueError):
        LossConfig(sigma_sim=0.0)
    with pytest.raises(ValueError):
        LossConfig(sup_reduction="median")
