import math

import numpy as np
import pytest

from conftest import check_grad
from faircl import autograd as ag
from faircl.autograd import Tensor
from faircl.losses import (CTCLengthError, FairLossConfig, ctc_loss, ctc_loss_batch,
                           ctc_loss_graph, ctc_min_length, fairasr_loss, fsc, info_nce,
                           info_nce_unchecked)
from faircl.model import ModelConfig, encode, encoder_param_names, init_encoder, mean_pool
from oracles import ctc_brute_force, fsc_loop, info_nce_loop, random_log_probs


def _pairs(n):
    return np.concatenate([np.arange(n, 2 * n), np.arange(n)])


def _unit_rows(rng, n, d):
    z = rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


# -- InfoNCE ----------------------------------------------------------------------
def test_info_nce_identical_embeddings():
    z = Tensor(np.tile([0.6, 0.8], (4, 1)))
    assert info_nce(z, _pairs(2), 0.2).item() == pytest.approx(4 * math.log(3), abs=1e-12)


def test_info_nce_degenerate_two_samples_is_zero(rng):
    z = Tensor(_unit_rows(rng, 2, 3))
    assert info_nce_unchecked(z, [1, 0], 0.2).item() == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        info_nce(z, [1, 0], 0.2)


def test_info_nce_matches_scalar_loop(rng):
    for _ in range(20):
        z = _unit_rows(rng, 6, 4)
        got = info_nce(Tensor(z), _pairs(3), 0.2).item()
        assert abs(got - info_nce_loop(z, _pairs(3), 0.2)) < 1e-10


def test_info_nce_rejects_bad_pairing(rng):
    with pytest.raises(ValueError):
        info_nce(Tensor(_unit_rows(rng, 4, 3)), [0, 1, 2, 3], 0.2)


def test_info_nce_nonnegative(rng):
    for _ in range(50):
        n = int(rng.integers(2, 7))
        z = rng.normal(size=(2 * n, 3)) * 3
        assert info_nce(Tensor(z), _pairs(n), 0.2).item() >= 0


# -- FSC ---------------------------------------------------------------------------
def test_fsc_single_group_identical():
    z = Tensor(np.tile([1.0, 0.0], (4, 1)))
    assert fsc(z, ["a"] * 4, 0.2).item() == pytest.approx(4 * math.log(3), abs=1e-12)


def test_fsc_matches_scalar_loop(rng):
    for _ in range(20):
        z = _unit_rows(rng, 8, 4)
        groups = ["a", "b", "a", "b", "a", "b", "a", "b"]
        assert abs(fsc(Tensor(z), groups, 0.2).item() - fsc_loop(z, groups, 0.2)) < 1e-10


def test_fsc_collapses_to_info_nce_for_pair_groups(rng):
    for _ in range(100):
        n = int(rng.integers(2, 7))
        z = _unit_rows(rng, 2 * n, 5)
        groups = [f"g{i}" for i in range(n)] * 2
        a = fsc(Tensor(z), groups, 0.2).item()
        b = info_nce(Tensor(z), _pairs(n), 0.2).item()
        assert abs(a - b) < 1e-12


def test_fsc_nonnegative(rng):
    for _ in range(50):
        z = rng.normal(size=(8, 3)) * 3
        assert fsc(Tensor(z), list("aabbabab"), 0.2).item() >= 0


def test_fsc_requires_positive_for_every_anchor(rng):
    with pytest.raises(ValueError):
        fsc(Tensor(_unit_rows(rng, 4, 3)), ["a", "a", "b", "c"], 0.2)


def test_contrastive_gradients_match_finite_differences(rng):
    groups = list("abab" * 2)
    for _ in range(5):
        z = rng.uniform(-2, 2, size=(8, 3))
        check_grad(lambda t: info_nce(ag.l2_normalize(t), _pairs(4), 0.2), [z])
        check_grad(lambda t: fsc(ag.l2_normalize(t), groups, 0.2), [z])


# -- combined objective -------------------------------------------------------------
TINY = ModelConfig(n_mels=3, vocab_size=4, n_blocks=1, model_dim=4, ff_dim=6, conv_kernel=3,
                   subsample_factor=2, proj_hidden=5, proj_dim=3)


def _tiny_batch(rng, n=3, T=6):
    x = rng.normal(size=(2 * n, T, TINY.n_mels))
    mask = np.ones((2 * n, T), dtype=bool)
    mask[1, 4:] = False
    return x, mask, _pairs(n), ["a", "b", "a"] * 2


def _pooled(x, mask, params):
    h, sub = encode(x, mask, params, TINY)
    return mean_pool(h, sub)


def test_fairasr_value_is_nce_plus_lambda_fsc(rng):
    x, mask, pairs, groups = _tiny_batch(rng)
    params = init_encoder(TINY, 0)
    cfg = FairLossConfig(lam=0.3)
    hbar = _pooled(x, mask, params)
    total, parts = fairasr_loss(hbar, pairs, groups, params, cfg)
    from faircl.model import project
    z = project(hbar, params)
    expected = info_nce(z, pairs, 0.2).item() + 0.3 * fsc(z, groups, 0.2).item()
    assert total.item() == pytest.approx(expected, abs=1e-12)
    assert parts["info_nce"] + 0.3 * parts["fsc"] == pytest.approx(total.item(), abs=1e-12)


def _encoder_grads(rng_seed, cfg, grl, only_fsc=False):
    rng = np.random.default_rng(rng_seed)
    x, mask, pairs, groups = _tiny_batch(rng)
    params = init_encoder(TINY, 0, independent_head=not cfg.shared_embedding_space)
    hbar = _pooled(x, mask, params)
    total, parts = fairasr_loss(hbar, pairs, groups, params, cfg, grl=grl)
    if only_fsc:
        from faircl.model import project
        head = "head" if cfg.shared_embedding_space else "head_rev"
        h_in = ag.grad_reverse(hbar, cfg.grl_alpha) if grl else hbar
        total = fsc(project(h_in, params, head), groups, cfg.temperature)
    total.backward()
    return total.item(), {k: params[k].grad.copy() for k in params if params[k].grad is not None}


def test_lambda_zero_matches_info_nce_alone():
    cfg = FairLossConfig(lam=0.0)
    val, grads = _encoder_grads(5, cfg, grl=True)
    rng = np.random.default_rng(5)
    x, mask, pairs, _ = _tiny_batch(rng)
    params = init_encoder(TINY, 0)
    from faircl.model import project
    loss = info_nce(project(_pooled(x, mask, params), params), pairs, 0.2)
    loss.backward()
    assert val == loss.item()
    for k in encoder_param_names(params):
        np.testing.assert_array_equal(grads[k], params[k].grad)


@pytest.mark.parametrize("alpha", [1.0, 0.5])
def test_fsc_encoder_gradient_is_negated_by_grl(alpha):
    cfg = FairLossConfig(lam=1.0, grl_alpha=alpha)
    _, with_grl = _encoder_grads(9, cfg, grl=True, only_fsc=True)
    _, without = _encoder_grads(9, cfg, grl=False, only_fsc=True)
    for k in encoder_param_names(with_grl):
        assert np.max(np.abs(with_grl[k] + alpha * without[k])) < 1e-12
    for k in ("head.w1", "head.w2"):
        np.testing.assert_array_equal(with_grl[k], without[k])


def test_independent_head_uses_second_projection():
    cfg = FairLossConfig(lam=1.0, shared_embedding_space=False)
    _, grads = _encoder_grads(3, cfg, grl=True)
    assert "head_rev.w1" in grads and "head.w1" in grads


def test_independent_head_requires_parameters(rng):
    x, mask, pairs, groups = _tiny_batch(rng)
    params = init_encoder(TINY, 0)
    with pytest.raises(ValueError):
        fairasr_loss(_pooled(x, mask, params), pairs, groups, params,
                     FairLossConfig(shared_embedding_space=False))


def test_invalid_loss_config_rejected(rng):
    for cfg in (FairLossConfig(lam=-1), FairLossConfig(grl_alpha=0), FairLossConfig(temperature=0)):
        with pytest.raises(ValueError):
            cfg.validate()


def test_fairasr_gradient_matches_finite_differences(rng):
    """Without reversal the combined loss is an ordinary function of the pooled features."""
    _, _, pairs, groups = _tiny_batch(rng)
    params = {k: Tensor(v.data) for k, v in init_encoder(TINY, 0).items()}
    cfg = FairLossConfig(lam=0.5)
    for _ in range(3):
        h = rng.uniform(-2, 2, size=(6, TINY.model_dim))
        check_grad(lambda t: fairasr_loss(t, pairs, groups, params, cfg, grl=False)[0], [h])


# -- CTC ----------------------------------------------------------------------------------
def test_ctc_single_frame():
    lp = np.log(np.array([[0.3, 0.7]]))
    assert ctc_loss(Tensor(lp), [1]).item() == pytest.approx(-math.log(0.7), abs=1e-14)


def test_ctc_two_frames_three_alignments():
    p = np.array([[0.2, 0.8], [0.6, 0.4]])
    expected = -math.log(p[0, 1] * p[1, 1] + p[0, 1] * p[1, 0] + p[0, 0] * p[1, 1])
    assert ctc_loss(Tensor(np.log(p)), [1]).item() == pytest.approx(expected, abs=1e-14)


def _ctc_instances(rng, count):
    out = []
    while len(out) < count:
        T, V, L = int(rng.integers(1, 6)), int(rng.integers(2, 5)), int(rng.integers(1, 4))
        target = list(rng.integers(1, V, size=L))
        if ctc_min_length(target) <= T:
            out.append((random_log_probs(rng, T, V), target))
    return out


def test_ctc_matches_path_enumeration(rng):
    for lp, target in _ctc_instances(rng, 60):
        oracle = ctc_brute_force(lp, target)
        assert abs(ctc_loss(Tensor(lp), target).item() - oracle) < 1e-8
        assert abs(ctc_loss_graph(Tensor(lp), target).item() - oracle) < 1e-8


def test_ctc_kernel_gradient_matches_graph_gradient(rng):
    for lp, target in _ctc_instances(rng, 30):
        a, b = Tensor(lp, requires_grad=True), Tensor(lp, requires_grad=True)
        ctc_loss(a, target).backward()
        ctc_loss_graph(b, target).backward()
        np.testing.assert_allclose(a.grad, b.grad, atol=1e-10)


def test_ctc_gradient_through_log_softmax(rng):
    for _ in range(5):
        x = rng.uniform(-2, 2, size=(5, 4))
        check_grad(lambda t: ctc_loss(ag.log_softmax(t), [1, 2, 2]), [x])


def test_ctc_nonnegative(rng):
    for lp, target in _ctc_instances(rng, 50):
        assert ctc_loss(Tensor(lp), target).item() >= 0


def test_ctc_too_short_names_lengths():
    with pytest.raises(CTCLengthError, match="2 frames.*3 frames"):
        ctc_loss(Tensor(np.log(np.full((2, 3), 1 / 3))), [1, 1])


def test_ctc_batch_is_mean_and_ignores_padding(rng):
    lp = np.stack([random_log_probs(rng, 5, 4), random_log_probs(rng, 5, 4)])
    t = Tensor(lp, requires_grad=True)
    loss = ctc_loss_batch(t, [5, 3], [[1, 2], [3]])
    a = ctc_brute_force(lp[0], [1, 2])
    b = ctc_brute_force(lp[1, :3], [3])
    assert loss.item() == pytest.approx((a + b) / 2, abs=1e-10)
    loss.backward()
    assert np.all(t.grad[1, 3:] == 0)
