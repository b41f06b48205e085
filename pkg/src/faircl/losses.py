"""InfoNCE, fair supervised contrastive (FSC), the combined objective, and CTC."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from faircl import autograd as ag
from faircl import kernels
from faircl.autograd import Tensor
from faircl.model import Params, project

# finite stand-in for -inf on the self-similarity diagonal: exp underflows to
# exactly 0, and multiplying by a zero weight stays finite
SELF_MASK = -1e9


class CTCLengthError(ValueError):
    pass


@dataclass
class FairLossConfig:
    lam: float = 0.1
    grl_alpha: float = 1.0
    shared_embedding_space: bool = True
    temperature: float = 0.2

    def validate(self) -> None:
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not self.grl_alpha > 0:
            raise ValueError(f"grl_alpha must be > 0, got {self.grl_alpha}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")


def _log_prob_matrix(z: Tensor, temperature: float) -> Tensor:
    """Row i holds log[exp(z_i.z_j/t) / sum_{a != i} exp(z_i.z_a/t)]."""
    n = z.shape[0]
    sim = ag.scale(z @ ag.transpose(z), 1.0 / temperature)
    sim = sim + np.where(np.eye(n, dtype=bool), SELF_MASK, 0.0)
    return sim - ag.logsumexp(sim, axis=1, keepdims=True)


def _check_pairing(pair_of: np.ndarray) -> np.ndarray:
    pair_of = np.asarray(pair_of, dtype=np.int64)
    idx = np.arange(len(pair_of))
    if np.any(pair_of == idx) or not np.array_equal(pair_of[pair_of], idx):
        raise ValueError("pair_of must be an involution without fixed points")
    return pair_of


def info_nce_unchecked(z: Tensor, pair_of, temperature: float) -> Tensor:
    pair_of = np.asarray(pair_of, dtype=np.int64)
    lp = _log_prob_matrix(z, temperature)
    return -ag.tsum(lp[np.arange(z.shape[0]), pair_of])


def info_nce(z: Tensor, pair_of, temperature: float = 0.2) -> Tensor:
    """Summed over all 2N anchors; the positive stays in each denominator."""
    if z.shape[0] < 4:
        raise ValueError(f"info_nce needs 2N >= 4 samples, got {z.shape[0]}")
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    return info_nce_unchecked(z, _check_pairing(pair_of), temperature)


def positive_weights(group_key: Sequence[str]) -> np.ndarray:
    """W[i, p] = 1/|P(i)| for same-group p != i, else 0."""
    keys = np.asarray(group_key, dtype=object)
    same = keys[:, None] == keys[None, :]
    np.fill_diagonal(same, False)
    counts = same.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("fsc: an anchor has no same-group positive")
    return same / counts[:, None]


def fsc(z: Tensor, group_key: Sequence[str], temperature: float = 0.2) -> Tensor:
    """Supervised contrastive loss over demographic groups, summed over anchors."""
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    w = positive_weights(group_key)
    return -ag.tsum(_log_prob_matrix(z, temperature) * w)


def fairasr_loss(hbar: Tensor, pair_of, group_key: Sequence[str], params: Params,
                 cfg: FairLossConfig, normalize: bool = True, grl: bool = True):
    """InfoNCE on g(h) plus lambda times FSC on g(GRL(h)).

    The reversal sits between pooling and the projection head: the head
    receives the ordinary FSC gradient, the encoder receives it scaled by
    -alpha. ``grl=False`` drops the reversal (used for diagnostics).
    Returns the total loss and a dict of component values.
    """
    cfg.validate()
    z = project(hbar, params, "head", normalize)
    h_rev = ag.grad_reverse(hbar, cfg.grl_alpha) if grl else hbar
    rev_head = "head" if cfg.shared_embedding_space else "head_rev"
    if rev_head not in {k.rsplit(".", 1)[0] for k in params}:
        raise ValueError("independent embedding space requires 'head_rev' parameters")
    z_rev = project(h_rev, params, rev_head, normalize)
    l_nce = info_nce(z, pair_of, cfg.temperature)
    l_fsc = fsc(z_rev, group_key, cfg.temperature)
    total = l_nce + ag.scale(l_fsc, cfg.lam)
    return total, {"info_nce": l_nce.item(), "fsc": l_fsc.item()}


# -- CTC ------------------------------------------------------------------------
def ctc_min_length(target: Sequence[int]) -> int:
    """Frames needed: one per token plus a separating blank per adjacent repeat."""
    t = list(target)
    return len(t) + sum(1 for a, b in zip(t, t[1:]) if a == b)


def _check_ctc(T: int, target) -> None:
    need = ctc_min_length(target)
    if T < need:
        raise CTCLengthError(f"ctc: {T} frames cannot emit a target needing {need} frames")


def ctc_loss(log_probs: Tensor, target: Sequence[int], blank: int = 0) -> Tensor:
    """-log P(target | x) for one T' x V matrix, via the log-space forward-backward kernel."""
    _check_ctc(log_probs.shape[0], target)
    tgt = np.asarray(target, dtype=np.int64)
    nll, grad = kernels.ctc_forward_backward(log_probs.data, tgt, blank)
    return ag.custom_op((log_probs,), np.array(nll), lambda g: (g * grad,), "ctc")


def ctc_loss_graph(log_probs: Tensor, target: Sequence[int], blank: int = 0) -> Tensor:
    """Same quantity with the forward recursion built from autodiff ops.

    Slow; kept as an independent route whose gradient comes from the engine
    rather than the kernel's alpha-beta formula.
    """
    _check_ctc(log_probs.shape[0], target)
    T = log_probs.shape[0]
    ext = [blank]
    for tok in target:
        ext += [int(tok), blank]
    S = len(ext)
    emit = log_probs[:, ext]  # T x S
    alpha: list[Tensor | None] = [None] * S
    alpha[0] = emit[0, 0]
    if S > 1:
        alpha[1] = emit[0, 1]
    for t in range(1, T):
        new: list[Tensor | None] = [None] * S
        for s in range(S):
            terms = [a for a in (alpha[s], alpha[s - 1] if s >= 1 else None,
                                 alpha[s - 2] if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]
                                 else None) if a is not None]
            if terms:
                new[s] = ag.logsumexp(ag.stack(terms), axis=0) + emit[t, s]
        alpha = new
    finals = [a for a in alpha[max(0, S - 2):] if a is not None]
    return -ag.logsumexp(ag.stack(finals), axis=0)


def ctc_loss_batch(log_probs: Tensor, lengths: Sequence[int], targets: Sequence[Sequence[int]],
                   blank: int = 0) -> Tensor:
    """Mean CTC loss over a padded B x T' x V batch; frames past each length are ignored."""
    B = log_probs.shape[0]
    grad = np.zeros_like(log_probs.data)
    total = 0.0
    for b in range(B):
        L = int(lengths[b])
        _check_ctc(L, targets[b])
        nll, g = kernels.ctc_forward_backward(log_probs.data[b, :L],
                                              np.asarray(targets[b], dtype=np.int64), blank)
        total += nll
        grad[b, :L] = g
    grad /= B
    return ag.custom_op((log_probs,), np.array(total / B), lambda g: (g * grad,), "ctc_batch")
