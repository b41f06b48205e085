"""WER, WER gap, greedy CTC decoding, demographic probe, 2-D projection, cohort reports."""
from __future__ import annotations

import csv
import io
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from faircl import kernels
from faircl.autograd import Tensor
from faircl.data import Utterance, pad_batch
from faircl.model import ModelConfig, Params, decode_logits, encode

log = logging.getLogger(__name__)


def edit_distance(ref: Sequence[int], hyp: Sequence[int]) -> tuple[int, int, int]:
    """(S, D, I) of a minimal unit-cost alignment of ``hyp`` against ``ref``."""
    return kernels.edit_ops(np.asarray(list(ref), dtype=np.int64),
                            np.asarray(list(hyp), dtype=np.int64))


def wer(pairs: Sequence[tuple[Sequence[int], Sequence[int]]]) -> float:
    """Corpus-level WER: total edits over total reference words."""
    errors = words = 0
    for ref, hyp in pairs:
        errors += sum(edit_distance(ref, hyp))
        words += len(ref)
    if words == 0:
        raise ValueError("wer: reference word count is zero")
    return errors / words


def wer_gap(cohort_wers: dict[str, float]) -> float:
    """100 * (max - min) / max over cohorts."""
    if len(cohort_wers) < 2:
        raise ValueError("wer_gap needs at least two cohorts")
    hi, lo = max(cohort_wers.values()), min(cohort_wers.values())
    if hi == 0:
        return 0.0
    return 100.0 * (hi - lo) / hi


def greedy_ctc_decode(log_probs, blank: int = 0) -> list[int]:
    """Best path: per-frame argmax, merge repeats, drop blanks."""
    path = np.asarray(log_probs).argmax(axis=-1)
    out, prev = [], None
    for k in path:
        k = int(k)
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


def transcribe(corpus: Sequence[Utterance], params: Params, cfg: ModelConfig,
               batch_size: int = 64, blank: int = 0) -> list[list[int]]:
    frozen = {k: Tensor(v.data) for k, v in params.items()}
    hyps = []
    for i in range(0, len(corpus), batch_size):
        x, mask = pad_batch([u.spec for u in corpus[i:i + batch_size]])
        h, sub = encode(x, mask, frozen, cfg)
        lp = decode_logits(h, sub, frozen).data
        for b, n in enumerate(sub.sum(axis=1)):
            hyps.append(greedy_ctc_decode(lp[b, :n], blank))
    return hyps


# -- reports -----------------------------------------------------------------------
@dataclass
class EvalReport:
    cohorts: dict[str, dict[str, tuple[int, float]]] = field(default_factory=dict)
    gaps: dict[str, float] = field(default_factory=dict)
    total_wer: float = 0.0
    n_utterances: int = 0

    def to_text(self, title: str = "") -> str:
        lines = [title] if title else []
        lines.append(f"{'cohort':<28}{'count':>8}{'WER %':>10}")
        for attr, rows in self.cohorts.items():
            lines.append(f"[{attr}]")
            for cohort, (n, w) in rows.items():
                lines.append(f"  {cohort:<26}{n:>8d}{100 * w:>10.2f}")
            gap = self.gaps.get(attr)
            lines.append(f"  {'WER gap (%)':<26}{'-':>8}{gap:>10.1f}" if gap is not None
                         else f"  {'WER gap (%)':<26}{'-':>8}{'n/a':>10}")
        lines.append(f"{'Total WER':<28}{self.n_utterances:>8d}{100 * self.total_wer:>10.2f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["attribute", "cohort", "count", "wer", "gap"])
        for attr, rows in self.cohorts.items():
            gap = self.gaps.get(attr)
            for cohort, (n, rate) in rows.items():
                w.writerow([attr, cohort, n, f"{rate:.6f}", "" if gap is None else f"{gap:.4f}"])
        w.writerow(["total", "all", self.n_utterances, f"{self.total_wer:.6f}", ""])
        return buf.getvalue()


def report_from_pairs(pairs: Sequence[tuple[Sequence[int], Sequence[int]]],
                      demographics: Sequence[dict[str, str]],
                      attributes: Sequence[str]) -> EvalReport:
    rep = EvalReport(total_wer=wer(pairs), n_utterances=len(pairs))
    for attr in attributes:
        groups: dict[str, list] = defaultdict(list)
        for pair, demo in zip(pairs, demographics):
            groups[demo[attr]].append(pair)
        rows = {}
        for cohort in sorted(groups):
            members = groups[cohort]
            if sum(len(r) for r, _ in members) == 0:
                log.warning("cohort %s=%s has no reference words; omitted", attr, cohort)
                continue
            rows[cohort] = (len(members), wer(members))
        rep.cohorts[attr] = rows
        if len(rows) >= 2:
            rep.gaps[attr] = wer_gap({c: w for c, (_, w) in rows.items()})
        else:
            log.warning("attribute %s has fewer than two cohorts; gap omitted", attr)
    return rep


def evaluate(params: Params, cfg: ModelConfig, test: Sequence[Utterance],
             attributes: Sequence[str], blank: int = 0) -> EvalReport:
    """Greedy-decode every test utterance and tabulate per-cohort WER and gaps."""
    for utt in test:
        if max(utt.transcript) >= cfg.vocab_size:
            raise ValueError(f"utterance {utt.id} uses tokens outside the model vocabulary")
    hyps = transcribe(test, params, cfg, blank=blank)
    pairs = [(u.transcript, h) for u, h in zip(test, hyps)]
    return report_from_pairs(pairs, [u.demographics for u in test], attributes)


def comparison_rows(columns: Sequence[tuple[dict[str, str], EvalReport]]) -> list[list[str]]:
    """Side-by-side grid: header rows from each column's settings, then per-cohort
    WER (%) and the gap for every attribute, then total WER."""
    settings = list(columns[0][0]) if columns else []
    rows = [[name] + [c[name] for c, _ in columns] for name in settings]
    attrs = list(dict.fromkeys(a for _, rep in columns for a in rep.cohorts))
    for attr in attrs:
        rows.append([f"[{attr}]"] + [""] * len(columns))
        cohorts = sorted({c for _, rep in columns for c in rep.cohorts.get(attr, {})})
        for cohort in cohorts:
            cells = []
            for _, rep in columns:
                hit = rep.cohorts.get(attr, {}).get(cohort)
                cells.append("-" if hit is None else f"{100 * hit[1]:.2f}")
            rows.append([f"  {cohort}"] + cells)
        rows.append(["  WER gap (%)"] + [f"{rep.gaps[attr]:.1f}" if attr in rep.gaps else "n/a"
                                         for _, rep in columns])
    rows.append(["Total WER (%)"] + [f"{100 * rep.total_wer:.2f}" for _, rep in columns])
    return rows


def comparison_text(columns: Sequence[tuple[dict[str, str], EvalReport]]) -> str:
    rows = comparison_rows(columns)
    first = max(len(r[0]) for r in rows) + 2
    width = max([len(c) for r in rows for c in r[1:]] + [6]) + 2
    return "".join(f"{r[0]:<{first}}" + "".join(f"{c:>{width}}" for c in r[1:]) + "\n"
                   for r in rows)


def comparison_csv(columns: Sequence[tuple[dict[str, str], EvalReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in comparison_rows(columns):
        w.writerow([r[0].strip()] + r[1:])
    return buf.getvalue()


# -- probe ----------------------------------------------------------------------------
@dataclass
class ProbeResult:
    attribute: str
    train_accuracy: float
    test_accuracy: float
    chance: float
    n_classes: int


def demographic_probe(embeddings: np.ndarray, labels: Sequence[str], attribute: str = "",
                      seed: int = 0, steps: int = 500, lr: float = 0.1) -> ProbeResult:
    """Softmax regression on standardized embeddings, seeded 80/20 split.

    Chance is the majority-class share of the test split.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    classes, y = np.unique(np.asarray(labels), return_inverse=True)
    counts = np.bincount(y)
    if len(classes) < 2 or counts.min() < 2:
        raise ValueError("probe needs at least two cohorts with two samples each")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(y))
    n_test = max(1, int(round(0.2 * len(y))))
    te, tr = order[:n_test], order[n_test:]
    mu, sd = X[tr].mean(axis=0), X[tr].std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    Xs = (X - mu) / sd
    Xtr = np.hstack([Xs[tr], np.ones((len(tr), 1))])
    Xte = np.hstack([Xs[te], np.ones((len(te), 1))])
    K = len(classes)
    W = np.zeros((Xtr.shape[1], K))
    Y = np.eye(K)[y[tr]]
    for _ in range(steps):
        logits = Xtr @ W
        logits -= logits.max(axis=1, keepdims=True)
        P = np.exp(logits)
        P /= P.sum(axis=1, keepdims=True)
        W -= lr * Xtr.T @ (P - Y) / len(tr)
    train_acc = float(np.mean((Xtr @ W).argmax(axis=1) == y[tr]))
    test_acc = float(np.mean((Xte @ W).argmax(axis=1) == y[te]))
    chance = float(np.bincount(y[te], minlength=K).max() / len(te))
    return ProbeResult(attribute, train_acc, test_acc, chance, K)


# -- 2-D projection ------------------------------------------------------------------
def top_eigenpairs(cov: np.ndarray, k: int = 2, tol: float = 1e-12, max_iter: int = 100000,
                   seed: int = 0):
    """Leading eigenpairs of a symmetric PSD matrix by power iteration with deflation."""
    A = np.array(cov, dtype=np.float64)
    rng = np.random.default_rng(seed)
    vals, vecs = [], []
    for _ in range(k):
        v = rng.normal(size=A.shape[0])
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(max_iter):
            w = A @ v
            nw = np.linalg.norm(w)
            if nw < 1e-300:
                lam = 0.0
                break
            w /= nw
            new_lam = float(w @ A @ w)
            converged = abs(new_lam - lam) <= tol * max(1.0, abs(new_lam)) and \
                min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < 1e3 * tol
            v, lam = w, new_lam
            if converged:
                break
        vals.append(lam)
        vecs.append(v)
        A = A - lam * np.outer(v, v)
    return np.array(vals), np.stack(vecs, axis=1)


def project_2d(embeddings: np.ndarray) -> np.ndarray:
    """Mean-centered coordinates on the top two principal directions."""
    X = np.asarray(embeddings, dtype=np.float64)
    if X.shape[0] < 3:
        raise ValueError("project_2d needs at least 3 samples")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / X.shape[0]
    vals, vecs = top_eigenpairs(cov, 2)
    coords = Xc @ vecs
    if vals[1] <= 1e-12 * max(vals[0], 1e-300):
        log.warning("embeddings have rank < 2; second coordinate zeroed")
        coords[:, 1] = 0.0
    # deterministic sign: largest-magnitude loading positive
    for j in range(2):
        if vecs[np.argmax(np.abs(vecs[:, j])), j] < 0:
            coords[:, j] *= -1
    return coords
