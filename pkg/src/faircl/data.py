"""Synthetic multi-demographic corpora, manifests, splits and contrastive batches."""
from __future__ import annotations

import json
import logging
import struct
import wave
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from faircl.features import (AugmentPolicy, MelSpectrogram, mel_spectrogram,
                             normalize_utterance, spec_augment)

log = logging.getLogger(__name__)

COMPOSITE = "composite"

DEFAULT_CATEGORIES = {
    "age_band": ["18-22", "23-30", "31-45", "46-65"],
    "gender": ["female", "male"],
    "ethnicity": ["asn", "blk", "hsp", "mea", "nai", "nhp", "wht"],
    "socioeconomic": ["low", "medium", "affluent"],
    "first_language": ["english", "non-english"],
}


class ManifestError(ValueError):
    pass


@dataclass
class Utterance:
    id: str
    spec: MelSpectrogram
    transcript: tuple[int, ...]
    demographics: dict[str, str]

    def __post_init__(self):
        self.transcript = tuple(int(t) for t in self.transcript)
        if not self.transcript:
            raise ValueError(f"utterance {self.id}: empty transcript")
        if min(self.transcript) < 1:
            raise ValueError(f"utterance {self.id}: token id 0 is reserved for the CTC blank")


def group_key(demographics: dict[str, str], attribute: str = COMPOSITE) -> str:
    """Cohort key for one attribute, or the tuple of all attributes for ``composite``."""
    if attribute == COMPOSITE:
        return "|".join(f"{k}={v}" for k, v in demographics.items())
    try:
        return demographics[attribute]
    except KeyError:
        raise KeyError(f"demographic attribute {attribute!r} not present") from None


def parse_schema(text: str) -> list[tuple[str, int]]:
    """``"gender,age_band:3"`` -> [("gender", 2), ("age_band", 3)]."""
    out = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        name, _, count = item.partition(":")
        if count:
            n = int(count)
        elif name in DEFAULT_CATEGORIES:
            n = len(DEFAULT_CATEGORIES[name])
        else:
            raise ValueError(f"attribute {name!r} needs an explicit category count")
        if n < 1:
            raise ValueError(f"attribute {name!r} needs at least one category")
        out.append((name, n))
    return out


def category_names(name: str, n: int) -> list[str]:
    known = DEFAULT_CATEGORIES.get(name, [])
    return [known[i] if i < len(known) else f"{name}_{i}" for i in range(n)]


@dataclass
class SyntheticCorpusConfig:
    n_utterances: int = 256
    vocab_size: int = 8
    min_tokens: int = 3
    max_tokens: int = 5
    frames_per_token: int = 4
    n_mels: int = 16
    signature_strength: float = 3.0
    noise_std: float = 0.5
    attributes: str = "gender,age_band"
    # weight of category k is category_skew**k; 1.0 gives balanced cohorts
    category_skew: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2 (blank plus one symbol)")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ValueError("need 1 <= min_tokens <= max_tokens")
        if self.frames_per_token < 1 or self.n_mels < 1 or self.n_utterances < 1:
            raise ValueError("frames_per_token, n_mels and n_utterances must be positive")
        if self.signature_strength < 0 or self.noise_std < 0:
            raise ValueError("signature_strength and noise_std must be non-negative")
        if not 0 < self.category_skew <= 1:
            raise ValueError("category_skew must lie in (0, 1]")
        parse_schema(self.attributes)


def _f32(a: np.ndarray) -> np.ndarray:
    # values representable in float32 survive the feature-file round trip exactly
    return a.astype(np.float32).astype(np.float64)


def generate_synthetic_corpus(cfg: SyntheticCorpusConfig) -> list[Utterance]:
    """Token templates plus a per-cohort spectral offset plus i.i.d. noise.

    Every token id owns a fixed frames_per_token x n_mels template. Each
    composite demographic key owns a direction in mel space, scaled to norm
    ``signature_strength`` and added to every frame of its utterances.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    schema = parse_schema(cfg.attributes)
    templates = rng.normal(size=(cfg.vocab_size, cfg.frames_per_token, cfg.n_mels))

    signatures: dict[str, np.ndarray] = {}
    names = [category_names(a, n) for a, n in schema]
    weights = []
    for _, n in schema:
        w = cfg.category_skew ** np.arange(n)
        weights.append(w / w.sum())

    corpus = []
    for u in range(cfg.n_utterances):
        demo = {a: names[k][rng.choice(n, p=weights[k])] for k, (a, n) in enumerate(schema)}
        key = group_key(demo)
        if key not in signatures:
            # seeded by the key itself so signatures do not depend on draw order
            key_rng = np.random.default_rng([cfg.seed, *key.encode()])
            d = key_rng.normal(size=cfg.n_mels)
            signatures[key] = cfg.signature_strength * d / np.linalg.norm(d)
        n_tok = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
        tokens = rng.integers(1, cfg.vocab_size, size=n_tok)
        body = np.concatenate([templates[t] for t in tokens], axis=0)
        noise = rng.normal(scale=cfg.noise_std, size=body.shape) if cfg.noise_std > 0 else 0.0
        values = _f32(body + signatures[key][None, :] + noise)
        corpus.append(Utterance(f"utt{u:05d}", MelSpectrogram(values), tuple(tokens), demo))
    return corpus


# -- feature files -------------------------------------------------------
def write_features(path, spec: MelSpectrogram) -> None:
    arr = np.ascontiguousarray(spec.values, dtype="<f4")
    with open(path, "wb") as f:
        f.write(struct.pack("<II", *arr.shape))
        f.write(arr.tobytes())


def read_features(path) -> MelSpectrogram:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated feature header")
    T, M = struct.unpack("<II", raw[:8])
    if len(raw) != 8 + 4 * T * M:
        raise ValueError(f"{path}: expected {T}x{M} float32 payload, got {len(raw) - 8} bytes")
    vals = np.frombuffer(raw, dtype="<f4", offset=8).reshape(T, M)
    return MelSpectrogram(vals.astype(np.float64))


def read_wav(path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2:
            raise ValueError(f"{path}: only 16-bit PCM is supported")
        rate = w.getframerate()
        pcm = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
        if w.getnchannels() > 1:
            pcm = pcm.reshape(-1, w.getnchannels()).mean(axis=1)
    return pcm.astype(np.float64) / 32768.0, rate


# -- manifests -------------------------------------------------------------
def write_manifest(corpus: Sequence[Utterance], path, feature_dir: str = "features") -> None:
    """One JSON record per line; spectrograms go to float32 feature files."""
    path = Path(path)
    fdir = path.parent / feature_dir
    fdir.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for utt in corpus:
            rel = f"{feature_dir}/{utt.id}.feat"
            write_features(path.parent / rel, utt.spec)
            rec = {"id": utt.id, "features": rel,
                   "transcript": " ".join(str(t) for t in utt.transcript),
                   "demographics": utt.demographics}
            f.write(json.dumps(rec, sort_keys=False) + "\n")


def load_manifest(path, n_mels: int = 80, frame_len: int = 400, hop: int = 160,
                  max_audio_samples: int | None = None,
                  schema: Sequence[str] | None = None) -> list[Utterance]:
    """Parse a line-oriented manifest into utterances.

    Records either point at a feature file or at a 16 kHz WAV file, which is
    converted with :func:`mel_spectrogram` and normalized per utterance.
    Audio longer than ``max_audio_samples`` is skipped.
    """
    path = Path(path)
    base = path.parent
    corpus = []
    attrs = list(schema) if schema is not None else None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
            if not isinstance(rec, dict):
                raise ManifestError(f"{path}:{lineno}: record must be an object")
            for req in ("id", "transcript", "demographics"):
                if req not in rec:
                    raise ManifestError(f"{path}:{lineno}: missing field {req!r}")
            demo = rec["demographics"]
            if not isinstance(demo, dict):
                raise ManifestError(f"{path}:{lineno}: demographics must be a name->value map")
            if attrs is None:
                attrs = list(demo)
            for a in attrs:
                if a not in demo:
                    raise ManifestError(f"{path}:{lineno}: missing demographic attribute {a!r}")
            try:
                if "features" in rec:
                    spec = read_features(base / rec["features"])
                elif "audio" in rec:
                    wav, rate = read_wav(base / rec["audio"])
                    if max_audio_samples is not None and len(wav) > max_audio_samples:
                        log.info("%s:%d: skipping %s (%d samples)", path, lineno, rec["id"], len(wav))
                        continue
                    spec = normalize_utterance(mel_spectrogram(wav, n_mels, frame_len, hop, rate))
                else:
                    raise ManifestError(f"{path}:{lineno}: record needs 'features' or 'audio'")
                tokens = [int(t) for t in str(rec["transcript"]).split()]
                utt = Utterance(str(rec["id"]), spec, tuple(tokens),
                                {a: str(demo[a]) for a in attrs})
            except ManifestError:
                raise
            except (ValueError, OSError) as e:
                raise ManifestError(f"{path}:{lineno}: {e}") from None
            corpus.append(utt)
    return corpus


# -- splitting -------------------------------------------------------------
def stratified_split(corpus: Sequence[Utterance], test_fraction: float,
                     key_attributes: Sequence[str], seed: int):
    """Per-stratum random split; each stratum's test share is within one item of target."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    strata: dict[tuple, list[int]] = defaultdict(list)
    for i, utt in enumerate(corpus):
        strata[tuple(utt.demographics[a] for a in key_attributes)].append(i)
    rng = np.random.default_rng(seed)
    test_idx: set[int] = set()
    for key in sorted(strata):
        members = strata[key]
        if len(members) < 2:
            log.warning("stratum %s has %d utterance(s); keeping it in train", key, len(members))
            continue
        n_test = int(np.floor(test_fraction * len(members) + 0.5))
        test_idx.update(members[j] for j in rng.permutation(len(members))[:n_test])
    train = [u for i, u in enumerate(corpus) if i not in test_idx]
    test = [u for i, u in enumerate(corpus) if i in test_idx]
    return train, test


# -- contrastive batches -----------------------------------------------------
@dataclass
class ContrastiveBatch:
    """2N samples: originals at 0..N-1, their augmented views at N..2N-1."""

    samples: list[MelSpectrogram]
    pair_of: np.ndarray
    group_key: list[str]
    is_augmented: np.ndarray
    ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)


def augment_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for the augmentation of the ``index``-th utterance of a batch."""
    return np.random.default_rng([seed, index])


def make_contrastive_batch(utterances: Sequence[Utterance], fsc_attribute: str,
                           policy: AugmentPolicy, seed: int) -> ContrastiveBatch:
    n = len(utterances)
    if n < 2:
        raise ValueError(f"contrastive batch needs N >= 2 utterances, got {n}")
    originals = [u.spec for u in utterances]
    views = [spec_augment(u.spec, policy, augment_rng(seed, i)) for i, u in enumerate(utterances)]
    keys = [group_key(u.demographics, fsc_attribute) for u in utterances]
    pair_of = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
    return ContrastiveBatch(
        samples=originals + views,
        pair_of=pair_of,
        group_key=keys + keys,
        is_augmented=np.repeat([False, True], n),
        ids=[u.id for u in utterances] * 2,
    )


def pad_batch(specs: Sequence[MelSpectrogram]) -> tuple[np.ndarray, np.ndarray]:
    """Zero-pad to the longest utterance; returns (B x T x M values, B x T validity mask)."""
    t_max = max(s.frames for s in specs)
    m = specs[0].bins
    x = np.zeros((len(specs), t_max, m))
    mask = np.zeros((len(specs), t_max), dtype=bool)
    for b, s in enumerate(specs):
        if s.bins != m:
            raise ValueError(f"mixed mel dimensions in batch: {s.bins} vs {m}")
        x[b, :s.frames] = s.values
        mask[b, :s.frames] = True
    return x, mask
