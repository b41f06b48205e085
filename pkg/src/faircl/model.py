"""Encoder, mean pooling, projection head and recurrent CTC head."""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from faircl import autograd as ag
from faircl.autograd import Tensor

Params = dict[str, Tensor]

MASK_NEG = -1e9
CKPT_MAGIC = b"FCKP"
CKPT_VERSION = 1


@dataclass
class ModelConfig:
    n_mels: int = 80
    vocab_size: int = 8
    n_blocks: int = 2
    model_dim: int = 64
    ff_dim: int = 128
    conv_kernel: int = 5
    subsample_factor: int = 2
    use_attention: bool = True
    proj_hidden: int = 64
    proj_dim: int = 32
    normalize_projections: bool = True

    def validate(self) -> None:
        if self.model_dim < 4:
            raise ValueError("model_dim must be >= 4")
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ValueError("conv_kernel must be odd")
        if self.subsample_factor < 1:
            raise ValueError("subsample_factor must be >= 1")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


# -- initialization -----------------------------------------------------------
def _shapes_encoder(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    D, F, K = cfg.model_dim, cfg.ff_dim, cfg.conv_kernel
    s = {"frontend.w": (cfg.subsample_factor * cfg.n_mels, D), "frontend.b": (D,)}
    for i in range(cfg.n_blocks):
        p = f"block{i}."
        for ff in ("ff1", "ff2"):
            s.update({p + ff + ".ln.g": (D,), p + ff + ".ln.b": (D,),
                      p + ff + ".w1": (D, F), p + ff + ".b1": (F,),
                      p + ff + ".w2": (F, D), p + ff + ".b2": (D,)})
        if cfg.use_attention:
            s.update({p + "attn.ln.g": (D,), p + "attn.ln.b": (D,)})
            for w in ("wq", "wk", "wv", "wo"):
                s[p + "attn." + w] = (D, D)
        s.update({p + "conv.ln.g": (D,), p + "conv.ln.b": (D,),
                  p + "conv.dw": (K, D), p + "conv.dw_b": (D,),
                  p + "conv.pw": (D, D), p + "conv.pw_b": (D,),
                  p + "out.ln.g": (D,), p + "out.ln.b": (D,)})
    return s


def _shapes_head(cfg: ModelConfig, prefix: str) -> dict[str, tuple[int, ...]]:
    return {prefix + ".w1": (cfg.model_dim, cfg.proj_hidden), prefix + ".b1": (cfg.proj_hidden,),
            prefix + ".w2": (cfg.proj_hidden, cfg.proj_dim), prefix + ".b2": (cfg.proj_dim,)}


def _shapes_decoder(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    D = cfg.model_dim
    return {"decoder.lstm.wx": (D, 4 * D), "decoder.lstm.wh": (D, 4 * D),
            "decoder.lstm.b": (4 * D,),
            "decoder.out.w": (D, cfg.vocab_size), "decoder.out.b": (cfg.vocab_size,)}


def _init(shapes: dict[str, tuple[int, ...]], rng: np.random.Generator) -> Params:
    params = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if name.endswith(".ln.g"):
            val = np.ones(shape)
        elif len(shape) == 1:
            val = np.zeros(shape)
        else:
            # depthwise kernels have fan-in equal to their width
            bound = 1.0 / np.sqrt(shape[0])
            val = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(val, requires_grad=True, name=name)
    return params


def init_encoder(cfg: ModelConfig, seed: int, independent_head: bool = False) -> Params:
    """Encoder plus projection head g (and g' when heads are independent)."""
    cfg.validate()
    shapes = _shapes_encoder(cfg)
    shapes.update(_shapes_head(cfg, "head"))
    if independent_head:
        shapes.update(_shapes_head(cfg, "head_rev"))
    return _init(shapes, np.random.default_rng([seed, 101]))


def init_decoder(cfg: ModelConfig, seed: int) -> Params:
    cfg.validate()
    return _init(_shapes_decoder(cfg), np.random.default_rng([seed, 202]))


def encoder_param_names(params: Params) -> list[str]:
    return [k for k in params if k.startswith(("frontend.", "block"))]


# -- building blocks ------------------------------------------------------------
def _linear(x: Tensor, params: Params, w: str, b: str) -> Tensor:
    return x @ params[w] + params[b]


def _ln(x: Tensor, params: Params, prefix: str) -> Tensor:
    return ag.layer_norm(x, params[prefix + ".g"], params[prefix + ".b"])


def _feedforward(x: Tensor, params: Params, p: str) -> Tensor:
    y = _ln(x, params, p + ".ln")
    y = ag.swish(_linear(y, params, p + ".w1", p + ".b1"))
    return _linear(y, params, p + ".w2", p + ".b2")


def _attention(x: Tensor, key_bias: np.ndarray, params: Params, p: str) -> Tensor:
    y = _ln(x, params, p + ".ln")
    q = y @ params[p + ".wq"]
    k = y @ params[p + ".wk"]
    v = y @ params[p + ".wv"]
    scores = ag.scale(q @ ag.transpose(k, (0, 2, 1)), 1.0 / np.sqrt(x.shape[-1])) + key_bias
    weights = ag.exp(ag.log_softmax(scores))
    return (weights @ v) @ params[p + ".wo"]


def _conv(x: Tensor, frame_mask: np.ndarray, params: Params, p: str, kernel: int) -> Tensor:
    y = _ln(x, params, p + ".ln") * frame_mask
    B, T, D = y.shape
    half = kernel // 2
    if half:
        pad = np.zeros((B, half, D))
        y = ag.concat([pad, y, pad], axis=1)
    w = params[p + ".dw"]
    acc = y[:, 0:T, :] * w[0]
    for j in range(1, kernel):
        acc = acc + y[:, j:j + T, :] * w[j]
    acc = ag.swish(acc + params[p + ".dw_b"])
    return _linear(acc, params, p + ".pw", p + ".pw_b")


def subsampled_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    lengths = mask.sum(axis=1)
    t_out = -(-mask.shape[1] // factor)
    out_len = -(-lengths // factor)
    return np.arange(t_out)[None, :] < out_len[:, None]


# -- public operations ------------------------------------------------------------
def encode(x, mask: np.ndarray, params: Params, cfg: ModelConfig) -> tuple[Tensor, np.ndarray]:
    """Frame features, batch x T' x D, and the subsampled validity mask.

    Stacks ``subsample_factor`` consecutive frames, projects to D, then runs
    ``n_blocks`` blocks of half-step FFN, single-head attention, depthwise
    convolution and a second half-step FFN, each residual and pre-normalized.
    T' = ceil(T / subsample_factor).
    """
    x = ag.as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    if x.ndim != 3 or x.shape[2] != cfg.n_mels:
        raise ag.ShapeError(f"encode: expected batch x T x {cfg.n_mels} input, got {x.shape}")
    if mask.shape != x.shape[:2]:
        raise ag.ShapeError(f"encode: mask shape {mask.shape} does not match input {x.shape}")
    B, T, M = x.shape
    k = cfg.subsample_factor
    x = x * mask[:, :, None].astype(np.float64)
    t_out = -(-T // k)
    if t_out * k != T:
        x = ag.concat([x, np.zeros((B, t_out * k - T, M))], axis=1)
    x = ag.reshape(x, (B, t_out, k * M))
    h = _linear(x, params, "frontend.w", "frontend.b")

    sub_mask = subsampled_mask(mask, k)
    frame_mask = sub_mask[:, :, None].astype(np.float64)
    key_bias = np.where(sub_mask, 0.0, MASK_NEG)[:, None, :]
    for i in range(cfg.n_blocks):
        p = f"block{i}."
        h = h + ag.scale(_feedforward(h, params, p + "ff1"), 0.5)
        if cfg.use_attention:
            h = h + _attention(h, key_bias, params, p + "attn")
        h = h + _conv(h, frame_mask, params, p + "conv", cfg.conv_kernel)
        h = h + ag.scale(_feedforward(h, params, p + "ff2"), 0.5)
        h = _ln(h, params, p + "out.ln")
    return h, sub_mask


def mean_pool(h: Tensor, mask: np.ndarray) -> Tensor:
    """Average of the valid frames of each sample."""
    mask = np.asarray(mask, dtype=np.float64)
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("mean_pool: a sample has no valid frames")
    return ag.tsum(h * mask[:, :, None], axis=1) / counts[:, None]


def project(hbar: Tensor, params: Params, prefix: str = "head", normalize: bool = True) -> Tensor:
    """Two-layer MLP projection head, optionally L2-normalized per row."""
    z = _linear(ag.relu(_linear(hbar, params, prefix + ".w1", prefix + ".b1")),
                params, prefix + ".w2", prefix + ".b2")
    return ag.l2_normalize(z) if normalize else z


def decode_logits(h: Tensor, mask: np.ndarray, params: Params) -> Tensor:
    """Unidirectional LSTM then a linear map; log-softmax over the vocabulary.

    The recurrent state starts at zero for every utterance. Padded frames
    come after the valid ones, so they never influence valid outputs.
    """
    B, T, D = h.shape
    H = params["decoder.lstm.wh"].shape[0]
    xs = h @ params["decoder.lstm.wx"] + params["decoder.lstm.b"]
    wh = params["decoder.lstm.wh"]
    state = ag.Tensor(np.zeros((B, H)))
    cell = ag.Tensor(np.zeros((B, H)))
    outs = []
    for t in range(T):
        gates = xs[:, t, :] + state @ wh
        i = ag.sigmoid(gates[:, 0:H])
        f = ag.sigmoid(gates[:, H:2 * H])
        g = ag.tanh(gates[:, 2 * H:3 * H])
        o = ag.sigmoid(gates[:, 3 * H:4 * H])
        cell = f * cell + i * g
        state = o * ag.tanh(cell)
        outs.append(state)
    seq = ag.stack(outs, axis=1)
    logits = seq @ params["decoder.out.w"] + params["decoder.out.b"]
    return ag.log_softmax(logits)


# -- checkpoints -------------------------------------------------------------------
def save_checkpoint(path, params: Params, cfg: ModelConfig) -> None:
    """Little-endian: magic, version, config digest and JSON, then named float64 arrays."""
    cfg_json = json.dumps(asdict(cfg), sort_keys=True).encode()
    digest = cfg.digest().encode()
    chunks = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION),
              struct.pack("<I", len(digest)), digest,
              struct.pack("<I", len(cfg_json)), cfg_json,
              struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].data, dtype="<f8")
        enc = name.encode()
        chunks += [struct.pack("<I", len(enc)), enc, struct.pack("<I", arr.ndim),
                   struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[Params, ModelConfig]:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    pos = 4

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, raw, pos)
        pos += struct.calcsize(fmt)
        return vals

    def take_bytes(n):
        nonlocal pos
        out = raw[pos:pos + n]
        pos += n
        return out

    (version,) = take("<I")
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    digest = take_bytes(take("<I")[0]).decode()
    cfg = ModelConfig(**json.loads(take_bytes(take("<I")[0])))
    if cfg.digest() != digest:
        raise ValueError(f"{path}: config digest mismatch")
    params = {}
    for _ in range(take("<I")[0]):
        name = take_bytes(take("<I")[0]).decode()
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I")
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(take_bytes(8 * n), dtype="<f8").reshape(shape)
        params[name] = Tensor(arr.copy(), requires_grad=True, name=name)
    return params, cfg
