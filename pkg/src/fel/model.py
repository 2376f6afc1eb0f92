"""BERT-shaped encoder with MLM, NSP, boundary and CLS-pair heads.

Parameters live in an ordered registry; each carries a group tag
(``embedding``, ``transformer`` or ``head``) that finetuning scopes select on.
Freezing a group clears ``requires_grad`` so backward never enters it.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .config import SCOPES, ConfigError, ModelConfig
from .datagen.examples import HEADS, TrainingExample
from .tensor import IGNORE_INDEX, Tensor

GROUPS = ("embedding", "transformer", "head")
SCOPE_GROUPS = {
    "pred": ("head",),
    "pred+trm": ("head", "transformer"),
    "pred+trm+emb": ("head", "transformer", "embedding"),
}
HEAD_CLASSES = {"nsp": 2, "boundary": 4, "pad": 2}
MASK_VALUE = -1e9


class Model:
    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor], groups: dict[str, str]):
        self.cfg = cfg
        self.params = params
        self.groups = groups
        self.dropout = cfg.dropout          # trainers may override for their phase
        self.dropout_rng = np.random.default_rng(0)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def names(self, group: str | None = None) -> list[str]:
        return [n for n in self.params if group is None or self.groups[n] == group]

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def set_trainable(self, names) -> None:
        keep = set(names)
        for n, p in self.params.items():
            p.requires_grad = n in keep
            p.grad = np.zeros_like(p.data) if n in keep else None

    def trainable(self) -> list[str]:
        return [n for n, p in self.params.items() if p.requires_grad]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for n, arr in snap.items():
            self.params[n].data[...] = arr

    def copy(self) -> "Model":
        m = Model(self.cfg, {}, dict(self.groups))
        for n, p in self.params.items():
            m.params[n] = Tensor(p.data.copy(), requires_grad=p.requires_grad, name=n)
        return m


# ---------------------------------------------------------------- construction

def param_shapes(cfg: ModelConfig) -> list[tuple[str, str, tuple[int, ...]]]:
    """(group, name, shape) for every parameter, in registry order."""
    E, F, V = cfg.emb_dim, cfg.ffn_dim, cfg.vocab_size
    out = [
        ("embedding", "tok_emb", (V, E)),
        ("embedding", "pos_emb", (cfg.max_seq_len, E)),
        ("embedding", "seg_emb", (cfg.type_vocab, E)),
        ("embedding", "emb_ln.g", (E,)),
        ("embedding", "emb_ln.b", (E,)),
    ]
    for i in range(cfg.n_layers):
        p = f"layer{i}."
        for w in ("q", "k", "v", "o"):
            out.append(("transformer", p + f"attn.w{w}", (E, E)))
            if w != "k":
                # a key bias shifts every score in a row equally, so softmax ignores it
                out.append(("transformer", p + f"attn.b{w}", (E,)))
        out += [
            ("transformer", p + "ln1.g", (E,)), ("transformer", p + "ln1.b", (E,)),
            ("transformer", p + "ffn.w1", (E, F)), ("transformer", p + "ffn.b1", (F,)),
            ("transformer", p + "ffn.w2", (F, E)), ("transformer", p + "ffn.b2", (E,)),
            ("transformer", p + "ln2.g", (E,)), ("transformer", p + "ln2.b", (E,)),
        ]
    out += _head_shapes(cfg, "mlm")
    for h in ("nsp", "boundary", "pad"):
        out += _head_shapes(cfg, h)
    return out


def _head_shapes(cfg: ModelConfig, head: str):
    if head == "mlm":
        shapes = [] if cfg.tie_mlm else [("head", "mlm.w", (cfg.emb_dim, cfg.vocab_size))]
        return shapes + [("head", "mlm.b", (cfg.vocab_size,))]
    k = HEAD_CLASSES[head]
    return [("head", f"{head}.w", (cfg.emb_dim, k)), ("head", f"{head}.b", (k,))]


def _init_value(name: str, shape, cfg: ModelConfig, rng: np.random.Generator) -> np.ndarray:
    if name.endswith(".g"):
        return np.ones(shape)
    if len(shape) == 1:
        return np.zeros(shape)
    w = rng.normal(0.0, cfg.init_std, size=shape)
    return np.clip(w, -2 * cfg.init_std, 2 * cfg.init_std)


def init_model(cfg: ModelConfig, seed: int) -> Model:
    cfg.validate()
    rng = np.random.default_rng([seed, 101])
    dtype = np.dtype(cfg.dtype)
    params, groups = {}, {}
    for group, name, shape in param_shapes(cfg):
        params[name] = Tensor(_init_value(name, shape, cfg, rng).astype(dtype), requires_grad=True, name=name)
        groups[name] = group
    return Model(cfg, params, groups)


def reset_heads(model: Model, heads: Sequence[str], seed: int) -> Model:
    """Re-initialise the named heads in place; everything else is untouched."""
    unknown = set(heads) - set(HEADS)
    if unknown:
        raise ValueError(f"unknown head(s) {sorted(unknown)}")
    dtype = np.dtype(model.cfg.dtype)
    for head in heads:
        rng = np.random.default_rng([seed, 202, HEADS.index(head)])
        for _, name, shape in _head_shapes(model.cfg, head):
            model.params[name].data[...] = _init_value(name, shape, model.cfg, rng).astype(dtype)
    return model


def scope_params(model: Model, scope: str) -> list[str]:
    """Names of the parameters a finetuning scope trains."""
    if scope not in SCOPE_GROUPS:
        raise ValueError(f"unknown scope {scope!r}; expected one of {SCOPES}")
    groups = SCOPE_GROUPS[scope]
    return [n for n in model.params if model.groups[n] in groups]


# ---------------------------------------------------------------- batching

@dataclass
class Batch:
    ids: np.ndarray             # (B, T)
    segments: np.ndarray        # (B, T)
    valid: np.ndarray           # (B, T) bool, False on padding
    labels: dict[str, np.ndarray] = field(default_factory=dict)
    mlm_rows: np.ndarray | None = None   # flat (B*T) indices of masked positions

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def collate(examples: Sequence[TrainingExample], heads: Sequence[str], max_seq_len: int | None = None) -> Batch:
    if not examples:
        raise ValueError("empty batch")
    T_ = max(len(x.ids) for x in examples)
    if max_seq_len is not None and T_ > max_seq_len:
        raise ValueError(f"example length {T_} exceeds max_seq_len {max_seq_len}")
    B = len(examples)
    ids = np.zeros((B, T_), dtype=np.int64)
    segs = np.zeros((B, T_), dtype=np.int64)
    valid = np.zeros((B, T_), dtype=bool)
    for b, x in enumerate(examples):
        n = len(x.ids)
        ids[b, :n] = x.ids
        segs[b, :n] = x.segment_ids
        valid[b, :n] = True
    batch = Batch(ids, segs, valid)
    for head in heads:
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        if not any(x.has_labels(head) for x in examples):
            raise ValueError(f"requested head {head!r} has no labels in this batch")
        if head == "mlm":
            rows, labs = [], []
            for b, x in enumerate(examples):
                if x.has_labels("mlm"):
                    rows += [b * T_ + k for k in x.mlm_positions]
                    labs += list(x.mlm_labels)
            batch.mlm_rows = np.array(rows, dtype=np.int64)
            batch.labels["mlm"] = np.array(labs, dtype=np.int64)
        elif head == "boundary":
            lab = np.full((B, T_), IGNORE_INDEX, dtype=np.int64)
            for b, x in enumerate(examples):
                if x.boundary_labels is not None:
                    lab[b, :len(x.boundary_labels)] = x.boundary_labels
            batch.labels["boundary"] = lab
        else:
            attr = "nsp_label" if head == "nsp" else "pad_label"
            batch.labels[head] = np.array(
                [IGNORE_INDEX if getattr(x, attr) is None else getattr(x, attr) for x in examples], dtype=np.int64)
    return batch


# ---------------------------------------------------------------- forward

@dataclass
class HeadOutputs:
    logits: dict[str, np.ndarray]
    losses: dict[str, Tensor]
    probs: dict[str, np.ndarray]
    total: Tensor
    attention: list[np.ndarray] = field(default_factory=list)

    def loss_values(self) -> dict[str, float]:
        return {h: l.item() for h, l in self.losses.items()}


def _attention(model: Model, x: Tensor, layer: int, mask: np.ndarray, training: bool, keep: list) -> Tensor:
    cfg = model.cfg
    B, T_, E = x.shape
    H, D = cfg.n_heads, cfg.head_dim
    P = model.params
    pre = f"layer{layer}.attn."

    def heads_of(w):
        y = T.linear(x, P[pre + "w" + w], P.get(pre + "b" + w))
        return T.transpose(T.reshape(y, (B, T_, H, D)), (0, 2, 1, 3))

    q, k, v = heads_of("q"), heads_of("k"), heads_of("v")
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(D))
    probs = T.softmax(scores, mask)
    keep.append(probs.data)
    probs = T.dropout(probs, model.dropout, model.dropout_rng, training)
    ctx = T.reshape(T.transpose(T.matmul(probs, v), (0, 2, 1, 3)), (B, T_, E))
    return T.linear(ctx, P[pre + "wo"], P[pre + "bo"])


def encode(model: Model, batch: Batch, training: bool = False, keep_attention: list | None = None) -> Tensor:
    """Final hidden states, shape (B, T, E)."""
    cfg, P = model.cfg, model.params
    B, T_ = batch.ids.shape
    if T_ > cfg.max_seq_len:
        raise ValueError(f"sequence length {T_} exceeds max_seq_len {cfg.max_seq_len}")
    if batch.ids.max() >= cfg.vocab_size or batch.ids.min() < 0:
        raise IndexError(f"token id outside [0, {cfg.vocab_size})")
    if batch.segments.max() >= cfg.type_vocab:
        raise IndexError(f"segment id outside [0, {cfg.type_vocab})")
    dtype = np.dtype(cfg.dtype)
    pos = np.broadcast_to(np.arange(T_), (B, T_))
    x = T.add(T.add(T.embedding(P["tok_emb"], batch.ids), T.embedding(P["pos_emb"], pos)),
              T.embedding(P["seg_emb"], batch.segments))
    x = T.layer_norm(x, P["emb_ln.g"], P["emb_ln.b"], cfg.ln_eps)
    x = T.dropout(x, model.dropout, model.dropout_rng, training)
    mask = np.where(batch.valid, 0.0, MASK_VALUE).astype(dtype)[:, None, None, :]
    keep = keep_attention if keep_attention is not None else []
    for i in range(cfg.n_layers):
        pre = f"layer{i}."
        a = T.dropout(_attention(model, x, i, mask, training, keep), model.dropout, model.dropout_rng, training)
        x = T.layer_norm(T.add(x, a), P[pre + "ln1.g"], P[pre + "ln1.b"], cfg.ln_eps)
        f = T.linear(T.gelu(T.linear(x, P[pre + "ffn.w1"], P[pre + "ffn.b1"])), P[pre + "ffn.w2"], P[pre + "ffn.b2"])
        f = T.dropout(f, model.dropout, model.dropout_rng, training)
        x = T.layer_norm(T.add(x, f), P[pre + "ln2.g"], P[pre + "ln2.b"], cfg.ln_eps)
    return x


def forward(model: Model, batch: Batch, heads: Sequence[str], mode: str = "eval") -> HeadOutputs:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    heads = [h for h in HEADS if h in heads]
    if not heads:
        raise ValueError("no heads requested")
    for h in heads:
        if h not in batch.labels:
            raise ValueError(f"requested head {h!r} has no labels in this batch")
    P = model.params
    attn: list[np.ndarray] = []
    hidden = encode(model, batch, mode == "train", attn)
    B, T_, E = hidden.shape
    flat = T.reshape(hidden, (B * T_, E))
    logits, losses, probs = {}, {}, {}
    cls = T.gather_rows(flat, np.arange(B) * T_) if {"nsp", "pad"} & set(heads) else None
    for h in heads:
        if h == "mlm":
            w = T.transpose(P["tok_emb"], (1, 0)) if model.cfg.tie_mlm else P["mlm.w"]
            z = T.linear(T.gather_rows(flat, batch.mlm_rows), w, P["mlm.b"])
            target = batch.labels["mlm"]
        elif h == "boundary":
            z = T.linear(flat, P["boundary.w"], P["boundary.b"])
            target = batch.labels["boundary"].reshape(-1)
        else:
            z = T.linear(cls, P[f"{h}.w"], P[f"{h}.b"])
            target = batch.labels[h]
        loss, pr = T.softmax_xent(z, target)
        losses[h] = loss
        shape = (B, T_, -1) if h == "boundary" else z.shape
        logits[h] = z.data.reshape(shape)
        probs[h] = pr.reshape(shape)
    return HeadOutputs(logits, losses, probs, T.add_scalars([losses[h] for h in heads]), attn)


# ---------------------------------------------------------------- checkpoints

MAGIC = b"FELCKPT\x00"
VERSION = 1


class CheckpointError(ValueError):
    """Corrupt, truncated or incompatible checkpoint."""


def _pack_str(buf: io.BytesIO, s: str) -> None:
    b = s.encode("utf-8")
    buf.write(struct.pack("<I", len(b)))
    buf.write(b)


def config_json(cfg: ModelConfig) -> str:
    return json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":"))


def save_checkpoint(model: Model) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    _pack_str(buf, config_json(model.cfg))
    buf.write(struct.pack("<I", len(model.params)))
    for name, p in model.params.items():
        _pack_str(buf, model.groups[name])
        _pack_str(buf, name)
        arr = np.ascontiguousarray(p.data)
        _pack_str(buf, arr.dtype.str)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes(order="C"))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, "
                                  f"file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def load_checkpoint(data: bytes) -> Model:
    r = _Reader(bytes(data))
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        cfg = ModelConfig(**json.loads(r.string()))
        cfg.validate()
    except (TypeError, json.JSONDecodeError, ConfigError) as exc:
        raise CheckpointError(f"bad config block: {exc}") from exc
    expected = {name: (group, shape) for group, name, shape in param_shapes(cfg)}
    n = r.u32()
    if n != len(expected):
        raise CheckpointError(f"checkpoint has {n} parameters, config implies {len(expected)}")
    params, groups = {}, {}
    for _ in range(n):
        group, name, dtype = r.string(), r.string(), np.dtype(r.string())
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        if name not in expected or expected[name] != (group, tuple(shape)):
            raise CheckpointError(f"parameter {name!r} ({group}, {shape}) does not match the config")
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(r.take(size), dtype=dtype).reshape(shape).astype(np.dtype(cfg.dtype))
        params[name] = Tensor(arr, requires_grad=True, name=name)
        groups[name] = group
    if r.pos != len(r.data):
        raise CheckpointError(f"{len(r.data) - r.pos} trailing bytes after the last parameter")
    ordered = {name: params[name] for _, name, _ in param_shapes(cfg)}
    return Model(cfg, ordered, {n: groups[n] for n in ordered})
