"""Small transformer encoder classifier with masked attention pooling.

Everything is plain numpy with hand-written reverse-mode gradients.  The
encoder attends over the whole concatenated input (context + target); the
classification head then pools

* over target positions only when ``mwce`` is set (context embeddings masked),
* over all real positions otherwise,

and, with ``ccfte``, concatenates a context vector (an attention pool over
context positions followed by a dense layer) to every embedding before
pooling.  Samples without context use a learned default context vector instead.

Masked rows are zeroed with ``np.where`` before any arithmetic touches them, so
masked embeddings cannot influence the result even in the last bit.
"""
from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import N_CLASSES

LN_EPS = 1e-5
CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_positions: int = 256
    input_mode: str = "text"
    vocab_size: int = 0
    d_feat: int = 0
    dropout_rate: float = 0.1
    d_ctx: int = 32
    n_classes: int = N_CLASSES
    mwce: bool = True
    ccfte: bool = False

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ModelError("d_model must be divisible by n_heads")
        if self.input_mode not in ("text", "acoustic"):
            raise ModelError("input_mode must be 'text' or 'acoustic'")
        if self.input_mode == "text" and self.vocab_size < 1:
            raise ModelError("text mode needs vocab_size >= 1")
        if self.input_mode == "acoustic" and self.d_feat < 1:
            raise ModelError("acoustic mode needs d_feat >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ModelError("dropout_rate must lie in [0, 1)")
        if self.n_layers < 0 or self.max_positions < 1 or self.d_ctx < 1:
            raise ModelError("invalid layer count, max_positions or d_ctx")
        if self.n_classes != N_CLASSES:
            raise ModelError(f"n_classes is fixed at {N_CLASSES}")

    @property
    def d_pool(self) -> int:
        return self.d_model + (self.d_ctx if self.ccfte else 0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ModelError(f"unknown model fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EncoderParams:
    config: EncoderConfig
    tensors: dict[str, np.ndarray]
    vocab: tuple[str, ...] = ()

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.config, {k: v.copy() for k, v in self.tensors.items()}, self.vocab)

    def token_ids(self, tokens: Sequence[str]) -> np.ndarray:
        lookup = self._lookup()
        return np.array([lookup.get(t, 0) for t in tokens], dtype=np.int64)

    def _lookup(self) -> dict[str, int]:
        cache = getattr(self, "_lookup_cache", None)
        if cache is None or cache[0] is not self.vocab:
            cache = (self.vocab, {tok: i + 1 for i, tok in enumerate(self.vocab)})
            self._lookup_cache = cache
        return cache[1]


def param_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.d_ff
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.input_mode == "text":
        shapes["embed"] = (cfg.vocab_size, d)
    else:
        shapes["frame.W"] = (cfg.d_feat, d)
        shapes["frame.b"] = (d,)
    shapes["pos"] = (cfg.max_positions, d)
    for l in range(cfg.n_layers):
        p = f"L{l}."
        for m in ("q", "k", "v", "o"):
            shapes[p + "W" + m] = (d, d)
            if m != "k":
                # a key bias shifts every score of a query equally: softmax ignores it
                shapes[p + "b" + m] = (d,)
        shapes[p + "ln1.g"] = (d,)
        shapes[p + "ln1.b"] = (d,)
        shapes[p + "W1"] = (d, f)
        shapes[p + "b1"] = (f,)
        shapes[p + "W2"] = (f, d)
        shapes[p + "b2"] = (d,)
        shapes[p + "ln2.g"] = (d,)
        shapes[p + "ln2.b"] = (d,)
    if cfg.ccfte:
        shapes["ctx.q"] = (d,)
        shapes["ctx.W"] = (d, cfg.d_ctx)
        shapes["ctx.b"] = (cfg.d_ctx,)
        shapes["ctx.default"] = (cfg.d_ctx,)
    shapes["pool.q"] = (cfg.d_pool,)
    shapes["cls.W"] = (cfg.d_pool, cfg.n_classes)
    shapes["cls.b"] = (cfg.n_classes,)
    return shapes


def init_params(cfg: EncoderConfig, seed: int | np.random.Generator = 0, vocab: Sequence[str] = ()) -> EncoderParams:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if cfg.input_mode == "text" and vocab and cfg.vocab_size != len(vocab) + 1:
        raise ModelError("vocab_size must equal len(vocab) + 1 (id 0 is reserved for unknown/padding)")
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name.endswith((".g",)):
            t = np.ones(shape)
        elif leaf.startswith("b") or name == "ctx.default":
            t = np.zeros(shape)
        elif name in ("embed", "pos"):
            t = rng.normal(0.0, 0.5 if name == "embed" else 0.1, shape)
        elif name in ("pool.q", "ctx.q"):
            t = rng.normal(0.0, 0.1, shape)
        else:
            t = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), shape)
        tensors[name] = t
    return EncoderParams(cfg, tensors, tuple(vocab))


# --- batching ---------------------------------------------------------------

@dataclass
class Batch:
    inputs: np.ndarray  # (B, T) int ids or (B, T, d_feat) frames
    valid: np.ndarray  # (B, T) real (non-padding) positions
    target: np.ndarray  # (B, T)
    context: np.ndarray  # (B, T)
    labels: np.ndarray  # (B,)

    @property
    def has_context(self) -> np.ndarray:
        return self.context.any(axis=1)


def collate(params: EncoderParams, samples: Sequence) -> Batch:
    cfg = params.config
    if not samples:
        raise ModelError("empty batch")
    lengths = [s.n_positions for s in samples]
    T = max(lengths)
    if T > cfg.max_positions:
        raise ModelError(f"input of {T} positions exceeds max_positions={cfg.max_positions}")
    B = len(samples)
    valid = np.zeros((B, T), dtype=bool)
    target = np.zeros((B, T), dtype=bool)
    if cfg.input_mode == "text":
        inputs = np.zeros((B, T), dtype=np.int64)
    else:
        inputs = np.zeros((B, T, cfg.d_feat))
    for b, s in enumerate(samples):
        n = lengths[b]
        if cfg.input_mode == "text":
            if not isinstance(s.positions, tuple):
                raise ModelError("text model received an acoustic sample")
            inputs[b, :n] = params.token_ids(s.positions)
        else:
            if isinstance(s.positions, tuple):
                raise ModelError("acoustic model received a text sample")
            inputs[b, :n] = s.positions
        valid[b, :n] = True
        target[b, :n] = s.role_mask
    labels = np.array([int(s.label) for s in samples], dtype=np.int64)
    return Batch(inputs, valid, target, valid & ~target, labels)


# --- primitives ---------------------------------------------------------------

def _masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over the last axis restricted to ``mask``; all-masked rows give zeros."""
    s = np.where(mask, scores, -np.inf)
    m = s.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(mask, np.exp(s - m), 0.0)
    z = e.sum(axis=-1, keepdims=True)
    return np.divide(e, z, out=np.zeros_like(e), where=z > 0)


def _softmax_backward(a: np.ndarray, da: np.ndarray) -> np.ndarray:
    return a * (da - (da * a).sum(axis=-1, keepdims=True))


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _layer_norm_backward(dy, g, cache):
    xhat, rstd = cache
    n = xhat.shape[-1]
    dxhat = dy * g
    dx = rstd / n * (n * dxhat - dxhat.sum(-1, keepdims=True) - xhat * (dxhat * xhat).sum(-1, keepdims=True))
    red = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=red), dy.sum(axis=red)


def _dropout(x, rate, rng):
    if rate == 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep, keep


def masked_pool(G: np.ndarray, mask: np.ndarray, q: np.ndarray):
    """Batched attention pooling: softmax(q . g_t / sqrt(width)) over ``mask``.

    Returns (pooled (B, width), weights (B, T), masked input Gm).
    """
    Gm = np.where(mask[..., None], G, 0.0)
    scale = 1.0 / np.sqrt(G.shape[-1])
    alpha = _masked_softmax((Gm @ q) * scale, mask)
    pooled = np.einsum("bt,btd->bd", alpha, Gm)
    return pooled, alpha, Gm


def _masked_pool_backward(dpooled, alpha, Gm, mask, q):
    scale = 1.0 / np.sqrt(Gm.shape[-1])
    dalpha = np.einsum("bd,btd->bt", dpooled, Gm)
    ds = _softmax_backward(alpha, dalpha) * scale
    dq = np.einsum("bt,btd->d", ds, Gm)
    dGm = alpha[..., None] * dpooled[:, None, :] + ds[..., None] * q
    return np.where(mask[..., None], dGm, 0.0), dq


# --- encoder ----------------------------------------------------------------

def _split(x, h):
    B, T, d = x.shape
    return x.reshape(B, T, h, d // h).transpose(0, 2, 1, 3)


def _merge(x):
    B, h, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, h * dh)


def encode_batch(params: EncoderParams, batch: Batch, rng: np.random.Generator | None = None):
    """Run the encoder; ``rng`` enables dropout.  Returns (H, cache)."""
    cfg, P = params.config, params.tensors
    T = batch.valid.shape[1]
    if T > cfg.max_positions:
        raise ModelError(f"input of {T} positions exceeds max_positions={cfg.max_positions}")
    rate = cfg.dropout_rate
    if cfg.input_mode == "text":
        x = P["embed"][batch.inputs]
    else:
        x = batch.inputs @ P["frame.W"] + P["frame.b"]
    x = x + P["pos"][:T]
    x, keep0 = _dropout(x, rate, rng)
    cache = {"keep0": keep0, "layers": []}
    keymask = batch.valid[:, None, None, :]
    h = cfg.n_heads
    scale = 1.0 / np.sqrt(cfg.d_model // h)
    for l in range(cfg.n_layers):
        p = f"L{l}."
        xin = x
        Q = _split(xin @ P[p + "Wq"] + P[p + "bq"], h)
        K = _split(xin @ P[p + "Wk"], h)
        V = _split(xin @ P[p + "Wv"] + P[p + "bv"], h)
        A = _masked_softmax((Q @ K.transpose(0, 1, 3, 2)) * scale, keymask)
        O = _merge(A @ V)
        Z, keep1 = _dropout(O @ P[p + "Wo"] + P[p + "bo"], rate, rng)
        x1, ln1 = _layer_norm(xin + Z, P[p + "ln1.g"], P[p + "ln1.b"])
        U = x1 @ P[p + "W1"] + P[p + "b1"]
        Ur = np.maximum(U, 0.0)
        F, keep2 = _dropout(Ur @ P[p + "W2"] + P[p + "b2"], rate, rng)
        x, ln2 = _layer_norm(x1 + F, P[p + "ln2.g"], P[p + "ln2.b"])
        cache["layers"].append(dict(xin=xin, Q=Q, K=K, V=V, A=A, O=O, keep1=keep1, ln1=ln1, x1=x1, U=U, Ur=Ur, keep2=keep2, ln2=ln2))
    return x, cache


def _encode_backward(params: EncoderParams, batch: Batch, dH: np.ndarray, cache, grads: dict) -> None:
    cfg, P = params.config, params.tensors
    h = cfg.n_heads
    scale = 1.0 / np.sqrt(cfg.d_model // h)
    dx = dH
    for l in reversed(range(cfg.n_layers)):
        p, c = f"L{l}.", cache["layers"][l]
        dr2, grads[p + "ln2.g"], grads[p + "ln2.b"] = _layer_norm_backward(dx, P[p + "ln2.g"], c["ln2"])
        dF = dr2 if c["keep2"] is None else dr2 * c["keep2"]
        grads[p + "W2"] = np.einsum("btf,btd->fd", c["Ur"], dF)
        grads[p + "b2"] = dF.sum(axis=(0, 1))
        dU = (dF @ P[p + "W2"].T) * (c["U"] > 0)
        grads[p + "W1"] = np.einsum("btd,btf->df", c["x1"], dU)
        grads[p + "b1"] = dU.sum(axis=(0, 1))
        dx1 = dr2 + dU @ P[p + "W1"].T
        dr1, grads[p + "ln1.g"], grads[p + "ln1.b"] = _layer_norm_backward(dx1, P[p + "ln1.g"], c["ln1"])
        dZ = dr1 if c["keep1"] is None else dr1 * c["keep1"]
        grads[p + "Wo"] = np.einsum("btd,bte->de", c["O"], dZ)
        grads[p + "bo"] = dZ.sum(axis=(0, 1))
        dO = _split(dZ @ P[p + "Wo"].T, h)
        A, Q, K, V = c["A"], c["Q"], c["K"], c["V"]
        dA = dO @ V.transpose(0, 1, 3, 2)
        dV = A.transpose(0, 1, 3, 2) @ dO
        dS = _softmax_backward(A, dA) * scale
        dQ = dS @ K
        dK = dS.transpose(0, 1, 3, 2) @ Q
        xin = c["xin"]
        dxin = dr1.copy()
        for m, dm in (("q", dQ), ("k", dK), ("v", dV)):
            dm = _merge(dm)
            grads[p + "W" + m] = np.einsum("btd,bte->de", xin, dm)
            if m != "k":
                grads[p + "b" + m] = dm.sum(axis=(0, 1))
            dxin += dm @ P[p + "W" + m].T
        dx = dxin
    if cache["keep0"] is not None:
        dx = dx * cache["keep0"]
    T = batch.valid.shape[1]
    gpos = np.zeros_like(P["pos"])
    gpos[:T] = dx.sum(axis=0)
    grads["pos"] = gpos
    if cfg.input_mode == "text":
        gemb = np.zeros_like(P["embed"])
        np.add.at(gemb, batch.inputs.ravel(), dx.reshape(-1, cfg.d_model))
        grads["embed"] = gemb
    else:
        grads["frame.W"] = np.einsum("btf,btd->fd", batch.inputs, dx)
        grads["frame.b"] = dx.sum(axis=(0, 1))


# --- head -------------------------------------------------------------------

def context_vector_batch(params: EncoderParams, H: np.ndarray, context_mask: np.ndarray):
    """C = W . pool_context(H) + b; rows without context get the learned default."""
    P = params.tensors
    pooled, alpha, Hm = masked_pool(H, context_mask, P["ctx.q"])
    raw = pooled @ P["ctx.W"] + P["ctx.b"]
    has = context_mask.any(axis=1)
    C = np.where(has[:, None], raw, P["ctx.default"])
    return C, dict(pooled=pooled, alpha=alpha, Hm=Hm, raw=raw, has=has)


def head_batch(params: EncoderParams, H: np.ndarray, batch: Batch):
    cfg, P = params.config, params.tensors
    pool_mask = batch.target if cfg.mwce else batch.valid
    cache = {"pool_mask": pool_mask}
    G = H
    if cfg.ccfte:
        C, cache["ctx"] = context_vector_batch(params, H, batch.context)
        G = np.concatenate([H, np.broadcast_to(C[:, None, :], H.shape[:2] + (cfg.d_ctx,))], axis=-1)
    pooled, alpha, Gm = masked_pool(G, pool_mask, P["pool.q"])
    logits = pooled @ P["cls.W"] + P["cls.b"]
    cache.update(pooled=pooled, alpha=alpha, Gm=Gm)
    return logits, cache


def _head_backward(params: EncoderParams, batch: Batch, dlogits, cache, grads):
    cfg, P = params.config, params.tensors
    grads["cls.W"] = cache["pooled"].T @ dlogits
    grads["cls.b"] = dlogits.sum(axis=0)
    dpooled = dlogits @ P["cls.W"].T
    dG, grads["pool.q"] = _masked_pool_backward(dpooled, cache["alpha"], cache["Gm"], cache["pool_mask"], P["pool.q"])
    if not cfg.ccfte:
        return dG
    d = cfg.d_model
    dH = dG[..., :d].copy()
    dC = dG[..., d:].sum(axis=1)
    cc = cache["ctx"]
    has = cc["has"][:, None]
    grads["ctx.default"] = np.where(has, 0.0, dC).sum(axis=0)
    dpre = np.where(has, dC, 0.0)
    grads["ctx.W"] = cc["pooled"].T @ dpre
    grads["ctx.b"] = dpre.sum(axis=0)
    dcp = dpre @ P["ctx.W"].T
    dHc, grads["ctx.q"] = _masked_pool_backward(dcp, cc["alpha"], cc["Hm"], batch.context, P["ctx.q"])
    return dH + dHc


def forward_batch(params: EncoderParams, batch: Batch, rng: np.random.Generator | None = None) -> np.ndarray:
    H, _ = encode_batch(params, batch, rng)
    return head_batch(params, H, batch)[0]


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    B = len(labels)
    loss = -logp[np.arange(B), labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(B), labels] -= 1.0
    return float(loss), dlogits / B


def loss_and_grad_batch(params: EncoderParams, batch: Batch, rng: np.random.Generator | None = None):
    H, enc_cache = encode_batch(params, batch, rng)
    logits, head_cache = head_batch(params, H, batch)
    loss, dlogits = cross_entropy(logits, batch.labels)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss}")
    grads: dict[str, np.ndarray] = {}
    dH = _head_backward(params, batch, dlogits, head_cache, grads)
    _encode_backward(params, batch, dH, enc_cache, grads)
    return loss, {name: grads[name] for name in params.tensors}


# --- single-sample API --------------------------------------------------------

@dataclass(frozen=True)
class EmbeddingSequence:
    embeddings: np.ndarray  # (n_positions, d_model)
    role_mask: np.ndarray  # True at target positions

    @property
    def context_mask(self) -> np.ndarray:
        return ~self.role_mask


def encode(params: EncoderParams, sample) -> EmbeddingSequence:
    batch = collate(params, [sample])
    H, _ = encode_batch(params, batch)
    return EmbeddingSequence(H[0], batch.target[0])


def attention_pool(embeddings: np.ndarray, pool_mask: np.ndarray, query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pool one sequence; returns (vector, weights).  Masked positions get weight 0."""
    mask = np.asarray(pool_mask, dtype=bool)
    if not mask.any():
        raise ModelError("attention pooling needs at least one unmasked position")
    pooled, alpha, _ = masked_pool(np.asarray(embeddings)[None], mask[None], query)
    return pooled[0], alpha[0]


def context_vector(embeddings: np.ndarray, context_mask: np.ndarray, params: EncoderParams) -> np.ndarray:
    if not params.config.ccfte:
        raise ModelError("context_vector needs a ccfte model")
    mask = np.asarray(context_mask, dtype=bool)
    if not mask.any():
        raise ModelError("no context positions; empty-context samples use the default context vector")
    C, _ = context_vector_batch(params, np.asarray(embeddings)[None], mask[None])
    return C[0]


def logits_from_embeddings(params: EncoderParams, emb: EmbeddingSequence) -> np.ndarray:
    """Head only: post-encoder embeddings to logits."""
    n = len(emb.role_mask)
    batch = Batch(
        inputs=np.zeros((1, n), dtype=np.int64),
        valid=np.ones((1, n), dtype=bool),
        target=emb.role_mask[None].copy(),
        context=~emb.role_mask[None],
        labels=np.zeros(1, dtype=np.int64),
    )
    return head_batch(params, emb.embeddings[None], batch)[0][0]


def forward(params: EncoderParams, sample) -> np.ndarray:
    return forward_batch(params, collate(params, [sample]))[0]


def loss_and_grad(params: EncoderParams, samples: Sequence, rng: np.random.Generator | None = None):
    if not samples:
        raise ModelError("loss_and_grad needs a non-empty batch")
    return loss_and_grad_batch(params, collate(params, samples), rng)


def predict(params: EncoderParams, samples: Sequence, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic batched inference in input order; returns (labels, logits)."""
    out = []
    for i in range(0, len(samples), batch_size):
        out.append(forward_batch(params, collate(params, samples[i:i + batch_size])))
    logits = np.concatenate(out) if out else np.zeros((0, params.config.n_classes))
    return logits.argmax(axis=1), logits


# --- checkpoints ------------------------------------------------------------

def checkpoint_hash(params: EncoderParams) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(params.config.to_dict(), sort_keys=True).encode())
    h.update(json.dumps(list(params.vocab)).encode())
    for name in sorted(params.tensors):
        t = np.ascontiguousarray(params.tensors[name], dtype=np.float64)
        h.update(f"{name}:{t.shape}".encode())
        h.update(t.tobytes())
    return h.hexdigest()


def save_checkpoint(params: EncoderParams, path: str | Path) -> None:
    """Write an ``.npz`` container; entries carry a fixed timestamp so bytes are reproducible."""
    header = {"version": CHECKPOINT_VERSION, "config": params.config.to_dict(), "vocab": list(params.vocab)}
    arrays = {"header": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    arrays.update({f"t/{k}": v for k, v in params.tensors.items()})
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w") as fh:
                np.lib.format.write_array(fh, np.ascontiguousarray(arr), allow_pickle=False)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> EncoderParams:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(data["header"].tobytes().decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ModelError(f"unsupported checkpoint version {header.get('version')!r}")
        cfg = EncoderConfig.from_dict(header["config"])
        tensors = {k[2:]: data[k].copy() for k in data.files if k.startswith("t/")}
    expected = param_shapes(cfg)
    order = {k: tensors[k] for k in expected if k in tensors}
    if set(order) != set(expected) or any(order[k].shape != s for k, s in expected.items()):
        raise ModelError("checkpoint tensors do not match its config")
    return EncoderParams(cfg, order, tuple(header["vocab"]))


def warm_start(new: EncoderParams, checkpoint: EncoderParams) -> tuple[EncoderParams, list[str]]:
    """Copy every tensor whose name and shape match; returns (params, shared names)."""
    out = new.copy()
    shared = []
    for name, t in checkpoint.tensors.items():
        if name in out.tensors and out.tensors[name].shape == t.shape:
            out.tensors[name] = t.copy()
            shared.append(name)
    if checkpoint.vocab != new.vocab:
        raise ModelError("warm start requires identical vocabularies")
    return out, shared


def with_strategy(cfg: EncoderConfig, **flags) -> EncoderConfig:
    return replace(cfg, **flags)
