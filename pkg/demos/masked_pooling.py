"""
Context masking and the context vector
======================================

The encoder sees context and target together.  With ``mwce`` the head pools
target positions only; with ``ccfte`` a pooled context vector is appended to
every target embedding before pooling.
"""
import numpy as np

from ctxser.model import (
    EmbeddingSequence,
    EncoderConfig,
    context_vector,
    encode,
    forward,
    init_params,
    logits_from_embeddings,
    loss_and_grad,
)
from ctxser.windowing import ContextualSample

vocab = ("ang3", "fea1", "neu7", "pos2", "amb04")
cfg = EncoderConfig(d_model=8, n_layers=1, n_heads=2, d_ff=16, d_ctx=4, dropout_rate=0.0, vocab_size=len(vocab) + 1)
sample = ContextualSample("d", "s", "caller1", 0, ("amb04", "amb04"), prev_tokens=("ang3", "ang3", "fea1"))

###############################################################################
# Masked pooling
# --------------
params = init_params(cfg, seed=0, vocab=vocab)
emb = encode(params, sample)
print("role mask", emb.role_mask.astype(int))

# overwrite the context rows after encoding: the logits do not move by a single bit
H = emb.embeddings.copy()
H[~emb.role_mask] = 1e3
before = logits_from_embeddings(params, emb)
after = logits_from_embeddings(params, EmbeddingSequence(H, emb.role_mask))
print("bitwise equal:", before.tobytes() == after.tobytes())

###############################################################################
# The context vector
# ------------------
cc = init_params(EncoderConfig(**{**cfg.to_dict(), "ccfte": True}), seed=0, vocab=vocab)
emb = encode(cc, sample)
C = context_vector(emb.embeddings, emb.context_mask, cc)
print("C =", np.round(C, 4))
print("logits", np.round(forward(cc, sample), 4))

###############################################################################
# Checking a gradient by hand
# ---------------------------
loss, grads = loss_and_grad(cc, [sample])
t = cc.tensors["ctx.W"]
h = 1e-6
t[2, 1] += h
up, _ = loss_and_grad(cc, [sample])
t[2, 1] -= 2 * h
down, _ = loss_and_grad(cc, [sample])
t[2, 1] += h
print(f"analytic {grads['ctx.W'][2, 1]:.8f}  numeric {(up - down) / (2 * h):.8f}")
