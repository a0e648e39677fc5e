import math
import numpy as np
import pytest

from ctxser.model import (
    Batch,
    EmbeddingSequence,
    EncoderConfig,
    ModelError,
    attention_pool,
    checkpoint_hash,
    collate,
    context_vector,
    encode,
    forward,
    init_params,
    load_checkpoint,
    logits_from_embeddings,
    loss_and_grad,
    param_shapes,
    predict,
    save_checkpoint,
    warm_start,
)
from ctxser.windowing import AcousticContextualSample, ContextualSample

VOCAB = ("a", "b", "c", "d", "e")


def cfg(**kw):
    base = dict(d_model=8, n_layers=1, n_heads=2, d_ff=16, d_ctx=4, dropout_rate=0.0, max_positions=32, vocab_size=6)
    base.update(kw)
    return EncoderConfig(**base)


def sample(target, prev=(), nxt=(), label=0):
    return ContextualSample("d", "s", "A", label, tuple(target), tuple(prev), tuple(nxt))


def test_config_validation():
    with pytest.raises(ModelError):
        cfg(d_model=7)
    with pytest.raises(ModelError):
        cfg(input_mode="video")
    with pytest.raises(ModelError):
        cfg(input_mode="acoustic", d_feat=0)
    assert cfg(ccfte=True).d_pool == 12
    assert EncoderConfig.from_dict(cfg().to_dict()) == cfg()


def test_param_shapes():
    shapes = param_shapes(cfg(ccfte=True))
    assert shapes["embed"] == (6, 8)
    assert shapes["pool.q"] == (12,)
    assert shapes["cls.W"] == (12, 4)
    assert shapes["ctx.W"] == (8, 4)
    assert "ctx.W" not in param_shapes(cfg())


def test_empty_context_depends_only_on_target():
    p = init_params(cfg(), 0, VOCAB)
    a = encode(p, sample(["a", "b"])).embeddings
    b = encode(p, sample(["a", "b"])).embeddings
    assert np.array_equal(a, b)


def test_context_order_changes_target_embeddings():
    p = init_params(cfg(), 0, VOCAB)
    a = encode(p, sample(["a"], prev=["b", "c"]))
    b = encode(p, sample(["a"], prev=["c", "b"]))
    assert not np.allclose(a.embeddings[a.role_mask], b.embeddings[b.role_mask])


def test_zero_layers_is_embedding_plus_position():
    p = init_params(cfg(n_layers=0), 0, VOCAB)
    e = encode(p, sample(["b", "e", "a"])).embeddings
    ids = p.token_ids(["b", "e", "a"])
    assert np.array_equal(e, p["embed"][ids] + p["pos"][:3])


def test_unknown_tokens_map_to_zero():
    p = init_params(cfg(), 0, VOCAB)
    assert p.token_ids(["a", "zzz", "e"]).tolist() == [1, 0, 5]


def test_attention_pool_single_position():
    H = np.random.default_rng(0).normal(size=(5, 8))
    mask = np.zeros(5, dtype=bool)
    mask[3] = True
    vec, w = attention_pool(H, mask, np.ones(8))
    assert np.array_equal(vec, H[3])
    assert w.tolist() == [0, 0, 0, 1, 0]


def test_attention_pool_identical_rows():
    row = np.arange(8.0)
    vec, w = attention_pool(np.stack([row, row]), np.array([True, True]), np.ones(8))
    assert w.tolist() == [0.5, 0.5]
    assert np.allclose(vec, row)


def test_attention_pool_masked_perturbation():
    rng = np.random.default_rng(1)
    H = rng.normal(size=(6, 8))
    mask = np.array([1, 0, 1, 1, 0, 0], dtype=bool)
    H2 = H.copy()
    H2[~mask] = 1e6
    q = rng.normal(size=8)
    assert attention_pool(H, mask, q)[0].tobytes() == attention_pool(H2, mask, q)[0].tobytes()
    with pytest.raises(ModelError):
        attention_pool(H, np.zeros(6, dtype=bool), q)


def test_context_vector_single_position():
    p = init_params(cfg(ccfte=True), 0, VOCAB)
    H = np.random.default_rng(2).normal(size=(4, 8))
    mask = np.array([True, False, False, False])
    expected = H[0] @ p["ctx.W"] + p["ctx.b"]
    assert np.allclose(context_vector(H, mask, p), expected, rtol=0, atol=1e-15)


def test_context_vector_identity_projection():
    p = init_params(cfg(ccfte=True, d_ctx=8), 0, VOCAB)
    p.tensors["ctx.W"] = np.eye(8)
    p.tensors["ctx.b"] = np.zeros(8)
    H = np.random.default_rng(3).normal(size=(5, 8))
    mask = np.array([True, True, False, True, False])
    pooled, _ = attention_pool(H, mask, p["ctx.q"])
    assert np.array_equal(context_vector(H, mask, p), pooled)


def test_context_vector_requires_ccfte_and_context():
    H = np.zeros((3, 8))
    with pytest.raises(ModelError):
        context_vector(H, np.array([True, False, False]), init_params(cfg(), 0, VOCAB))
    with pytest.raises(ModelError):
        context_vector(H, np.zeros(3, dtype=bool), init_params(cfg(ccfte=True), 0, VOCAB))


@pytest.mark.parametrize("mwce,ccfte", [(True, False), (False, False), (True, True), (False, True)])
def test_empty_context_matches_shared_weights(mwce, ccfte):
    base = init_params(cfg(), 0, VOCAB)
    other = init_params(cfg(mwce=mwce, ccfte=ccfte), 0, VOCAB)
    other, shared = warm_start(other, base)
    s = sample(["a", "c", "d"])
    if ccfte:
        # zero the default context vector and its classifier rows; pooling
        # scores are divided by sqrt(width), so the wider query is rescaled
        other.tensors["ctx.default"][:] = 0
        other.tensors["cls.W"][8:] = 0
        other.tensors["pool.q"][:8] = base["pool.q"] * math.sqrt(12 / 8)
        other.tensors["pool.q"][8:] = 0
        other.tensors["cls.W"][:8] = base["cls.W"]
        assert np.allclose(forward(other, s), forward(base, s), rtol=0, atol=1e-14)
    else:
        assert forward(other, s).tobytes() == forward(base, s).tobytes()


def test_mwce_ignores_context_embeddings():
    p = init_params(cfg(), 0, VOCAB)
    emb = encode(p, sample(["a", "b"], prev=["c"], nxt=["d", "e"]))
    H2 = emb.embeddings.copy()
    H2[~emb.role_mask] = -42.0
    a = logits_from_embeddings(p, emb)
    b = logits_from_embeddings(p, EmbeddingSequence(H2, emb.role_mask))
    assert a.tobytes() == b.tobytes()


def test_softmax_sums_to_one():
    p = init_params(cfg(ccfte=True), 0, VOCAB)
    z = forward(p, sample(["a", "b"], prev=["c"]))
    e = np.exp(z - z.max())
    assert abs((e / e.sum()).sum() - 1) < 1e-12


def test_uniform_logits_loss():
    p = init_params(cfg(), 0, VOCAB)
    p.tensors["cls.W"][:] = 0
    p.tensors["cls.b"][:] = 0
    loss, _ = loss_and_grad(p, [sample(["a"]), sample(["b"], label=2)])
    assert loss == pytest.approx(math.log(4), abs=1e-12)


def test_classifier_bias_gradient():
    p = init_params(cfg(), 0, VOCAB)
    p.tensors["cls.W"][:] = 0
    p.tensors["cls.b"][:] = [0.3, -0.1, 0.2, 0.0]
    batch = [sample(["a"], label=k) for k in range(4)]
    _, grads = loss_and_grad(p, batch)
    soft = np.exp(p["cls.b"]) / np.exp(p["cls.b"]).sum()
    expected = soft - np.full(4, 0.25)  # mean over one-hot rows of a balanced batch
    assert np.allclose(grads["cls.b"], expected, rtol=0, atol=1e-15)


def test_batched_predict_matches_single():
    p = init_params(cfg(ccfte=True), 5, VOCAB)
    samples = [sample(["a", "b"]), sample(["c"], prev=["a", "b", "e"]), sample(["d", "d", "a"], nxt=["b"])]
    labels, logits = predict(p, samples, batch_size=2)
    for s, z in zip(samples, logits):
        assert np.allclose(forward(p, s), z, rtol=0, atol=1e-12)
    assert labels.tolist() == logits.argmax(axis=1).tolist()


def test_dropout_only_with_rng():
    p = init_params(cfg(dropout_rate=0.5), 0, VOCAB)
    batch = [sample(["a", "b", "c"])] * 2
    l1, _ = loss_and_grad(p, batch)
    l2, _ = loss_and_grad(p, batch)
    l3, _ = loss_and_grad(p, batch, np.random.default_rng(0))
    assert l1 == l2 and l3 != l1


def test_acoustic_mode():
    p = init_params(cfg(input_mode="acoustic", d_feat=3, vocab_size=0, ccfte=True), 0)
    rng = np.random.default_rng(0)
    s = AcousticContextualSample("d", "s", "A", 1, rng.normal(size=(4, 3)), rng.normal(size=(2, 3)), np.zeros((0, 3)), 10.0)
    assert forward(p, s).shape == (4,)
    with pytest.raises(ModelError):
        forward(p, sample(["a"]))


def test_max_positions_enforced():
    p = init_params(cfg(max_positions=4), 0, VOCAB)
    with pytest.raises(ModelError):
        forward(p, sample(["a"] * 5))


def test_checkpoint_round_trip(tmp_path):
    p = init_params(cfg(ccfte=True), 9, VOCAB)
    save_checkpoint(p, tmp_path / "a.npz")
    q = load_checkpoint(tmp_path / "a.npz")
    assert checkpoint_hash(q) == checkpoint_hash(p)
    assert q.vocab == VOCAB and q.config == p.config
    save_checkpoint(q, tmp_path / "b.npz")
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()


def test_checkpoint_hash_sensitive():
    p = init_params(cfg(), 0, VOCAB)
    q = p.copy()
    q.tensors["cls.b"][0] += 1e-12
    assert checkpoint_hash(p) != checkpoint_hash(q)


def test_warm_start_copies_matching_shapes():
    old = init_params(cfg(), 1, VOCAB)
    new = init_params(cfg(ccfte=True), 2, VOCAB)
    out, shared = warm_start(new, old)
    assert "embed" in shared and "L0.Wq" in shared
    assert "pool.q" not in shared and "cls.W" not in shared  # widened by ccfte
    assert "cls.b" in shared
    for name in shared:
        assert np.array_equal(out[name], old[name])
    assert np.array_equal(out["ctx.W"], new["ctx.W"])
    with pytest.raises(ModelError):
        warm_start(init_params(cfg(), 0, ("x",) * 5), old)


def test_collate_masks():
    p = init_params(cfg(), 0, VOCAB)
    b = collate(p, [sample(["a"], prev=["b"]), sample(["c", "d", "e"])])
    assert isinstance(b, Batch)
    assert b.valid.tolist() == [[True, True, False], [True, True, True]]
    assert b.target.tolist() == [[False, True, False], [True, True, True]]
    assert b.has_context.tolist() == [True, False]
