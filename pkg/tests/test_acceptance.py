"""Acceptance criteria, one test per criterion.

Each test records a ``[ACCEPT n] PASS|FAIL ...`` line; the lines are echoed in
the pytest terminal summary (see conftest.py) and when this file is run
directly with ``python3 tests/test_acceptance.py``.
"""
from __future__ import annotations

import filecmp
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from ctxser.corpus import (
    Corpus,
    Dialogue,
    EmotionLabel,
    Segment,
    corpus_stats,
    dumps_corpus,
    gap_histogram,
    load_corpus,
    loads_corpus,
    save_corpus,
    transition_matrix,
)
from ctxser.evaluation import PredictionSet, evaluate, unweighted_accuracy, write_report
from ctxser.model import (
    EmbeddingSequence,
    EncoderConfig,
    collate,
    context_vector,
    forward,
    init_params,
    logits_from_embeddings,
    loss_and_grad_batch,
)
from ctxser.synthgen import GeneratorSpec, bayes_optimal_ua, generate, stationary_distribution
from ctxser.training import (
    TrainConfig,
    control_config,
    cross_validate,
    hierarchical_train,
    make_folds,
    tensors_digest,
    token_sweep,
    train_fold,
)
from ctxser.windowing import ContextPolicy, build_dataset

RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    line = f"[ACCEPT {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def tiny_model(**kw) -> EncoderConfig:
    base = dict(d_model=8, n_layers=1, n_heads=2, d_ff=16, d_ctx=4, dropout_rate=0.0, max_positions=128, vocab_size=1)
    base.update(kw)
    return EncoderConfig(**base)


def small_train(policy: ContextPolicy, epochs: int = 2, **model_kw) -> TrainConfig:
    return TrainConfig(policy=policy, model=tiny_model(**model_kw), max_epochs=epochs, seed=0)


# --- 1 ----------------------------------------------------------------------------

def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0.0 else float(np.linalg.norm(a - b) / scale)


def test_01_gradient_check():
    t0 = time.time()
    corpus = generate(GeneratorSpec(vocab_per_class=3), 3, seed=1)
    samples = build_dataset(corpus, ContextPolicy(direction="previous"))[:6]
    assert any(s.has_context for s in samples) and not all(s.has_context for s in samples)
    vocab = corpus.vocabulary
    worst, where = 0.0, ""
    h = 1e-6
    for mwce in (False, True):
        for ccfte in (False, True):
            cfg = tiny_model(vocab_size=len(vocab) + 1, mwce=mwce, ccfte=ccfte)
            params = init_params(cfg, 3, vocab)
            for name in params.tensors:  # break the symmetric zero/one initial values
                params.tensors[name] = params.tensors[name] + np.random.default_rng(7).normal(0, 0.1, params.tensors[name].shape)
            batch = collate(params, samples)
            _, grads = loss_and_grad_batch(params, batch)
            for name, t in params.tensors.items():
                num = np.zeros_like(t)
                for idx in np.ndindex(t.shape):
                    orig = t[idx]
                    t[idx] = orig + h
                    lp, _ = loss_and_grad_batch(params, batch)
                    t[idx] = orig - h
                    lm, _ = loss_and_grad_batch(params, batch)
                    t[idx] = orig
                    num[idx] = (lp - lm) / (2 * h)
                err = _rel_err(grads[name], num)
                if err > worst:
                    worst, where = err, f"{name} (mwce={mwce}, ccfte={ccfte})"
    elapsed = time.time() - t0
    ok = worst <= 1e-4 and elapsed < 60
    record(1, ok, f"gradient check: worst relative error {worst:.2e} at {where}; {elapsed:.1f}s")


# --- 2 ----------------------------------------------------------------------------

def test_02_masking_invariance():
    rng = np.random.default_rng(0)
    mwce_params = init_params(tiny_model(mwce=True, ccfte=False), 1)
    ccfte_params = init_params(tiny_model(mwce=True, ccfte=True), 2)
    failures = 0
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        role = np.zeros(n, dtype=bool)
        n_prev = int(rng.integers(0, n))
        n_tgt = int(rng.integers(1, n - n_prev + 1))
        role[n_prev:n_prev + n_tgt] = True
        if role.all():
            role[0] = False
        H = rng.normal(0, rng.uniform(0.1, 10), (n, 8))

        H_ctx = H.copy()
        H_ctx[~role] = rng.normal(0, rng.choice([1.0, 1e3, 1e-3]), (int((~role).sum()), 8))
        a = logits_from_embeddings(mwce_params, EmbeddingSequence(H, role))
        b = logits_from_embeddings(mwce_params, EmbeddingSequence(H_ctx, role))
        failures += a.tobytes() != b.tobytes()

        H_tgt = H.copy()
        H_tgt[role] = rng.normal(0, rng.choice([1.0, 1e3, 1e-3]), (int(role.sum()), 8))
        c = context_vector(H, ~role, ccfte_params)
        d = context_vector(H_tgt, ~role, ccfte_params)
        failures += c.tobytes() != d.tobytes()
    record(2, failures == 0, f"masking invariance: {failures} bitwise mismatches in 2x1000 trials")


# --- 3 ----------------------------------------------------------------------------

def test_03_zero_context_identity():
    corpus = generate(GeneratorSpec(), 50, seed=0)
    vocab = corpus.vocabulary
    baseline = build_dataset(corpus, ContextPolicy(direction="none"))
    zero_window = build_dataset(corpus, ContextPolicy(scale="tokens", direction="both"))
    turn = build_dataset(corpus, ContextPolicy(direction="previous"))
    mismatches = 0
    n_checked = 0
    for ccfte in (False, True):
        params = init_params(tiny_model(vocab_size=len(vocab) + 1, ccfte=ccfte), 0, vocab)
        for base, zw, tc in zip(baseline, zero_window, turn):
            ref = forward(params, base).tobytes()
            mismatches += forward(params, zw).tobytes() != ref
            stripped = replace(tc, prev_tokens=(), next_tokens=())
            mismatches += forward(params, stripped).tobytes() != ref
            n_checked += 2
    plan = make_folds(corpus, 5, 0)
    cfg = small_train(ContextPolicy(direction="none"), vocab_size=len(vocab) + 1)
    base_ua = cross_validate(corpus, plan, cfg).ua
    rows = token_sweep(corpus, plan, [(0, 0), (5, 0)], replace(cfg, policy=ContextPolicy(scale="tokens")))
    sweep_ua = dict(((a, b), u) for a, b, u in rows)[(0, 0)]
    ok = mismatches == 0 and sweep_ua == base_ua
    record(
        3, ok,
        f"zero-context identity: {mismatches}/{n_checked} forward mismatches; sweep(0,0)={sweep_ua!r} baseline={base_ua!r}",
    )


# --- 4 ----------------------------------------------------------------------------

def test_04_fold_protocol(tmp_path):
    spec = GeneratorSpec(n_agents=7)
    corpus = generate(spec, 93, seed=0)
    speakers = set(corpus.speakers)
    problems = []
    if len(speakers) != 100:
        problems.append(f"{len(speakers)} speakers")
    plan = make_folds(corpus, 5, 0)
    tests = []
    for f in plan.folds:
        tr, va, te = set(f.train), set(f.validation), set(f.test)
        if tr & va or tr & te or va & te:
            problems.append(f"fold {f.index} overlaps")
        if tr | va | te != speakers:
            problems.append(f"fold {f.index} does not cover all speakers")
        tests.append(te)
    if sum(len(t) for t in tests) != len(speakers) or set().union(*tests) != speakers:
        problems.append("test sets do not partition the speakers")

    cfg = small_train(ContextPolicy(direction="previous"), vocab_size=len(corpus.vocabulary) + 1)
    runs = []
    for i in range(2):
        plan_i = make_folds(corpus, 5, 0)
        result = cross_validate(corpus, plan_i, cfg)
        out = tmp_path / f"run{i}"
        write_report(evaluate(result.combined, corpus), out)
        runs.append((plan_i.to_dict(), result.combined.to_dict(), [r.to_dict() for r in result.records], out))
    if runs[0][0] != runs[1][0]:
        problems.append("fold plans differ")
    if runs[0][1] != runs[1][1] or runs[0][2] != runs[1][2]:
        problems.append("predictions or records differ")
    names = sorted(p.name for p in runs[0][3].iterdir())
    _, mismatch, errors = filecmp.cmpfiles(runs[0][3], runs[1][3], names, shallow=False)
    if mismatch or errors:
        problems.append(f"report files differ: {mismatch + errors}")
    record(4, not problems, "fold protocol: " + ("; ".join(problems) if problems else f"{len(speakers)} speakers, 5 folds, deterministic"))


# --- 5 ----------------------------------------------------------------------------

def _brute_force_ua(y_true, y_pred) -> float:
    recalls = []
    for c in range(4):
        total = hit = 0
        for t, p in zip(y_true, y_pred):
            if t == c:
                total += 1
                hit += p == c
        recalls.append(hit / total)
    return sum(recalls) / 4


def test_05_metric_oracle():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(4, 200))
        y_true = np.concatenate([np.arange(4), rng.integers(0, 4, n - 4)])
        rng.shuffle(y_true)
        y_pred = rng.integers(0, 4, n)
        ps = PredictionSet({f"d/{i:04d}": (int(t), int(p)) for i, (t, p) in enumerate(zip(y_true, y_pred))})
        worst = max(worst, abs(unweighted_accuracy(ps) - _brute_force_ua(y_true.tolist(), y_pred.tolist())))
    y_true = np.repeat(np.arange(4), 2500)
    y_pred = rng.integers(0, 4, 10000)
    chance = unweighted_accuracy((y_true, y_pred))
    ok = worst <= 1e-12 and abs(chance - 0.25) <= 0.02
    record(5, ok, f"metric oracle: max |diff| {worst:.1e} over 1000 sets; random UA at n=10000 = {chance:.4f}")


# --- 6 ----------------------------------------------------------------------------

SEEDS_6 = range(5)


def _ua_se(support: np.ndarray, recall: float) -> float:
    """Binomial standard error of a UA whose per-class recalls are near ``recall``."""
    return math.sqrt(sum(recall * (1 - recall) / n for n in support)) / len(support)


@pytest.mark.slow
def test_06_synthetic_context_benefit():
    t0 = time.time()
    spec = GeneratorSpec()
    oracle = bayes_optimal_ua(spec, method="exact_enumeration")
    model = dict(d_model=16, n_layers=1, n_heads=2, d_ff=32, d_ctx=8, dropout_rate=0.0, max_positions=64, ccfte=True)
    base_uas, ctx_uas, var_base, var_ctx = [], [], 0.0, 0.0
    for seed in SEEDS_6:
        corpus = generate(spec, 120, seed)
        plan = make_folds(corpus, 5, 0)
        m = EncoderConfig(vocab_size=len(corpus.vocabulary) + 1, **model)
        cfg = TrainConfig(policy=ContextPolicy(direction="none"), model=m, max_epochs=12, learning_rate=3e-3, seed=0)
        base = cross_validate(corpus, plan, cfg)
        ctx = cross_validate(corpus, plan, replace(cfg, policy=ContextPolicy(direction="previous", speaker_scope="all")))
        base_uas.append(base.ua)
        ctx_uas.append(ctx.ua)
        support = np.bincount(base.combined.y_true, minlength=4)
        var_base += _ua_se(support, oracle.bayes_ua_no_context) ** 2
        var_ctx += _ua_se(support, oracle.bayes_ua_with_prev_context) ** 2
    n = len(SEEDS_6)
    mb, mc = float(np.mean(base_uas)), float(np.mean(ctx_uas))
    tol_b, tol_c = 3 * math.sqrt(var_base) / n, 3 * math.sqrt(var_ctx) / n
    elapsed = time.time() - t0
    ok = (
        mc > mb
        and 0.25 < mb <= oracle.bayes_ua_no_context + tol_b
        and 0.25 < mc <= oracle.bayes_ua_with_prev_context + tol_c
        and elapsed < 20 * 60
    )
    record(
        6, ok,
        f"context benefit: mean UA context {mc:.4f} vs baseline {mb:.4f}; "
        f"Bayes bounds {oracle.bayes_ua_with_prev_context:.4f} (+{tol_c:.4f}) / "
        f"{oracle.bayes_ua_no_context:.4f} (+{tol_b:.4f}); {elapsed:.0f}s",
    )


# --- 7 ----------------------------------------------------------------------------

def test_07_generator_statistics():
    spec = GeneratorSpec()
    corpus = generate(spec, 300, seed=0)
    tm = transition_matrix(corpus)
    n_trans = int(tm.counts.sum())
    dev_t = float(np.abs(tm.probabilities - np.asarray(spec.transition)).max())
    labels = np.array([int(seg.label) for _, _, seg in corpus.iter_segments()])
    marg = np.bincount(labels, minlength=4) / len(labels)
    dev_m = float(np.abs(marg - stationary_distribution(spec.transition)).max())
    ok = n_trans >= 2000 and dev_t <= 0.05 and dev_m <= 0.05
    record(7, ok, f"generator statistics: {n_trans} transitions; max cell dev {dev_t:.4f}; max marginal dev {dev_m:.4f}")


# --- 8 ----------------------------------------------------------------------------

def test_08_hierarchical_protocol():
    corpus = generate(GeneratorSpec(), 40, seed=0)
    plan = make_folds(corpus, 5, 0)
    fold = plan.folds[0]
    vocab_size = len(corpus.vocabulary) + 1
    phase1 = small_train(ContextPolicy(direction="none"), vocab_size=vocab_size, ccfte=False)
    phase2 = small_train(ContextPolicy(direction="previous"), vocab_size=vocab_size, ccfte=True)
    res = hierarchical_train(corpus, fold, phase1, phase2)
    problems = []
    for name in ("context", "control"):
        rec = getattr(res, name)
        if not rec.shared or rec.shared_digest != tensors_digest(res.checkpoint, rec.shared):
            problems.append(f"{name}: shared tensors differ from the checkpoint at init")
        if rec.warm_start_from != res.checkpoint_hash:
            problems.append(f"{name}: warm start source differs")
    encoder = [k for k in res.checkpoint.tensors if k.startswith(("L0.", "embed", "pos"))]
    if not set(encoder) <= set(res.context.shared):
        problems.append("encoder tensors not all shared")
    rerun, _ = train_fold(corpus, fold, replace(phase2, policy=replace(phase2.policy, direction="none")), init_from=res.checkpoint)
    if rerun.to_dict() != res.control.to_dict() or control_config(phase2).policy.direction != "none":
        problems.append("direction=none phase 2 does not reproduce the control run")
    record(8, not problems, "hierarchical protocol: " + ("; ".join(problems) or f"checkpoint {res.checkpoint_hash[:12]} shared by both runs"))


# --- 9 ----------------------------------------------------------------------------

def hand_corpus() -> Corpus:
    segs = [
        Segment("s1", "A", "caller", 0.0, 2.0, ("a", "b", "c"), EmotionLabel.ANG),
        Segment("s2", "B", "agent", 2.0, 3.5, ("d", "e"), EmotionLabel.ANG),
        Segment("s3", "A", "caller", 4.5, 6.0, ("a", "f"), EmotionLabel.FEA),
        Segment("s4", "B", "agent", 8.5, 9.0, ("g",), EmotionLabel.NEU),
    ]
    other = [Segment("s1", "C", "caller", 0.0, 4.0, ("h", "h", "i", "j"), EmotionLabel.POS)]
    return Corpus((Dialogue("d1", segs), Dialogue("d2", other)), frame_rate=0.0, d_feat=0)


def test_09_corpus_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    bad = 0
    for i in range(100):
        d_feat = int(rng.choice([0, 3]))
        spec = GeneratorSpec(d_feat=d_feat, frame_rate=float(rng.choice([10, 16])) if d_feat else 10.0,
                             emission_ambiguity=float(rng.uniform(0, 1)))
        corpus = generate(spec, int(rng.integers(0, 6)), seed=int(rng.integers(0, 2**31)))
        path = tmp_path / f"c{i}.jsonl"
        save_corpus(corpus, path)
        again = load_corpus(path)
        bad += again != corpus or dumps_corpus(again) != path.read_text(encoding="utf-8")

    c = hand_corpus()
    c = loads_corpus(dumps_corpus(c))
    stats = corpus_stats(c)
    expect = {
        "ANG": (2, 2, 1, 3.5 / 60, 1.75, 5, 2.5),
        "FEA": (1, 1, 1, 1.5 / 60, 1.5, 2, 2.0),
        "NEU": (1, 1, 1, 0.5 / 60, 0.5, 1, 1.0),
        "POS": (1, 1, 1, 4.0 / 60, 4.0, 3, 4.0),
        "Total": (5, 3, 2, 9.5 / 60, 1.9, 10, 2.4),
    }
    got = {k: (s.segments, s.speakers, s.dialogues, s.total_duration_min, s.mean_duration_s, s.vocabulary_size, s.avg_word_count)
           for k, s in stats.items()}
    tm = transition_matrix(c, min_count=2)
    counts = np.zeros((4, 4), dtype=int)
    counts[0, 0] = counts[0, 1] = counts[1, 2] = 1
    probs = np.zeros((4, 4))
    probs[0, :2] = 0.5
    probs[1, 2] = 1.0
    hist = gap_histogram(c, "previous_to_target", 1.0)
    analytics_ok = (
        got == expect
        and np.array_equal(tm.counts, counts)
        and np.array_equal(tm.probabilities, probs)
        and tm.included.tolist() == [True, False, False, False]
        and hist.bins == ((0.0, 0), (1.0, 1), (2.0, 1))
        and hist.n_contiguous == 1
        and hist.n_missing == 2
    )
    record(9, bad == 0 and analytics_ok, f"corpus round trip: {bad}/100 mismatches; hand-built analytics {'match' if analytics_ok else 'DIFFER'}")


# --- 10 ---------------------------------------------------------------------------

def test_10_acoustic_cap():
    spec = GeneratorSpec(d_feat=4, frame_rate=10.0, frames_per_segment=(10, 45))
    corpus = generate(spec, 60, seed=0)
    violations = truncated = n = 0
    for direction in ("previous", "next"):
        policy = ContextPolicy(direction=direction, modality="acoustic")
        for s in build_dataset(corpus, policy):
            n += 1
            seg = corpus.segment(s.dialogue_id, s.segment_id)
            if s.total_duration_s > 6.5 or not np.array_equal(s.target_frames, seg.frames):
                violations += 1
            ctx_idx = corpus.dialogue(s.dialogue_id).index_of(s.segment_id) + (-1 if direction == "previous" else 1)
            ctx_len = len(s.prev_frames) + len(s.next_frames)
            if 0 <= ctx_idx < len(corpus.dialogue(s.dialogue_id).segments):
                truncated += ctx_len < len(corpus.dialogue(s.dialogue_id).segments[ctx_idx].frames)
    record(10, violations == 0 and truncated > 0,
           f"acoustic cap: {violations} violations over {n} samples ({truncated} with truncated context)")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
