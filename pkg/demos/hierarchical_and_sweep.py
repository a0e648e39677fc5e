"""
Two-phase training and a token sweep
====================================

Phase 1 learns without context.  Phase 2 starts from that checkpoint with
context switched on, next to a control that continues without context from the
same checkpoint.  The sweep then varies a blind token budget.
"""
from dataclasses import replace

from ctxser.evaluation import unweighted_accuracy
from ctxser.model import EncoderConfig
from ctxser.synthgen import GeneratorSpec, generate
from ctxser.training import TrainConfig, hierarchical_train, make_folds, token_sweep
from ctxser.windowing import ContextPolicy

corpus = generate(GeneratorSpec(), 60, seed=2)
plan = make_folds(corpus, 5, seed=0)
model = EncoderConfig(d_model=16, n_layers=1, n_heads=2, d_ff=32, d_ctx=8, dropout_rate=0.0,
                      max_positions=160, vocab_size=1)

###############################################################################
# Hierarchical training on one fold
# ---------------------------------
phase1 = TrainConfig(policy=ContextPolicy(direction="none"), model=model, max_epochs=8, learning_rate=3e-3)
phase2 = replace(phase1, policy=ContextPolicy(direction="previous"), model=replace(model, ccfte=True), max_epochs=4)
res = hierarchical_train(corpus, plan.folds[0], phase1, phase2)
print("phase-1 checkpoint", res.checkpoint_hash[:16])
print("warm-started tensors:", ", ".join(res.context.shared))
for name in ("baseline", "context", "control"):
    rec = getattr(res, name)
    print(f"{name:8s} test UA {unweighted_accuracy(rec.predictions):.4f}  from {str(rec.warm_start_from)[:16]}")

###############################################################################
# Token sweep
# -----------
# (0, 0) runs the baseline code path, so its UA is the baseline UA.
rows = token_sweep(corpus, plan, [(0, 0), (10, 0), (25, 0), (10, 10)], phase1)
for n_prev, n_next, ua in rows:
    print(f"prev {n_prev:3d} next {n_next:3d}  UA {ua:.4f}")
