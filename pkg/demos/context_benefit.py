"""
Does the previous turn help?
============================

Speaker-independent cross-validation of a context-free baseline against a
model that also sees the previous turn.  Takes about half a minute.
"""
from dataclasses import replace

import numpy as np

from ctxser.evaluation import LABEL_NAMES, evaluate
from ctxser.model import EncoderConfig
from ctxser.synthgen import GeneratorSpec, bayes_optimal_ua, generate
from ctxser.training import TrainConfig, cross_validate, make_folds
from ctxser.windowing import ContextPolicy

spec = GeneratorSpec()
corpus = generate(spec, 120, seed=0)
plan = make_folds(corpus, k=5, seed=0)
for fold in plan.folds:
    print(f"fold {fold.index}: train {len(fold.train)} / val {len(fold.validation)} / test {len(fold.test)} speakers")

model = EncoderConfig(d_model=16, n_layers=1, n_heads=2, d_ff=32, d_ctx=8, dropout_rate=0.0,
                      max_positions=64, vocab_size=1, ccfte=True)
baseline_cfg = TrainConfig(policy=ContextPolicy(direction="none"), model=model, max_epochs=12, learning_rate=3e-3)
context_cfg = replace(baseline_cfg, policy=ContextPolicy(direction="previous", speaker_scope="all"))

###############################################################################
# Train both
# ----------
baseline = cross_validate(corpus, plan, baseline_cfg)
context = cross_validate(corpus, plan, context_cfg)
oracle = bayes_optimal_ua(spec)
print(f"baseline UA {baseline.ua:.4f}   (Bayes {oracle.bayes_ua_no_context:.4f})")
print(f"context  UA {context.ua:.4f}   (Bayes {oracle.bayes_ua_with_prev_context:.4f})")
print("selected epochs:", [r.selected_epoch for r in context.records])

###############################################################################
# Where does context help?
# ------------------------
# Recall of each target emotion given the emotion of the previous segment.
for name, result in (("baseline", baseline), ("context", context)):
    cond = evaluate(result.combined, corpus).conditional
    print(name)
    print("      " + " ".join(f"{n:>6s}" for n in LABEL_NAMES))
    for p, row in zip(LABEL_NAMES, cond.recall):
        print(f"{p:5s} " + " ".join(f"{v:6.3f}" for v in np.nan_to_num(row)))
