"""
Synthetic corpus and descriptive analytics
==========================================

Generate a two-party dialogue corpus with persistent emotion dynamics, then
look at it the way one would look at a real call-center corpus.
"""
import tempfile
from pathlib import Path

import numpy as np

from ctxser.corpus import corpus_stats, gap_histogram, load_corpus, save_corpus, transition_matrix
from ctxser.synthgen import GeneratorSpec, bayes_optimal_ua, generate

###############################################################################
# A generator spec
# ----------------
# The default chain keeps the current emotion with probability 0.68.  Half of
# the segments (alpha = 0.5) carry filler content that says nothing about
# their own label, which is where the previous segment becomes useful.
spec = GeneratorSpec()
print(np.round(np.asarray(spec.transition), 3))

corpus = generate(spec, 200, seed=0)
print(len(corpus.dialogues), "dialogues,", corpus.n_segments, "segments,", len(corpus.speakers), "speakers")

###############################################################################
# Saving and loading
# ------------------
# One JSON line per dialogue after a header line; saving twice gives the same bytes.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "corpus.jsonl"
    save_corpus(corpus, path)
    print(path.read_text().splitlines()[0])
    assert load_corpus(path) == corpus

###############################################################################
# Per-class statistics
# --------------------
for name, s in corpus_stats(corpus).items():
    print(f"{name:5s} segments={s.segments:5d} speakers={s.speakers:4d} "
          f"total={s.total_duration_min:6.1f} min mean={s.mean_duration_s:4.2f} s words={s.avg_word_count:4.1f}")

###############################################################################
# Previous -> current emotion
# ---------------------------
# Rows with fewer than 30 transitions are flagged as excluded.
tm = transition_matrix(corpus, min_count=30)
print(np.round(tm.probabilities, 3))
print("included rows:", tm.included)

###############################################################################
# Gaps between neighbouring segments
# ----------------------------------
hist = gap_histogram(corpus, "previous_to_target", bin_width_s=0.5)
print("contiguous pairs:", hist.n_contiguous, " segments without a previous one:", hist.n_missing)
for lower, count in hist.bins:
    print(f"[{lower:.1f}, {lower + hist.bin_width_s:.1f}) {'#' * (count // 10)} {count}")

###############################################################################
# How much can context help at best?
# ----------------------------------
# The oracle enumerates the generative model exactly.
report = bayes_optimal_ua(spec)
print(f"Bayes UA without context {report.bayes_ua_no_context:.4f}, "
      f"with the previous segment {report.bayes_ua_with_prev_context:.4f}")
