"""
Context windows at two scales
=============================

Blind token windows, speaker-scoped turns, and the acoustic input cap.
"""
from ctxser.synthgen import GeneratorSpec, generate
from ctxser.windowing import ContextPolicy, acoustic_turn_context, build_dataset, token_context, turn_context

corpus = generate(GeneratorSpec(), 3, seed=0)
dlg = corpus.dialogues[0]
for seg in dlg.segments[:4]:
    print(seg.segment_id, seg.speaker_id, seg.label.name, " ".join(seg.tokens))

###############################################################################
# Token scale
# -----------
# The window ignores turn and speaker boundaries and stops at the dialogue edges.
target = dlg.segments[2].segment_id
s = token_context(corpus, dlg.dialogue_id, target, 6, 4)
print("prev:", s.prev_tokens)
print("target:", s.target_tokens)
print("next:", s.next_tokens)
print("role mask:", s.role_mask.astype(int))

###############################################################################
# Turn scale
# ----------
# The nearest previous turn, restricted to the same speaker, the other one, or either.
for scope in ("same", "opposite", "all"):
    print(scope, turn_context(corpus, dlg.dialogue_id, target, "previous", scope).prev_tokens)

###############################################################################
# Acoustic frames and the 6.5 s cap
# ---------------------------------
# Context frames are dropped from the far end; the target is never cut.
acoustic = generate(GeneratorSpec(d_feat=4, frames_per_segment=(20, 45)), 3, seed=1)
d = acoustic.dialogues[0]
for seg in d.segments[1:4]:
    a = acoustic_turn_context(acoustic, d.dialogue_id, seg.segment_id, "previous", "all", max_input_s=6.5)
    print(f"target {len(a.target_frames) / 10:.1f}s + context {len(a.prev_frames) / 10:.1f}s = {a.total_duration_s:.1f}s")

###############################################################################
# Whole datasets
# --------------
policy = ContextPolicy(scale="turns", direction="previous", speaker_scope="same")
samples = build_dataset(corpus, policy)
print(sum(s.has_context for s in samples), "of", len(samples), "samples have context")
