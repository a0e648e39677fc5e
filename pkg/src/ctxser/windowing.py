"""Context window assembly at token and speech-turn scales."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .corpus import Corpus, EmotionLabel

SCALES = ("tokens", "turns")
DIRECTIONS = ("previous", "next", "both", "none")
SCOPES = ("same", "opposite", "all")
MODALITIES = ("text", "acoustic")
DEFAULT_MAX_INPUT_S = 6.5


class WindowingError(ValueError):
    pass


@dataclass(frozen=True)
class ContextualSample:
    dialogue_id: str
    segment_id: str
    speaker_id: str
    label: EmotionLabel
    target_tokens: tuple[str, ...]
    prev_tokens: tuple[str, ...] = ()
    next_tokens: tuple[str, ...] = ()

    @property
    def positions(self) -> tuple[str, ...]:
        return self.prev_tokens + self.target_tokens + self.next_tokens

    @property
    def role_mask(self) -> np.ndarray:
        """True at target positions."""
        mask = np.zeros(len(self.positions), dtype=bool)
        mask[len(self.prev_tokens):len(self.prev_tokens) + len(self.target_tokens)] = True
        return mask

    @property
    def n_positions(self) -> int:
        return len(self.prev_tokens) + len(self.target_tokens) + len(self.next_tokens)

    @property
    def has_context(self) -> bool:
        return bool(self.prev_tokens or self.next_tokens)


@dataclass(frozen=True, eq=False)
class AcousticContextualSample:
    dialogue_id: str
    segment_id: str
    speaker_id: str
    label: EmotionLabel
    target_frames: np.ndarray
    prev_frames: np.ndarray
    next_frames: np.ndarray
    frame_rate: float

    @property
    def positions(self) -> np.ndarray:
        return np.vstack([self.prev_frames, self.target_frames, self.next_frames])

    @property
    def role_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_positions, dtype=bool)
        start = len(self.prev_frames)
        mask[start:start + len(self.target_frames)] = True
        return mask

    @property
    def n_positions(self) -> int:
        return len(self.prev_frames) + len(self.target_frames) + len(self.next_frames)

    @property
    def has_context(self) -> bool:
        return len(self.prev_frames) + len(self.next_frames) > 0

    @property
    def total_duration_s(self) -> float:
        return self.n_positions / self.frame_rate

    def __eq__(self, other):
        if not isinstance(other, AcousticContextualSample):
            return NotImplemented
        return (
            (self.dialogue_id, self.segment_id, self.speaker_id, self.label, self.frame_rate)
            == (other.dialogue_id, other.segment_id, other.speaker_id, other.label, other.frame_rate)
            and all(
                a.shape == b.shape and np.array_equal(a, b)
                for a, b in (
                    (self.prev_frames, other.prev_frames),
                    (self.target_frames, other.target_frames),
                    (self.next_frames, other.next_frames),
                )
            )
        )

    __hash__ = None


@dataclass(frozen=True)
class ContextPolicy:
    scale: str = "turns"
    direction: str = "none"
    n_prev_tokens: int = 0
    n_next_tokens: int = 0
    speaker_scope: str = "all"
    modality: str = "text"
    max_input_s: float = DEFAULT_MAX_INPUT_S
    max_positions: int | None = None

    def __post_init__(self):
        if self.scale not in SCALES:
            raise WindowingError(f"scale must be one of {SCALES}")
        if self.direction not in DIRECTIONS:
            raise WindowingError(f"direction must be one of {DIRECTIONS}")
        if self.speaker_scope not in SCOPES:
            raise WindowingError(f"speaker_scope must be one of {SCOPES}")
        if self.modality not in MODALITIES:
            raise WindowingError(f"modality must be one of {MODALITIES}")
        if self.n_prev_tokens < 0 or self.n_next_tokens < 0:
            raise WindowingError("token window sizes must be >= 0")
        if self.scale == "tokens" and self.modality == "acoustic":
            raise WindowingError("token-scale windows are text-only")
        if self.scale == "turns" and self.direction == "both":
            raise WindowingError("turn-scale context is a single turn: use previous or next")
        if not self.max_input_s > 0:
            raise WindowingError("max_input_s must be positive")

    @property
    def window(self) -> tuple[int, int]:
        """Effective (n_prev, n_next) for the tokens scale."""
        n_prev = self.n_prev_tokens if self.direction in ("previous", "both") else 0
        n_next = self.n_next_tokens if self.direction in ("next", "both") else 0
        return n_prev, n_next

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ContextPolicy":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise WindowingError(f"unknown policy fields: {sorted(unknown)}")
        return cls(**d)


def _locate(corpus: Corpus, dialogue_id: str, segment_id: str):
    try:
        dlg = corpus.dialogue(dialogue_id)
        return dlg, dlg.index_of(segment_id)
    except KeyError as exc:
        raise WindowingError(f"unknown segment {dialogue_id}/{segment_id}") from exc


def token_context(corpus: Corpus, dialogue_id: str, segment_id: str, n_prev: int, n_next: int) -> ContextualSample:
    """Blind token window: the nearest tokens around the target, ignoring turns and speakers."""
    if n_prev < 0 or n_next < 0:
        raise WindowingError("token window sizes must be >= 0")
    dlg, i = _locate(corpus, dialogue_id, segment_id)
    seg = dlg.segments[i]
    before = [tok for s in dlg.segments[:i] for tok in s.tokens]
    after = [tok for s in dlg.segments[i + 1:] for tok in s.tokens]
    return ContextualSample(
        dialogue_id=dialogue_id,
        segment_id=segment_id,
        speaker_id=seg.speaker_id,
        label=seg.label,
        target_tokens=seg.tokens,
        prev_tokens=tuple(before[len(before) - n_prev:]) if n_prev else (),
        next_tokens=tuple(after[:n_next]),
    )


def _scope_matches(scope: str, target_speaker: str, other_speaker: str) -> bool:
    if scope == "same":
        return other_speaker == target_speaker
    if scope == "opposite":
        return other_speaker != target_speaker
    return True


def context_turn_index(corpus: Corpus, dialogue_id: str, segment_id: str, direction: str, speaker_scope: str) -> int | None:
    """Index of the nearest matching turn, or None."""
    if direction not in ("previous", "next"):
        raise WindowingError("turn direction must be 'previous' or 'next'")
    if speaker_scope not in SCOPES:
        raise WindowingError(f"speaker_scope must be one of {SCOPES}")
    dlg, i = _locate(corpus, dialogue_id, segment_id)
    speaker = dlg.segments[i].speaker_id
    candidates = range(i - 1, -1, -1) if direction == "previous" else range(i + 1, len(dlg.segments))
    for j in candidates:
        if _scope_matches(speaker_scope, speaker, dlg.segments[j].speaker_id):
            return j
    return None


def turn_context(corpus: Corpus, dialogue_id: str, segment_id: str, direction: str, speaker_scope: str) -> ContextualSample:
    j = context_turn_index(corpus, dialogue_id, segment_id, direction, speaker_scope)
    base = token_context(corpus, dialogue_id, segment_id, 0, 0)
    if j is None:
        return base
    ctx = corpus.dialogue(dialogue_id).segments[j].tokens
    if direction == "previous":
        return ContextualSample(**{**base.__dict__, "prev_tokens": ctx})
    return ContextualSample(**{**base.__dict__, "next_tokens": ctx})


def _empty_frames(d_feat: int) -> np.ndarray:
    return np.zeros((0, d_feat), dtype=np.float64)


def acoustic_turn_context(
    corpus: Corpus,
    dialogue_id: str,
    segment_id: str,
    direction: str,
    speaker_scope: str,
    max_input_s: float = DEFAULT_MAX_INPUT_S,
) -> AcousticContextualSample:
    """Turn-scale context on frames, capped at ``max_input_s`` of total input.

    Context frames are dropped from the end farthest from the target; target
    frames are never truncated.
    """
    dlg, i = _locate(corpus, dialogue_id, segment_id)
    seg = dlg.segments[i]
    if seg.frames is None:
        raise WindowingError(f"segment {dialogue_id}/{segment_id} has no frames")
    rate = corpus.frame_rate
    cap_frames = math.floor(max_input_s * rate + 1e-9)
    n_target = len(seg.frames)
    if n_target > cap_frames:
        raise WindowingError(
            f"segment {dialogue_id}/{segment_id} lasts {n_target / rate:.3f}s, above the {max_input_s}s input cap"
        )
    prev = nxt = _empty_frames(corpus.d_feat)
    if direction != "none":
        j = context_turn_index(corpus, dialogue_id, segment_id, direction, speaker_scope)
        if j is not None:
            ctx = dlg.segments[j].frames
            room = cap_frames - n_target
            if direction == "previous":
                prev = ctx[len(ctx) - room:] if room < len(ctx) else ctx
            else:
                nxt = ctx[:room]
    return AcousticContextualSample(
        dialogue_id=dialogue_id,
        segment_id=segment_id,
        speaker_id=seg.speaker_id,
        label=seg.label,
        target_frames=seg.frames,
        prev_frames=prev,
        next_frames=nxt,
        frame_rate=rate,
    )


def build_dataset(corpus: Corpus, policy: ContextPolicy) -> list:
    """Apply ``policy`` to every segment, ordered by (dialogue_id, start_s)."""
    if policy.modality == "acoustic" and not corpus.has_frames:
        raise WindowingError("acoustic policy requires a corpus with frames on every segment")
    if policy.modality == "text" and any(not seg.tokens for _, _, seg in corpus.iter_segments()):
        raise WindowingError("text policy requires tokens on every segment")
    samples = []
    for dlg in sorted(corpus.dialogues, key=lambda d: d.dialogue_id):
        for seg in dlg.segments:
            did, sid = dlg.dialogue_id, seg.segment_id
            if policy.modality == "acoustic":
                sample = acoustic_turn_context(
                    corpus, did, sid, policy.direction, policy.speaker_scope, policy.max_input_s
                )
            elif policy.scale == "tokens" or policy.direction == "none":
                sample = token_context(corpus, did, sid, *policy.window)
            else:
                sample = turn_context(corpus, did, sid, policy.direction, policy.speaker_scope)
            if policy.max_positions is not None and sample.n_positions > policy.max_positions:
                raise WindowingError(
                    f"sample {did}/{sid} has {sample.n_positions} positions, above max_positions={policy.max_positions}"
                )
            samples.append(sample)
    return samples
