"""Conversation data model, corpus file I/O and descriptive analytics.

A corpus file is UTF-8 JSON Lines: a header record carrying ``frame_rate`` and
``d_feat``, followed by one record per dialogue.  Serialization is
deterministic (sorted keys, seconds as 6-decimal fixed point, frame values in
shortest round-trip form), so ``save -> load -> save`` is byte-identical.
"""
from __future__ import annotations

import csv
import enum
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

FORMAT_NAME = "ctxser-corpus"
FORMAT_VERSION = 1
ROLES = ("caller", "agent")
TIME_DECIMALS = 6


class EmotionLabel(enum.IntEnum):
    ANG = 0
    FEA = 1
    NEU = 2
    POS = 3

    @classmethod
    def parse(cls, value: "str | int | EmotionLabel") -> "EmotionLabel":
        if isinstance(value, str):
            try:
                return cls[value]
            except KeyError:
                raise ValueError(f"unknown emotion label {value!r}") from None
        return cls(int(value))


N_CLASSES = len(EmotionLabel)


class CorpusError(ValueError):
    """A corpus violates one of the data-model invariants."""


class CorpusParseError(CorpusError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def _quantize_time(t: float) -> float:
    return round(float(t), TIME_DECIMALS)


@dataclass(frozen=True, eq=False)
class Segment:
    """One annotated speech turn.

    Times are quantized to microseconds on construction so that the
    fixed-point file representation is exact.
    """

    segment_id: str
    speaker_id: str
    role: str
    start_s: float
    end_s: float
    tokens: tuple[str, ...]
    label: EmotionLabel
    frames: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "start_s", _quantize_time(self.start_s))
        object.__setattr__(self, "end_s", _quantize_time(self.end_s))
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "label", EmotionLabel.parse(self.label))
        if self.frames is not None:
            frames = np.array(self.frames, dtype=np.float64)
            if frames.ndim != 2:
                raise CorpusError(f"segment {self.segment_id}: frames must be a 2-D matrix")
            frames.setflags(write=False)
            object.__setattr__(self, "frames", frames)
        if self.role not in ROLES:
            raise CorpusError(f"segment {self.segment_id}: role must be one of {ROLES}, got {self.role!r}")
        if not self.end_s > self.start_s:
            raise CorpusError(f"segment {self.segment_id}: end_s must exceed start_s")
        if self.frames is None and not self.tokens:
            raise CorpusError(f"segment {self.segment_id}: tokens required when frames are absent")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    def __eq__(self, other):
        if not isinstance(other, Segment):
            return NotImplemented
        same = (
            self.segment_id == other.segment_id
            and self.speaker_id == other.speaker_id
            and self.role == other.role
            and self.start_s == other.start_s
            and self.end_s == other.end_s
            and self.tokens == other.tokens
            and self.label == other.label
        )
        if not same:
            return False
        if self.frames is None or other.frames is None:
            return self.frames is None and other.frames is None
        return self.frames.shape == other.frames.shape and np.array_equal(self.frames, other.frames)

    __hash__ = None


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    segments: tuple[Segment, ...]

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        seen = set()
        for seg in self.segments:
            if seg.segment_id in seen:
                raise CorpusError(f"dialogue {self.dialogue_id}: duplicate segment_id {seg.segment_id}")
            seen.add(seg.segment_id)
        for a, b in zip(self.segments, self.segments[1:]):
            if not b.start_s > a.start_s:
                raise CorpusError(
                    f"dialogue {self.dialogue_id}: segment {b.segment_id} does not start after {a.segment_id}"
                )
        last_end: dict[str, tuple[float, str]] = {}
        for seg in self.segments:
            prev = last_end.get(seg.speaker_id)
            if prev is not None and seg.start_s < prev[0]:
                raise CorpusError(
                    f"dialogue {self.dialogue_id}: segments {prev[1]} and {seg.segment_id} "
                    f"of speaker {seg.speaker_id} overlap"
                )
            if prev is None or seg.end_s > prev[0]:
                last_end[seg.speaker_id] = (seg.end_s, seg.segment_id)

    @property
    def speakers(self) -> dict[str, str]:
        """speaker_id -> role."""
        return {seg.speaker_id: seg.role for seg in self.segments}

    def index_of(self, segment_id: str) -> int:
        for i, seg in enumerate(self.segments):
            if seg.segment_id == segment_id:
                return i
        raise KeyError(f"dialogue {self.dialogue_id} has no segment {segment_id!r}")


@dataclass(frozen=True)
class Corpus:
    dialogues: tuple[Dialogue, ...] = ()
    frame_rate: float = 0.0
    d_feat: int = 0
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "dialogues", tuple(self.dialogues))
        object.__setattr__(self, "frame_rate", float(self.frame_rate))
        object.__setattr__(self, "d_feat", int(self.d_feat))
        index = {}
        for dlg in self.dialogues:
            if dlg.dialogue_id in index:
                raise CorpusError(f"duplicate dialogue_id {dlg.dialogue_id}")
            index[dlg.dialogue_id] = dlg
            for seg in dlg.segments:
                if seg.frames is None:
                    continue
                where = f"dialogue {dlg.dialogue_id}, segment {seg.segment_id}"
                if self.frame_rate <= 0:
                    raise CorpusError(f"{where}: frames present but corpus frame_rate is 0")
                if seg.frames.shape[1] != self.d_feat:
                    raise CorpusError(f"{where}: frame width {seg.frames.shape[1]} != d_feat {self.d_feat}")
                expected = round(seg.duration_s * self.frame_rate)
                if seg.frames.shape[0] != expected:
                    raise CorpusError(f"{where}: {seg.frames.shape[0]} frame rows, expected {expected}")
        object.__setattr__(self, "_index", index)

    def dialogue(self, dialogue_id: str) -> Dialogue:
        try:
            return self._index[dialogue_id]
        except KeyError:
            raise KeyError(f"unknown dialogue {dialogue_id!r}") from None

    def segment(self, dialogue_id: str, segment_id: str) -> Segment:
        dlg = self.dialogue(dialogue_id)
        return dlg.segments[dlg.index_of(segment_id)]

    def iter_segments(self) -> Iterator[tuple[Dialogue, int, Segment]]:
        for dlg in self.dialogues:
            for i, seg in enumerate(dlg.segments):
                yield dlg, i, seg

    @property
    def n_segments(self) -> int:
        return sum(len(d.segments) for d in self.dialogues)

    @property
    def vocabulary(self) -> tuple[str, ...]:
        return tuple(sorted({tok for _, _, seg in self.iter_segments() for tok in seg.tokens}))

    @property
    def has_frames(self) -> bool:
        segs = [seg for _, _, seg in self.iter_segments()]
        return bool(segs) and all(seg.frames is not None for seg in segs)

    @property
    def speakers(self) -> list[str]:
        return sorted({seg.speaker_id for _, _, seg in self.iter_segments()})


def segment_key(dialogue_id: str, segment_id: str) -> str:
    """Globally unique segment identifier."""
    return f"{dialogue_id}/{segment_id}"


# --- serialization ----------------------------------------------------------

def _fmt_time(t: float) -> str:
    return f"{t:.{TIME_DECIMALS}f}"


def _segment_json(seg: Segment) -> str:
    parts = [f'"end_s":{_fmt_time(seg.end_s)}']
    if seg.frames is not None:
        parts.append('"frames":' + json.dumps(seg.frames.tolist(), separators=(",", ":")))
    parts += [
        f'"label":{json.dumps(seg.label.name)}',
        f'"role":{json.dumps(seg.role)}',
        f'"segment_id":{json.dumps(seg.segment_id, ensure_ascii=False)}',
        f'"speaker_id":{json.dumps(seg.speaker_id, ensure_ascii=False)}',
        f'"start_s":{_fmt_time(seg.start_s)}',
        '"tokens":' + json.dumps(list(seg.tokens), ensure_ascii=False, separators=(",", ":")),
    ]
    return "{" + ",".join(parts) + "}"


def dialogue_to_line(dlg: Dialogue) -> str:
    segs = ",".join(_segment_json(s) for s in dlg.segments)
    return "{" + f'"dialogue_id":{json.dumps(dlg.dialogue_id, ensure_ascii=False)},"segments":[{segs}]' + "}"


def dumps_corpus(corpus: Corpus) -> str:
    header = json.dumps(
        {"d_feat": corpus.d_feat, "format": FORMAT_NAME, "frame_rate": corpus.frame_rate, "version": FORMAT_VERSION},
        sort_keys=True,
        separators=(",", ":"),
    )
    lines = [header] + [dialogue_to_line(d) for d in corpus.dialogues]
    return "\n".join(lines) + "\n"


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(dumps_corpus(corpus), encoding="utf-8")


def _segment_from_record(rec: dict, d_feat: int) -> Segment:
    frames = rec.get("frames")
    return Segment(
        segment_id=str(rec["segment_id"]),
        speaker_id=str(rec["speaker_id"]),
        role=rec["role"],
        start_s=float(rec["start_s"]),
        end_s=float(rec["end_s"]),
        tokens=tuple(rec.get("tokens", ())),
        label=EmotionLabel.parse(rec["label"]),
        frames=None if frames is None else np.array(frames, dtype=np.float64).reshape(len(frames), d_feat),
    )


def loads_corpus(text: str) -> Corpus:
    lines = text.splitlines()
    if not lines:
        raise CorpusParseError(1, "missing header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorpusParseError(1, f"invalid JSON: {exc.msg}") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise CorpusParseError(1, f"header must declare format {FORMAT_NAME!r}")
    if header.get("version") != FORMAT_VERSION:
        raise CorpusParseError(1, f"unsupported format version {header.get('version')!r}")
    dialogues = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusParseError(line_no, f"invalid JSON: {exc.msg}") from None
        try:
            d_feat = int(header.get("d_feat", 0))
            segs = sorted((_segment_from_record(s, d_feat) for s in rec["segments"]), key=lambda s: s.start_s)
            dialogues.append(Dialogue(str(rec["dialogue_id"]), tuple(segs)))
        except KeyError as exc:
            raise CorpusParseError(line_no, f"missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, CorpusError):
                raise
            raise CorpusParseError(line_no, str(exc)) from None
    return Corpus(tuple(dialogues), frame_rate=header.get("frame_rate", 0.0), d_feat=header.get("d_feat", 0))


def load_corpus(path: str | Path) -> Corpus:
    return loads_corpus(Path(path).read_text(encoding="utf-8"))


# --- analytics --------------------------------------------------------------

@dataclass(frozen=True)
class ClassStats:
    segments: int
    speakers: int
    dialogues: int
    total_duration_min: float
    mean_duration_s: float
    vocabulary_size: int
    avg_word_count: float


STATS_COLUMNS = (
    "class", "segments", "speakers", "dialogues",
    "total_duration_min", "mean_duration_s", "vocabulary_size", "avg_word_count",
)


def _class_stats(rows: Sequence[tuple[str, Segment]]) -> ClassStats:
    n = len(rows)
    total = sum(seg.duration_s for _, seg in rows)
    return ClassStats(
        segments=n,
        speakers=len({seg.speaker_id for _, seg in rows}),
        dialogues=len({did for did, _ in rows}),
        total_duration_min=total / 60.0,
        mean_duration_s=total / n if n else 0.0,
        vocabulary_size=len({tok for _, seg in rows for tok in seg.tokens}),
        avg_word_count=sum(len(seg.tokens) for _, seg in rows) / n if n else 0.0,
    )


def corpus_stats(corpus: Corpus) -> dict[str, ClassStats]:
    """Per-class descriptive statistics, keyed by label name plus ``"Total"``."""
    if corpus.n_segments == 0:
        raise CorpusError("corpus_stats requires a non-empty corpus")
    by_class: dict[EmotionLabel, list] = {lab: [] for lab in EmotionLabel}
    everything = []
    for dlg, _, seg in corpus.iter_segments():
        by_class[seg.label].append((dlg.dialogue_id, seg))
        everything.append((dlg.dialogue_id, seg))
    out = {lab.name: _class_stats(rows) for lab, rows in by_class.items()}
    out["Total"] = _class_stats(everything)
    return out


@dataclass(frozen=True)
class TransitionMatrix:
    counts: np.ndarray
    probabilities: np.ndarray
    min_count: int

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def included(self) -> np.ndarray:
        """Rows whose previous emotion has at least ``min_count`` transitions."""
        return (self.row_totals >= self.min_count) & (self.row_totals > 0)


def previous_labels(corpus: Corpus) -> dict[str, EmotionLabel | None]:
    """segment key -> label of the immediately preceding segment (any speaker)."""
    out = {}
    for dlg in corpus.dialogues:
        prev = None
        for seg in dlg.segments:
            out[segment_key(dlg.dialogue_id, seg.segment_id)] = prev
            prev = seg.label
    return out


def transition_matrix(corpus: Corpus, min_count: int = 0) -> TransitionMatrix:
    if min_count < 0:
        raise ValueError("min_count must be >= 0")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for dlg in corpus.dialogues:
        for prev, cur in zip(dlg.segments, dlg.segments[1:]):
            counts[prev.label, cur.label] += 1
    totals = counts.sum(axis=1, keepdims=True)
    probs = np.divide(counts, totals, out=np.zeros((N_CLASSES, N_CLASSES)), where=totals > 0)
    return TransitionMatrix(counts=counts, probabilities=probs, min_count=int(min_count))


GAP_DIRECTIONS = ("previous_to_target", "target_to_next")


@dataclass(frozen=True)
class GapHistogram:
    bin_width_s: float
    bins: tuple[tuple[float, int], ...]
    direction: str
    n_contiguous: int
    n_missing: int

    @property
    def n_gaps(self) -> int:
        return sum(c for _, c in self.bins)


def adjacent_gaps(corpus: Corpus) -> list[float]:
    """Gap between each pair of adjacent segments; overlaps clamp to zero."""
    gaps = []
    for dlg in corpus.dialogues:
        for prev, cur in zip(dlg.segments, dlg.segments[1:]):
            gaps.append(max(0.0, _quantize_time(cur.start_s - prev.end_s)))
    return gaps


def gap_histogram(corpus: Corpus, direction: str = "previous_to_target", bin_width_s: float = 1.0) -> GapHistogram:
    if direction not in GAP_DIRECTIONS:
        raise ValueError(f"direction must be one of {GAP_DIRECTIONS}")
    if not bin_width_s > 0:
        raise ValueError("bin_width_s must be positive")
    # Every adjacent pair serves as context for exactly one target in each
    # direction; what differs is which boundary segment lacks context.
    n_missing = sum(1 for d in corpus.dialogues if d.segments)
    gaps = adjacent_gaps(corpus)
    positive = [g for g in gaps if g > 0]
    counts: dict[int, int] = defaultdict(int)
    for g in positive:
        counts[math.floor(round(g / bin_width_s, 9))] += 1
    n_bins = max(counts) + 1 if counts else 0
    bins = tuple((round(i * bin_width_s, 9), counts.get(i, 0)) for i in range(n_bins))
    return GapHistogram(
        bin_width_s=float(bin_width_s),
        bins=bins,
        direction=direction,
        n_contiguous=len(gaps) - len(positive),
        n_missing=n_missing,
    )


# --- CSV emitters -----------------------------------------------------------

def _open_csv(path: str | Path):
    return open(path, "w", newline="", encoding="utf-8")


def write_stats_csv(stats: dict[str, ClassStats], path: str | Path) -> None:
    """Columns: class, segments, speakers, dialogues, total_duration_min,
    mean_duration_s, vocabulary_size, avg_word_count."""
    with _open_csv(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATS_COLUMNS)
        for name, s in stats.items():
            w.writerow([
                name, s.segments, s.speakers, s.dialogues,
                f"{s.total_duration_min:.6f}", f"{s.mean_duration_s:.6f}", s.vocabulary_size, f"{s.avg_word_count:.6f}",
            ])


def write_transitions_csv(tm: TransitionMatrix, path: str | Path) -> None:
    """Columns: previous, included, n, then count_<LABEL> and p_<LABEL> per target."""
    names = [lab.name for lab in EmotionLabel]
    with _open_csv(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["previous", "included", "n"] + [f"count_{n}" for n in names] + [f"p_{n}" for n in names])
        for lab in EmotionLabel:
            w.writerow(
                [lab.name, int(tm.included[lab]), int(tm.row_totals[lab])]
                + [int(c) for c in tm.counts[lab]]
                + [f"{p:.6f}" for p in tm.probabilities[lab]]
            )


def write_gaps_csv(hist: GapHistogram, path: str | Path) -> None:
    """Columns: lower_s, upper_s, count.  Trailing comment-free summary rows
    use the ``lower_s`` column as a tag (``contiguous``, ``missing``)."""
    with _open_csv(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lower_s", "upper_s", "count"])
        for lower, count in hist.bins:
            w.writerow([f"{lower:.6f}", f"{lower + hist.bin_width_s:.6f}", count])
        w.writerow(["contiguous", "", hist.n_contiguous])
        w.writerow(["missing", "", hist.n_missing])

