"""Synthetic two-speaker dialogue corpora with Markov emotion dynamics.

Labels follow a first-order Markov chain.  Each segment's observable content
(its tokens and the mean of its acoustic frames) is either *clear*, emitted
from the label's own class, or with probability ``emission_ambiguity``
*ambiguous*, emitted from a shared filler source that carries no label
information.  Every class owns a disjoint token block, so the emitted content
class is exactly recoverable from the tokens and the Bayes posterior over
labels is available in closed form.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import N_CLASSES, Corpus, Dialogue, EmotionLabel, Segment, segment_key

FILLER = N_CLASSES  # content code for the uninformative source
N_CONTENT = N_CLASSES + 1
FILLER_PREFIX = "amb"
SECONDS_PER_TOKEN = 0.2


class GeneratorSpecError(ValueError):
    pass


def _persistent_transition(persistence: float = 0.68) -> list[list[float]]:
    off = (1.0 - persistence) / 3.0
    rows = [[persistence if i == j else off for j in range(N_CLASSES)] for i in range(N_CLASSES)]
    # Fear follows Anger more often than the reverse.
    spill = 1.0 - persistence
    rows[EmotionLabel.ANG] = [persistence, spill / 2, spill / 4, spill / 4]
    return rows


def stationary_distribution(transition) -> np.ndarray:
    """Left fixed point of a row-stochastic matrix (least-squares with sum-to-one)."""
    T = np.asarray(transition, dtype=np.float64)
    n = T.shape[0]
    A = np.vstack([T.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _default_class_means(d_feat: int) -> list[list[float]]:
    means = np.zeros((N_CLASSES, d_feat))
    for c in range(N_CLASSES):
        means[c, c % d_feat] += 1.5
    return means.tolist()


@dataclass
class GeneratorSpec:
    transition: list = field(default_factory=_persistent_transition)
    initial: list | None = None
    emission_ambiguity: float = 0.5
    vocab_per_class: int = 20
    tokens_per_segment: tuple[int, int] = (3, 10)
    frames_per_segment: tuple[int, int] = (10, 40)
    d_feat: int = 0
    frame_rate: float = 10.0
    class_means: list | None = None
    noise_sigma: float = 1.0
    speakers_per_dialogue: int = 2
    segments_per_dialogue: tuple[int, int] = (6, 14)
    inter_segment_gap_s: tuple[float, float] = (0.1, 3.0)
    contiguous_prob: float = 0.7
    n_agents: int = 7

    def __post_init__(self):
        self.transition = [[float(x) for x in row] for row in self.transition]
        if np.shape(self.transition) != (N_CLASSES, N_CLASSES):
            raise GeneratorSpecError("transition must be a non-negative 4x4 matrix")
        if self.initial is None:
            self.initial = stationary_distribution(self.transition).tolist()
        self.initial = [float(x) for x in self.initial]
        if self.class_means is None and self.d_feat > 0:
            self.class_means = _default_class_means(self.d_feat)
        for name in ("tokens_per_segment", "frames_per_segment", "segments_per_dialogue", "inter_segment_gap_s"):
            setattr(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        T = np.asarray(self.transition, dtype=np.float64)
        if T.shape != (N_CLASSES, N_CLASSES) or (T < 0).any():
            raise GeneratorSpecError("transition must be a non-negative 4x4 matrix")
        if not np.allclose(T.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise GeneratorSpecError("transition rows must sum to 1")
        init = np.asarray(self.initial, dtype=np.float64)
        if init.shape != (N_CLASSES,) or (init < 0).any() or abs(init.sum() - 1.0) > 1e-9:
            raise GeneratorSpecError("initial must be a 4-vector distribution")
        if not 0.0 <= self.emission_ambiguity <= 1.0:
            raise GeneratorSpecError("emission_ambiguity must lie in [0, 1]")
        if self.vocab_per_class < 1:
            raise GeneratorSpecError("vocab_per_class must be >= 1")
        if self.speakers_per_dialogue != 2:
            raise GeneratorSpecError("only two-speaker dialogues are supported")
        if self.n_agents < 1:
            raise GeneratorSpecError("n_agents must be >= 1")
        if not 0.0 <= self.contiguous_prob <= 1.0:
            raise GeneratorSpecError("contiguous_prob must lie in [0, 1]")
        for name in ("tokens_per_segment", "segments_per_dialogue", "frames_per_segment"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise GeneratorSpecError(f"{name} must satisfy 1 <= min <= max")
        lo, hi = self.inter_segment_gap_s
        if not 0.0 <= lo <= hi:
            raise GeneratorSpecError("inter_segment_gap_s must satisfy 0 <= min <= max")
        if not self.noise_sigma > 0:
            raise GeneratorSpecError("noise_sigma must be positive")
        if self.d_feat < 0:
            raise GeneratorSpecError("d_feat must be >= 0")
        if self.d_feat > 0:
            if not self.frame_rate > 0:
                raise GeneratorSpecError("frame_rate must be positive when d_feat > 0")
            if np.asarray(self.class_means).shape != (N_CLASSES, self.d_feat):
                raise GeneratorSpecError("class_means must be 4 x d_feat")

    @property
    def emission(self) -> np.ndarray:
        """P(content | label), shape (4, 5); last column is the filler source."""
        a = self.emission_ambiguity
        E = np.zeros((N_CLASSES, N_CONTENT))
        E[np.arange(N_CLASSES), np.arange(N_CLASSES)] = 1.0 - a
        E[:, FILLER] = a
        return E

    def content_mean(self, content: int) -> np.ndarray:
        means = np.asarray(self.class_means, dtype=np.float64)
        return means.mean(axis=0) if content == FILLER else means[content]

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise GeneratorSpecError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**d)


def save_spec(spec: GeneratorSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_spec(path: str | Path) -> GeneratorSpec:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GeneratorSpecError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise GeneratorSpecError(f"{path}: expected a JSON object")
    return GeneratorSpec.from_dict(data)


def token_name(content: int, k: int) -> str:
    prefix = FILLER_PREFIX if content == FILLER else EmotionLabel(content).name.lower()
    return f"{prefix}{k:02d}"


@dataclass(frozen=True)
class GenerationTruth:
    """Generator bookkeeping: emitted content code per segment key."""

    content: dict[str, int]
    label_counts: np.ndarray
    content_counts: np.ndarray


def _generate_dialogue(spec: GeneratorSpec, index: int, seed: int):
    rng = np.random.default_rng([seed, index])
    T = np.asarray(spec.transition)
    n_segs = int(rng.integers(spec.segments_per_dialogue[0], spec.segments_per_dialogue[1] + 1))
    dialogue_id = f"d{index:05d}"
    agent = f"agent{int(rng.integers(spec.n_agents)):02d}"
    caller = f"caller{index:05d}"
    agent_first = bool(rng.random() < 0.5)

    segments, contents = [], []
    label = int(rng.choice(N_CLASSES, p=spec.initial))
    cursor = 0.0
    for j in range(n_segs):
        if j > 0:
            label = int(rng.choice(N_CLASSES, p=T[label]))
        is_agent = (j % 2 == 0) == agent_first
        content = FILLER if rng.random() < spec.emission_ambiguity else label
        n_tok = int(rng.integers(spec.tokens_per_segment[0], spec.tokens_per_segment[1] + 1))
        tokens = tuple(token_name(content, int(k)) for k in rng.integers(spec.vocab_per_class, size=n_tok))
        frames = None
        if spec.d_feat > 0:
            n_frames = int(rng.integers(spec.frames_per_segment[0], spec.frames_per_segment[1] + 1))
            duration = n_frames / spec.frame_rate
            frames = spec.content_mean(content) + spec.noise_sigma * rng.standard_normal((n_frames, spec.d_feat))
        else:
            duration = n_tok * SECONDS_PER_TOKEN
        if j > 0 and rng.random() >= spec.contiguous_prob:
            cursor += float(rng.uniform(*spec.inter_segment_gap_s))
        start = round(cursor, 6)
        end = round(start + duration, 6)
        segments.append(
            Segment(
                segment_id=f"s{j:03d}",
                speaker_id=agent if is_agent else caller,
                role="agent" if is_agent else "caller",
                start_s=start,
                end_s=end,
                tokens=tokens,
                label=EmotionLabel(label),
                frames=frames,
            )
        )
        contents.append(content)
        cursor = end
    return Dialogue(dialogue_id, tuple(segments)), contents


def generate_with_truth(spec: GeneratorSpec, n_dialogues: int, seed: int = 0) -> tuple[Corpus, GenerationTruth]:
    spec.validate()
    if n_dialogues < 0:
        raise ValueError("n_dialogues must be >= 0")
    dialogues, content = [], {}
    label_counts = np.zeros(N_CLASSES, dtype=np.int64)
    content_counts = np.zeros(N_CONTENT, dtype=np.int64)
    for i in range(n_dialogues):
        dlg, contents = _generate_dialogue(spec, i, seed)
        dialogues.append(dlg)
        for seg, c in zip(dlg.segments, contents):
            content[segment_key(dlg.dialogue_id, seg.segment_id)] = c
            label_counts[seg.label] += 1
            content_counts[c] += 1
    frame_rate = spec.frame_rate if spec.d_feat > 0 else 0.0
    corpus = Corpus(tuple(dialogues), frame_rate=frame_rate, d_feat=spec.d_feat)
    return corpus, GenerationTruth(content, label_counts, content_counts)


def generate(spec: GeneratorSpec, n_dialogues: int, seed: int = 0) -> Corpus:
    """Deterministic in (spec, n_dialogues, seed); each dialogue has its own substream."""
    return generate_with_truth(spec, n_dialogues, seed)[0]


# --- Bayes oracle -----------------------------------------------------------

@dataclass(frozen=True)
class OracleReport:
    bayes_ua_no_context: float
    bayes_ua_with_prev_context: float
    method: str
    n_samples: int
    stderr_no_context: float = 0.0
    stderr_with_prev_context: float = 0.0
    use_prev_context: bool = True

    @property
    def ua(self) -> float:
        return self.bayes_ua_with_prev_context if self.use_prev_context else self.bayes_ua_no_context

    def to_dict(self) -> dict:
        return asdict(self)


def _credit(lik: np.ndarray, label: int) -> float:
    """Expected correctness of argmax under uniform tie-breaking."""
    best = np.isclose(lik, lik.max(), rtol=1e-12, atol=0.0)
    return float(best[label]) / float(best.sum())


def _prev_content_likelihood(spec: GeneratorSpec) -> np.ndarray:
    """P(previous content | current label), shape (4, 5), previous label ~ stationary."""
    T = np.asarray(spec.transition)
    pi = stationary_distribution(T)
    joint = pi[:, None] * T  # P(prev = i, cur = j)
    col = joint.sum(axis=0)
    back = np.divide(joint, col[None, :], out=np.zeros_like(joint), where=col[None, :] > 0)
    return back.T @ spec.emission


def _exact_ua(spec: GeneratorSpec, with_prev: bool) -> float:
    E = spec.emission
    P_prev = _prev_content_likelihood(spec)
    total = 0.0
    for label in range(N_CLASSES):
        for o in range(N_CONTENT):
            if not with_prev:
                p = E[label, o]
                if p > 0:
                    total += p * _credit(E[:, o], label)
                continue
            for op in range(N_CONTENT):
                lik = E[:, o] * P_prev[:, op]
                if lik[label] > 0:
                    total += lik[label] * _credit(lik, label)
    return total / N_CLASSES


def _mc_ua(spec: GeneratorSpec, with_prev: bool, n_samples: int, rng) -> tuple[float, float]:
    T = np.asarray(spec.transition)
    E = spec.emission
    P_prev = _prev_content_likelihood(spec)
    pi = stationary_distribution(T)
    prev = rng.choice(N_CLASSES, size=n_samples, p=pi)
    cum = np.cumsum(T, axis=1)
    cur = np.minimum((rng.random(n_samples)[:, None] > cum[prev]).sum(axis=1), N_CLASSES - 1)
    amb = spec.emission_ambiguity
    o_prev = np.where(rng.random(n_samples) < amb, FILLER, prev)
    o_cur = np.where(rng.random(n_samples) < amb, FILLER, cur)
    credits = np.empty(n_samples)
    for n in range(n_samples):
        lik = E[:, o_cur[n]] * (P_prev[:, o_prev[n]] if with_prev else 1.0)
        credits[n] = _credit(lik, cur[n])
    recalls, var = [], 0.0
    for c in range(N_CLASSES):
        sel = credits[cur == c]
        if sel.size == 0:
            raise ValueError("too few samples: a class was never drawn")
        recalls.append(sel.mean())
        var += sel.var() / sel.size
    return float(np.mean(recalls)), float(np.sqrt(var) / N_CLASSES)


def bayes_optimal_ua(
    spec: GeneratorSpec,
    use_prev_context: bool = True,
    n_samples: int = 20000,
    seed: int = 0,
    method: str = "exact_enumeration",
) -> OracleReport:
    """UA of the Bayes decision rule argmax_label P(observations | label).

    That rule maximizes expected unweighted accuracy (it is the MAP rule under
    a uniform label prior).  Observations are the segment's emitted content
    class, optionally with the immediately preceding segment's content class;
    the preceding label is drawn from the chain's stationary distribution.
    Ties are credited fractionally.
    """
    spec.validate()
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    if method == "exact_enumeration":
        return OracleReport(
            bayes_ua_no_context=_exact_ua(spec, False),
            bayes_ua_with_prev_context=_exact_ua(spec, True),
            method=method,
            n_samples=0,
            use_prev_context=use_prev_context,
        )
    if method == "monte_carlo":
        rng = np.random.default_rng(seed)
        no, se_no = _mc_ua(spec, False, n_samples, rng)
        rng = np.random.default_rng(seed)
        wp, se_wp = _mc_ua(spec, True, n_samples, rng)
        return OracleReport(no, wp, method, n_samples, se_no, se_wp, use_prev_context)
    raise ValueError(f"unknown oracle method {method!r}")
