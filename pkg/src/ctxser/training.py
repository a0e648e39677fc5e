"""Speaker-independent cross-validation and (hierarchical) training loops."""
from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .corpus import Corpus, segment_key
from .evaluation import PredictionSet, combine_folds, unweighted_accuracy
from .model import (
    EncoderConfig,
    EncoderParams,
    checkpoint_hash,
    collate,
    init_params,
    loss_and_grad_batch,
    predict,
    warm_start,
)
from .windowing import ContextPolicy, build_dataset


class TrainingError(ValueError):
    pass


class TrainingDivergence(FloatingPointError):
    pass


# --- folds --------------------------------------------------------------------

@dataclass(frozen=True)
class Fold:
    index: int
    train: frozenset[str]
    validation: frozenset[str]
    test: frozenset[str]

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "train": sorted(self.train),
            "validation": sorted(self.validation),
            "test": sorted(self.test),
        }


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    groups: tuple[tuple[str, ...], ...]
    folds: tuple[Fold, ...]

    def to_dict(self) -> dict:
        return {"k": self.k, "seed": self.seed, "folds": [f.to_dict() for f in self.folds]}


def make_folds(corpus: Corpus, k: int = 5, seed: int = 0) -> FoldPlan:
    """Partition speakers into k groups balanced by segment count (greedy).

    Fold i tests group i, validates on group (i + 1) mod k and trains on the rest.
    """
    if k < 3:
        raise TrainingError("k must be >= 3 so that every fold keeps a training group")
    counts: dict[str, int] = {}
    for _, _, seg in corpus.iter_segments():
        counts[seg.speaker_id] = counts.get(seg.speaker_id, 0) + 1
    speakers = sorted(counts)
    if len(speakers) < k:
        raise TrainingError(f"need at least {k} distinct speakers, found {len(speakers)}")
    order = np.random.default_rng(seed).permutation(len(speakers))
    shuffled = [speakers[i] for i in order]
    ranked = sorted(shuffled, key=lambda s: -counts[s])  # stable: ties keep shuffled order
    loads = [0] * k
    members: list[list[str]] = [[] for _ in range(k)]
    for spk in ranked:
        g = min(range(k), key=lambda i: (loads[i], len(members[i]), i))
        members[g].append(spk)
        loads[g] += counts[spk]
    groups = tuple(tuple(sorted(m)) for m in members)
    folds = []
    for i in range(k):
        test = frozenset(groups[i])
        val = frozenset(groups[(i + 1) % k])
        train = frozenset(s for j, g in enumerate(groups) if j not in (i, (i + 1) % k) for s in g)
        folds.append(Fold(i, train, val, test))
    return FoldPlan(k, seed, groups, tuple(folds))


# --- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    policy: ContextPolicy = field(default_factory=ContextPolicy)
    model: EncoderConfig | None = None
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 16
    max_epochs: int = 30
    seed: int = 0
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.max_epochs < 1:
            raise TrainingError("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise TrainingError("learning_rate must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["policy"] = self.policy.to_dict()
        d["model"] = None if self.model is None else self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise TrainingError(f"unknown train fields: {sorted(unknown)}")
        if isinstance(d.get("policy"), dict):
            d["policy"] = ContextPolicy.from_dict(d["policy"])
        if isinstance(d.get("model"), dict):
            d["model"] = _partial_model(d["model"])
        return cls(**d)


def _partial_model(d: dict) -> EncoderConfig:
    # vocab_size / d_feat are resolved against the corpus; placeholders keep validation happy
    d = dict(d)
    mode = d.get("input_mode", "text")
    if mode == "text":
        d.setdefault("vocab_size", 1)
    else:
        d.setdefault("d_feat", 1)
    return EncoderConfig.from_dict(d)


def resolve_model_config(config: TrainConfig, corpus: Corpus) -> tuple[EncoderConfig, tuple[str, ...]]:
    """Fill corpus-dependent sizes (vocabulary, frame width) into the model config."""
    base = config.model or EncoderConfig(vocab_size=1)
    if config.policy.modality == "acoustic":
        return replace(base, input_mode="acoustic", d_feat=corpus.d_feat, vocab_size=0), ()
    vocab = corpus.vocabulary
    return replace(base, input_mode="text", vocab_size=len(vocab) + 1, d_feat=0), vocab


def _streams(seed: int) -> dict[str, np.random.Generator]:
    init, shuffle, dropout = np.random.SeedSequence(seed).spawn(3)
    return {
        "init": np.random.default_rng(init),
        "shuffle": np.random.default_rng(shuffle),
        "dropout": np.random.default_rng(dropout),
    }


# --- optimizer --------------------------------------------------------------

class Adam:
    def __init__(self, params: EncoderParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}

    def step(self, params: EncoderParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params.tensors[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# --- single fold ----------------------------------------------------------------

@dataclass
class RunRecord:
    fold: int
    train_loss: list[float]
    val_ua: list[float]
    selected_epoch: int
    checkpoint_hash: str
    predictions: PredictionSet
    init_hash: str
    warm_start_from: str | None = None
    shared: tuple[str, ...] = ()
    shared_digest: str | None = None  # digest of the warm-started tensors before the first update

    @property
    def best_val_ua(self) -> float:
        return self.val_ua[self.selected_epoch - 1]

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "train_loss": self.train_loss,
            "val_ua": self.val_ua,
            "selected_epoch": self.selected_epoch,
            "checkpoint_hash": self.checkpoint_hash,
            "init_hash": self.init_hash,
            "warm_start_from": self.warm_start_from,
            "shared": list(self.shared),
            "shared_digest": self.shared_digest,
            "predictions": self.predictions.to_dict(),
        }


def tensors_digest(params: EncoderParams, names: Sequence[str]) -> str:
    h = hashlib.sha256()
    for name in sorted(names):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params.tensors[name]).tobytes())
    return h.hexdigest()


def _split(samples, fold: Fold):
    train = [s for s in samples if s.speaker_id in fold.train]
    val = [s for s in samples if s.speaker_id in fold.validation]
    test = [s for s in samples if s.speaker_id in fold.test]
    if not (train and val and test):
        raise TrainingError(f"fold {fold.index}: empty train, validation or test split")
    return train, val, test


def _prediction_set(samples, labels, provenance: str) -> PredictionSet:
    return PredictionSet(
        {segment_key(s.dialogue_id, s.segment_id): (s.label, int(p)) for s, p in zip(samples, labels)},
        (provenance,),
    )


def train_fold(
    corpus: Corpus,
    fold: Fold,
    config: TrainConfig,
    init_from: EncoderParams | None = None,
    samples: Sequence | None = None,
) -> tuple[RunRecord, EncoderParams]:
    """Train on one fold, keep the epoch with the best validation UA, test it.

    With ``init_from`` every tensor whose name and shape match is warm-started
    from that checkpoint; the remaining ones keep their fresh initialization.
    Returns the run record and the selected parameters.
    """
    model_cfg, vocab = resolve_model_config(config, corpus)
    if samples is None:
        samples = build_dataset(corpus, config.policy)
    train, val, test = _split(samples, fold)
    rng = _streams(config.seed)
    params = init_params(model_cfg, rng["init"], vocab)
    shared: list[str] = []
    source = None
    if init_from is not None:
        params, shared = warm_start(params, init_from)
        source = checkpoint_hash(init_from)
    init_hash = checkpoint_hash(params)
    shared_digest = tensors_digest(params, shared) if init_from is not None else None
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    dropout_rng = rng["dropout"] if model_cfg.dropout_rate > 0 else None

    losses, val_uas = [], []
    best = (-1.0, 0, params.copy())
    for epoch in range(1, config.max_epochs + 1):
        order = rng["shuffle"].permutation(len(train))
        total, n = 0.0, 0
        for i in range(0, len(order), config.batch_size):
            chunk = [train[j] for j in order[i:i + config.batch_size]]
            batch = collate(params, chunk)
            try:
                loss, grads = loss_and_grad_batch(params, batch, dropout_rng)
            except FloatingPointError as exc:
                raise TrainingDivergence(f"fold {fold.index}, epoch {epoch}: {exc}") from None
            opt.step(params, grads)
            if not all(np.isfinite(t).all() for t in params.tensors.values()):
                raise TrainingDivergence(f"fold {fold.index}, epoch {epoch}: non-finite parameters")
            total += loss * len(chunk)
            n += len(chunk)
        losses.append(total / n)
        pred, _ = predict(params, val, config.eval_batch_size)
        ua = unweighted_accuracy(([int(s.label) for s in val], pred))
        val_uas.append(ua)
        if ua > best[0]:
            best = (ua, epoch, params.copy())
    _, selected, best_params = best
    pred, _ = predict(best_params, test, config.eval_batch_size)
    record = RunRecord(
        fold=fold.index,
        train_loss=losses,
        val_ua=val_uas,
        selected_epoch=selected,
        checkpoint_hash=checkpoint_hash(best_params),
        predictions=_prediction_set(test, pred, f"fold{fold.index}"),
        init_hash=init_hash,
        warm_start_from=source,
        shared=tuple(shared),
        shared_digest=shared_digest,
    )
    return record, best_params


# --- cross-validation -----------------------------------------------------------

@dataclass
class CVResult:
    records: list[RunRecord]
    combined: PredictionSet
    params: list[EncoderParams]

    @property
    def ua(self) -> float:
        return unweighted_accuracy(self.combined)


def _fold_job(args):
    corpus, fold, config, init_from = args
    return train_fold(corpus, fold, config, init_from)


def cross_validate(
    corpus: Corpus,
    plan: FoldPlan,
    config: TrainConfig,
    init_from: Sequence[EncoderParams | None] | None = None,
    jobs: int = 1,
) -> CVResult:
    """Train every fold; predictions are pooled across folds."""
    inits = list(init_from) if init_from is not None else [None] * plan.k
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_fold_job, [(corpus, f, config, i) for f, i in zip(plan.folds, inits)]))
    else:
        samples = build_dataset(corpus, config.policy)
        results = [train_fold(corpus, f, config, i, samples) for f, i in zip(plan.folds, inits)]
    records = [r for r, _ in results]
    return CVResult(records, combine_folds(r.predictions for r in records), [p for _, p in results])


# --- hierarchical training ------------------------------------------------------

_ARCH_FIELDS = ("d_model", "n_layers", "n_heads", "d_ff", "max_positions")


@dataclass
class HierarchicalResult:
    baseline: RunRecord
    context: RunRecord
    control: RunRecord
    checkpoint: EncoderParams
    context_params: EncoderParams
    control_params: EncoderParams

    @property
    def checkpoint_hash(self) -> str:
        return self.baseline.checkpoint_hash


def control_config(phase2: TrainConfig) -> TrainConfig:
    """The phase-2 configuration with context disabled."""
    return replace(phase2, policy=replace(phase2.policy, direction="none"))


def hierarchical_train(
    corpus: Corpus, fold: Fold, phase1: TrainConfig, phase2: TrainConfig
) -> HierarchicalResult:
    """Phase 1 trains without context; phase 2 fine-tunes the resulting
    checkpoint with context, alongside a context-free control fine-tuned from
    the same checkpoint."""
    if phase1.policy.direction != "none":
        raise TrainingError("phase 1 must be trained without context (direction='none')")
    if phase1.policy.modality != phase2.policy.modality:
        raise TrainingError("both phases must use the same modality")
    m1, _ = resolve_model_config(phase1, corpus)
    m2, _ = resolve_model_config(phase2, corpus)
    for name in _ARCH_FIELDS:
        if getattr(m1, name) != getattr(m2, name):
            raise TrainingError(f"phase configs disagree on encoder field {name!r}")
    baseline, checkpoint = train_fold(corpus, fold, phase1)
    context, context_params = train_fold(corpus, fold, phase2, init_from=checkpoint)
    control, control_params = train_fold(corpus, fold, control_config(phase2), init_from=checkpoint)
    return HierarchicalResult(baseline, context, control, checkpoint, context_params, control_params)


# --- token sweep ----------------------------------------------------------------

def baseline_policy(policy: ContextPolicy) -> ContextPolicy:
    return replace(policy, direction="none")


def token_sweep(
    corpus: Corpus,
    plan: FoldPlan,
    windows: Sequence[tuple[int, int]],
    config: TrainConfig,
    jobs: int = 1,
    results: dict | None = None,
) -> list[tuple[int, int, float]]:
    """Combined UA per (n_prev, n_next) blind token window.

    Pass a dict as ``results`` to also collect each window's CVResult.
    """
    windows = [(int(a), int(b)) for a, b in windows]
    if (0, 0) not in windows:
        raise TrainingError("token sweep windows must include (0, 0)")
    rows = []
    for n_prev, n_next in windows:
        if (n_prev, n_next) == (0, 0):
            policy = baseline_policy(config.policy)
        else:
            direction = "both" if n_prev and n_next else ("previous" if n_prev else "next")
            policy = replace(
                config.policy, scale="tokens", direction=direction, n_prev_tokens=n_prev, n_next_tokens=n_next,
                modality="text",
            )
        result = cross_validate(corpus, plan, replace(config, policy=policy), jobs=jobs)
        if results is not None:
            results[(n_prev, n_next)] = result
        rows.append((n_prev, n_next, result.ua))
    return rows
