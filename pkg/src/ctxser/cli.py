"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 training divergence.
Experiment commands (train, sweep, hier) take one JSON config file; their run
directory ``<root>/<command>-<config hash>`` is assembled in a temporary
directory and moved into place only on success.  ``$CTXSER_OUTPUT_ROOT`` sets
the default root.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

from .corpus import (
    CorpusError,
    corpus_stats,
    gap_histogram,
    load_corpus,
    save_corpus,
    transition_matrix,
    write_gaps_csv,
    write_stats_csv,
    write_transitions_csv,
)
from .evaluation import (
    EvaluationError,
    combine_folds,
    PredictionSet,
    evaluate,
    save_predictions,
    write_report,
)
from .model import ModelError, save_checkpoint
from .synthgen import GeneratorSpec, GeneratorSpecError, bayes_optimal_ua, generate, load_spec, save_spec
from .training import (
    TrainConfig,
    TrainingDivergence,
    TrainingError,
    control_config,
    cross_validate,
    hierarchical_train,
    make_folds,
    token_sweep,
)
from .windowing import ContextPolicy, WindowingError

log = logging.getLogger("ctxser")

OUTPUT_ROOT_ENV = "CTXSER_OUTPUT_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
DATA_ERRORS = (
    CorpusError, GeneratorSpecError, WindowingError, ModelError, TrainingError, EvaluationError,
    OSError, json.JSONDecodeError, ValueError, KeyError,
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a corpus (file or generator), context policy, model and training setup."""

    corpus: str | None = None
    generator: dict | None = None
    policy: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    folds: int = 5
    seed: int = 0
    output_dir: str | None = None
    sweep: dict | None = None
    phase2: dict | None = None
    base_dir: str = "."

    def __post_init__(self):
        if (self.corpus is None) == (self.generator is None):
            raise ConfigError("exactly one of 'corpus' and 'generator' must be given")
        self.train_config()  # validates nested configs
        if self.phase2 is not None:
            self.phase2_config()

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        unknown = set(data) - (set(cls.__dataclass_fields__) - {"base_dir"})
        if unknown:
            raise ConfigError(f"{path}: unknown fields {sorted(unknown)}")
        return cls(**data, base_dir=str(path.parent))

    def train_config(self, section: dict | None = None) -> TrainConfig:
        section = section or {}
        train = {**self.train, **section.get("train", {})}
        policy = {**self.policy, **section.get("policy", {})}
        model = {**self.model, **section.get("model", {})}
        train.setdefault("seed", self.seed)
        return TrainConfig.from_dict({**train, "policy": policy, "model": model})

    def phase2_config(self) -> TrainConfig:
        if self.phase2 is None:
            raise ConfigError("hierarchical runs need a 'phase2' section")
        return self.train_config(self.phase2)

    def load_corpus(self):
        if self.corpus is not None:
            path = Path(self.corpus)
            if not path.is_absolute():
                path = Path(self.base_dir) / path
            return load_corpus(path)
        gen = dict(self.generator)
        if "spec_path" in gen:
            p = Path(gen.pop("spec_path"))
            spec = load_spec(p if p.is_absolute() else Path(self.base_dir) / p)
        else:
            spec = GeneratorSpec.from_dict(gen.pop("spec", {}))
        n = int(gen.pop("n_dialogues", 100))
        seed = int(gen.pop("seed", self.seed))
        if gen:
            raise ConfigError(f"unknown generator fields: {sorted(gen)}")
        return generate(spec, n, seed)

    def resolved(self) -> dict:
        """Canonical content used for the run hash and the run directory copy."""
        d = {
            "corpus": self.corpus,
            "generator": self.generator,
            "train": self.train_config().to_dict(),
            "folds": self.folds,
            "seed": self.seed,
        }
        if self.sweep is not None:
            d["sweep"] = self.sweep
        if self.phase2 is not None:
            d["phase2"] = self.phase2_config().to_dict()
        return d

    def content_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.resolved(), sort_keys=True).encode()).hexdigest()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


class RunDirectory:
    """Builds outputs in a temporary sibling directory; publishes on success."""

    def __init__(self, final: Path):
        self.final = final

    def __enter__(self) -> Path:
        self.final.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".tmp-", dir=self.final.parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        if self.final.exists():
            shutil.rmtree(self.final)
        os.replace(self.tmp, self.final)
        return False


def _run_dir(args, cfg: ExperimentConfig, command: str) -> Path:
    root = args.out_root or cfg.output_dir or os.environ.get(OUTPUT_ROOT_ENV) or "runs"
    root = Path(root)
    if cfg.output_dir and not args.out_root and not root.is_absolute():
        root = Path(cfg.base_dir) / root
    return root / f"{command}-{cfg.content_hash()[:12]}"


def _load_experiment(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, train={**cfg.train, "seed": args.seed})
    return cfg


def _write_cv(out: Path, result, corpus, title: str, save_params: bool = True) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for rec, params in zip(result.records, result.params):
        _dump_json(rec.to_dict(), out / f"fold_{rec.fold}.json")
        if save_params:
            save_checkpoint(params, out / f"fold_{rec.fold}.npz")
    save_predictions(result.combined, out / "predictions.json")
    write_report(evaluate(result.combined, corpus), out / "report", title=title)


# --- commands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = load_spec(args.spec) if args.spec else GeneratorSpec()
    if args.n_dialogues == 0:
        log.warning("n_dialogues=0: writing an empty corpus")
    corpus = generate(spec, args.n_dialogues, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, out / "corpus.jsonl")
    save_spec(spec, out / "spec.json")
    _dump_json(bayes_optimal_ua(spec).to_dict(), out / "oracle.json")
    log.info("wrote %d dialogues (%d segments) to %s", len(corpus.dialogues), corpus.n_segments, out)
    return EXIT_OK


def _csv_target(path: str | None, default_name: str) -> Path:
    return Path(path) if path else Path(default_name)


def cmd_stats(args) -> int:
    write_stats_csv(corpus_stats(load_corpus(args.corpus)), _csv_target(args.out, "stats.csv"))
    return EXIT_OK


def cmd_transitions(args) -> int:
    tm = transition_matrix(load_corpus(args.corpus), args.min_count)
    write_transitions_csv(tm, _csv_target(args.out, "transitions.csv"))
    return EXIT_OK


def cmd_gaps(args) -> int:
    hist = gap_histogram(load_corpus(args.corpus), args.direction, args.bin_width)
    write_gaps_csv(hist, _csv_target(args.out, "gaps.csv"))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_experiment(args)
    config = cfg.train_config()
    corpus = cfg.load_corpus()
    plan = make_folds(corpus, cfg.folds, cfg.seed)
    with RunDirectory(_run_dir(args, cfg, "train")) as tmp:
        _dump_json(cfg.resolved(), tmp / "config.json")
        _dump_json(plan.to_dict(), tmp / "folds.json")
        result = cross_validate(corpus, plan, config, jobs=args.jobs)
        _write_cv(tmp, result, corpus, title=f"train ({config.policy.direction} context)")
    log.info("combined UA %.4f", result.ua)
    print(_run_dir(args, cfg, "train"))
    return EXIT_OK


def _window(w) -> tuple[int, int]:
    # a bare integer is a previous-token budget
    if isinstance(w, int):
        return (w, 0)
    if isinstance(w, list) and len(w) == 2 and all(isinstance(x, int) for x in w):
        return (w[0], w[1])
    raise ConfigError(f"sweep window must be an integer or [n_prev, n_next], got {w!r}")


def cmd_sweep(args) -> int:
    cfg = _load_experiment(args)
    if not cfg.sweep or "windows" not in cfg.sweep:
        raise ConfigError("sweep runs need a 'sweep': {'windows': [...]} section")
    config = cfg.train_config()
    corpus = cfg.load_corpus()
    plan = make_folds(corpus, cfg.folds, cfg.seed)
    windows = [_window(w) for w in cfg.sweep["windows"]]
    with RunDirectory(_run_dir(args, cfg, "sweep")) as tmp:
        _dump_json(cfg.resolved(), tmp / "config.json")
        _dump_json(plan.to_dict(), tmp / "folds.json")
        results: dict = {}
        rows = token_sweep(corpus, plan, windows, config, jobs=args.jobs, results=results)
        for (n_prev, n_next), res in results.items():
            _write_cv(tmp / f"window_{n_prev}_{n_next}", res, corpus, f"window {n_prev}/{n_next}", save_params=False)
        write_report(evaluate(results[(0, 0)].combined, corpus), tmp, sweep=rows, title="token sweep (baseline report)")
    print(_run_dir(args, cfg, "sweep"))
    return EXIT_OK


def cmd_hier(args) -> int:
    cfg = _load_experiment(args)
    phase1 = cfg.train_config()
    phase1 = replace(phase1, policy=replace(phase1.policy, direction="none"))
    phase2 = cfg.phase2_config()
    corpus = cfg.load_corpus()
    plan = make_folds(corpus, cfg.folds, cfg.seed)
    with RunDirectory(_run_dir(args, cfg, "hier")) as tmp:
        _dump_json(cfg.resolved(), tmp / "config.json")
        _dump_json(plan.to_dict(), tmp / "folds.json")
        runs = [hierarchical_train(corpus, fold, phase1, phase2) for fold in plan.folds]
        summary = {"folds": []}
        for name in ("baseline", "context", "control"):
            records = [getattr(r, name) for r in runs]
            sub = tmp / name
            sub.mkdir()
            for rec in records:
                _dump_json(rec.to_dict(), sub / f"fold_{rec.fold}.json")
            combined = combine_folds(rec.predictions for rec in records)
            save_predictions(combined, sub / "predictions.json")
            write_report(evaluate(combined, corpus), sub / "report", title=f"hierarchical: {name}")
        for r in runs:
            save_checkpoint(r.checkpoint, tmp / f"phase1_fold_{r.baseline.fold}.npz")
            summary["folds"].append({
                "fold": r.baseline.fold,
                "phase1_checkpoint_hash": r.checkpoint_hash,
                "context_warm_start_from": r.context.warm_start_from,
                "control_warm_start_from": r.control.warm_start_from,
            })
        summary["control_policy"] = control_config(phase2).policy.to_dict()
        _dump_json(summary, tmp / "hier.json")
    print(_run_dir(args, cfg, "hier"))
    return EXIT_OK


def _read_predictions(path) -> PredictionSet:
    """A prediction file, or a fold record that embeds one."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "fold" in data and isinstance(data.get("predictions"), dict):
        data = data["predictions"]
    return PredictionSet.from_dict(data)


def _combined_predictions(paths):
    return combine_folds(_read_predictions(p) for p in paths)


def cmd_eval(args) -> int:
    preds = _combined_predictions(args.predictions)
    corpus = load_corpus(args.corpus) if args.corpus else None
    report = evaluate(preds, corpus)
    out = {
        "n": report.n_predictions,
        "ua": report.ua,
        "per_class_recall": dict(zip(("ANG", "FEA", "NEU", "POS"), report.per_class_recall.tolist())),
    }
    text = json.dumps(out, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_report(args) -> int:
    preds = _combined_predictions(args.predictions)
    corpus = load_corpus(args.corpus) if args.corpus else None
    sweep = None
    if args.sweep:
        import csv

        with open(args.sweep, newline="", encoding="utf-8") as fh:
            sweep = [(int(r["n_prev"]), int(r["n_next"]), float(r["ua"])) for r in csv.DictReader(fh)]
    write_report(evaluate(preds, corpus), args.out, sweep=sweep, title="report")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ctxser", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic corpus, its spec and oracle report")
    s.add_argument("--spec", help="generator spec JSON (default spec if omitted)")
    s.add_argument("--n-dialogues", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("stats", help="per-class corpus statistics CSV")
    s.add_argument("corpus")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("transitions", help="previous -> target emotion transition CSV")
    s.add_argument("corpus")
    s.add_argument("--min-count", type=int, default=30)
    s.add_argument("--out")
    s.set_defaults(func=cmd_transitions)

    s = sub.add_parser("gaps", help="inter-segment gap histogram CSV")
    s.add_argument("corpus")
    s.add_argument("--direction", choices=("previous_to_target", "target_to_next"), default="previous_to_target")
    s.add_argument("--bin-width", type=float, default=1.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_gaps)

    for name, func, help_ in (
        ("train", cmd_train, "cross-validated training run"),
        ("sweep", cmd_sweep, "token-window sweep"),
        ("hier", cmd_hier, "hierarchical two-phase training with control"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config")
        s.add_argument("--seed", type=int, help="override the experiment seed")
        s.add_argument("--out-root", help=f"run directory root (default ${OUTPUT_ROOT_ENV} or ./runs)")
        s.add_argument("--jobs", type=int, default=1, help="folds trained in parallel")
        s.set_defaults(func=func)

    s = sub.add_parser("eval", help="UA of one or more (fold) prediction files")
    s.add_argument("predictions", nargs="+")
    s.add_argument("--corpus")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="write CSV report files from prediction files")
    s.add_argument("predictions", nargs="+")
    s.add_argument("--corpus")
    s.add_argument("--sweep", help="sweep.csv to include")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    if getattr(args, "jobs", 1) < 1:
        print("ctxser: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except TrainingDivergence as exc:
        print(f"ctxser: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, *DATA_ERRORS) as exc:
        print(f"ctxser: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
