"""Conversational context for emotion classification in two-party dialogues."""
from .corpus import (
    Corpus,
    CorpusError,
    CorpusParseError,
    Dialogue,
    EmotionLabel,
    GapHistogram,
    Segment,
    TransitionMatrix,
    corpus_stats,
    gap_histogram,
    load_corpus,
    save_corpus,
    transition_matrix,
)
from .evaluation import (
    EvalReport,
    PredictionSet,
    combine_folds,
    conditional_accuracy,
    evaluate,
    unweighted_accuracy,
    write_report,
)
from .model import (
    EncoderConfig,
    EncoderParams,
    attention_pool,
    checkpoint_hash,
    context_vector,
    encode,
    forward,
    init_params,
    load_checkpoint,
    loss_and_grad,
    predict,
    save_checkpoint,
)
from .synthgen import GeneratorSpec, OracleReport, bayes_optimal_ua, generate
from .training import (
    FoldPlan,
    RunRecord,
    TrainConfig,
    TrainingDivergence,
    cross_validate,
    hierarchical_train,
    make_folds,
    token_sweep,
    train_fold,
)
from .windowing import ContextPolicy, ContextualSample, build_dataset, token_context, turn_context

__version__ = "0.1.0"
