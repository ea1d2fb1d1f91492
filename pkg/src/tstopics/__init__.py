"""Topic modeling for multivariate time series.

Series are segmented into autoregressive regimes ("words") with geometric
durations; higher-level "topics" are distributions over the shared word
vocabulary, and each series follows its own topic transition matrix drawn
around a global one.  Inference is block Gibbs sampling under a weak-limit
truncation of the hierarchical Dirichlet process prior.
"""

from .errors import (
    CheckpointCorruptError,
    CheckpointError,
    CheckpointVersionError,
    ConditioningError,
    ConfigError,
    CorpusFormatError,
    LabelMaskError,
    NumericalError,
    ParameterError,
    SeriesTooShortError,
    ShapeError,
    TstopicsError,
)
from .model import (
    ArWord,
    Corpus,
    Hyperparameters,
    MniwPrior,
    ModelParams,
    SeriesState,
    default_mniw_prior,
    sample_pi_n,
    sample_prior_params,
    simulate_corpus,
    simulate_series,
    validate_series_state,
)
from .observation import (
    DesignPair,
    MniwPosterior,
    ar_loglik,
    build_design,
    loglik_table,
    mniw_update,
    sample_mniw,
)
from .gibbs import (
    ChainState,
    GibbsConfig,
    SuffStats,
    backward_messages,
    collect_counts,
    gibbs_sweep,
    init_chain,
    log_joint,
    run_chain,
    sample_beta,
    sample_omega,
    sample_phi,
    sample_states,
    sample_transitions,
    sample_words,
    state_posteriors,
)
from .data_io import (
    ArchiveWriter,
    Checkpoint,
    load_checkpoint,
    load_corpus,
    load_metadata,
    load_truth,
    moving_average_centered,
    preprocess_corpus,
    read_archive,
    remove_basal,
    save_checkpoint,
    save_corpus,
    save_truth,
)
from .metrics import (
    RankInput,
    RankScore,
    WordTopicMi,
    fft_features,
    healthy_ranking,
    healthy_topic_frequencies,
    pooled_word_start_counts,
    rank_score,
    smooth_topic_posterior,
    topic_proportion_features,
    word_topic_mi,
)

__version__ = "0.1.0"
