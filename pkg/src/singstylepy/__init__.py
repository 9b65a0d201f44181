"""
Zero-shot style transfer for singing voice synthesis.

Turns a musical score plus an unseen reference recording into a mel-spectrogram
and F0 contour sung in the reference's timbre, emotion and singing technique.

You can import classes and methods directly from this library, like `from singstylepy import AcousticModel`
or from their specific modules like `from singstylepy.model import AcousticModel`
"""

from .audio import (
    HOP_LENGTH,
    N_MELS,
    SAMPLE_RATE,
    extract_f0,
    extract_mel,
    load_wav,
    mel_to_audio,
)

from .checkpoint import (
    load_checkpoint,
    load_classifier,
    save_checkpoint,
    save_classifier,
)

from .config import (
    ConfigFile,
    TrainConfig,
)

from .corpus import (
    MusicalScore,
    NormStats,
    Note,
    NoteType,
    SingingSample,
    StyleClassLabel,
    build_corpus,
    compute_norm_stats,
    get_split,
    load_corpus,
    read_sample,
    read_score,
    split_corpus,
    write_score,
)

from .custom_logging import (
    LevelFormatter,
    RunLogging,
)

from .decoder import (
    ConvMelDecoder,
    MelDecoder,
    ssim,
)

from .decorator import (
    log_it,
    run_threaded,
)

from .diffusion import (
    DecoderSchedule,
    GaussianSchedule,
    MultinomialSchedule,
)

from .events import (
    Signal
)

from .exceptions import (
    AudioError,
    CheckpointError,
    ConfigError,
    CorpusError,
    DistributionError,
    NumericalError,
    ScoreError,
    ShapeError,
    SingStyleError,
    UnknownPhonemeError,
)

from .metrics import (
    MetricReport,
    cosine_similarity,
    ffe,
    plot_comparison,
)

from .model import (
    AcousticModel,
    SynthesisResult,
)

from .pitch import (
    PitchPredictor,
    SimplePitchPredictor,
)

from .rsa import (
    AlignAttention,
    ConvEncoder,
    ResidualQuantizer,
)

from .style_encoder import (
    StyleClassifier,
    StyleEncoder,
    pretrain_classifier,
)

from .training import (
    ABLATIONS,
    Trainer,
    ablation_configs,
    evaluate,
    synthesize,
    train,
)

from .umln import (
    UMLN
)
