"""
This module contain classes and methods related to configuration handling

A configuration file is a flat JSON object `{key: value, ...}`. Every key has a
documented default (see `TrainConfig`), missing keys fall back to it.
"""
import dataclasses
import json
import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .exceptions import ConfigError

"""
Items imported inside functions/classes
- from ._utils import _get_basic_logger, generate_repr_str
"""



PITCH_MODES = ('diffusion', 'simple')
DECODER_MODES = ('diffusion', 'conv')
GAUSSIAN_WEIGHTINGS = ('printed', 'simple')




@dataclass(frozen=True)
class TrainConfig:
    """
    All knobs of classifier pre-training, main training and inference.

    | key                        | default   | meaning |
    |----------------------------|-----------|---------|
    | corpus_dir                 | corpus    | corpus root (see `corpus.build_corpus`) |
    | checkpoint_dir             | checkpoints | where checkpoints/step dumps are written |
    | classifier_checkpoint      | checkpoints/classifier.ssck | pre-trained style encoder |
    | seed                       | 1234      | seed of every random stream |
    | batch_size                 | 16        | samples per training batch |
    | max_steps                  | 20000     | training steps |
    | checkpoint_interval        | 1000      | steps between checkpoints |
    | log_interval               | 50        | steps between metric log lines |
    | prefetch_batches           | 4         | size of the ordered prefetch queue |
    | learning_rate              | 2e-4      | Adam peak learning rate |
    | warmup_steps               | 1000      | linear warm-up steps |
    | adam_beta1, adam_beta2     | 0.9, 0.98 | Adam betas |
    | grad_clip                  | 1.0       | global gradient-norm clip (0 disables) |
    | lambda_dur ... lambda_ssim | 1.0       | weights of the six training losses |
    | hidden_size                | 256       | content/style width |
    | encoder_layers             | 4         | FFT blocks of the phoneme encoder |
    | encoder_kernel             | 9         | FFT block conv kernel |
    | encoder_filter             | 1024      | FFT block conv filter size |
    | encoder_heads              | 2         | attention heads |
    | dropout                    | 0.1       | dropout of encoders/predictors |
    | umln_probability           | 0.5       | probability of perturbing in training |
    | umln_eps                   | 1e-5      | normalisation epsilon |
    | conv_encoder_layers        | 5         | reference conv encoder layers |
    | rq_codebook_size           | 128       | codes per codebook |
    | rq_depth                   | 4         | residual quantisation depth |
    | rq_decay                   | 0.99      | EMA decay of the codebooks |
    | rq_stale_steps             | 100       | steps before an unused code is re-seeded |
    | align_layers, align_heads  | 2, 2      | align attention stack |
    | pitch_layers               | 12        | pitch denoiser residual layers |
    | pitch_kernel               | 3         | pitch denoiser conv kernel |
    | pitch_residual_channels    | 192       | pitch denoiser residual channels |
    | pitch_steps                | 100       | pitch diffusion steps |
    | pitch_beta_min/max         | 1e-4, 0.06| linear beta schedule ends |
    | decoder_layers             | 20        | mel denoiser residual layers |
    | decoder_hidden             | 256       | mel denoiser residual channels |
    | decoder_steps              | 4         | mel diffusion steps |
    | vpsde_beta_min/max         | 0.1, 20.0 | VPSDE ends of the decoder schedule |
    | dilation_cycle             | 4         | dilations 1, 2, .., 2^(cycle-1), repeated |
    | style_conv_layers          | 3         | style encoder conv feature layers |
    | style_transformer_layers   | 2         | style encoder transformer layers |
    | am_margin, am_scale        | 0.2, 30.0 | AM-softmax margin and scale |
    | classifier_steps           | 2000      | classifier pre-training steps |
    | classifier_learning_rate   | 1e-3      | classifier Adam learning rate |
    | classifier_batch_size      | 32        | classifier batch size |
    | classifier_crop_frames     | 128       | random crop length for classifier batches |
    | use_umln                   | true      | ablation: false = "w/o UMLN" |
    | use_rsa                    | true      | ablation: false = "w/o RSA" |
    | pitch_mode                 | diffusion | "simple" = "w/o Pitch" regressor |
    | decoder_mode               | diffusion | "conv" = "w/o Decoder" conv decoder |
    | gaussian_loss_weighting    | printed   | "printed" weight, or "simple" plain MSE |
    """

    # Run
    corpus_dir: str = 'corpus'
    checkpoint_dir: str = 'checkpoints'
    classifier_checkpoint: str = 'checkpoints/classifier.ssck'
    seed: int = 1234
    batch_size: int = 16
    max_steps: int = 20000
    checkpoint_interval: int = 1000
    log_interval: int = 50
    prefetch_batches: int = 4

    # Optimizer
    learning_rate: float = 2e-4
    warmup_steps: int = 1000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    grad_clip: float = 1.0

    # Loss weights
    lambda_dur: float = 1.0
    lambda_gdiff: float = 1.0
    lambda_mdiff: float = 1.0
    lambda_c: float = 1.0
    lambda_mae: float = 1.0
    lambda_ssim: float = 1.0

    # Architecture
    hidden_size: int = 256
    encoder_layers: int = 4
    encoder_kernel: int = 9
    encoder_filter: int = 1024
    encoder_heads: int = 2
    dropout: float = 0.1
    umln_probability: float = 0.5
    umln_eps: float = 1e-5
    conv_encoder_layers: int = 5
    rq_codebook_size: int = 128
    rq_depth: int = 4
    rq_decay: float = 0.99
    rq_stale_steps: int = 100
    align_layers: int = 2
    align_heads: int = 2
    pitch_layers: int = 12
    pitch_kernel: int = 3
    pitch_residual_channels: int = 192
    pitch_steps: int = 100
    pitch_beta_min: float = 1e-4
    pitch_beta_max: float = 0.06
    decoder_layers: int = 20
    decoder_hidden: int = 256
    decoder_steps: int = 4
    vpsde_beta_min: float = 0.1
    vpsde_beta_max: float = 20.0
    dilation_cycle: int = 4

    # Style encoder pre-training
    style_conv_layers: int = 3
    style_transformer_layers: int = 2
    am_margin: float = 0.2
    am_scale: float = 30.0
    classifier_steps: int = 2000
    classifier_learning_rate: float = 1e-3
    classifier_batch_size: int = 32
    classifier_crop_frames: int = 128

    # Ablations
    use_umln: bool = True
    use_rsa: bool = True
    pitch_mode: str = 'diffusion'
    decoder_mode: str = 'diffusion'
    gaussian_loss_weighting: str = 'printed'

    def __post_init__(self):
        self.validate()

    def validate(self):
        """ Raises `ConfigError` if any value breaks its invariant """
        lambdas = [
            'lambda_dur', 'lambda_gdiff', 'lambda_mdiff', 'lambda_c', 'lambda_mae', 'lambda_ssim'
        ]
        for key in lambdas:
            if getattr(self, key) < 0:
                raise ConfigError(f'"{key}" must be >= 0, got {getattr(self, key)}')
        positives = [
            'batch_size', 'max_steps', 'checkpoint_interval', 'log_interval', 'prefetch_batches',
            'hidden_size', 'encoder_layers', 'encoder_heads', 'conv_encoder_layers',
            'rq_codebook_size', 'rq_depth', 'align_layers', 'align_heads', 'pitch_layers',
            'pitch_steps', 'decoder_layers', 'decoder_hidden', 'decoder_steps', 'dilation_cycle',
            'classifier_steps', 'classifier_batch_size', 'classifier_crop_frames',
            'rq_stale_steps', 'learning_rate', 'classifier_learning_rate', 'am_scale',
        ]
        for key in positives:
            if getattr(self, key) <= 0:
                raise ConfigError(f'"{key}" must be > 0, got {getattr(self, key)}')
        if not 0.0 <= self.umln_probability <= 1.0:
            raise ConfigError(f'"umln_probability" must be in [0, 1], got {self.umln_probability}')
        if self.umln_eps <= 0:
            raise ConfigError(f'"umln_eps" must be > 0, got {self.umln_eps}')
        for key in ('adam_beta1', 'adam_beta2'):
            if not 0.0 < getattr(self, key) < 1.0:
                raise ConfigError(f'"{key}" must be in (0, 1), got {getattr(self, key)}')
        if not 0.0 <= self.rq_decay < 1.0:
            raise ConfigError(f'"rq_decay" must be in [0, 1), got {self.rq_decay}')
        if not 0.0 < self.pitch_beta_min < self.pitch_beta_max < 1.0:
            raise ConfigError('Pitch schedule needs 0 < pitch_beta_min < pitch_beta_max < 1')
        if not 0.0 < self.vpsde_beta_min < self.vpsde_beta_max:
            raise ConfigError('Decoder schedule needs 0 < vpsde_beta_min < vpsde_beta_max')
        if self.am_margin < 0:
            raise ConfigError(f'"am_margin" must be >= 0, got {self.am_margin}')
        if self.hidden_size % self.encoder_heads or self.hidden_size % self.align_heads:
            raise ConfigError('"hidden_size" must be divisible by the number of attention heads')
        if self.pitch_mode not in PITCH_MODES:
            raise ConfigError(f'"pitch_mode" must be one of {PITCH_MODES}, got "{self.pitch_mode}"')
        if self.decoder_mode not in DECODER_MODES:
            raise ConfigError(f'"decoder_mode" must be one of {DECODER_MODES}, got "{self.decoder_mode}"')
        if self.gaussian_loss_weighting not in GAUSSIAN_WEIGHTINGS:
            raise ConfigError(
                f'"gaussian_loss_weighting" must be one of {GAUSSIAN_WEIGHTINGS}, got "{self.gaussian_loss_weighting}"'
            )

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **overrides) -> 'TrainConfig':
        """ Returns a copy with `overrides` applied (unknown keys raise `ConfigError`) """
        return TrainConfig.from_dict({**self.to_dict(), **overrides})

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> 'TrainConfig':
        """
        Builds a config from a flat dict
        - Missing keys take their default, unknown keys raise `ConfigError`
        - Values are coerced to the declared type of their key
        """
        declared = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(data) - set(declared))
        if unknown:
            raise ConfigError(f'Unknown config keys: {", ".join(unknown)}')
        return cls(**{
            key: _coerce(key, value, declared[key]) for key, value in data.items()
        })




def _coerce(key: str, value: Any, declaredType: Any):
    """ Coerce `value` of config `key` to `declaredType` (bool/int/float/str) """
    typeName = declaredType if isinstance(declaredType, str) else declaredType.__name__

    if typeName == 'bool':
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ('true', 'false'):
            return value.lower() == 'true'
    elif typeName == 'int':
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                pass
    elif typeName == 'float':
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
    elif typeName == 'str':
        if isinstance(value, str):
            return value
    raise ConfigError(f'Config key "{key}" expects {typeName}, got {value!r}')




class ConfigFile:
    """
    Class to handle the configuration file of a run

    Args:
        - `config_file_path`: Path of the flat JSON config file
        - `logger`: for logging purposes

    [Handling] If the config file is missing:
        - It is created with all defaults (and a warning is logged)

    [Handling] If some keys are missing in the config file:
        - Their defaults are used, the file itself isn't modified
    """

    def __init__(
        self,
        config_file_path: str | Path,
        logger: logging.Logger | None = None
    ):
        from ._utils import _get_basic_logger

        # Args
        self.config_file_path = Path(config_file_path)
        self.logger = logger or _get_basic_logger()

    def __repr__(self) -> str:
        from ._utils import generate_repr_str
        return generate_repr_str(
            self, 'config_file_path'
        )

    def load(self) -> TrainConfig:
        """
        Returns the `TrainConfig` stored in the config file
        - Creates the file with defaults, if it's not present
        - Raises `ConfigError` on corrupt JSON, unknown keys or invalid values
        """
        # [Check] if config file not present: Default config
        if not self.config_file_path.is_file():
            self.logger.warning(f'Config file not found, writing defaults to: {self.config_file_path}')
            self.reset()
            return TrainConfig()

        # [Load] config from file
        with open(self.config_file_path, 'r') as f:
            try:
                data = json.load(f)
            except json.decoder.JSONDecodeError as e:
                raise ConfigError(f'Corrupt config file {self.config_file_path}: {e}') from None
        if not isinstance(data, dict):
            raise ConfigError(f'Config file {self.config_file_path} must hold a flat JSON object')
        nested = [k for k, v in data.items() if isinstance(v, (dict, list))]
        if nested:
            raise ConfigError(f'Config keys must be flat, nested values for: {", ".join(nested)}')

        missing = sorted(set(TrainConfig().to_dict()) - set(data))
        if missing:
            self.logger.debug(f'Config keys using defaults: {", ".join(missing)}')
        return TrainConfig.from_dict(data)

    def reset(self):
        """
        Reset the config file
        - Overrite config file with the default config
        """
        self.save(TrainConfig())

    def save(self, config: TrainConfig) -> None:
        """
        Save `config` to the config file
        - Create file (and its directory) if not present
        """
        self.config_file_path.parent.mkdir(
            parents=True,
            exist_ok=True
        )
        with open(self.config_file_path, 'w') as f:
            json.dump(
                config.to_dict(), f,
                indent=4,
                sort_keys=True
            )
