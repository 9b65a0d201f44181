"""
This module contains exception classes

Every exception carries a `category`, a short machine-readable string
which the command line interface prints on failures.
"""




class SingStyleError(Exception):
    """ Base class of all errors raised by this package
    - `category`: machine-readable error category
    """

    category = 'error'

    def __init__(self, *args: object) -> None:
        super().__init__(*args)



class ScoreError(SingStyleError, ValueError):
    """ Musical score is invalid (empty, misaligned, bad durations or pitches) """

    category = 'invalid_score'



class UnknownPhonemeError(ScoreError):
    """ Phoneme symbol is not part of the vocabulary
    - `symbol`: the offending phoneme
    """

    category = 'unknown_phoneme'

    def __init__(self, symbol: str) -> None:
        super().__init__(f'Unknown phoneme symbol: "{symbol}"')
        self.symbol = symbol



class AudioError(SingStyleError, ValueError):
    """ Audio or spectrogram input is unusable (sample rate, channels, length) """

    category = 'invalid_audio'



class ShapeError(SingStyleError, ValueError):
    """ Lengths, frame counts or dimensions of inputs don't match, or an input is empty or a zero vector """

    category = 'shape_mismatch'



class DistributionError(SingStyleError, ValueError):
    """ Probability vector is not on the simplex, or diffusion step is out of range """

    category = 'invalid_distribution'



class CorpusError(SingStyleError, ValueError):
    """ Corpus or split is unusable (missing files, single class, empty split) """

    category = 'invalid_corpus'



class ConfigError(SingStyleError, ValueError):
    """ Configuration key/value is invalid, or a required file is missing """

    category = 'invalid_config'



class CheckpointError(SingStyleError, ValueError):
    """ Checkpoint file can't be read
    - `blockName`: name of the block which failed (if known)
    """

    category = 'invalid_checkpoint'

    def __init__(self, message: str, blockName: str | None = None) -> None:
        if blockName:
            message = f'{message} [block: {blockName}]'
        super().__init__(message)
        self.blockName = blockName



class NumericalError(SingStyleError, ArithmeticError):
    """ NaN/Inf appeared in a loss or in a network output
    - `step`: training step or diffusion step where it happened
    """

    category = 'numerical_divergence'

    def __init__(self, message: str, step: int | None = None) -> None:
        if step is not None:
            message = f'{message} (step {step})'
        super().__init__(message)
        self.step = step
