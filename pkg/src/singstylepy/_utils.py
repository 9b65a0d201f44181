"""
This module is private,
It's not recommanded to use it directly.
"""
import logging
from functools import lru_cache

import torch

from .exceptions import NumericalError

"""
Items imported inside functions/classes

- from .custom_logging import RunLogging
"""





@lru_cache(maxsize=None)
def _get_basic_logger():
    """
    Returns `RunLogging.logger` (one shared instance, so handlers aren't duplicated)
    """
    from .custom_logging import RunLogging
    return RunLogging(
        loggerName='singstylepy',
        loggingLevel=logging.DEBUG
    ).logger



def generate_repr_str(classInst, *args: str):
    """
    Returns a suitable string for `__repr__` method of classes.
    - Return format: `classInst(arg1 = arg1Value, arg2 = arg2Value, ...)`
    - `args` must be an attribute of `classInst`
    """
    info = ', '.join(
        f'{arg} = {getattr(classInst, arg)}' for arg in args
    )
    return f'{classInst.__class__.__name__}({info})'



def make_generator(seed: int, device: str | torch.device = 'cpu') -> torch.Generator:
    """ Returns a `torch.Generator` seeded with `seed` """
    generator = torch.Generator(device=device)
    generator.manual_seed(int(seed))
    return generator



def check_finite(tensor: torch.Tensor, what: str, step: int | None = None):
    """
    Raises `NumericalError` if `tensor` contains NaN/Inf
    - `what`: name of the quantity, used in the message
    - `step`: training/diffusion step to report
    """
    if not torch.isfinite(tensor).all():
        raise NumericalError(f'Non-finite values in {what}', step=step)
    return tensor



def draw_normal(shape: tuple[int, ...], like: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
    """ Standard normal draw on `generator`'s device, moved to `like`'s device and dtype """
    device = generator.device if generator is not None else like.device
    return torch.randn(shape, generator=generator, device=device).to(device=like.device, dtype=like.dtype)



def draw_steps(batchSize: int, numSteps: int, like: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
    """ `[batchSize]` diffusion steps, uniform in `[1, numSteps]` """
    device = generator.device if generator is not None else like.device
    return torch.randint(1, numSteps + 1, (batchSize,), generator=generator, device=device).to(like.device)
