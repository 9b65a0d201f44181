"""
Module for signal and slot related functions

Used by the trainer to publish progress (`stepCompleted`, `checkpointSaved`)
without knowing who listens (progress bars, tests, ...).
"""
from logging import Logger
from typing import Any, Callable

"""
Items imported inside functions/classes

- from ._utils import _get_basic_logger, generate_repr_str
"""



class Signal:
    """
    A signal object that can be used to connect callbacks and emit signals.
    - Connect a callback using `.connect(...)` method
        - Several callbacks can be connected, they run in the order of connection
    - Emit the signal using `.emit(...)` method to run the connected callbacks

    Args:
        - `name`: Name of the signal
        - `logger`: `Logger` to be used for logging
    """

    def __init__(
        self,
        name = 'Signal',
        logger: Logger | None = None
    ):
        # Mods
        if logger is None:
            from ._utils import _get_basic_logger
            logger = _get_basic_logger()

        # Args
        self.__name = name
        self.__logger = logger

        # Data
        self.__callbacks: list[tuple[Callable, tuple, dict]] = []
        self.__emitCount = 0

    def __repr__(self) -> str:
        from ._utils import generate_repr_str
        return generate_repr_str(
            self, 'name', 'emitCount'
        )

    @property
    def name(self):
        return self.__name

    @property
    def emitCount(self):
        """ Number of times the signal was emitted """
        return self.__emitCount

    def connect(self, callback: Callable, *args, **kwargs):
        """
        Connects a callback to the signal.

        Args:
            `callback`: The function to be connected.
            *args, **kwargs: Additional arguments to be passed to the callback.
        """
        self.__callbacks.append((callback, args, kwargs))
        self.__logger.debug(f'Callback "{getattr(callback, "__name__", callback)}" connected to "{self.__name}" signal')

    def disconnect(self):
        """ Disconnects all callbacks from the signal """
        self.__callbacks.clear()
        self.__logger.debug(f'Callbacks disconnected from "{self.__name}" signal')

    def emit(self, *args: Any, **kwargs: Any):
        """
        Emits the signal with the given arguments.
        - Arguments set during connection come first, emission `kwargs` take precedence
        - Returns the list of values returned by the callbacks
        """
        self.__emitCount += 1
        returned = []
        for callback, cbArgs, cbKwargs in self.__callbacks:
            returned.append(
                callback(*cbArgs, *args, **{**cbKwargs, **kwargs})
            )
        return returned
