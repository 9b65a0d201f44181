"""
This module contains decorators
"""
import logging
import threading
import time
from functools import wraps

"""
Items imported inside functions/classes

- from ._utils import _get_basic_logger
"""







def log_it(logger: logging.Logger | None = None):
    """
    Decorator to log when the decorated function starts, and how long it took

    - `logger`: for logging purposes (if not provided, default logger will be used)
    - A `logger` keyword argument passed to the decorated function takes precedence
    """

    def top_level_wrapper(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            from ._utils import _get_basic_logger
            _logger = kwargs.get('logger') or logger or _get_basic_logger()

            # Function
            _logger.info(f'[LOG_IT] "{func.__name__}" started')
            t1 = time.perf_counter()
            retVal = func(*args, **kwargs)
            t2 = time.perf_counter()

            # Log
            _logger.info(f'[LOG_IT] "{func.__name__}" finished [Time taken: {t2 - t1:.2f} seconds]')

            return retVal
        return wrapper
    return top_level_wrapper



def run_threaded(
    daemon: bool = True,
    name: str = '',
    logger: logging.Logger | None = None
):
    """
    Decorator to run the decorated function in a new thread
    - Use `__wrapped__` attribute to run the main function without running a thread
    - The started `threading.Thread` is returned, so callers can `join()` it

    Args:
    - `daemon`: If thread should be daemon or not
    - `name`: Name of the new thread (by default decorated function `__name__` will be used)
    - `logger`: for logging purposes
    """

    def top_level_wrapper(func):

        @wraps(func)
        def wrapper(*args, **kwargs):
            def main_function():
                try:
                    func(*args, **kwargs)
                except Exception as e:
                    from ._utils import _get_basic_logger
                    _logger = logger or _get_basic_logger()
                    _logger.debug(f'Error occured in {func.__name__} threaded function: {e}')
                    _logger.exception(e)
                    raise
            thread = threading.Thread(target=main_function, name=name or func.__name__, daemon=daemon)
            thread.start()
            return thread

        return wrapper

    return top_level_wrapper
