import threading

import pytest

from singstylepy.decorator import log_it, run_threaded




def test_log_it_returns_value():
    @log_it()
    def add(a, b):
        return a + b

    assert add(2, 3) == 5
    assert add.__name__ == 'add'


def test_log_it_propagates_errors():
    @log_it()
    def fail():
        raise RuntimeError('boom')

    with pytest.raises(RuntimeError, match='boom'):
        fail()


def test_run_threaded_returns_started_thread():
    done = threading.Event()
    names = []

    @run_threaded(name='producer')
    def work(event):
        names.append(threading.current_thread().name)
        event.set()

    thread = work(done)
    thread.join(timeout=5)
    assert done.is_set()
    assert names == ['producer']
    assert thread.daemon


def test_run_threaded_wrapped_runs_inline():
    @run_threaded()
    def work():
        return threading.current_thread().name

    assert work.__wrapped__() == threading.current_thread().name
