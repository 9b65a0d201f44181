from singstylepy.events import Signal




def test_callbacks_run_in_connection_order():
    calls = []
    signal = Signal('stepCompleted')
    signal.connect(lambda tag, step: calls.append((tag, step)) or step, 'first')
    signal.connect(lambda step: calls.append(('second', step)) or -step)

    assert signal.emit(step=3) == [3, -3]
    assert calls == [('first', 3), ('second', 3)]
    assert signal.emitCount == 1


def test_emit_kwargs_override_connection_kwargs():
    signal = Signal()
    signal.connect(lambda value: value, value='connected')
    assert signal.emit(value='emitted') == ['emitted']


def test_disconnect():
    signal = Signal()
    signal.connect(lambda: 1)
    signal.disconnect()
    assert signal.emit() == []
    assert signal.emitCount == 1
    assert 'emitCount = 1' in repr(signal)
