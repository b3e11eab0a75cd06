import numpy as np
import pytest

from stallnet.nn import LayerSpec, ModelSpec, init_model


def micro_spec(kind="lstm_uni", units=(3,), features=3, window=4, dense=(4,), dropout=0.0):
    """Tiny model for gradient checks."""
    L = LayerSpec
    layers = [L(kind, u) for u in units]
    layers += [L.dense(d) for d in dense]
    if dropout:
        layers.append(L.dropout(dropout))
    layers.append(L.output())
    return ModelSpec(tuple(layers), features, window)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_model():
    return init_model(micro_spec(), seed=3)


_ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records one acceptance line and echoes it."""

    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append((n, line))
        with request.config.pluginmanager.get_plugin("capturemanager").global_and_fixture_disabled():
            print(f"\n{line}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE, key=lambda x: (str(x[0]), x[1])):
        terminalreporter.write_line(line)
