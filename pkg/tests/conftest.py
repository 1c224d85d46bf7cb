import numpy as np
import pytest

from ppid.backend import make_backend
from ppid.encoding import QuantizationConfig
from ppid.params import select_params
from ppid.protocol import roles
from ppid.queries import QueryConfig

SECURITY = 128


@pytest.fixture(scope="session")
def params():
    return select_params(SECURITY)


@pytest.fixture(scope="session")
def cfg():
    return QueryConfig()


@pytest.fixture(scope="session")
def qcfg(params, cfg):
    return QuantizationConfig(params.plain_modulus, cfg.beta)


def _keyed(name, params):
    be = make_backend(name, params)
    keys = be.keygen()
    be.attach(keys)
    return be, keys


@pytest.fixture(scope="session")
def reference(params):
    return _keyed("reference", params)


@pytest.fixture(scope="session")
def seal(params):
    return _keyed("seal", params)


@pytest.fixture(scope="session", params=["reference", "seal"])
def keyed(request):
    """(backend, keys) for each backend in turn."""
    return request.getfixturevalue(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _no_role():
    roles.reset_role()
    yield
    roles.reset_role()


# -- acceptance reporting ----------------------------------------------------------------

_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


@pytest.fixture
def criterion(request):
    """Context manager recording one PASS/FAIL line for an acceptance criterion."""
    from contextlib import contextmanager

    results = request.config.stash[_CRITERIA]

    @contextmanager
    def record(number: int, title: str):
        info = {"detail": ""}
        try:
            yield info
        except BaseException as exc:
            results[number] = f"criterion {number} FAIL  {title}: {info['detail']} [{type(exc).__name__}: {exc}]"
            print(results[number])
            raise
        results[number] = f"criterion {number} PASS  {title}: {info['detail']}"
        print(results[number])

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_CRITERIA, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
