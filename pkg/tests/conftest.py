import time
from types import SimpleNamespace

import numpy as np
import pytest

from volsynth.trainer import desk_config, train
from volsynth.volgrid import make_phantom_pair

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")
    config.addinivalue_line("markers", "slow: takes more than a few seconds")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            num, title = m.args
            _CRITERIA.setdefault(num, {"title": title, "outcomes": []})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _CRITERIA[m.args[0]]["outcomes"].append(rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        c = _CRITERIA[num]
        outs = c["outcomes"]
        if not outs:
            status = "NOT RUN"
        elif all(o == "passed" for o in outs):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"criterion {num:>2}: {status:<7} {c['title']}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def phantom_pairs():
    return [make_phantom_pair(s) for s in range(8)]


@pytest.fixture(scope="session")
def desk_overfit(phantom_pairs):
    """Desk-scale V-Net trained on the first four phantom pairs; shared by the slow acceptance checks."""
    cfg = desk_config("vnet", seed=0)
    pairs = phantom_pairs[:4]
    t0 = time.perf_counter()
    weights, log = train(cfg, pairs)
    return SimpleNamespace(cfg=cfg, pairs=pairs, weights=weights, log=log, seconds=time.perf_counter() - t0)
