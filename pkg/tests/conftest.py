import pytest

import log
from ports import next_base_port

@pytest.fixture
def base_port():
    return next_base_port()

@pytest.fixture(autouse=True)
def quiet_debug(monkeypatch):
    # Debug lines off, ordinary logs on; -q and -v in a test must not leak.
    monkeypatch.delenv("CHOREO_QUIET", raising=False)
    monkeypatch.delenv("CHOREO_VERBOSE", raising=False)
    log.VERBOSE = False
    log.QUIET = False
    log.set_tag("")
    yield
    log.VERBOSE = False
    log.QUIET = False
