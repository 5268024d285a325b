"""Shared test configuration.

Every test runs with the live-provider seam replaced by a refusing
provider, so nothing in the suite can open a network connection without
failing loudly.  Stub and replay providers never touch the seam.
"""

import pytest

import moltext.cli
from moltext.llmclient import NetworkRefusingProvider


@pytest.fixture(autouse=True)
def _refuse_network(monkeypatch):
    monkeypatch.setattr(
        moltext.cli, "_LIVE_PROVIDER_FACTORY",
        lambda cfg, getenv=None: NetworkRefusingProvider(),
    )
