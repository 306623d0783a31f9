from __future__ import annotations

from pathlib import Path

import pytest
from fakeworld import CHAT_URL, EMBED_DIM, EMBED_URL, FakeWorld

from novelty_engine.gateway import DigestStore, FixtureStore, Gateway, ProviderSettings, VirtualClock

FIXTURES = Path(__file__).resolve().parent / "fixtures"


def fake_settings(**overrides) -> ProviderSettings:
    base = dict(
        chat_url=CHAT_URL,
        chat_model="fake-chat-1",
        embed_url=EMBED_URL,
        embed_model="fake-embed-1",
        embed_dim=EMBED_DIM,
    )
    base.update(overrides)
    return ProviderSettings(**base)


@pytest.fixture
def world() -> FakeWorld:
    return FakeWorld()


@pytest.fixture
def make_gateway(tmp_path):
    """Build a gateway on any transport; mode/cache selectable per test."""
    made: list[Gateway] = []

    def build(transport=None, *, mode="live", cache=False, settings=None, clock=None, fixtures_dir=None):
        fixtures = None
        if mode != "live":
            fixtures = FixtureStore(fixtures_dir or tmp_path / "fixtures", mode)
        gw = Gateway(
            settings or fake_settings(),
            fixtures=fixtures,
            cache=DigestStore(tmp_path / "cache") if cache else None,
            transport=transport,
            clock=clock or VirtualClock(),
            env={},
        )
        made.append(gw)
        return gw

    yield build
    for gw in made:
        gw.close()


@pytest.fixture
def gateway(make_gateway, world):
    return make_gateway(world.transport())


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: s.split()[1]):
            terminalreporter.write_line(line)
