import importlib.resources

import pytest

from uppkit import ces, market


def fixture_path(name: str):
    return importlib.resources.files("uppkit.fixtures").joinpath(name)


@pytest.fixture(scope="session")
def staples_bundle() -> market.MarketBundle:
    return market.load_market(str(fixture_path("staples_od.json")))


@pytest.fixture(scope="session")
def staples_economy() -> ces.CESEconomy:
    return ces.load_economy(str(fixture_path("staples_od_economy.json")))
