"""Shared scenario fixtures."""

import copy

import pytest

from robustvol.core.model import build_scenario

REFERENCE = {
    "market": {"r": 0.05, "T": 10.0},
    "factor1": {
        "kappa": 3.0,
        "theta": 0.01,
        "sigma": 0.25,
        "rho": -0.7,
        "lambda": 3.0,
        "mu": -3.0,
        "v0": 0.04,
    },
    "factor2": {
        "kappa": 3.5,
        "theta": 0.04,
        "sigma": 0.01,
        "rho": -0.3,
        "lambda": 2.0,
        "mu": -3.0,
        "v0": 0.0001,
    },
    "prefs": {"gamma": 4.0, "phi_s1": 0.5, "phi_s2": 0.5, "phi_v1": 0.5, "phi_v2": 0.5},
}


def make_document(**sections) -> dict:
    """Copy of the reference document with whole sections or single fields overridden."""
    document = copy.deepcopy(REFERENCE)
    for name, values in sections.items():
        if values is None:
            document.pop(name, None)
        else:
            document.setdefault(name, {}).update(values)
    return document


@pytest.fixture
def document():
    return make_document()


@pytest.fixture
def scenario():
    """The reference scenario (T = 10, all phi = 0.5)."""
    return build_scenario(make_document(), warn=False)


@pytest.fixture
def short_scenario():
    """Same parameters over a two-year horizon, for the slower solvers."""
    return build_scenario(make_document(market={"T": 2.0}), warn=False)


@pytest.fixture
def twin_scenario():
    """Two-year horizon with factor 2 a copy of factor 1."""
    return build_scenario(
        make_document(market={"T": 2.0}, factor2=REFERENCE["factor1"]), warn=False
    )


@pytest.fixture
def jump_scenario():
    return build_scenario(
        make_document(jumps={"j_s": -0.15, "nu_p": 0.1, "nu_q": 0.3}), warn=False
    )


@pytest.fixture
def correlated_scenario():
    return build_scenario(
        make_document(market={"T": 2.0}, correlation={"rho_w": 0.5}), warn=False
    )
