from __future__ import annotations

import numpy as np
import pytest

from asyncea.problems import ConstantProblem, LoadFollowingSurrogate, NKLandscape, Quantized
from asyncea.search_space import BoundsSpec, nroo_bounds

_ACCEPTANCE_LINES: list = []


def record_acceptance(line: str):
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def table_bounds() -> BoundsSpec:
    return nroo_bounds()


@pytest.fixture(scope="session")
def surrogate() -> LoadFollowingSurrogate:
    return LoadFollowingSurrogate()


@pytest.fixture(scope="session")
def quantized_surrogate(surrogate) -> Quantized:
    return Quantized(surrogate, 0.01 * surrogate.reference_fitness())


@pytest.fixture(scope="session")
def nk16() -> NKLandscape:
    return NKLandscape(16, 2, seed=7)


@pytest.fixture
def constant_problem(table_bounds) -> ConstantProblem:
    return ConstantProblem(table_bounds, 0.5)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
