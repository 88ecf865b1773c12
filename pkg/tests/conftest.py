"""Shared fixtures: bundled cases parsed once per session."""

import pytest

from rmss import cases, parse_case, solve_power_flow, tag_essential


@pytest.fixture(scope="session")
def case2():
    return parse_case(cases.case_path("case2"))


@pytest.fixture(scope="session")
def case14():
    return parse_case(cases.case_path("case14_stoch"))


@pytest.fixture(scope="session")
def case118():
    return parse_case(cases.case_path("case118_stoch"))


@pytest.fixture(scope="session")
def case14_solar(case14):
    return tag_essential(case14, "all-solar")


@pytest.fixture(scope="session")
def case14_solution(case14):
    sol = solve_power_flow(case14)
    assert sol.converged
    return sol
