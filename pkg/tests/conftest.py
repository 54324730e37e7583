import pytest
from hypothesis import HealthCheck, settings

from wdnpse import data_path, load_scenario, read_inp

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def _load(inp, scenario=None):
    net = read_inp(data_path(inp))
    if scenario is None:
        return net
    return net, load_scenario(data_path(scenario).read_text(), net)


@pytest.fixture(scope="session")
def three_node():
    return _load("three_node.inp")


@pytest.fixture(scope="session")
def eight_node():
    return _load("eight_node.inp")


@pytest.fixture(scope="session")
def valve_net():
    return _load("eight_node_valves.inp")


@pytest.fixture(scope="session")
def three_scenario(three_node):
    return load_scenario(data_path("three_node.json").read_text(), three_node)


@pytest.fixture(scope="session")
def overdetermined(three_node):
    return load_scenario(data_path("three_node_overdetermined.json").read_text(), three_node)


@pytest.fixture(scope="session")
def eight_scenario(eight_node):
    return load_scenario(data_path("eight_node.json").read_text(), eight_node)


@pytest.fixture(scope="session")
def valve_scenario(valve_net):
    return load_scenario(data_path("eight_node_valves.json").read_text(), valve_net)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 12):
        ok, detail = mod.RESULTS.get(n, (False, "not run or errored before its check"))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
