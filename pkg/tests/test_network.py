import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from wdnpse.errors import TopologyError
from wdnpse.network import (
    Junction, Network, Pipe, Reservoir, Tank, Valve, ValveKind, ValveStatus,
    build_incidence, validate_topology,
)

EIGHT_EDGES = [
    ("P23", "J2", "J3"), ("P34", "J3", "J4"), ("P45", "J4", "J5"), ("P37", "J3", "J7"),
    ("P46", "J4", "J6"), ("P76", "J7", "J6"), ("P65", "J6", "J5"), ("P78", "J7", "T8"),
    ("PU12", "R1", "J2"),
]


class TestCounts:
    def test_three_node(self, three_node):
        n = three_node
        assert (n.n_j, n.n_r, n.n_t, n.n_p, n.n_m, n.n_l) == (1, 1, 1, 1, 1, 0)
        assert n.n_x == n.n_h + n.n_q == 5

    def test_eight_node(self, eight_node):
        n = eight_node
        assert (n.n_j, n.n_r, n.n_t, n.n_p, n.n_m) == (6, 1, 1, 8, 1)
        assert n.n_x == 17

    def test_state_order(self, three_node):
        assert three_node.state_labels() == ["h:J2", "h:R1", "h:T3", "q:P23", "q:PU12"]
        assert three_node.state_index("q:P23") == 3
        assert three_node.state_index("T3") == 2


class TestIncidence:
    def test_three_node_matrix(self, three_node):
        # rows J2, R1, T3; columns P23, PU12
        expected = np.array([[-1, 1], [0, -1], [1, 0]])
        assert np.array_equal(build_incidence(three_node).toarray(), expected)

    def test_isolated_junction(self):
        net = Network(junctions=(Junction("J1", 0.0, 0.0),))
        assert build_incidence(net).shape == (1, 0)

    def test_eight_node_against_edge_list(self, eight_node):
        nodes = [n.id for n in eight_node.nodes]
        links = [l.id for l in eight_node.links]
        M = np.zeros((len(nodes), len(links)))
        for lid, a, b in EIGHT_EDGES:
            M[nodes.index(a), links.index(lid)] -= 1
            M[nodes.index(b), links.index(lid)] += 1
        inc = build_incidence(eight_node)
        assert np.array_equal(inc.toarray(), M)
        assert np.all(inc.toarray().sum(axis=0) == 0)

    def test_partitions_tile(self, valve_net):
        inc = build_incidence(valve_net)
        rows = sp.vstack([inc.junction_rows, inc.reservoir_rows, inc.tank_rows])
        cols = sp.hstack([inc.pipe_columns, inc.pump_columns, inc.valve_columns])
        assert (rows != inc.matrix).nnz == 0
        assert (cols != inc.matrix).nnz == 0

    def test_deterministic(self, eight_node):
        a, b = build_incidence(eight_node).matrix, build_incidence(eight_node).matrix
        assert np.array_equal(a.indptr, b.indptr) and np.array_equal(a.indices, b.indices)
        assert np.array_equal(a.data, b.data)


@st.composite
def random_networks(draw):
    n = draw(st.integers(2, 8))
    junctions = [Junction(f"J{i}", 0.0, 1.0) for i in range(n)]
    edges = draw(st.lists(st.tuples(st.integers(0, n), st.integers(0, n)), min_size=1, max_size=15))
    pipes = []
    for k, (a, b) in enumerate(edges):
        if a == b:
            continue
        name = lambda i: "R" if i == n else f"J{i}"
        pipes.append(Pipe(f"P{k}", name(a), name(b), 100.0, 1.0, 100.0))
    return Network(junctions=junctions, reservoirs=(Reservoir("R", 10.0),), pipes=pipes)


class TestIncidenceProperties:
    @given(random_networks())
    def test_column_sums_zero(self, net):
        M = build_incidence(net).toarray()
        assert np.all(M.sum(axis=0) == 0)
        assert np.all((M == 1).sum(axis=0) == 1) and np.all((M == -1).sum(axis=0) == 1)

    @given(random_networks())
    def test_row_partition_reconstructs(self, net):
        inc = build_incidence(net)
        stacked = sp.vstack([inc.junction_rows, inc.reservoir_rows, inc.tank_rows]).toarray()
        assert np.array_equal(stacked, inc.toarray())


class TestValidation:
    def test_dangling_endpoint(self):
        with pytest.raises(TopologyError, match="P1"):
            Network(junctions=(Junction("J1", 0, 0),), pipes=(Pipe("P1", "J1", "J9", 1, 1, 100),))

    def test_duplicate_id(self):
        with pytest.raises(TopologyError, match="duplicate"):
            Network(junctions=(Junction("J1", 0, 0), Junction("J1", 1, 0)))

    def test_bundled_clean(self, three_node, eight_node, valve_net):
        for net in (three_node, eight_node, valve_net):
            assert validate_topology(net).ok

    def test_parallel_open_valves(self):
        net = Network(
            junctions=(Junction("J1", 0, 10), Junction("J2", 0, 10)),
            reservoirs=(Reservoir("R", 100),),
            pipes=(Pipe("P1", "R", "J1", 100, 1, 100),),
            valves=(
                Valve("V1", "J1", "J2", ValveKind.FCV, 5.0, 1.0, ValveStatus.OPEN),
                Valve("V2", "J1", "J2", ValveKind.FCV, 5.0, 1.0, ValveStatus.OPEN),
            ),
        )
        rep = validate_topology(net)
        assert "open-valve-loop" in rep.codes()
        assert not validate_topology(net, {"V2": ValveStatus.ACTIVE}).codes()

    def test_disconnected_and_isolated(self):
        net = Network(
            junctions=(Junction("J1", 0, 0), Junction("J2", 0, 0), Junction("J3", 0, 0)),
            reservoirs=(Reservoir("R", 1),),
            pipes=(Pipe("P1", "R", "J1", 1, 1, 100),),
            tanks=(Tank("T", 0, 1, 0, 2, 10),),
        )
        codes = validate_topology(net).codes()
        assert "isolated-node" in codes and "disconnected" in codes

    def test_component_without_fixed_head(self):
        net = Network(
            junctions=(Junction("J1", 0, 0), Junction("J2", 0, 0), Junction("J3", 0, 0)),
            reservoirs=(Reservoir("R", 1),),
            pipes=(Pipe("P1", "R", "J1", 1, 1, 100), Pipe("P2", "J2", "J3", 1, 1, 100)),
        )
        assert "no-fixed-head" in validate_topology(net).codes()


class TestTank:
    def test_area_and_heads(self):
        t = Tank("T", 100.0, 5.0, 1.0, 9.0, 2.0)
        assert t.area == pytest.approx(np.pi)
        assert (t.initial_head, t.min_head, t.max_head) == (105.0, 101.0, 109.0)

    def test_level_bounds(self):
        with pytest.raises(ValueError):
            Tank("T", 0.0, 10.0, 0.0, 5.0, 1.0)
