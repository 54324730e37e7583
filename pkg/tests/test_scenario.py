import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wdnpse.errors import ScenarioError
from wdnpse.hydraulics import solve_operating_point
from wdnpse.scenario import (
    SourceSpec, load_scenario, me_to_sigma, scenario_from_dict, scenario_to_dict, sigma_to_me,
)


class TestMarginOfError:
    def test_demand_me20(self):
        assert me_to_sigma(20, 100, 0.99) ** 2 == pytest.approx(60.28, abs=0.01)

    def test_zero(self):
        assert me_to_sigma(0, 100) == 0.0

    def test_roughness_30(self):
        s = me_to_sigma(30, 100, 0.99)
        assert s == pytest.approx(11.646, abs=1e-3)
        assert s**2 == pytest.approx(135.5, abs=0.2)

    def test_95(self):
        assert me_to_sigma(19.6, 100, 0.95) == pytest.approx(10.0)

    def test_negative_mean_uses_magnitude(self):
        assert me_to_sigma(10, -50) == me_to_sigma(10, 50)

    @given(st.floats(0, 200), st.floats(1e-3, 1e4), st.sampled_from([0.95, 0.99]))
    def test_inverse(self, me, mu, conf):
        assert sigma_to_me(me_to_sigma(me, mu, conf), mu, conf) == pytest.approx(me, rel=1e-12, abs=1e-12)

    def test_unknown_confidence(self):
        with pytest.raises(ScenarioError):
            me_to_sigma(1, 1, 0.9)


class TestSourceSpec:
    def test_forms(self):
        assert SourceSpec.from_obj({"variance": 4.0}, "x").resolve(10, 0.99) == 4.0
        assert SourceSpec.from_obj({"sigma": 3.0}, "x").resolve(10, 0.99) == 9.0
        assert SourceSpec.from_obj({"half_width": 2.576}, "x").resolve(10, 0.99) == pytest.approx(1.0)
        assert SourceSpec.from_obj(2.5, "x").resolve(0, 0.99) == 2.5
        assert SourceSpec.from_obj(None, "x").resolve(5, 0.99) == 0.0

    @pytest.mark.parametrize("obj,msg", [
        ({"variance": -1}, "negative|>= 0"),
        ({"me_percent": 5, "distribution": "cauchy"}, "cauchy"),
        ({"variance": 1, "sigma": 1}, "one of"),
        ({"spread": 1}, "unknown keys"),
        ({"variance": "big"}, "number"),
    ])
    def test_errors(self, obj, msg):
        with pytest.raises(ScenarioError, match=msg):
            SourceSpec.from_obj(obj, "demand.default")


class TestLoad:
    def test_three_node_sources(self, three_node, three_scenario):
        st = solve_operating_point(three_node)
        spec = three_scenario.uncertainty(three_node, st)
        assert spec.demand_var[0] == pytest.approx(60.28, abs=0.01)
        assert spec.roughness_var[0] == pytest.approx(60.28, abs=0.01)
        (res, tank) = three_scenario.measurements(three_node, st)
        assert (res.state, res.variance) == ("h:R1", 0.0)
        assert tank.state == "h:T3" and tank.value == 908.0
        assert tank.variance == pytest.approx(0.0241, abs=1e-4)
        assert three_scenario.is_sufficient(three_node)

    def test_overdetermined(self, three_node, overdetermined):
        assert not overdetermined.is_sufficient(three_node)
        st = solve_operating_point(three_node)
        extra = overdetermined.measurements(three_node, st)[-1]
        assert (extra.state, extra.value, extra.variance) == ("h:J2", 910.0, 0.0241)

    def test_unknown_measured_id(self, three_node):
        with pytest.raises(ScenarioError, match="J9"):
            scenario_from_dict({"measurements": [{"id": "J9", "kind": "head"}]}, three_node)

    def test_unknown_keys(self):
        with pytest.raises(ScenarioError, match="unknown scenario keys"):
            scenario_from_dict({"demnd": {}})

    def test_bad_json(self):
        with pytest.raises(ScenarioError, match="line 1"):
            load_scenario("{")

    @pytest.mark.parametrize("weights", [{"mass": 0}, {"mass": -1}, {"bogus": 1}, {"rows": {"mass:J2": 0}}])
    def test_bad_weights(self, weights):
        with pytest.raises(ScenarioError):
            scenario_from_dict({"weights": weights})

    def test_weight_vector(self, three_node, overdetermined):
        from wdnpse.linearization import assemble_system

        sc = overdetermined.replace(weights={"measurement": 5.0}, row_weights={"mass:J2": 0.1})
        st = solve_operating_point(three_node)
        sys = assemble_system(three_node, st, sc.measurements(three_node, st))
        w = sc.weight_vector(sys)
        assert w.tolist() == [0.1, 1.0, 1.0, 5.0, 5.0, 5.0]
        assert sc.has_weights() and not overdetermined.has_weights()

    def test_per_junction_and_means(self, eight_node):
        sc = scenario_from_dict({
            "demand": {"default": {"me_percent": 10}, "per_junction": {"J3": {"variance": 1.0}},
                       "means": {"J4": [10, 20]}},
            "horizon": 2,
        }, eight_node)
        sched = sc.demand_schedule(eight_node, 2)
        assert sched.at(2)[eight_node.head_index("J4")] == 20.0
        st = solve_operating_point(eight_node, sched.at(1))
        spec = sc.uncertainty(eight_node, st)
        assert spec.demand_var[eight_node.head_index("J3")] == 1.0

    def test_round_trip(self, three_node, valve_net, overdetermined, valve_scenario):
        for net, sc in ((three_node, overdetermined), (valve_net, valve_scenario)):
            back = scenario_from_dict(json.loads(json.dumps(scenario_to_dict(sc))), net)
            assert scenario_to_dict(back) == scenario_to_dict(sc)
            assert back.valve_schedule == sc.valve_schedule

    def test_digest_stable(self, three_scenario):
        assert three_scenario.digest() == three_scenario.digest() and len(three_scenario.digest()) == 64

    def test_valve_schedule_unknown_valve(self, valve_net):
        with pytest.raises(ScenarioError, match="XV"):
            scenario_from_dict({"valve_schedule": [{"step": 1, "valve_id": "XV", "status": "OPEN"}]}, valve_net)
