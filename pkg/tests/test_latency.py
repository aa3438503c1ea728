import json
import math

import numpy as np
import pytest

from airgap.dynamics import ActionSpace, WorldState, apply_discrete_action
from airgap.latency import (ConstantDist, EmpiricalDist, GaussianDist,
                            LatencyModel, SafetyParams, load_trace,
                            latency_sweep, max_safe_velocity, parse_latency_spec,
                            profile_inference, sample_latency, save_trace,
                            scale_action_space)
from airgap.nn import PolicyTemplate, build_policy


def rng(seed=0):
    return np.random.default_rng(seed)


class TestSampling:
    def test_constant_model(self):
        model = LatencyModel.constant(0.150)
        for _ in range(100):
            s = sample_latency(model, rng())
            assert s.t2 == 0.150 and s.t1 == 0.0 and s.t3 == 0.5

    def test_empirical_frequencies(self):
        model = LatencyModel(ConstantDist(0.0),
                             EmpiricalDist((0.3, 0.4, 0.5)), 0.5)
        r = rng(42)
        draws = [sample_latency(model, r).t2 for _ in range(10_000)]
        for value in (0.3, 0.4, 0.5):
            freq = sum(d == value for d in draws) / len(draws)
            assert abs(freq - 1 / 3) < 0.02

    def test_zero_latency_degeneracy(self):
        model = LatencyModel.zero()
        s = sample_latency(model, rng())
        assert s.t1 == 0.0 and s.t2 == 0.0 and s.stale_interval == 0.0

    def test_gaussian_truncated_nonnegative(self):
        model = LatencyModel(ConstantDist(0.0), GaussianDist(0.01, 0.05), 0.5)
        r = rng(7)
        draws = [sample_latency(model, r).t2 for _ in range(2000)]
        assert min(draws) >= 0.0
        assert any(d > 0.01 for d in draws)

    def test_deterministic_under_fixed_seed(self):
        model = LatencyModel(EmpiricalDist((0.1, 0.2, 0.3)),
                             GaussianDist(0.05, 0.01), 0.5)
        a = [sample_latency(model, rng(3)).t2 for _ in range(50)]
        b = [sample_latency(model, rng(3)).t2 for _ in range(50)]
        assert a == b

    def test_empirical_rejects_bad_samples(self):
        with pytest.raises(ValueError):
            EmpiricalDist(())
        with pytest.raises(ValueError):
            EmpiricalDist((0.1, -0.2))
        with pytest.raises(ValueError):
            EmpiricalDist((0.1, math.inf))


class TestSafeVelocity:
    def test_zero_latency_closed_form(self):
        v = max_safe_velocity(0.0, SafetyParams(a_brake=5.0, d_sense=10.0))
        assert v == pytest.approx(math.sqrt(2 * 5 * 10))
        assert v == pytest.approx(10.0)

    def test_quadratic_root_oracle(self):
        # independent oracle: numeric root of v*L + v^2/(2a) - d = 0
        lat, a, d = 0.4, 5.0, 10.0
        roots = np.roots([1.0 / (2 * a), lat, -d])
        expected = float(max(roots))
        got = max_safe_velocity(lat, SafetyParams(a, d))
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(8.198, abs=1e-3)

    def test_vanishing_sensing_distance(self):
        v = max_safe_velocity(0.5, SafetyParams(a_brake=5.0, d_sense=1e-9))
        assert v == pytest.approx(0.0, abs=1e-6)

    def test_monotonicity_properties(self):
        r = rng(11)
        for _ in range(1000):
            a = float(r.uniform(0.5, 20))
            d = float(r.uniform(0.5, 50))
            l1 = float(r.uniform(0, 2))
            l2 = l1 + float(r.uniform(0.01, 2))
            s = SafetyParams(a, d)
            assert max_safe_velocity(l2, s) < max_safe_velocity(l1, s)
            s_bigger = SafetyParams(a, d + float(r.uniform(0.1, 10)))
            assert max_safe_velocity(l1, s_bigger) > max_safe_velocity(l1, s)

    def test_stopping_distance_is_exact(self):
        r = rng(13)
        for _ in range(200):
            s = SafetyParams(float(r.uniform(1, 10)), float(r.uniform(1, 30)))
            lat = float(r.uniform(0, 1.5))
            v = max_safe_velocity(lat, s)
            assert v * lat + v * v / (2 * s.a_brake) == pytest.approx(s.d_sense)


class TestScaleActionSpace:
    def test_identity_at_current_max(self):
        space = ActionSpace()
        scaled = scale_action_space(space, 5.0)
        assert scaled == space

    def test_endpoint(self):
        scaled = scale_action_space(ActionSpace(), 2.5)
        assert max(scaled.forward_speeds) == pytest.approx(2.5)
        assert min(scaled.forward_speeds) == pytest.approx(1.0)
        assert max(scaled.backward_speeds) == pytest.approx(2.5)

    def test_all_commands_capped(self):
        scaled = scale_action_space(ActionSpace(), 2.0)
        state = WorldState((0, 0, 2.5), 0.7, (0, 0, 0))
        for action_id in range(25):
            cmd = apply_discrete_action(action_id, state, scaled)
            assert math.hypot(*cmd.target_velocity) <= 2.0 + 1e-12

    def test_yaw_rates_untouched(self):
        scaled = scale_action_space(ActionSpace(), 1.7)
        assert scaled.yaw_right_dps == ActionSpace().yaw_right_dps
        assert scaled.yaw_left_dps == ActionSpace().yaw_left_dps

    def test_cap_never_grows_the_space(self):
        scaled = scale_action_space(ActionSpace(), 50.0)
        assert scaled == ActionSpace()

    def test_idempotent(self):
        once = scale_action_space(ActionSpace(), 2.2)
        twice = scale_action_space(once, 2.2)
        assert once == twice

    def test_sub_1_cap(self):
        scaled = scale_action_space(ActionSpace(), 0.5)
        assert max(scaled.forward_speeds) == pytest.approx(0.5)
        assert min(scaled.forward_speeds) == pytest.approx(0.5)


class TestProfiling:
    def test_in_process_profile(self):
        net = build_policy(PolicyTemplate(1, 4, 16), init_seed=0)
        model = profile_inference(net, 50, "in_process")
        samples = model.t2.samples
        assert len(samples) == 50
        assert all(s > 0 for s in samples)
        assert np.mean(samples) >= min(samples)
        assert isinstance(model.t1, ConstantDist) and model.t1.value == 0.0

    def test_deeper_template_slower(self):
        shallow = build_policy(PolicyTemplate(2, 32, 32), init_seed=0)
        deep = build_policy(PolicyTemplate(9, 32, 32), init_seed=0)
        m_shallow = profile_inference(shallow, 150, "in_process")
        m_deep = profile_inference(deep, 150, "in_process")
        assert np.mean(m_deep.t2.samples) >= np.mean(m_shallow.t2.samples)

    def test_sweep_rows(self, tmp_path):
        from airgap.latency import write_sweep_csv
        rows = latency_sweep([(2, 32), (5, 32)], n_samples=30)
        assert len(rows) == 2
        assert rows[1].parameter_count > rows[0].parameter_count
        path = tmp_path / "sweep.csv"
        write_sweep_csv(rows, path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 1 + 2

    def test_bad_transport(self):
        net = build_policy(PolicyTemplate(1, 4, 16))
        with pytest.raises(ValueError):
            profile_inference(net, 5, "carrier_pigeon")


class TestTraces:
    def test_roundtrip(self, tmp_path):
        model = LatencyModel(EmpiricalDist((0.001, 0.002)),
                             EmpiricalDist((0.3, 0.4, 0.5)), 0.5)
        path = tmp_path / "latency.json"
        save_trace(model, path)
        doc = json.loads(path.read_text())
        assert doc["kind"] == "empirical" and doc["unit"] == "seconds"
        assert doc["t2_samples"] == [0.3, 0.4, 0.5]
        loaded = load_trace(path)
        assert loaded.t2.samples == (0.3, 0.4, 0.5)
        assert loaded.t3 == 0.5

    def test_parse_specs(self, tmp_path):
        m = parse_latency_spec("constant:396")
        assert m.t2.value == pytest.approx(0.396)
        m = parse_latency_spec("gaussian:100,20")
        assert m.t2.mu == pytest.approx(0.1) and m.t2.sigma == pytest.approx(0.02)
        model = LatencyModel(ConstantDist(0.0), EmpiricalDist((0.1, 0.2)), 0.5)
        path = tmp_path / "t.json"
        save_trace(model, path)
        m = parse_latency_spec(f"trace:{path}")
        assert m.t2.samples == (0.1, 0.2)
        with pytest.raises(ValueError):
            parse_latency_spec("nonsense")
        with pytest.raises(ValueError):
            parse_latency_spec("warp:9")

    def test_response_latency_upper_bound(self):
        model = LatencyModel(EmpiricalDist((0.001, 0.004)),
                             EmpiricalDist((0.1, 0.39, 0.2)), 0.5)
        assert model.response_latency() == pytest.approx(0.004 + 0.39 + 0.5)

    def test_model_dict_roundtrip(self):
        model = LatencyModel(GaussianDist(0.01, 0.002),
                             EmpiricalDist((0.3, 0.4)), 0.7)
        again = LatencyModel.from_dict(model.to_dict())
        assert again == model
