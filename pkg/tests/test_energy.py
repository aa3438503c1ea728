import math

import numpy as np
import pytest

from airgap.energy import (EnergyCoefficients, EnergyState, accumulate,
                           instantaneous_power)


def independent_power(v_xy, a_xy, v_z, a_z, c):
    """Term-by-term re-implementation used as the oracle."""
    b = c.beta
    v = math.sqrt(v_xy[0] ** 2 + v_xy[1] ** 2)
    a = math.sqrt(a_xy[0] ** 2 + a_xy[1] ** 2)
    terms = [
        b[0] * v,
        b[1] * a,
        b[2] * v * a,
        b[3] * abs(v_z),
        b[4] * abs(a_z),
        b[5] * abs(v_z) * abs(a_z),
        b[6] * c.mass,
        b[7] * float(np.dot(v_xy, c.wind)),
        b[8],
    ]
    return max(sum(terms), 0.0)


class TestInstantaneousPower:
    def test_hover_power(self):
        c = EnergyCoefficients()
        p = instantaneous_power((0, 0), (0, 0), 0.0, 0.0, c)
        assert p == pytest.approx(c.beta[6] * c.mass + c.beta[8])
        assert p == pytest.approx(82.0)

    def test_planar_flight_kills_vertical_terms(self):
        base = EnergyCoefficients()
        huge_vertical = EnergyCoefficients(
            beta=base.beta[:3] + (999.0, 888.0, 777.0) + base.beta[6:])
        args = ((2.0, -1.0), (0.5, 0.25), 0.0, 0.0)
        assert instantaneous_power(*args, base) == \
            instantaneous_power(*args, huge_vertical)

    def test_default_point_matches_oracle(self):
        c = EnergyCoefficients()
        got = instantaneous_power((2.0, 0.0), (1.0, 0.0), 0.0, 0.0, c)
        assert got == pytest.approx(independent_power((2, 0), (1, 0), 0, 0, c),
                                    rel=1e-12)

    def test_random_inputs_match_oracle(self):
        rng = np.random.default_rng(99)
        for _ in range(10_000):
            c = EnergyCoefficients(
                beta=tuple(rng.uniform(0, 10, 9)),
                mass=float(rng.uniform(0.1, 5)),
                wind=(float(rng.uniform(-5, 5)), float(rng.uniform(-5, 5))),
                nominal_voltage=float(rng.uniform(7, 25)),
            )
            v_xy = rng.uniform(-6, 6, 2)
            a_xy = rng.uniform(-6, 6, 2)
            v_z, a_z = float(rng.uniform(-3, 3)), float(rng.uniform(-3, 3))
            got = instantaneous_power(v_xy, a_xy, v_z, a_z, c)
            want = independent_power(v_xy, a_xy, v_z, a_z, c)
            assert abs(got - want) <= 1e-12 * max(1.0, abs(want))

    def test_adverse_wind_clamps_to_zero(self):
        c = EnergyCoefficients(beta=(1, 0, 0, 0, 0, 0, 0, 50.0, 0.0),
                               wind=(-10.0, 0.0))
        assert instantaneous_power((5.0, 0.0), (0, 0), 0, 0, c) == 0.0


class TestAccumulate:
    def test_arithmetic(self):
        c = EnergyCoefficients()
        s = accumulate(EnergyState(), 100.0, 10.0, c)
        assert s.energy_joules == pytest.approx(1000.0)
        assert s.charge_coulombs == pytest.approx(1000.0 / 11.1)
        assert s.charge_coulombs == pytest.approx(90.09009, abs=1e-4)

    def test_partition_invariance(self):
        c = EnergyCoefficients()
        lump = accumulate(EnergyState(), 73.0, 2.0, c)
        split = EnergyState()
        for _ in range(40):
            split = accumulate(split, 73.0, 0.05, c)
        assert split.energy_joules == pytest.approx(lump.energy_joules, abs=1e-9)
        assert split.charge_coulombs == pytest.approx(lump.charge_coulombs, abs=1e-9)

    def test_exhaustion_threshold(self):
        c = EnergyCoefficients(nominal_voltage=1.0)
        s = EnergyState(charge_coulombs=49.0, capacity=50.0)
        s = accumulate(s, 2.0, 1.0, c)  # +2 C
        assert s.exhausted

    def test_unlimited_battery_never_exhausts(self):
        c = EnergyCoefficients()
        s = EnergyState()
        for _ in range(100):
            s = accumulate(s, 500.0, 1.0, c)
        assert not s.exhausted

    def test_monotonicity(self):
        rng = np.random.default_rng(5)
        c = EnergyCoefficients()
        s = EnergyState()
        last_e, last_q = 0.0, 0.0
        for _ in range(500):
            s = accumulate(s, float(rng.uniform(0, 200)), float(rng.uniform(0.001, 1)), c)
            assert s.energy_joules >= last_e
            assert s.charge_coulombs >= last_q
            last_e, last_q = s.energy_joules, s.charge_coulombs

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            accumulate(EnergyState(), 10.0, 0.0, EnergyCoefficients())
        with pytest.raises(ValueError):
            accumulate(EnergyState(), -1.0, 0.1, EnergyCoefficients())


def test_planar_world_total_energy_independent_of_vertical_betas():
    rng = np.random.default_rng(8)
    base = EnergyCoefficients()
    alt = EnergyCoefficients(beta=base.beta[:3] + (123.0, 45.0, 6.7) + base.beta[6:])
    s_base, s_alt = EnergyState(), EnergyState()
    for _ in range(200):
        v = rng.uniform(-5, 5, 2)
        a = rng.uniform(-5, 5, 2)
        dt = float(rng.uniform(0.01, 0.05))
        s_base = accumulate(s_base, instantaneous_power(v, a, 0, 0, base), dt, base)
        s_alt = accumulate(s_alt, instantaneous_power(v, a, 0, 0, alt), dt, alt)
    assert s_base.energy_joules == pytest.approx(s_alt.energy_joules)


def test_coefficient_validation():
    with pytest.raises(ValueError):
        EnergyCoefficients(beta=(1.0, 2.0))
    with pytest.raises(ValueError):
        EnergyCoefficients(nominal_voltage=0.0)
