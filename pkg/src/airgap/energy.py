"""Instantaneous power model, energy integration, and coulomb counting.

Power is a nine-coefficient polynomial in horizontal/vertical speed and
acceleration magnitudes plus mass, a wind-alignment term, and a constant:

    P = b1*|v_xy| + b2*|a_xy| + b3*|v_xy|*|a_xy|
      + b4*|v_z|  + b5*|a_z|  + b6*|v_z|*|a_z|
      + b7*m + b8*(v_xy . w_xy) + b9

clamped at zero (batteries here never recharge). The default coefficients
are artifact values chosen to give a hover draw of ~82 W for a small
quadrotor; they are not calibrated to any specific airframe and are fully
configurable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

DEFAULT_BETA = (5.0, 1.0, 0.5, 4.0, 1.0, 0.5, 2.0, 1.0, 80.0)


@dataclass(frozen=True)
class EnergyCoefficients:
    beta: tuple[float, ...] = DEFAULT_BETA
    mass: float = 1.0                      # kg
    wind: tuple[float, float] = (0.0, 0.0)  # ambient wind, m/s
    nominal_voltage: float = 11.1          # V

    def __post_init__(self):
        if len(self.beta) != 9:
            raise ValueError("beta must have 9 coefficients")
        if self.nominal_voltage <= 0:
            raise ValueError("nominal_voltage must be positive")
        if self.mass < 0:
            raise ValueError("mass must be nonnegative")

    @classmethod
    def from_dict(cls, raw: dict | None) -> "EnergyCoefficients":
        raw = raw or {}
        known = {"beta", "mass", "wind", "nominal_voltage"}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown energy keys: {sorted(unknown)}")
        kwargs = {}
        if "beta" in raw:
            kwargs["beta"] = tuple(float(b) for b in raw["beta"])
        if "mass" in raw:
            kwargs["mass"] = float(raw["mass"])
        if "wind" in raw:
            kwargs["wind"] = (float(raw["wind"][0]), float(raw["wind"][1]))
        if "nominal_voltage" in raw:
            kwargs["nominal_voltage"] = float(raw["nominal_voltage"])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {"beta": list(self.beta), "mass": self.mass,
                "wind": list(self.wind), "nominal_voltage": self.nominal_voltage}


@dataclass(frozen=True)
class EnergyState:
    """Per-episode energy ledger; charge is the integrated coulomb count."""

    energy_joules: float = 0.0
    charge_coulombs: float = 0.0
    capacity: float = 0.0  # coulombs; 0 means unlimited
    exhausted: bool = False


def instantaneous_power(v_xy, a_xy, v_z: float, a_z: float,
                        coeffs: EnergyCoefficients | None = None) -> float:
    """Evaluate the power polynomial for one motion sample, in watts."""
    c = coeffs or EnergyCoefficients()
    b = c.beta
    v = math.hypot(v_xy[0], v_xy[1])
    a = math.hypot(a_xy[0], a_xy[1])
    vz, az = abs(v_z), abs(a_z)
    p = (b[0] * v + b[1] * a + b[2] * v * a
         + b[3] * vz + b[4] * az + b[5] * vz * az
         + b[6] * c.mass
         + b[7] * (v_xy[0] * c.wind[0] + v_xy[1] * c.wind[1])
         + b[8])
    return p if p > 0.0 else 0.0


def accumulate(state: EnergyState, power: float, dt: float,
               coeffs: EnergyCoefficients | None = None) -> EnergyState:
    """Integrate one piecewise-constant power interval into the ledger."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if power < 0:
        raise ValueError("power must be nonnegative")
    c = coeffs or EnergyCoefficients()
    energy = state.energy_joules + power * dt
    charge = state.charge_coulombs + (power / c.nominal_voltage) * dt
    exhausted = state.capacity > 0 and charge >= state.capacity
    return replace(state, energy_joules=energy, charge_coulombs=charge,
                   exhausted=exhausted)
