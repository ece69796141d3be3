"""Small two-bus instances with known optima, used as regression fixtures.

All of them share one topology: buses 0 and 1 joined by a single line, a
generator with output in [2, 4] at each bus, zero generation cost, and a
battery at bus 1. They are meant to be solved without the angle equations.
"""
from __future__ import annotations

import math

import numpy as np

from .grid import BatteryConfig, Bus, DemandScenario, Generator, Line, Network
from .opf import ModelVariant, Variant


def two_bus(config: BatteryConfig, capacity: float = 4.0, battery_bus: int = 1,
            name: str = "two_bus") -> Network:
    buses = [Bus(0, battery_bus == 0, label=1), Bus(1, battery_bus == 1, label=2)]
    gens = [Generator(0, 2.0, 4.0, 0.0), Generator(1, 2.0, 4.0, 0.0)]
    lines = [Line(0, 1, 1.0, capacity)]
    return Network(buses, gens, lines, config, 100.0, name)


def no_ohm(tag: Variant) -> ModelVariant:
    return ModelVariant(tag, include_ohms_law=False)


def min_rate_counterexample(tau: float = 0.5) -> tuple[Network, DemandScenario]:
    """Nonzero minimum charge/discharge rates break LP tightness (optimum 2+2*tau vs 2+1.4*tau)."""
    cfg = BatteryConfig(e_min=0, e_max=4, e0=0, eta_c=0.5, eta_d=0.5,
                        ec_min=tau, ec_max=2, ed_min=tau, ed_max=2)
    return two_bus(cfg, name="min_rate"), DemandScenario(np.array([[2.0, 4.0], [6.0, 4.0]]))


def underpenalized_counterexample() -> tuple[Network, DemandScenario]:
    """Round-trip efficiency 1/3 with a small penalty: MIP 4+tau, LP 3.5+2*tau."""
    eta = 1.0 / math.sqrt(3.0)
    cfg = BatteryConfig(e_min=0, e_max=6, e0=6, eta_c=eta, eta_d=eta,
                        ec_min=0, ec_max=1, ed_min=0, ed_max=1)
    return two_bus(cfg, name="underpenalized"), DemandScenario(np.array([[1.0, 2.0], [4.0, 8.0]]))


def always_discharge_case() -> tuple[Network, DemandScenario]:
    """Lossless full battery under flat demand 5: any penalty below 1 keeps it discharging."""
    cfg = BatteryConfig(e_min=0, e_max=20, e0=20, eta_c=1, eta_d=1,
                        ec_min=0, ec_max=2, ed_min=0, ed_max=2)
    return two_bus(cfg, name="always_discharge"), DemandScenario(np.full((2, 2), 5.0))


def discharge_with_excess_case() -> tuple[Network, DemandScenario]:
    """Very lossy battery that discharges into a surplus to make room for later charging."""
    cfg = BatteryConfig(e_min=0, e_max=4, e0=4, eta_c=0.1, eta_d=0.1,
                        ec_min=0, ec_max=2, ed_min=0, ed_max=2)
    demand = np.array([[2.0, 2.0], [1.0, 1.0], [2.0, 1.0]])
    return two_bus(cfg, name="discharge_with_excess"), DemandScenario(demand)


def exactness_case() -> tuple[Network, DemandScenario]:
    """Original optimum 4.2 with a runner-up pattern at 6.0."""
    cfg = BatteryConfig(e_min=0, e_max=4, e0=2, eta_c=0.9, eta_d=0.9,
                        ec_min=0, ec_max=2, ed_min=0, ed_max=2)
    return two_bus(cfg, name="exactness"), DemandScenario(np.array([[10.0, 4.0], [4.0, 4.0]]))


def gap_sweep_case(eta: float) -> tuple[Network, DemandScenario]:
    """Tight line, empty battery; used to trace cost against a uniform penalty."""
    cfg = BatteryConfig(e_min=0, e_max=6, e0=0, eta_c=eta, eta_d=eta,
                        ec_min=0, ec_max=1, ed_min=0, ed_max=1)
    return two_bus(cfg, capacity=1.0, name="gap_sweep"), DemandScenario(np.array([[5.0, 1.0], [8.0, 4.0]]))


SWEEP_ETAS = (1 / math.sqrt(2.1), 1 / math.sqrt(2.0), 1 / math.sqrt(1.9))


def random_instance(rng: np.random.Generator, n_buses: tuple[int, int] = (2, 6),
                    horizon: tuple[int, int] = (1, 6), round_trip: tuple[float, float] = (0.7, 1.0),
                    ohms_law: bool = False) -> tuple[Network, DemandScenario]:
    """Random connected network with zero minimum rates and a few batteries.

    Capacities and demands are O(1) so that shedding, surplus and storage all
    show up with reasonable probability.
    """
    N = int(rng.integers(n_buses[0], n_buses[1] + 1))
    T = int(rng.integers(horizon[0], horizon[1] + 1))
    eta_rt = float(rng.uniform(*round_trip))
    # split the round trip unevenly between charge and discharge
    share = float(rng.uniform(0.3, 0.7))
    eta_c = eta_rt ** share
    eta_d = eta_rt / eta_c
    e_max = float(rng.uniform(0.5, 4.0))
    cfg = BatteryConfig(e_min=0.0, e_max=e_max, e0=float(rng.uniform(0, e_max)),
                        eta_c=eta_c, eta_d=eta_d, ec_min=0.0, ec_max=float(rng.uniform(0.3, 2.0)),
                        ed_min=0.0, ed_max=float(rng.uniform(0.3, 2.0)))
    edges = set()
    for i in range(1, N):
        j = int(rng.integers(0, i))
        edges.add((j, i))
    for _ in range(int(rng.integers(0, N))):
        a, b = sorted(rng.choice(N, size=2, replace=False).tolist())
        edges.add((a, b))
    lines = [Line(a, b, float(rng.uniform(0.5, 5.0)), float(rng.uniform(0.5, 3.0))) for a, b in sorted(edges)]
    gens = []
    for i in range(N):
        if rng.random() < 0.6:
            gmax = float(rng.uniform(1.0, 5.0))
            gens.append(Generator(i, float(rng.uniform(0, 0.5) * gmax), gmax,
                                  float(rng.choice([0.0, 0.0, rng.uniform(0, 0.5)]))))
    n_bat = int(rng.integers(1, min(N, 3) + 1))
    bat = set(rng.choice(N, size=n_bat, replace=False).tolist())
    buses = [Bus(i, i in bat, label=i + 1) for i in range(N)]
    net = Network(buses, gens, lines, cfg, 100.0, "random")
    demand = rng.uniform(0.0, 3.0, size=(T, N)) * (rng.random((T, N)) < 0.8)
    return net, DemandScenario(demand)


def four_bus_ring() -> tuple[Network, DemandScenario]:
    """Ring of four buses with generation at 0 and 2 and most load at 1.

    One cut line sheds a unit at bus 1 in the peak period unless a battery
    sits there: the siting problem with b = k = 1 has value 0 at bus 1 and 1
    elsewhere.
    """
    cfg = BatteryConfig(e_min=0, e_max=2, e0=1, eta_c=0.9, eta_d=0.9,
                        ec_min=0, ec_max=1, ed_min=0, ed_max=1)
    buses = [Bus(i, False, label=i + 1) for i in range(4)]
    gens = [Generator(0, 0.0, 3.0, 0.0), Generator(2, 0.0, 2.0, 0.0)]
    lines = [Line(0, 1, 1.0, 2.0), Line(1, 2, 1.0, 2.0), Line(2, 3, 1.0, 1.5), Line(3, 0, 1.0, 1.5)]
    demand = np.array([[0.0, 1.5, 0.0, 0.5], [0.0, 3.0, 0.0, 0.5], [0.0, 1.0, 0.0, 1.0]])
    return Network(buses, gens, lines, cfg, 100.0, "four_bus_ring"), DemandScenario(demand)


FIXTURES = {
    "min_rate": min_rate_counterexample,
    "underpenalized": underpenalized_counterexample,
    "always_discharge": always_discharge_case,
    "discharge_with_excess": discharge_with_excess_case,
    "exactness": exactness_case,
    "four_bus_ring": four_bus_ring,
}
