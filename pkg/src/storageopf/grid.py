"""Network data model, MATPOWER subset reader/writer and demand scenarios."""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Iterable, Sequence

import numpy as np


class MatpowerParseError(ValueError):
    """Malformed case text. ``lineno`` is 1-based when known."""

    def __init__(self, msg: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {msg}" if lineno is not None else msg)


class NetworkDataError(ValueError):
    """Case text parsed but the values are physically unusable."""


@dataclass(frozen=True)
class Bus:
    id: int
    has_battery: bool = False
    demand: float = 0.0  # nominal demand, p.u.
    label: int | None = None  # bus number in the source case

    @property
    def name(self) -> int:
        return self.label if self.label is not None else self.id + 1


@dataclass(frozen=True)
class Generator:
    bus: int
    g_min: float
    g_max: float
    cost_coeff: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.g_min <= self.g_max + 1e-12):
            raise NetworkDataError(f"generator at bus {self.bus}: need 0 <= g_min <= g_max, "
                                   f"got {self.g_min}, {self.g_max}")


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    susceptance: float
    capacity: float

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise NetworkDataError(f"line {self.from_bus}-{self.to_bus} is a self loop")
        if self.capacity < 0:
            raise NetworkDataError(f"line {self.from_bus}-{self.to_bus} has negative capacity")


@dataclass(frozen=True)
class BatteryConfig:
    """Shared battery parameters. Losses on discharge enter as ``1/eta_d``."""

    e_min: float = 0.0
    e_max: float = 1.0
    e0: float = 0.0
    eta_c: float = 0.95
    eta_d: float = 0.95
    ec_min: float = 0.0
    ec_max: float = 0.95
    ed_min: float = 0.0
    ed_max: float = 0.95

    def __post_init__(self):
        ok = (0.0 <= self.e_min <= self.e_max and 0.0 <= self.ec_min <= self.ec_max
              and 0.0 <= self.ed_min <= self.ed_max)
        if not ok:
            raise NetworkDataError(f"inconsistent battery bounds: {self}")
        if not (self.e_min - 1e-12 <= self.e0 <= self.e_max + 1e-12):
            raise NetworkDataError(f"initial state {self.e0} outside [{self.e_min}, {self.e_max}]")
        if not (0.0 < self.eta_c <= 1.0 and 0.0 < self.eta_d <= 1.0):
            raise NetworkDataError("efficiencies must lie in (0, 1]")

    @property
    def round_trip(self) -> float:
        return self.eta_c * self.eta_d

    @classmethod
    def medium_network(cls, eta: float = 0.95, e0: float = 0.0) -> "BatteryConfig":
        """Reference parameters for 73-162 bus systems, same efficiency both ways."""
        return cls(e_min=0.0, e_max=1.0, e0=e0, eta_c=eta, eta_d=eta,
                   ec_min=0.0, ec_max=0.95, ed_min=0.0, ed_max=0.95)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def battery_scale_factor(n_buses: int) -> float:
    if n_buses < 1:
        raise ValueError("n_buses must be >= 1")
    if n_buses < 73:
        return 0.2
    if n_buses <= 162:
        return 1.0
    if n_buses <= 300:
        return 2.5
    return 5.0


def scale_battery(config: BatteryConfig, n_buses: int) -> BatteryConfig:
    """Size the storage limit and rate caps to the network."""
    f = battery_scale_factor(n_buses)
    if f == 1.0:
        return config
    e_max = config.e_max * f
    return replace(config, e_max=e_max, ec_max=config.ec_max * f, ed_max=config.ed_max * f,
                   e0=min(config.e0, e_max))


@dataclass(frozen=True)
class DemandScenario:
    values: np.ndarray  # T x N, p.u.

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("demand must be a (T, N) matrix")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("demand entries must be finite and >= 0")
        object.__setattr__(self, "values", v)

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    @property
    def n_buses(self) -> int:
        return self.values.shape[1]

    def to_csv(self, labels: Sequence[int] | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "bus", "demand"])
        for t in range(self.horizon):
            for i in range(self.n_buses):
                w.writerow([t + 1, labels[i] if labels is not None else i + 1, repr(float(self.values[t, i]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, labels: Sequence[int] | None = None) -> "DemandScenario":
        reader = csv.DictReader(io.StringIO(text))
        if not {"t", "bus", "demand"} <= set(reader.fieldnames or ()):
            raise ValueError("scenario file needs columns t, bus, demand")
        rows = list(reader)
        if not rows:
            raise ValueError("empty scenario file")
        index = {lab: k for k, lab in enumerate(labels)} if labels is not None else None
        T = max(int(r["t"]) for r in rows)
        buses = [int(r["bus"]) for r in rows]
        N = len(labels) if labels is not None else max(buses)
        v = np.zeros((T, N))
        for k, r in enumerate(rows, 2):
            b = int(r["bus"])
            if index is not None and b not in index or index is None and b < 1:
                raise ValueError(f"row {k}: unknown bus {b}")
            i = index[b] if index is not None else b - 1
            if int(r["t"]) < 1:
                raise ValueError(f"row {k}: periods start at 1")
            v[int(r["t"]) - 1, i] = float(r["demand"])
        return cls(v)


@dataclass
class Network:
    buses: list[Bus]
    generators: list[Generator]
    lines: list[Line]
    battery_config: BatteryConfig = field(default_factory=BatteryConfig)
    base_mva: float = 100.0
    name: str = "network"

    def __post_init__(self):
        n = len(self.buses)
        for k, b in enumerate(self.buses):
            if b.id != k:
                raise NetworkDataError("bus ids must be contiguous 0..N-1 in list order")
        for g in self.generators:
            if not 0 <= g.bus < n:
                raise NetworkDataError(f"generator references unknown bus {g.bus}")
        for ln in self.lines:
            if not (0 <= ln.from_bus < n and 0 <= ln.to_bus < n):
                raise NetworkDataError(f"line {ln.from_bus}-{ln.to_bus} references an unknown bus")

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def battery_buses(self) -> list[int]:
        return [b.id for b in self.buses if b.has_battery]

    @property
    def nominal_demand(self) -> np.ndarray:
        return np.array([b.demand for b in self.buses])

    @property
    def labels(self) -> list[int]:
        return [b.name for b in self.buses]

    def g_min_by_bus(self) -> np.ndarray:
        out = np.zeros(self.n_buses)
        for g in self.generators:
            out[g.bus] += g.g_min
        return out

    def g_max_by_bus(self) -> np.ndarray:
        out = np.zeros(self.n_buses)
        for g in self.generators:
            out[g.bus] += g.g_max
        return out

    def out_lines(self, i: int) -> list[int]:
        return [k for k, ln in enumerate(self.lines) if ln.from_bus == i]

    def in_lines(self, i: int) -> list[int]:
        return [k for k, ln in enumerate(self.lines) if ln.to_bus == i]

    def incidence(self) -> np.ndarray:
        """Bus x line matrix: +1 where the line leaves the bus, -1 where it enters."""
        M = np.zeros((self.n_buses, self.n_lines))
        for k, ln in enumerate(self.lines):
            M[ln.from_bus, k] = 1.0
            M[ln.to_bus, k] = -1.0
        return M

    def components(self, lines: Iterable[int] | None = None) -> list[list[int]]:
        """Connected components (sorted bus lists) using the given line subset."""
        parent = list(range(self.n_buses))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for k in (range(self.n_lines) if lines is None else lines):
            ln = self.lines[k]
            ra, rb = find(ln.from_bus), find(ln.to_bus)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        groups: dict[int, list[int]] = {}
        for i in range(self.n_buses):
            groups.setdefault(find(i), []).append(i)
        return sorted(groups.values(), key=lambda g: g[0])

    def with_batteries(self, buses: Iterable[int], config: BatteryConfig | None = None) -> "Network":
        chosen = set(int(b) for b in buses)
        bad = [b for b in chosen if not 0 <= b < self.n_buses]
        if bad:
            raise NetworkDataError(f"battery bus {bad[0]} does not exist")
        new_buses = [replace(b, has_battery=b.id in chosen) for b in self.buses]
        return Network(new_buses, list(self.generators), list(self.lines),
                       config or self.battery_config, self.base_mva, self.name)

    def with_config(self, config: BatteryConfig) -> "Network":
        return Network(list(self.buses), list(self.generators), list(self.lines),
                       config, self.base_mva, self.name)

    def same_data(self, other: "Network", tol: float = 1e-12) -> bool:
        if (self.n_buses, self.n_lines, len(self.generators)) != (other.n_buses, other.n_lines, len(other.generators)):
            return False
        if abs(self.base_mva - other.base_mva) > tol:
            return False
        for a, b in zip(self.buses, other.buses):
            if a.label != b.label or abs(a.demand - b.demand) > tol:
                return False
        for a, b in zip(self.generators, other.generators):
            if a.bus != b.bus or any(abs(x - y) > tol for x, y in
                                     [(a.g_min, b.g_min), (a.g_max, b.g_max), (a.cost_coeff, b.cost_coeff)]):
                return False
        for a, b in zip(self.lines, other.lines):
            if (a.from_bus, a.to_bus) != (b.from_bus, b.to_bus):
                return False
            if abs(a.susceptance - b.susceptance) > tol * max(1.0, abs(a.susceptance)):
                return False
            if abs(a.capacity - b.capacity) > tol * max(1.0, a.capacity):
                return False
        return True


def select_battery_buses(network: Network, b: int) -> list[int]:
    """The ``b`` buses with the largest installed generation (lowest index on ties)."""
    if b < 0:
        raise ValueError("battery count must be >= 0")
    if b > network.n_buses:
        raise ValueError(f"cannot place {b} batteries on {network.n_buses} buses")
    gmax = network.g_max_by_bus()
    order = sorted(range(network.n_buses), key=lambda i: (-gmax[i], i))
    return sorted(order[:b])


# -- MATPOWER --------------------------------------------------------------------

_SCALAR = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;")

# column positions (0-based) in the MATPOWER layout
BUS_I, PD = 0, 2
GEN_BUS, GEN_STATUS, PMAX, PMIN = 0, 7, 8, 9
F_BUS, T_BUS, BR_X, RATE_A, BR_STATUS = 0, 1, 3, 5, 10
_MIN_COLS = {"bus": 3, "gen": 10, "branch": 6}


def _strip_comment(line: str) -> str:
    k = line.find("%")
    return line if k < 0 else line[:k]


def _read_block(lines: list[str], name: str) -> list[tuple[int, list[float]]] | None:
    start = None
    for k, line in enumerate(lines):
        m = re.match(r"\s*mpc\.(\w+)\s*=\s*\[", _strip_comment(line))
        if m and m.group(1) == name:
            start = k
            break
    if start is None:
        return None
    rows: list[tuple[int, list[float]]] = []
    first = _strip_comment(lines[start])
    body = first[first.index("[") + 1:]
    k = start
    while True:
        text = body
        closing = text.find("]")
        if closing >= 0:
            text = text[:closing]
        for chunk in text.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                rows.append((k + 1, [float(tok) for tok in chunk.replace(",", " ").split()]))
            except ValueError:
                raise MatpowerParseError(f"non-numeric entry in mpc.{name}: {chunk!r}", k + 1) from None
        if closing >= 0:
            return rows
        k += 1
        if k >= len(lines):
            raise MatpowerParseError(f"mpc.{name} block is not closed", start + 1)
        body = _strip_comment(lines[k])


def parse_matpower(text: str, *, rescale_gen_min: bool = False, voll: float = 1000.0,
                   unlimited_factor: float = 100.0, battery_config: BatteryConfig | None = None,
                   name: str | None = None) -> Network:
    """Read the bus/gen/branch/gencost subset of a MATPOWER case.

    Powers are converted to per-unit. Bus numbers are remapped to 0-based
    indices in the order the bus rows appear. Linear generator costs are
    divided by ``voll`` (currency per MWh of unserved load) so that shedding
    one p.u. for one hour costs 1. Branches with ``RATE_A = 0`` get a cap of
    ``unlimited_factor`` times the largest nominal bus demand. Out-of-service
    generators and branches are dropped.
    """
    lines = text.splitlines()
    m = _SCALAR.search(text)
    if m is None:
        raise MatpowerParseError("missing mpc.baseMVA")
    base = float(m.group(1))
    if base <= 0:
        raise NetworkDataError("baseMVA must be positive")
    blocks = {}
    for key in ("bus", "gen", "branch"):
        rows = _read_block(lines, key)
        if rows is None:
            raise MatpowerParseError(f"missing mpc.{key} block")
        for lineno, row in rows:
            if len(row) < _MIN_COLS[key]:
                raise MatpowerParseError(
                    f"mpc.{key} row has {len(row)} columns, need at least {_MIN_COLS[key]}", lineno)
        blocks[key] = rows
    gencost = _read_block(lines, "gencost")

    index: dict[int, int] = {}
    buses = []
    for lineno, row in blocks["bus"]:
        label = int(row[BUS_I])
        if label in index:
            raise MatpowerParseError(f"duplicate bus number {label}", lineno)
        index[label] = len(buses)
        buses.append(Bus(id=len(buses), demand=max(row[PD], 0.0) / base, label=label))

    def bus_of(val: float, lineno: int) -> int:
        try:
            return index[int(val)]
        except KeyError:
            raise MatpowerParseError(f"unknown bus number {int(val)}", lineno) from None

    costs = []
    if gencost is not None:
        if len(gencost) < len(blocks["gen"]):
            raise MatpowerParseError("mpc.gencost has fewer rows than mpc.gen", gencost[-1][0] if gencost else None)
        for lineno, row in gencost[: len(blocks["gen"])]:
            costs.append(_linear_cost(row, lineno))
    gens = []
    for k, (lineno, row) in enumerate(blocks["gen"]):
        if len(row) > GEN_STATUS and row[GEN_STATUS] <= 0:
            continue
        gmax = row[PMAX] / base
        gmin = max(row[PMIN], 0.0) / base
        if rescale_gen_min:
            gmin = max(gmin, gmax / 3.0)
        if gmax < 0:
            raise NetworkDataError(f"line {lineno}: negative PMAX")
        gmin = min(gmin, gmax)
        cost = costs[k] / voll if costs else 0.0
        gens.append(Generator(bus_of(row[GEN_BUS], lineno), gmin, gmax, cost))

    dmax = max((b.demand for b in buses), default=0.0)
    cap_unlimited = unlimited_factor * dmax if dmax > 0 else unlimited_factor
    branch = []
    for lineno, row in blocks["branch"]:
        if len(row) > BR_STATUS and row[BR_STATUS] <= 0:
            continue
        if row[BR_X] == 0.0:
            raise NetworkDataError(f"line {lineno}: branch reactance BR_X is zero")
        f, t = bus_of(row[F_BUS], lineno), bus_of(row[T_BUS], lineno)
        if f == t:
            raise NetworkDataError(f"line {lineno}: branch connects bus {int(row[F_BUS])} to itself")
        cap = row[RATE_A] / base if row[RATE_A] > 0 else cap_unlimited
        branch.append(Line(f, t, 1.0 / row[BR_X], cap))
    return Network(buses, gens, branch, battery_config or BatteryConfig(), base, name or "case")


def _linear_cost(row: list[float], lineno: int) -> float:
    model = int(row[0])
    if len(row) < 4:
        raise MatpowerParseError("gencost row too short", lineno)
    ncost = int(row[3])
    coeffs = row[4:4 + (2 * ncost if model == 1 else ncost)]
    if model == 2:
        # polynomial, highest order first; keep the linear term
        if ncost >= 2 and len(coeffs) >= 2:
            return coeffs[-2]
        return 0.0
    if model == 1:
        # piecewise linear: slope of the first segment
        if len(coeffs) >= 4 and coeffs[2] != coeffs[0]:
            return (coeffs[3] - coeffs[1]) / (coeffs[2] - coeffs[0])
        return 0.0
    raise MatpowerParseError(f"unknown gencost model {model}", lineno)


def write_matpower(network: Network, voll: float = 1000.0) -> str:
    """Serialize the supported subset back to MATPOWER text."""
    base = network.base_mva
    out = ["function mpc = " + re.sub(r"\W", "_", network.name), "mpc.version = '2';",
           f"mpc.baseMVA = {base!r};", "", "%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin",
           "mpc.bus = ["]
    for b in network.buses:
        out.append(f"\t{b.name}\t1\t{b.demand * base!r}\t0\t0\t0\t1\t1\t0\t0\t1\t1.1\t0.9;")
    out += ["];", "", "%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin", "mpc.gen = ["]
    labels = network.labels
    for g in network.generators:
        out.append(f"\t{labels[g.bus]}\t0\t0\t0\t0\t1\t{base!r}\t1\t{g.g_max * base!r}\t{g.g_min * base!r};")
    out += ["];", "", "%% fbus tbus r x b rateA rateB rateC ratio angle status", "mpc.branch = ["]
    for ln in network.lines:
        out.append(f"\t{labels[ln.from_bus]}\t{labels[ln.to_bus]}\t0\t{1.0 / ln.susceptance!r}\t0"
                   f"\t{ln.capacity * base!r}\t0\t0\t0\t0\t1;")
    out += ["];", "", "%% 2 startup shutdown n c1 c0", "mpc.gencost = ["]
    for g in network.generators:
        out.append(f"\t2\t0\t0\t2\t{g.cost_coeff * voll!r}\t0;")
    out += ["];", ""]
    return "\n".join(out)


# -- demand ------------------------------------------------------------------------

def default_profile() -> np.ndarray:
    """Shipped 24-hour double-peak shape, first entry 1.0 (a stand-in, not measured data)."""
    text = resources.files("storageopf").joinpath("data/demand_profile_24h.txt").read_text()
    return read_profile(text)


def read_profile(text: str) -> np.ndarray:
    vals = []
    for k, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            vals.append(float(line))
        except ValueError:
            raise MatpowerParseError(f"profile entry {line!r} is not a number", k) from None
    prof = np.array(vals)
    if prof.size == 0 or np.any(prof <= 0) or not np.all(np.isfinite(prof)):
        raise ValueError("profile entries must be positive")
    return prof


def shaped_demand(network: Network, profile: np.ndarray, mode: str = "bus",
                  fraction: float = 0.8) -> np.ndarray:
    """Nominal T x N demand before noise.

    ``mode="bus"``: each bus with nonzero nominal demand is set to
    ``fraction * Gmax`` of its own generation. ``mode="system"``: nominal
    demands keep their pattern and are scaled so the total equals
    ``fraction * total Gmax``. ``mode="nominal"`` keeps the case values.
    """
    profile = np.asarray(profile, dtype=float)
    if profile.ndim != 1 or np.any(profile <= 0):
        raise ValueError("profile entries must be positive")
    nominal = network.nominal_demand
    gmax = network.g_max_by_bus()
    if mode == "bus":
        base = np.where(nominal > 0, fraction * gmax, 0.0)
    elif mode == "system":
        tot = nominal.sum()
        base = nominal * (fraction * gmax.sum() / tot) if tot > 0 else nominal
    elif mode == "nominal":
        base = nominal
    else:
        raise ValueError(f"unknown demand mode {mode!r}")
    return np.outer(profile / profile[0], base)


def generate_demand(network: Network, profile: np.ndarray | None = None, sigma_hat: float = 0.0,
                    seed: int = 0, count: int = 1, *, horizon: int | None = None,
                    mode: str = "bus", fraction: float = 0.8) -> list[DemandScenario]:
    """Noisy demand scenarios around the shaped profile, deterministic in ``seed``.

    Each entry gets independent Gaussian noise with standard deviation
    ``sigma_hat`` times its nominal value; results are truncated at 0.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    if sigma_hat < 0:
        raise ValueError("sigma_hat must be >= 0")
    prof = default_profile() if profile is None else np.asarray(profile, dtype=float)
    if horizon is not None:
        if horizon < 1 or horizon > prof.size:
            raise ValueError(f"horizon must be in 1..{prof.size}")
        prof = prof[:horizon]
    nominal = shaped_demand(network, prof, mode, fraction)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        noise = rng.normal(0.0, 1.0, size=nominal.shape) * (sigma_hat * nominal)
        out.append(DemandScenario(np.maximum(nominal + noise, 0.0)))
    return out


def demand_from_rows(rows: Sequence[Sequence[float]]) -> DemandScenario:
    return DemandScenario(np.array(rows, dtype=float))
