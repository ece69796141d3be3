"""Command-line front end: ``storageopf {opf,lambda-sweep,trilevel,gen-demand,export-lp,check}``.

Settings come from an optional JSON file (``--config``) with flags taking
precedence. Outputs are CSV/JSON files in the output directory, which
defaults to ``$STORAGEOPF_OUTPUT_DIR`` or ``./storageopf_out``.

Exit codes: 0 success (a run stopped by its time limit still counts), 2 bad
configuration, 3 bad input data or a stored solution that fails its check,
4 solver failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fixtures as F
from .grid import (BatteryConfig, DemandScenario, MatpowerParseError, Network, NetworkDataError,
                   generate_demand, parse_matpower, read_profile, scale_battery, select_battery_buses)
from .lp import export_lp_format, relative_gap
from .opf import DispatchSolution, Lambda, ModelVariant, Variant, ZERO, build_opf, solve_opf, system_cost, regularizer
from .regularization import best_worst_case_lambda, dispatch_violation, lambda_sweep
from .trilevel import TrilevelResult, brute_force_trilevel, enumeration_size, solve_trilevel

log = logging.getLogger("storageopf")

ENV_OUTPUT = "STORAGEOPF_OUTPUT_DIR"
EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 2, 3, 4
ORACLE_AUTO_LIMIT = 2_000  # placement/attack pairs enumerated automatically
CHECK_TOL = 1e-6


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class SolverFailure(RuntimeError):
    pass


@dataclass
class RunConfig:
    case: str | None = None
    fixture: str | None = None
    horizon: int = 24
    sigma_hat: float = 0.05
    seed: int = 0
    scenarios: int = 1
    demand_mode: str = "bus"
    demand_files: list[str] = field(default_factory=list)
    profile: str | None = None
    lambda_mode: str = "prop3"  # prop3 | zero | explicit
    lambda_c: float | None = None
    lambda_d: float | None = None
    batteries: list[int] | None = None  # bus labels as in the case file
    top_b: int | None = None
    eta: float | None = None
    e0: float = 0.0
    scale_battery: bool = True
    rescale_gen_min: bool = False
    voll: float = 1000.0
    ohms_law: bool = True
    b: int = 1
    k: int = 1
    gap: float = 0.005
    max_iter: int = 1000
    time_limit: float | None = 600.0
    oracle: str = "auto"  # auto | always | never
    reproducible: bool = False  # write zero timings so reruns are byte-identical
    output_dir: str | None = None
    jobs: int = 1

    def validate(self) -> None:
        if (self.case is None) == (self.fixture is None):
            raise ConfigError("give exactly one of --case and --fixture")
        if self.fixture is not None and self.fixture not in F.FIXTURES and self.fixture != "gap_sweep":
            raise ConfigError(f"unknown fixture {self.fixture!r}; choose from {sorted([*F.FIXTURES, 'gap_sweep'])}")
        if self.lambda_mode not in ("prop3", "zero", "explicit"):
            raise ConfigError(f"unknown lambda mode {self.lambda_mode!r}")
        if (self.lambda_mode == "explicit") != (self.lambda_c is not None):
            raise ConfigError("explicit penalties go with --lambda-mode explicit and nothing else")
        if self.case is not None and (self.batteries is None) == (self.top_b is None):
            raise ConfigError("give exactly one of --batteries and --top-b for a case file")
        if self.horizon < 1 or self.scenarios < 1 or self.jobs < 1:
            raise ConfigError("horizon, scenarios and jobs must be >= 1")
        if self.sigma_hat < 0:
            raise ConfigError("sigma_hat must be >= 0")
        if self.b < 0 or self.k < 0:
            raise ConfigError("budgets must be >= 0")
        if self.oracle not in ("auto", "always", "never"):
            raise ConfigError(f"unknown oracle mode {self.oracle!r}")
        if self.eta is not None and not 0 < self.eta <= 1:
            raise ConfigError("eta must be in (0, 1]")

    @property
    def out(self) -> Path:
        return Path(self.output_dir or os.environ.get(ENV_OUTPUT, "storageopf_out"))


# -- loading ---------------------------------------------------------------------------

def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc


def load_network(cfg: RunConfig) -> tuple[Network, list[DemandScenario]]:
    """Network with batteries placed plus the demand scenarios the config asks for."""
    if cfg.fixture is not None:
        if cfg.fixture == "gap_sweep":
            net, dem = F.gap_sweep_case(cfg.eta if cfg.eta is not None else F.SWEEP_ETAS[-1])
        else:
            net, dem = F.FIXTURES[cfg.fixture]()
            if cfg.eta is not None:
                net = net.with_config(dataclasses.replace(net.battery_config, eta_c=cfg.eta, eta_d=cfg.eta))
        demands = [dem]
    else:
        try:
            net = parse_matpower(_read_text(cfg.case), rescale_gen_min=cfg.rescale_gen_min, voll=cfg.voll,
                                 name=Path(cfg.case).stem)
        except (MatpowerParseError, NetworkDataError) as exc:
            raise DataError(f"{cfg.case}: {exc}") from exc
        battery = BatteryConfig.medium_network(cfg.eta if cfg.eta is not None else 0.95, cfg.e0)
        if cfg.scale_battery:
            battery = scale_battery(battery, net.n_buses)
        if cfg.batteries is not None:
            label_to_idx = {lab: i for i, lab in enumerate(net.labels)}
            missing = [b for b in cfg.batteries if b not in label_to_idx]
            if missing:
                raise ConfigError(f"battery buses not in the case: {missing}")
            buses = [label_to_idx[b] for b in cfg.batteries]
        else:
            buses = select_battery_buses(net, cfg.top_b)
        net = net.with_batteries(buses, battery)
        demands = _case_demands(cfg, net)
    if cfg.demand_files:
        demands = [_read_demand(p, net) for p in cfg.demand_files]
    return net, demands


def _case_demands(cfg: RunConfig, net: Network) -> list[DemandScenario]:
    profile = read_profile(_read_text(cfg.profile)) if cfg.profile else None
    try:
        return generate_demand(net, profile, cfg.sigma_hat, cfg.seed, cfg.scenarios,
                               horizon=cfg.horizon, mode=cfg.demand_mode)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _read_demand(path: str, net: Network) -> DemandScenario:
    try:
        dem = DemandScenario.from_csv(_read_text(path), net.labels)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if dem.n_buses != net.n_buses:
        raise DataError(f"{path}: {dem.n_buses} buses, network has {net.n_buses}")
    return dem


def resolve_lambda(cfg: RunConfig, net: Network) -> Lambda:
    bc = net.battery_config
    if cfg.lambda_mode == "zero":
        return ZERO
    if cfg.lambda_mode == "explicit":
        return Lambda(cfg.lambda_c, cfg.lambda_d if cfg.lambda_d is not None else cfg.lambda_c)
    return best_worst_case_lambda(bc.ec_max, bc.ed_max, bc.eta_c, bc.eta_d)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _fmt(v: float) -> str:
    return f"{v:.6f}" if math.isfinite(v) else str(v)


# -- opf ---------------------------------------------------------------------------------

MODEL_TAGS = {"battery_mip": Variant.BATTERY_MIP, "reg_mip": Variant.REG_MIP, "reg_lp": Variant.REG_LP}
SUMMARY_HEADER = "scenario,z_mip,z_reg_mip,z_reg_lp,c_reg,opt_gap,lp_gap"


def _solve_scenario(args) -> dict:
    net, dem, lam, ohms = args
    out = {}
    for tag, v in MODEL_TAGS.items():
        sol, d, _ = solve_opf(net, dem, ZERO if v == Variant.BATTERY_MIP else lam, ModelVariant(v, ohms))
        if d is None:
            raise SolverFailure(f"{tag} solve failed: {sol.status.value}")
        out[tag] = d
    return out


def _map_jobs(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def cmd_opf(cfg: RunConfig) -> int:
    net, demands = load_network(cfg)
    lam = resolve_lambda(cfg, net)
    out = cfg.out
    results = _map_jobs(_solve_scenario, [(net, d, lam, cfg.ohms_law) for d in demands], cfg.jobs)
    lines = [SUMMARY_HEADER]
    gaps = []
    for s, (dem, res) in enumerate(zip(demands, results)):
        for tag, d in res.items():
            _write(out / f"dispatch_s{s:03d}_{tag}.csv", d.to_csv())
            _write(out / f"dispatch_s{s:03d}_{tag}.json", d.to_json())
        _write(out / f"demand_s{s:03d}.csv", dem.to_csv(net.labels))
        z_star = res["battery_mip"].objective_reg
        c_reg = res["reg_mip"].objective_c
        opt_gap = relative_gap(z_star, c_reg) if c_reg >= z_star else -relative_gap(z_star, c_reg)
        lp_gap = relative_gap(res["reg_mip"].objective_reg, res["reg_lp"].objective_reg)
        gaps.append(opt_gap)
        lines.append(",".join([str(s), _fmt(z_star), _fmt(res["reg_mip"].objective_reg),
                               _fmt(res["reg_lp"].objective_reg), _fmt(c_reg), _fmt(opt_gap), _fmt(lp_gap)]))
    _write(out / "summary.csv", "\n".join(lines) + "\n")
    _write(out / "run.json", json.dumps(_run_record(cfg, lam, len(demands)), indent=2))
    print(f"{len(demands)} scenario(s); mean optimality gap {np.mean(gaps):.6f}; wrote {out}")
    return 0


def _run_record(cfg: RunConfig, lam: Lambda, n_scen: int) -> dict:
    rec = dataclasses.asdict(cfg)
    rec["demand_files"] = [f"demand_s{s:03d}.csv" for s in range(n_scen)]
    rec["lambda"] = list(lam.as_tuple())
    return rec


# -- lambda sweep ------------------------------------------------------------------------

SWEEP_HEADER = "lambda,c_of_p,reg_objective,theoretical_bound,empirical_gap,lambda_d,best_worst_case"


def parse_grid(text: str) -> list[float]:
    """``start:stop:step`` (inclusive stop) or a comma-separated list."""
    try:
        if ":" in text:
            a, b, h = (float(v) for v in text.split(":"))
            if h <= 0 or b < a:
                raise ValueError
            n = int(math.floor((b - a) / h + 1e-9)) + 1
            return [round(a + i * h, 12) for i in range(n)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad lambda grid {text!r}") from exc


def cmd_lambda_sweep(cfg: RunConfig, grid: list[float]) -> int:
    net, demands = load_network(cfg)
    bc = net.battery_config
    best = best_worst_case_lambda(bc.ec_max, bc.ed_max, bc.eta_c, bc.eta_d)
    entries = sorted([*grid, best], key=lambda v: v.lambda_c if isinstance(v, Lambda) else v)
    z_star, rows = lambda_sweep(net, demands[0], entries, cfg.ohms_law)
    lines = [SWEEP_HEADER]
    for v, r in zip(entries, rows):
        mark = int(isinstance(v, Lambda))
        lines.append(",".join([f"{r.lam:.6f}", _fmt(r.c_of_p), _fmt(r.reg_objective), _fmt(r.theoretical_bound),
                               _fmt(r.empirical_gap), f"{r.lam_d:.6f}", str(mark)]))
    _write(cfg.out / "lambda_sweep.csv", "\n".join(lines) + "\n")
    print(f"original optimum {z_star:.6f}; {len(rows)} sweep rows; wrote {cfg.out / 'lambda_sweep.csv'}")
    return 0


# -- trilevel ---------------------------------------------------------------------------

def cmd_trilevel(cfg: RunConfig) -> int:
    net, demands = load_network(cfg)
    lam = resolve_lambda(cfg, net)
    dem = demands[0]
    res = solve_trilevel(net, dem, cfg.b, cfg.k, lam, gap=cfg.gap, max_iter=cfg.max_iter,
                         time_limit=cfg.time_limit, jobs=cfg.jobs)
    size = enumeration_size(net.n_buses, net.n_lines, cfg.b, cfg.k)
    run_oracle = cfg.oracle == "always" or (cfg.oracle == "auto" and size <= ORACLE_AUTO_LIMIT)
    if run_oracle:
        z_opt, _ = brute_force_trilevel(net, dem, cfg.b, cfg.k)
        res.oracle = z_opt
        if not res.z_lp_lb - CHECK_TOL <= z_opt <= res.z_reg_ub + CHECK_TOL:
            raise SolverFailure(f"bounds [{res.z_lp_lb:.6g}, {res.z_reg_ub:.6g}] miss the enumerated "
                                f"value {z_opt:.6g}")
    if cfg.reproducible:
        res.wall_time = 0.0
        for run in (res.reg_run, res.lp_run):
            run.seconds = 0.0
    _write(cfg.out / "trilevel.csv", TrilevelResult.CSV_HEADER + "\n" + res.csv_row() + "\n")
    _write(cfg.out / "trilevel.json", res.to_json())
    status = res.reg_run.status
    print(f"z_reg_ub {res.z_reg_ub:.6f}  z_lp_lb {res.z_lp_lb:.6f}  solution gap {res.solution_gap:.4%}  "
          f"status {status}" + (f"  enumerated {res.oracle:.6f}" if res.oracle is not None else ""))
    return 0


# -- demand, export, check -----------------------------------------------------------------

def cmd_gen_demand(cfg: RunConfig) -> int:
    net, demands = load_network(cfg)
    for s, d in enumerate(demands):
        _write(cfg.out / f"demand_s{s:03d}.csv", d.to_csv(net.labels))
    print(f"wrote {len(demands)} demand file(s) to {cfg.out}")
    return 0


EXPORT_MODELS = {"battery-mip": Variant.BATTERY_MIP, "reg-mip": Variant.REG_MIP,
                 "reg-lp": Variant.REG_LP, "no-battery": Variant.NO_BATTERY}


def cmd_export_lp(cfg: RunConfig, model: str, scenario: int, path: str | None) -> int:
    net, demands = load_network(cfg)
    if not 0 <= scenario < len(demands):
        raise ConfigError(f"scenario must be in 0..{len(demands) - 1}")
    v = EXPORT_MODELS[model]
    lam = ZERO if v == Variant.BATTERY_MIP else resolve_lambda(cfg, net)
    m, _ = build_opf(net, demands[scenario], lam, ModelVariant(v, cfg.ohms_law))
    target = Path(path) if path else cfg.out / f"{model}_s{scenario:03d}.lp"
    _write(target, export_lp_format(m))
    print(f"wrote {target} ({m.num_vars} columns, {m.num_rows} rows)")
    return 0


def cmd_check(run_dir: Path) -> int:
    """Re-verify stored dispatches against a rebuilt network and the stored demand."""
    rec_path = run_dir / "run.json"
    try:
        rec = json.loads(rec_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {rec_path}: {exc}") from exc
    lam = Lambda(*rec.pop("lambda"))
    files = [str(run_dir / f) for f in rec.pop("demand_files")]
    cfg = RunConfig(**{k: v for k, v in rec.items() if k in {f.name for f in dataclasses.fields(RunConfig)}})
    cfg.demand_files = files
    net, demands = load_network(cfg)
    worst = 0.0
    for s, dem in enumerate(demands):
        for tag in MODEL_TAGS:
            p = run_dir / f"dispatch_s{s:03d}_{tag}.json"
            try:
                d = DispatchSolution.from_dict(json.loads(p.read_text()))
            except (OSError, json.JSONDecodeError, KeyError) as exc:
                raise DataError(f"cannot read {p}: {exc}") from exc
            viol = dispatch_violation(d, net, dem)
            c = system_cost(d, net)
            reg = c + regularizer(d, ZERO if tag == "battery_mip" else lam)
            err = max(viol, abs(c - d.objective_c), abs(reg - d.objective_reg))
            worst = max(worst, err)
            if err > CHECK_TOL:
                raise DataError(f"{p.name}: violation {viol:.3g}, objective mismatch "
                                f"{abs(reg - d.objective_reg):.3g}")
    print(f"checked {len(demands) * len(MODEL_TAGS)} dispatch file(s); worst residual {worst:.3g}")
    return 0


# -- argument handling ----------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _add_common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("input")
    g.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    g.add_argument("--case", help="MATPOWER case file")
    g.add_argument("--fixture", help="built-in small instance instead of a case file")
    g.add_argument("--horizon", type=int)
    g.add_argument("--sigma-hat", type=float, dest="sigma_hat")
    g.add_argument("--seed", type=int)
    g.add_argument("--scenarios", type=int)
    g.add_argument("--demand-mode", choices=["bus", "system", "nominal"], dest="demand_mode")
    g.add_argument("--demand", action="append", dest="demand_files", metavar="CSV",
                   help="demand file (t,bus,demand); repeat for several scenarios")
    g.add_argument("--profile", help="text file with one load multiplier per period")
    g.add_argument("--rescale-gen-min", action="store_const", const=True, dest="rescale_gen_min")
    g.add_argument("--voll", type=float)
    m = p.add_argument_group("model")
    m.add_argument("--lambda-mode", choices=["prop3", "zero", "explicit"], dest="lambda_mode")
    m.add_argument("--lambda", type=float, nargs="+", dest="lambda_pair", metavar="L",
                   help="explicit penalties: one value for both, or charge then discharge")
    m.add_argument("--batteries", type=_int_list, help="comma-separated battery bus labels")
    m.add_argument("--top-b", type=int, dest="top_b", help="batteries at the b buses with most capacity")
    m.add_argument("--eta", type=float, help="charge and discharge efficiency")
    m.add_argument("--e0", type=float, help="initial state of charge")
    m.add_argument("--no-battery-scaling", action="store_const", const=False, dest="scale_battery")
    m.add_argument("--no-ohms-law", action="store_const", const=False, dest="ohms_law")
    o = p.add_argument_group("output")
    o.add_argument("--out", dest="output_dir", help=f"output directory (default ${ENV_OUTPUT} or ./storageopf_out)")
    o.add_argument("--jobs", type=int, help="parallel worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="storageopf", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("opf", help="original, penalized MIP and penalized LP per scenario")
    _add_common(p)

    p = sub.add_parser("lambda-sweep", help="system cost of the penalized optimum across penalties")
    _add_common(p)
    p.add_argument("--grid", default="0:1:0.05", help="start:stop:step or comma list (default 0:1:0.05)")

    p = sub.add_parser("trilevel", help="battery siting against line attacks")
    _add_common(p)
    p.add_argument("-b", type=int, dest="b", help="battery budget")
    p.add_argument("-k", type=int, dest="k", help="attack budget")
    p.add_argument("--gap", type=float, help="relative stopping gap (default 0.005)")
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--time-limit", type=float, dest="time_limit", help="seconds per run")
    p.add_argument("--oracle", choices=["auto", "always", "never"],
                   help="enumerate placements and attacks to confirm the bounds")
    p.add_argument("--reproducible", action="store_const", const=True,
                   help="write zero timings so identical runs give identical files")

    p = sub.add_parser("gen-demand", help="write demand scenarios as CSV")
    _add_common(p)

    p = sub.add_parser("export-lp", help="write a dispatch model in LP format")
    _add_common(p)
    p.add_argument("--model", choices=sorted(EXPORT_MODELS), default="reg-mip")
    p.add_argument("--scenario", type=int, default=0)
    p.add_argument("-o", "--output", dest="lp_path", help="LP file (default in the output directory)")

    p = sub.add_parser("check", help="re-verify the dispatch files written by `opf`")
    p.add_argument("run_dir", help="directory written by `storageopf opf`")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name in names:
        v = getattr(args, name, None)
        if v is not None:
            data[name] = v
    pair = getattr(args, "lambda_pair", None)
    if pair is not None:
        if len(pair) > 2:
            raise ConfigError("--lambda takes one or two values")
        data["lambda_mode"] = data.get("lambda_mode") or "explicit"
        data["lambda_c"], data["lambda_d"] = pair[0], pair[-1]
    if data.get("fixture") is not None and "case" not in data:
        data["case"] = None
    try:
        cfg = RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "check":
            return cmd_check(Path(args.run_dir))
        cfg = config_from_args(args)
        if args.command == "opf":
            return cmd_opf(cfg)
        if args.command == "lambda-sweep":
            return cmd_lambda_sweep(cfg, parse_grid(args.grid))
        if args.command == "trilevel":
            return cmd_trilevel(cfg)
        if args.command == "gen-demand":
            return cmd_gen_demand(cfg)
        if args.command == "export-lp":
            return cmd_export_lp(cfg, args.model, args.scenario, args.lp_path)
    except ConfigError as exc:
        print(f"storageopf: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"storageopf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SolverFailure, RuntimeError) as exc:
        print(f"storageopf: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    parser.error(f"unknown command {args.command}")
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
