"""Exchange arguments that remove simultaneous charge+shedding or discharge+surplus.

Both routines work on one battery bus at a time and shift the state of
charge forward in time, trimming later discharges (or charges) only as much
as the storage bounds require. The returned dispatch has the same flows and
generation; only battery and slack quantities move.
"""
from __future__ import annotations

import numpy as np

from .grid import BatteryConfig

TOL = 1e-9


def _fix_charge_shedding(pc, pd, ps, pls, pex, t0, cfg: BatteryConfig) -> None:
    """Cancel charging against shedding at ``t0`` (arrays are 1-D over time, edited in place)."""
    m = min(pc[t0], pls[t0])
    pc[t0] -= m
    pls[t0] -= m
    shift = -cfg.eta_c * m  # lost stored energy from t0 on
    ps[t0] += shift
    for t in range(t0 + 1, len(pc)):
        if shift < 0 and pd[t] > 0:
            short = max(cfg.e_min - (ps[t] + shift), 0.0)
            cut = min(pd[t], cfg.eta_d * short)
            pd[t] -= cut
            pls[t] += cut
            shift += cut / cfg.eta_d
        ps[t] += shift


def _fix_discharge_surplus(pc, pd, ps, pls, pex, t0, cfg: BatteryConfig) -> None:
    """Cancel discharging against surplus at ``t0``."""
    m = min(pd[t0], pex[t0])
    pd[t0] -= m
    pex[t0] -= m
    shift = m / cfg.eta_d  # energy kept in storage from t0 on
    ps[t0] += shift
    for t in range(t0 + 1, len(pc)):
        if shift > 0 and pc[t] > 0:
            over = max(ps[t] + shift - cfg.e_max, 0.0)
            cut = min(pc[t], over / cfg.eta_c)
            pc[t] -= cut
            pex[t] += cut
            shift -= cut * cfg.eta_c
        ps[t] += shift


def repair(dispatch, cfg: BatteryConfig, battery_buses, fix_surplus: bool, max_rounds: int = 10_000):
    """Apply the exchanges until no product exceeds ``TOL``. Returns a new dispatch."""
    d = dispatch.copy()
    for i in battery_buses:
        pc, pd, ps, pls, pex = (a[:, i].copy() for a in (d.p_c, d.p_d, d.p_s, d.p_ls, d.p_ex))
        for _ in range(max_rounds):
            bad_c = np.flatnonzero(pc * pls > TOL)
            bad_d = np.flatnonzero(pd * pex > TOL) if fix_surplus else np.zeros(0, dtype=int)
            if bad_c.size == 0 and bad_d.size == 0:
                break
            tc = bad_c[0] if bad_c.size else np.inf
            td = bad_d[0] if bad_d.size else np.inf
            if tc <= td:
                _fix_charge_shedding(pc, pd, ps, pls, pex, int(tc), cfg)
            else:
                _fix_discharge_surplus(pc, pd, ps, pls, pex, int(td), cfg)
        d.p_c[:, i], d.p_d[:, i], d.p_s[:, i], d.p_ls[:, i], d.p_ex[:, i] = pc, pd, ps, pls, pex
        # a bus with no activity left keeps its mode; otherwise follow the charge
        d.u[:, i] = np.where(pc > TOL, 1.0, np.where(pd > TOL, 0.0, d.u[:, i]))
    return d
