"""Best-bound branch-and-bound over binary columns."""
from __future__ import annotations

import heapq
import itertools
import math
import time

import numpy as np

from .model import LinearModel, Solution, Status
from .simplex import _Engine, solve_lp

INT_TOL = 1e-6
ABS_GAP = 1e-9


def _most_fractional(x: np.ndarray, binaries: np.ndarray) -> int:
    if binaries.size == 0:
        return -1
    vals = x[binaries]
    frac = np.abs(vals - np.round(vals))
    if frac.max() <= INT_TOL:
        return -1
    dist = np.abs(vals - 0.5)
    # argmin returns the first hit, i.e. the lowest index among ties
    k = int(np.argmin(np.where(frac > INT_TOL, dist, math.inf)))
    return int(binaries[k])


def solve_mip(model: LinearModel, gap_tol: float = 1e-6, time_limit: float | None = None,
              max_nodes: int = 1_000_000) -> Solution:
    """Branch-and-bound with best-bound node selection.

    Branches on the most fractional binary (lowest index on ties) and warm
    starts every child from its parent's basis. ``bound`` is the best proven
    bound, ``history`` the (bound, incumbent) pair after each node, both in the
    model's own sense. Status is Optimal only when the relative gap closes to
    ``gap_tol``.
    """
    t0 = time.perf_counter()
    deadline = None if time_limit is None else t0 + time_limit
    eng = _Engine(model)
    flip = eng.flip
    binaries = np.array(sorted(model.binaries), dtype=np.int64)
    lb0, ub0 = model.bounds()

    def remaining() -> float | None:
        return None if deadline is None else max(deadline - time.perf_counter(), 0.0)

    root = solve_lp(model, time_limit=remaining(), _engine=eng)
    if root.status is not Status.OPTIMAL:
        # an interrupted root proves nothing; infeasible/unbounded need no bound
        bound = flip * -math.inf if root.status in (Status.TIME_LIMIT, Status.ITERATION_LIMIT) else math.nan
        return Solution(root.status, bound=bound, iterations=root.iterations)
    if binaries.size == 0:
        root.history = [(root.objective, root.objective)]
        return root

    best_x: np.ndarray | None = None
    best_key = math.inf  # incumbent in minimization terms
    counter = itertools.count()
    # heap entries: (key, -depth, tiebreak, fixings, basis)
    heap: list = [(flip * root.objective, 0, next(counter), (), root.basis, root)]
    history: list[tuple[float, float]] = []
    nodes = 0
    iters = root.iterations
    last_bound = -math.inf
    status = Status.OPTIMAL

    def closed(bound_key: float) -> bool:
        if not math.isfinite(best_key):
            return False
        return best_key - bound_key <= max(ABS_GAP, gap_tol * abs(best_key))

    while heap:
        key, negdepth, _, fixings, basis, solved = heapq.heappop(heap)
        if closed(key):
            heapq.heappush(heap, (key, negdepth, next(counter), fixings, basis, solved))
            break
        if deadline is not None and time.perf_counter() > deadline:
            heapq.heappush(heap, (key, negdepth, next(counter), fixings, basis, solved))
            status = Status.TIME_LIMIT
            break
        if nodes >= max_nodes:
            heapq.heappush(heap, (key, negdepth, next(counter), fixings, basis, solved))
            status = Status.ITERATION_LIMIT
            break
        nodes += 1
        if solved is None:
            lb = lb0.copy()
            ub = ub0.copy()
            for j, v in fixings:
                lb[j] = ub[j] = v
            sol = solve_lp(model, lb=lb, ub=ub, warm_start=basis, time_limit=remaining(), _engine=eng)
            iters += sol.iterations
            if sol.status is Status.TIME_LIMIT:
                heapq.heappush(heap, (key, negdepth, next(counter), fixings, basis, None))
                status = Status.TIME_LIMIT
                break
            if sol.status is not Status.OPTIMAL:
                last_bound = _record(history, heap, best_key, flip, last_bound)
                continue
        else:
            sol = solved
        node_key = flip * sol.objective
        if node_key >= best_key - max(ABS_GAP, gap_tol * abs(best_key)) and math.isfinite(best_key):
            last_bound = _record(history, heap, best_key, flip, last_bound)
            continue
        j = _most_fractional(sol.primal, binaries)
        if j < 0:
            x = sol.primal.copy()
            x[binaries] = np.round(x[binaries])
            if model.max_violation(x) > 1e-9:
                # polish: re-solve with the binaries pinned
                lb = lb0.copy()
                ub = ub0.copy()
                lb[binaries] = ub[binaries] = x[binaries]
                pol = solve_lp(model, lb=lb, ub=ub, warm_start=sol.basis, _engine=eng)
                if pol.status is Status.OPTIMAL:
                    x = pol.primal
                    node_key = flip * pol.objective
            if node_key < best_key:
                best_key = node_key
                best_x = x
        else:
            depth = -negdepth + 1
            for v in (0.0, 1.0):
                heapq.heappush(heap, (node_key, -depth, next(counter), fixings + ((j, v),), sol.basis, None))
        last_bound = _record(history, heap, best_key, flip, last_bound)

    if best_x is None:
        if status is Status.OPTIMAL:
            return Solution(Status.INFEASIBLE, nodes=nodes, iterations=iters, history=history)
        return Solution(status, bound=flip * (heap[0][0] if heap else math.inf),
                        nodes=nodes, iterations=iters, history=history)
    bound_key = heap[0][0] if heap else best_key
    bound_key = min(max(bound_key, last_bound if math.isfinite(last_bound) else bound_key), best_key)
    objective = model.evaluate(best_x)
    if status is Status.OPTIMAL and not closed(bound_key):
        status = Status.ITERATION_LIMIT
    return Solution(status, objective, best_x, bound=flip * bound_key,
                    nodes=nodes, iterations=iters, history=history)


def _record(history, heap, best_key, flip, last_bound):
    bound = heap[0][0] if heap else best_key
    if math.isfinite(last_bound):
        bound = max(bound, last_bound)
    if math.isfinite(best_key):
        bound = min(bound, best_key)
    history.append((flip * bound, flip * best_key))
    return bound
