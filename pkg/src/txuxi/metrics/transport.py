"""Exact earth mover's distance via successive shortest paths.

The balanced transportation problem between supplies ``a`` and demands ``b``
is solved as a min-cost flow on the complete bipartite graph.  Each round
runs a dense Dijkstra over reduced costs from every source with remaining
supply, stops at the first sink with remaining demand, updates the node
potentials and pushes the bottleneck amount along the path.  Reverse edges
exist wherever flow is positive, so earlier routing can be undone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..errors import PreconditionError
from .distributions import MASS_TOL, GroundDistance, check_prob

_EPS = 1e-15


@numba.njit(cache=True)
def _ssp(a, b, cost):  # pragma: no cover - compiled
    ns, nt = cost.shape
    flow = np.zeros((ns, nt))
    ra = a.copy()
    rb = b.copy()
    pot_s = np.zeros(ns)
    pot_t = np.zeros(nt)
    dist_s = np.empty(ns)
    dist_t = np.empty(nt)
    done_s = np.zeros(ns, dtype=np.bool_)
    done_t = np.zeros(nt, dtype=np.bool_)
    pred_t = np.empty(nt, dtype=np.int64)  # source feeding sink j
    pred_s = np.empty(ns, dtype=np.int64)  # sink feeding source i via a reverse edge
    inf = np.inf
    remaining = ra.sum()
    rounds = 0
    while remaining > _EPS:
        rounds += 1
        for i in range(ns):
            done_s[i] = False
            pred_s[i] = -1
            dist_s[i] = 0.0 if ra[i] > _EPS else inf
        for j in range(nt):
            done_t[j] = False
            pred_t[j] = -1
            dist_t[j] = inf
        target = -1
        bound = inf
        while True:
            best = inf
            bi = -1
            is_sink = False
            for i in range(ns):
                if not done_s[i] and dist_s[i] < best:
                    best = dist_s[i]
                    bi = i
                    is_sink = False
            for j in range(nt):
                if not done_t[j] and dist_t[j] < best:
                    best = dist_t[j]
                    bi = j
                    is_sink = True
            if bi < 0:
                break
            if is_sink:
                done_t[bi] = True
                if rb[bi] > _EPS:
                    target = bi
                    bound = best
                    break
                for i in range(ns):
                    if not done_s[i] and flow[i, bi] > 0.0:
                        rc = -cost[i, bi] + pot_t[bi] - pot_s[i]
                        if rc < 0.0:
                            rc = 0.0
                        nd = best + rc
                        if nd < dist_s[i]:
                            dist_s[i] = nd
                            pred_s[i] = bi
            else:
                done_s[bi] = True
                for j in range(nt):
                    if not done_t[j]:
                        rc = cost[bi, j] + pot_s[bi] - pot_t[j]
                        if rc < 0.0:
                            rc = 0.0
                        nd = best + rc
                        if nd < dist_t[j]:
                            dist_t[j] = nd
                            pred_t[j] = bi
        if target < 0:
            break
        for i in range(ns):
            pot_s[i] += dist_s[i] if done_s[i] else bound
        for j in range(nt):
            pot_t[j] += dist_t[j] if done_t[j] else bound
        # bottleneck along the path back to a source with remaining supply
        delta = rb[target]
        j = target
        while True:
            i = pred_t[j]
            if pred_s[i] < 0:
                if ra[i] < delta:
                    delta = ra[i]
                break
            j = pred_s[i]
            if flow[i, j] < delta:
                delta = flow[i, j]
        j = target
        while True:
            i = pred_t[j]
            flow[i, j] += delta
            if pred_s[i] < 0:
                ra[i] -= delta
                break
            j = pred_s[i]
            flow[i, j] -= delta
            if flow[i, j] < _EPS:
                flow[i, j] = 0.0
        rb[target] -= delta
        remaining -= delta
        if remaining < _EPS:
            break
    return flow, rounds


@dataclass
class FlowPlan:
    """Sparse optimal flow: ``(source cell, sink cell, mass)`` triples."""

    sources: np.ndarray
    sinks: np.ndarray
    mass: np.ndarray
    cost: float

    def dense(self, n_cells: int) -> np.ndarray:
        f = np.zeros((n_cells, n_cells))
        np.add.at(f, (self.sources, self.sinks), self.mass)
        return f


def solve_transport(a, b, cost) -> tuple[float, np.ndarray]:
    """Minimum-cost balanced transport; returns ``(cost, flow matrix)``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.shape != (len(a), len(b)):
        raise PreconditionError("cost matrix does not match supply/demand sizes")
    if (a < 0).any() or (b < 0).any() or (cost < 0).any():
        raise PreconditionError("supplies, demands and costs must be nonnegative")
    if abs(a.sum() - b.sum()) > MASS_TOL:
        raise PreconditionError(f"unbalanced masses {a.sum()} vs {b.sum()}")
    # scale the demands onto the exact supply total so rounding cannot strand flow
    if b.sum() > 0:
        b = b * (a.sum() / b.sum())
    flow, _ = _ssp(a, b, cost)
    return float((flow * cost).sum()), flow


def transport_plan(p, q, gd: GroundDistance | None = None) -> FlowPlan:
    """Optimal flow between two same-shape distributions (zero cells dropped)."""
    p = check_prob(p, "p")
    q = check_prob(q, "q")
    if p.shape != q.shape:
        raise PreconditionError(f"shape mismatch {p.shape} vs {q.shape}")
    gd = GroundDistance(p.shape) if gd is None else gd
    src = np.flatnonzero(p.ravel() > 0)
    dst = np.flatnonzero(q.ravel() > 0)
    cost = gd.matrix(src, dst)
    total, flow = solve_transport(p.ravel()[src], q.ravel()[dst], cost)
    ii, jj = np.nonzero(flow)
    return FlowPlan(src[ii], dst[jj], flow[ii, jj], total)


def emd(p, q, gd: GroundDistance | None = None) -> float:
    """Earth mover's distance between two normalized maps, in [0, 1].

    Both inputs carry unit mass, so the unmatched-mass penalty is zero and
    only the transport term remains.
    """
    return transport_plan(p, q, gd).cost
