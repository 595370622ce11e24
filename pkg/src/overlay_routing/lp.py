"""Dense simplex solver and the overlay flow formulations built on it.

The solver is a textbook two-phase tableau method with Bland's rule. The
instances here are small (tens of variables), so determinism matters more
than speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .topology import Scenario

FEAS_TOL = 1e-9
OPT_TOL = 1e-7

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


class LPError(RuntimeError):
    pass


@dataclass
class LinearProgram:
    """maximize c @ x  s.t.  A_ub @ x <= b_ub,  A_eq @ x == b_eq,  x >= 0."""

    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        self.A_ub = np.asarray(self.A_ub, dtype=float).reshape(-1, n)
        self.b_ub = np.asarray(self.b_ub, dtype=float).reshape(-1)
        if self.A_eq is None:
            self.A_eq = np.zeros((0, n))
            self.b_eq = np.zeros(0)
        self.A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        self.b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)
        if self.A_ub.shape[0] != self.b_ub.size or self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError("constraint matrix / right-hand side size mismatch")
        for arr in (self.c, self.A_ub, self.b_ub, self.A_eq, self.b_eq):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite coefficient")


@dataclass
class LPResult:
    status: str
    x: np.ndarray | None = None
    value: float | None = None
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _pivot(T: np.ndarray, basis: list[int], row: int, col: int) -> None:
    T[row] /= T[row, col]
    colv = T[:, col].copy()
    colv[row] = 0.0
    T -= np.outer(colv, T[row])
    basis[row - 1] = col


def _run(T: np.ndarray, basis: list[int], ncols: int, max_iter: int) -> tuple[str, int]:
    """Bland's-rule iterations on tableau ``T`` (row 0 is the objective)."""
    it = 0
    while it < max_iter:
        red = T[0, :ncols]
        cand = np.nonzero(red < -FEAS_TOL)[0]
        if cand.size == 0:
            return OPTIMAL, it
        col = int(cand[0])
        colv = T[1:, col]
        mask = colv > FEAS_TOL
        if not mask.any():
            return UNBOUNDED, it
        ratios = np.full(colv.shape, np.inf)
        ratios[mask] = T[1:, -1][mask] / colv[mask]
        best = ratios.min()
        ties = np.nonzero(ratios <= best + FEAS_TOL * max(1.0, abs(best)))[0]
        row = min(ties, key=lambda r: basis[r]) + 1
        _pivot(T, basis, int(row), col)
        it += 1
    raise LPError("simplex iteration limit reached")


def lp_solve(lp: LinearProgram, max_iter: int = 50_000) -> LPResult:
    """Solve ``lp`` exactly up to floating point; returns a basic optimal solution."""
    n = lp.c.size
    A = np.vstack([lp.A_ub, lp.A_eq])
    b = np.concatenate([lp.b_ub, lp.b_eq])
    m_ub = lp.A_ub.shape[0]
    m = A.shape[0]
    if m == 0:
        if np.any(lp.c > OPT_TOL):
            return LPResult(UNBOUNDED)
        return LPResult(OPTIMAL, np.zeros(n), 0.0)

    sign = np.where(b < 0, -1.0, 1.0)
    A = A * sign[:, None]
    b = b * sign
    # columns: x (n) | slacks (m_ub) | artificials (m)
    n_slack = m_ub
    ncols = n + n_slack + m
    T = np.zeros((m + 1, ncols + 1))
    T[1:, :n] = A
    for i in range(m_ub):
        T[1 + i, n + i] = sign[i]
    T[1:, -1] = b
    basis: list[int] = []
    art_cols = []
    for i in range(m):
        if i < m_ub and sign[i] > 0:
            basis.append(n + i)
        else:
            col = n + n_slack + i
            T[1 + i, col] = 1.0
            basis.append(col)
            art_cols.append(col)

    iters = 0
    if art_cols:
        # phase 1: maximize -sum(artificials)
        T[0, art_cols] = 1.0
        for r, col in enumerate(basis):
            if col in art_cols:
                T[0] -= T[1 + r]
        status, k = _run(T, basis, ncols, max_iter)
        iters += k
        if T[0, -1] < -FEAS_TOL * max(1.0, np.abs(b).max()):
            return LPResult(INFEASIBLE, iterations=iters)
        # drive remaining artificials out of the basis
        keep = []
        for r in range(m):
            if basis[r] in art_cols:
                row = T[1 + r, : n + n_slack]
                nz = np.nonzero(np.abs(row) > FEAS_TOL)[0]
                if nz.size:
                    _pivot(T, basis, r + 1, int(nz[0]))
                    keep.append(r)
                # else: redundant row, dropped below
            else:
                keep.append(r)
        T = np.vstack([T[:1], T[1:][keep]])
        basis = [basis[r] for r in keep]

    # phase 2 over x and slack columns only
    n2 = n + n_slack
    T2 = np.zeros((T.shape[0], n2 + 1))
    T2[:, :n2] = T[:, :n2]
    T2[:, -1] = T[:, -1]
    T2[0, :] = 0.0
    T2[0, :n] = -lp.c
    for r, col in enumerate(basis):
        if T2[0, col] != 0.0:
            T2[0] -= T2[0, col] * T2[1 + r]
    status, k = _run(T2, basis, n2, max_iter)
    iters += k
    if status == UNBOUNDED:
        return LPResult(UNBOUNDED, iterations=iters)
    x = np.zeros(n2)
    for r, col in enumerate(basis):
        x[col] = T2[1 + r, -1]
    x = np.where(np.abs(x) < FEAS_TOL, 0.0, x)[:n]
    return LPResult(OPTIMAL, x, float(lp.c @ x), iters)


def rationalize(value: float, q_max: int = 1000) -> tuple[int, int]:
    """Nearest fraction p/q to ``value`` with q <= q_max."""
    if value < 0:
        raise ValueError("rate must be non-negative")
    fr = Fraction(value).limit_denominator(q_max)
    return fr.numerator, fr.denominator


def emission_count(p: int, q: int, slot: int) -> int:
    """Packets to emit in ``slot`` so that p packets go out evenly every q slots."""
    return -((-(slot + 1) * p) // q) + ((-slot * p) // q)


# -- overlay formulations ----------------------------------------------

def flow_index(sc: Scenario) -> list[tuple[int, int]]:
    """Ordered (tunnel id, commodity id) pairs carrying a flow variable."""
    return [(t.id, k) for t in sc.tunnels for k in sc.usable[t.id]]


def _capacities(sc: Scenario, capacity: Mapping | None) -> Mapping:
    return sc.topology.capacity if capacity is None else capacity


def _link_rows(sc: Scenario, pairs, capacity):
    rows, rhs = [], []
    col_of = {p: i for i, p in enumerate(pairs)}
    for link in sc.topology.links:
        row = np.zeros(len(pairs))
        for t in sc.tunnels:
            if link in t.links:
                for k in sc.usable[t.id]:
                    if (t.id, k) in col_of:
                        row[col_of[(t.id, k)]] = 1.0
        if row.any():
            rows.append(row)
            rhs.append(float(capacity[link]))
    return rows, rhs


def centralized_frame_lp(sc: Scenario, backlog: Mapping[tuple[str, int], float],
                         capacity: Mapping | None = None) -> dict[tuple[int, int], float]:
    """Per-slot tunnel rates maximizing the backlog-weighted injection for a frame.

    ``backlog`` maps (overlay node, commodity) to its queue; missing entries
    and destination backlogs count as zero. Returns nonzero rates only.
    """
    capacity = _capacities(sc, capacity)
    dest = {c.id: c.destination for c in sc.commodities}
    pairs, weights = [], []
    for t in sc.tunnels:
        for k in sc.usable[t.id]:
            qs = backlog.get((t.source, k), 0)
            qd = 0 if t.sink == dest[k] else backlog.get((t.sink, k), 0)
            if qs - qd > 0:
                pairs.append((t.id, k))
                weights.append(qs - qd)
    if not pairs:
        return {}
    rows, rhs = _link_rows(sc, pairs, capacity)
    res = lp_solve(LinearProgram(np.array(weights, dtype=float), np.array(rows), np.array(rhs)))
    if not res.ok:
        raise LPError(f"frame LP failed: {res.status}")
    return {p: float(v) for p, v in zip(pairs, res.x) if v > FEAS_TOL}


def _conservation_rows(sc: Scenario, pairs):
    """Rows of -(outflow - inflow) per (overlay node, commodity), non-destination."""
    tun = {t.id: t for t in sc.tunnels}
    keys = []
    rows = []
    for c in sc.commodities:
        for node in sc.topology.overlay_nodes:
            if node == c.destination:
                continue
            row = np.zeros(len(pairs))
            for i, (tid, k) in enumerate(pairs):
                if k != c.id:
                    continue
                t = tun[tid]
                if t.source == node:
                    row[i] -= 1.0
                if t.sink == node:
                    row[i] += 1.0
            keys.append((node, c.id))
            rows.append(row)
    return keys, rows


@dataclass
class FluidSolution:
    feasible: bool
    flows: dict[tuple[int, int], float]


def fluid_feasibility_lp(sc: Scenario, lam: Sequence[float], capacity: Mapping | None = None) -> FluidSolution:
    """Find tunnel flows carrying arrival rates ``lam`` (one per commodity, at its source)."""
    capacity = _capacities(sc, capacity)
    pairs = flow_index(sc)
    rows, rhs = _link_rows(sc, pairs, capacity)
    keys, crows = _conservation_rows(sc, pairs)
    src = {c.id: c.source for c in sc.commodities}
    lam_of = {c.id: float(l) for c, l in zip(sc.commodities, lam)}
    for (node, k), row in zip(keys, crows):
        rows.append(row)
        rhs.append(-lam_of[k] if src[k] == node else 0.0)
    if not pairs:
        ok = all(l <= FEAS_TOL for l in lam_of.values())
        return FluidSolution(ok, {})
    res = lp_solve(LinearProgram(np.zeros(len(pairs)), np.array(rows), np.array(rhs)))
    if res.status == INFEASIBLE:
        return FluidSolution(False, {})
    if not res.ok:
        raise LPError(res.status)
    return FluidSolution(True, {p: float(v) for p, v in zip(pairs, res.x) if v > FEAS_TOL})


def max_scaling(sc: Scenario, direction: Sequence[float], capacity: Mapping | None = None) -> float:
    """Largest theta such that theta * direction is fluid-feasible."""
    capacity = _capacities(sc, capacity)
    pairs = flow_index(sc)
    n = len(pairs)
    rows, rhs = _link_rows(sc, pairs, capacity)
    rows = [np.append(r, 0.0) for r in rows]
    keys, crows = _conservation_rows(sc, pairs)
    src = {c.id: c.source for c in sc.commodities}
    d_of = {c.id: float(d) for c, d in zip(sc.commodities, direction)}
    for (node, k), row in zip(keys, crows):
        rows.append(np.append(row, d_of[k] if src[k] == node else 0.0))
        rhs.append(0.0)
    c = np.zeros(n + 1)
    c[-1] = 1.0
    res = lp_solve(LinearProgram(c, np.array(rows), np.array(rhs)))
    if res.status == UNBOUNDED:
        return math.inf
    if not res.ok:
        raise LPError(res.status)
    return float(res.x[-1])


# -- Lagrangian dual ---------------------------------------------------

class DualIndex:
    """Coordinates of the dual vector: uncontrollable links, then (node, commodity)."""

    def __init__(self, sc: Scenario, capacity: Mapping | None = None):
        self.scenario = sc
        topo = sc.topology
        self.capacity = _capacities(sc, capacity)
        self.links = [e for e in topo.links if not topo.is_overlay(e[0])]
        self.nodes = [(n, c.id) for c in sc.commodities for n in topo.overlay_nodes
                      if n != c.destination]
        self.link_pos = {e: i for i, e in enumerate(self.links)}
        self.node_pos = {key: len(self.links) + i for i, key in enumerate(self.nodes)}
        self.size = len(self.links) + len(self.nodes)
        self.link_cap = np.array([float(self.capacity[e]) for e in self.links])
        # first-link groups: (capacity, [(tunnel, commodity, src pos, sink pos, link positions)])
        groups: dict = {}
        for t in sc.tunnels:
            entries = groups.setdefault(t.first_link, [])
            for k in sc.usable[t.id]:
                entries.append((t.id, k, self.node_pos.get((t.source, k)),
                                self.node_pos.get((t.sink, k)),
                                [self.link_pos[e] for e in t.underlay_links]))
        self.groups = [(float(self.capacity[fl]), entries) for fl, entries in groups.items() if entries]
        self.tunnels = {t.id: t for t in sc.tunnels}

    def zeros(self) -> np.ndarray:
        return np.zeros(self.size)

    def lam_vector(self, lam: Sequence[float]) -> np.ndarray:
        v = np.zeros(self.size)
        for c, l in zip(self.scenario.commodities, lam):
            v[self.node_pos[(c.source, c.id)]] = l
        return v

    def from_state(self, overlay: Mapping[tuple[str, int], float],
                   underlay: Mapping[tuple[str, str], float]) -> np.ndarray:
        v = np.zeros(self.size)
        for key, pos in self.node_pos.items():
            v[pos] = overlay.get(key, 0)
        for e, pos in self.link_pos.items():
            v[pos] = underlay.get(e, 0)
        return v


def _q(q: np.ndarray, pos) -> float:
    return 0.0 if pos is None else q[pos]


def argmax_flows(idx: DualIndex, q: np.ndarray) -> dict[tuple[int, int], float]:
    """Maximizer of the Lagrangian over the locally enforceable set.

    Each overlay-origin link gives its full capacity to the (tunnel,
    commodity) with the largest positive weight; ties go to the lowest ids.
    """
    flows = {}
    for cap, entries in idx.groups:
        best, arg = 0.0, None
        for tid, k, sp, dp, lps in entries:
            w = _q(q, sp) - _q(q, dp)
            for p in lps:
                w -= q[p]
            if w > best:
                best, arg = w, (tid, k)
        if arg is not None:
            flows[arg] = cap
    return flows


def dual_objective(idx: DualIndex, q: np.ndarray, lam: Sequence[float]) -> tuple[float, dict]:
    """D(q) and the flow vector attaining it."""
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise ValueError("dual variables must be non-negative")
    flows = argmax_flows(idx, q)
    value = float(idx.link_cap @ q[: len(idx.links)]) - float(idx.lam_vector(lam) @ q)
    for (tid, k), f in flows.items():
        t = idx.tunnels[tid]
        w = _q(q, idx.node_pos.get((t.source, k))) - _q(q, idx.node_pos.get((t.sink, k)))
        w -= sum(q[idx.link_pos[e]] for e in t.underlay_links)
        value += f * w
    return value, flows


def subgradient(idx: DualIndex, flows: Mapping[tuple[int, int], float], lam: Sequence[float]) -> np.ndarray:
    g = np.zeros(idx.size)
    g[: len(idx.links)] = idx.link_cap
    for (tid, k), f in flows.items():
        t = idx.tunnels[tid]
        for e in t.underlay_links:
            g[idx.link_pos[e]] -= f
        sp = idx.node_pos.get((t.source, k))
        if sp is not None:
            g[sp] += f
        dp = idx.node_pos.get((t.sink, k))
        if dp is not None:
            g[dp] -= f
    return g - idx.lam_vector(lam)


def dual_step(q: np.ndarray, g: np.ndarray, alpha: float) -> np.ndarray:
    if alpha <= 0:
        raise ValueError("step size must be positive")
    return np.maximum(np.asarray(q, dtype=float) - alpha * np.asarray(g, dtype=float), 0.0)


def constant_step(alpha: float = 1.0):
    return lambda t: alpha


def harmonic_step(scale: float = 1.0):
    return lambda t: scale / t


def subgradient_descent(idx: DualIndex, q0: np.ndarray, lam: Sequence[float], iters: int,
                        step=None) -> np.ndarray:
    """Projected dual subgradient iterations; returns D(q(t)) for t = 0..iters."""
    step = step or constant_step(1.0)
    q = np.asarray(q0, dtype=float)
    values = np.empty(iters + 1)
    for t in range(iters + 1):
        d, flows = dual_objective(idx, q, lam)
        values[t] = d
        if t == iters:
            break
        q = dual_step(q, subgradient(idx, flows, lam), step(t + 1))
    return values


# -- utility maximization oracle --------------------------------------

@dataclass
class UtilityOptimum:
    rates: dict[int, float]
    utility: float
    flows: dict[tuple[int, int], float]


def utility_optimum_oracle(sc: Scenario, weights: Mapping[int, float], caps: Mapping[int, float],
                           capacity: Mapping | None = None, tol: float = 1e-6,
                           max_rounds: int = 500) -> UtilityOptimum:
    """Maximize sum_k w_k log(lambda_k) over fluid-feasible rates, 0 < lambda_k <= cap_k.

    Kelley cutting planes: the log terms are replaced by the minimum of their
    tangent lines, refined at each LP solution until the outer approximation
    is within ``tol`` of the true objective.
    """
    capacity = _capacities(sc, capacity)
    pairs = flow_index(sc)
    ks = [c.id for c in sc.commodities if c.id in weights]
    n = len(pairs)
    nk = len(ks)
    lo = 1e-6
    # column layout: flows | lambda_k | u_k  where t_k = u_k - shift_k
    shift = {k: weights[k] * (abs(math.log(lo)) + abs(math.log(caps[k])) + 2.0) for k in ks}
    lam_col = {k: n + i for i, k in enumerate(ks)}
    u_col = {k: n + nk + i for i, k in enumerate(ks)}
    ncols = n + 2 * nk

    base_rows, base_rhs = [], []
    rows, rhs = _link_rows(sc, pairs, capacity)
    for r, b in zip(rows, rhs):
        base_rows.append(np.concatenate([r, np.zeros(2 * nk)]))
        base_rhs.append(b)
    keys, crows = _conservation_rows(sc, pairs)
    src = {c.id: c.source for c in sc.commodities}
    for (node, k), row in zip(keys, crows):
        full = np.concatenate([row, np.zeros(2 * nk)])
        if k in lam_col and src[k] == node:
            full[lam_col[k]] = 1.0
        base_rows.append(full)
        base_rhs.append(0.0)
    for k in ks:
        r = np.zeros(ncols)
        r[lam_col[k]] = 1.0
        base_rows.append(r)
        base_rhs.append(float(caps[k]))
        r = np.zeros(ncols)
        r[lam_col[k]] = -1.0
        base_rows.append(r)
        base_rhs.append(-lo)

    cuts: list[tuple[int, float]] = []
    for k in ks:
        for a in np.geomspace(lo, caps[k], 12):
            cuts.append((k, float(a)))

    c = np.zeros(ncols)
    for k in ks:
        c[u_col[k]] = 1.0
    for _ in range(max_rounds):
        cut_rows, cut_rhs = [], []
        for k, a in cuts:
            # t_k <= w (log a + (lam - a)/a)
            r = np.zeros(ncols)
            r[u_col[k]] = 1.0
            r[lam_col[k]] = -weights[k] / a
            cut_rows.append(r)
            cut_rhs.append(weights[k] * (math.log(a) - 1.0) + shift[k])
        res = lp_solve(LinearProgram(c, np.array(base_rows + cut_rows), np.array(base_rhs + cut_rhs)))
        if not res.ok:
            raise LPError(f"utility oracle LP: {res.status}")
        x = res.x
        gap = 0.0
        new = []
        for k in ks:
            lam_k = max(x[lam_col[k]], lo)
            t_k = x[u_col[k]] - shift[k]
            err = t_k - weights[k] * math.log(lam_k)
            gap = max(gap, err)
            if err > tol:
                new.append((k, lam_k))
        if not new:
            rates = {k: float(x[lam_col[k]]) for k in ks}
            return UtilityOptimum(rates, sum(weights[k] * math.log(rates[k]) for k in ks),
                                  {p: float(v) for p, v in zip(pairs, x[:n]) if v > FEAS_TOL})
        cuts.extend(new)
    raise LPError("utility oracle did not converge")
