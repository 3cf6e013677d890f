"""Exact optimal-transport LP machinery on finite supports.

Used to verify the sieve dual solver on small instances: a transportation
simplex for the inner minimization, and a max-min oracle that computes the
criterion value as the distance from the origin to the polytope of transported
augmented moments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DimensionError


@dataclass
class DiscreteMarginal:
    """Finitely supported distribution: atoms (rows of ``points``) with weights ``mass``."""

    points: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.mass = np.asarray(self.mass, dtype=np.float64)
        if self.points.shape[0] != self.mass.shape[0]:
            raise DimensionError("mass", f"{self.points.shape[0]} weights", self.mass.shape[0])
        if (self.mass < 0).any():
            raise ValueError("marginal weights must be nonnegative")
        if abs(self.mass.sum() - 1.0) > 1e-12:
            raise ValueError(f"marginal weights sum to {self.mass.sum()!r}, not 1")
        if len(np.unique(self.points, axis=0)) != self.points.shape[0]:
            raise ValueError("marginal support atoms must be pairwise distinct")

    @property
    def n_atoms(self):
        return self.points.shape[0]


@dataclass
class Coupling:
    """Joint mass matrix indexed (F-atom, G-atom)."""

    plan: np.ndarray

    def marginals(self):
        return self.plan.sum(axis=1), self.plan.sum(axis=0)


class OTConvergenceError(RuntimeError):
    def __init__(self, message, gap):
        super().__init__(f"{message} (last gap estimate {gap:.3e})")
        self.gap = gap


def _northwest_corner(fm, gm):
    """Deterministic initial basic feasible solution for the transportation LP."""
    nf, ng = len(fm), len(gm)
    plan = np.zeros((nf, ng))
    basis = []
    a = fm.copy()
    b = gm.copy()
    i = j = 0
    while i < nf and j < ng:
        t = min(a[i], b[j])
        plan[i, j] = t
        basis.append((i, j))
        a[i] -= t
        b[j] -= t
        # advance one index only, keeping |basis| = nf + ng - 1 under degeneracy
        if i == nf - 1 and j == ng - 1:
            break
        if a[i] <= b[j] and i < nf - 1:
            i += 1
        else:
            j += 1
    return plan, basis


def _potentials(cost, basis, nf, ng):
    u = np.full(nf, np.nan)
    v = np.full(ng, np.nan)
    u[0] = 0.0
    by_row = [[] for _ in range(nf)]
    by_col = [[] for _ in range(ng)]
    for (i, j) in basis:
        by_row[i].append(j)
        by_col[j].append(i)
    stack = [("r", 0)]
    while stack:
        kind, k = stack.pop()
        if kind == "r":
            for j in by_row[k]:
                if np.isnan(v[j]):
                    v[j] = cost[k, j] - u[k]
                    stack.append(("c", j))
        else:
            for i in by_col[k]:
                if np.isnan(u[i]):
                    u[i] = cost[i, k] - v[k]
                    stack.append(("r", i))
    return u, v


def _find_cycle(basis, enter):
    """Unique cycle in the basis tree plus the entering cell, as alternating path."""
    cells = list(basis) + [enter]
    by_row = {}
    by_col = {}
    for c in cells:
        by_row.setdefault(c[0], set()).add(c)
        by_col.setdefault(c[1], set()).add(c)
    # prune leaves until only the cycle remains
    active = set(cells)
    changed = True
    while changed:
        changed = False
        for c in list(active):
            if len(by_row[c[0]] & active) == 1 or len(by_col[c[1]] & active) == 1:
                active.discard(c)
                changed = True
    # order the cycle starting from the entering cell, alternating row/col moves
    cycle = [enter]
    move_row = True
    while True:
        cur = cycle[-1]
        pool = by_row[cur[0]] if move_row else by_col[cur[1]]
        nxt = [c for c in pool & active if c != cur and c not in cycle[1:]]
        nxt = [c for c in nxt if c != enter or len(cycle) > 2]
        if not nxt:
            break
        cell = sorted(nxt)[0]
        if cell == enter:
            break
        cycle.append(cell)
        move_row = not move_row
    return cycle


def solve_primal_ot(f, g, cost, max_pivots=100000):
    """Minimize sum(plan * cost) over couplings of two discrete marginals.

    Transportation simplex with northwest-corner start and lowest-index
    (Bland) pivoting, so runs are deterministic and finite. Returns
    ``(value, Coupling)`` at the LP minimum.
    """
    cost = np.asarray(cost, dtype=np.float64)
    nf, ng = f.n_atoms, g.n_atoms
    if cost.shape != (nf, ng):
        raise DimensionError("cost", (nf, ng), cost.shape)
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    plan, basis = _northwest_corner(f.mass, g.mass)
    for _ in range(max_pivots):
        u, v = _potentials(cost, basis, nf, ng)
        red = cost - u[:, None] - v[None, :]
        in_basis = np.zeros((nf, ng), dtype=bool)
        for (i, j) in basis:
            in_basis[i, j] = True
        red[in_basis] = 0.0
        cand = np.argwhere(red < -1e-11)
        if cand.size == 0:
            break
        enter = tuple(cand[np.lexsort((cand[:, 1], cand[:, 0]))][0])  # lowest index
        cycle = _find_cycle(basis, enter)
        minus = cycle[1::2]
        t_idx = min(range(len(minus)), key=lambda k: (plan[minus[k]], minus[k]))
        t = plan[minus[t_idx]]
        leave = minus[t_idx]
        for k, cell in enumerate(cycle):
            plan[cell] += t if k % 2 == 0 else -t
        plan[leave] = 0.0
        basis.remove(leave)
        basis.append(enter)
    else:
        raise OTConvergenceError("transportation simplex hit the pivot cap", float(red.min()))
    value = float((plan * cost).sum())
    return value, Coupling(plan)


def _min_norm_point(lmo, dim, tol=1e-12, max_iters=1000):
    """Wolfe's minimum-norm-point algorithm over a polytope given by an LMO.

    ``lmo(direction)`` returns the polytope point minimizing the inner product
    with ``direction``. Returns (point, gap) where gap bounds ||x||^2 - ||x*||^2.
    """
    v0 = lmo(np.zeros(dim))
    S = [v0]
    w = np.array([1.0])
    x = v0.copy()
    gap = np.inf
    for _ in range(max_iters):
        v = lmo(x)
        gap = float(x @ x - x @ v)
        if gap <= tol * max(1.0, float(x @ x)):
            return x, gap
        if any(np.array_equal(v, s) for s in S):
            return x, gap
        S.append(v)
        w = np.append(w, 0.0)
        while True:
            # min-norm point in the affine hull of S
            M = np.array(S).T
            k = len(S)
            kkt = np.zeros((k + 1, k + 1))
            kkt[:k, :k] = M.T @ M
            kkt[:k, k] = 1.0
            kkt[k, :k] = 1.0
            rhs = np.zeros(k + 1)
            rhs[k] = 1.0
            alpha = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:k]
            if (alpha >= -1e-12).all():
                w = np.clip(alpha, 0.0, None)
                w /= w.sum()
                break
            shrink = w - alpha
            ratios = [w[i] / shrink[i] if shrink[i] > 1e-15 else np.inf for i in range(k)]
            theta = min(ratios)
            w = (1 - theta) * w + theta * alpha
            keep = w > 1e-14
            if keep.all():
                keep[int(np.argmin(w))] = False
            S = [s for s, kp in zip(S, keep) if kp]
            w = w[keep]
            w /= w.sum()
        x = np.array(S).T @ w
    return x, gap


def _augmented_tensor(model, theta, f, g, d_zhat):
    """q-tilde evaluated at every (F-atom, G-atom) pair: shape (nf, ng, d)."""
    dw, dz = model.dim_w, model.dim_z
    d_zh = f.points.shape[1] - dw if d_zhat is None else d_zhat
    d_s = f.points.shape[1] - dw - d_zh
    if d_s < 0:
        raise DimensionError("f.points", f">= {dw + d_zh} columns", f.points.shape[1])
    if g.points.shape[1] != dz + d_zh + d_s:
        raise DimensionError("g.points", dz + d_zh + d_s, g.points.shape[1])
    wf, zhf, sf = f.points[:, :dw], f.points[:, dw:dw + d_zh], f.points[:, dw + d_zh:]
    zg, zhg, sg = g.points[:, :dz], g.points[:, dz:dz + d_zh], g.points[:, dz + d_zh:]
    nf, ng = f.n_atoms, g.n_atoms
    d = model.dim_q + d_zh + d_s
    qt = np.empty((nf, ng, d))
    for j in range(ng):
        q = model.eval_batch(wf, np.repeat(zg[j][None, :], nf, axis=0), theta)
        qt[:, j, :model.dim_q] = q
        qt[:, j, model.dim_q:model.dim_q + d_zh] = np.abs(zhf - zhg[j])
        qt[:, j, model.dim_q + d_zh:] = np.abs(sf - sg[j])
    return qt


def _maxmin_from_tensor(qt, scale_root, lp_for_cost, tol=1e-7, max_iters=1000):
    """Shared max-min evaluation: min-norm point of {E_H[scaled q-tilde]} + LP certificate."""
    d = qt.shape[-1]
    flat = qt.reshape(-1, d) @ scale_root.T

    def lmo(direction):
        costs = flat @ direction if direction.any() else flat[:, 0] * 0.0
        value, plan = lp_for_cost(costs.reshape(qt.shape[:-1]))
        return plan.reshape(-1) @ flat

    x, gap = _min_norm_point(lmo, d, max_iters=max_iters)
    value = float(np.linalg.norm(x))
    # certificate: the LP value at the implied maximizer must reach the min-norm value
    direction = x / value if value > 0 else np.zeros(d)
    lp_value, _ = lp_for_cost((flat @ direction).reshape(qt.shape[:-1]))
    if value - lp_value > tol:
        raise OTConvergenceError("max-min oracle failed to certify its value", value - lp_value)
    return value


def maxmin_oracle(model, theta, f, g, ball, d_zhat=None, tol=1e-7, max_iters=1000):
    """Max over multipliers in ``ball`` of the minimal transported augmented moment.

    Evaluates max_{lambda in ball} min_{H in Pi(f, g)} E_H[lambda' q-tilde] for
    finite marginals ``f`` over (w, zhat, s) and ``g`` over (z, zhat', s').
    Strong duality turns this into the distance from the origin to the polytope
    of transported (ball-normalized) moment vectors, found by Wolfe's
    minimum-norm-point method with the transportation LP as the inner
    evaluator; the returned value carries an LP certificate at tolerance
    ``tol``.
    """
    qt = _augmented_tensor(model, theta, f, g, d_zhat)
    d = qt.shape[-1]
    root = ball.scaled_inv_root(d)
    if not root.any():
        return 0.0

    def lp_for_cost(cost):
        value, coup = solve_primal_ot(f, g, cost)
        return value, coup.plan

    return _maxmin_from_tensor(qt, root, lp_for_cost, tol=tol, max_iters=max_iters)


def solve_multimarginal_ot(marginals, cost):
    """Minimize sum(plan * cost) over tensors with the given axis marginals.

    Explicit LP over the joint tensor (scipy HiGHS); intended for small
    verification instances only.
    """
    from scipy.optimize import linprog

    shape = tuple(m.n_atoms for m in marginals)
    cost = np.asarray(cost, dtype=np.float64)
    if cost.shape != shape:
        raise DimensionError("cost", shape, cost.shape)
    n = int(np.prod(shape))
    rows = []
    rhs = []
    for ax, m in enumerate(marginals):
        for k in range(shape[ax]):
            mask = np.zeros(shape)
            idx = [slice(None)] * len(shape)
            idx[ax] = k
            mask[tuple(idx)] = 1.0
            rows.append(mask.reshape(-1))
            rhs.append(m.mass[k])
    res = linprog(
        cost.reshape(-1), A_eq=np.array(rows), b_eq=np.array(rhs), bounds=(0, None), method="highs"
    )
    if not res.success:
        raise OTConvergenceError(f"multi-marginal LP failed: {res.message}", np.nan)
    return float(res.fun), res.x.reshape(shape)


def maxmin_multimarginal_oracle(qt, marginals, ball, tol=1e-7, max_iters=1000):
    """Max-min criterion with L+1 marginals, via the tensor LP as inner evaluator.

    ``qt`` holds the augmented moment vector at every atom combination, with
    shape ``(*atom_counts, d)``.
    """
    qt = np.asarray(qt, dtype=np.float64)
    d = qt.shape[-1]
    root = ball.scaled_inv_root(d)
    if not root.any():
        return 0.0

    def lp_for_cost(cost):
        return solve_multimarginal_ot(marginals, cost)

    return _maxmin_from_tensor(qt, root, lp_for_cost, tol=tol, max_iters=max_iters)
