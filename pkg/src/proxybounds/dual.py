"""Sieve dual criterion: inner infimum, concave maximization, and variants.

The empirical criterion maximized here is

    (1/n_d) sum_i inf_c [ lambda' qtilde(row_i, c) - beta' phi(c) ]
        + (1/n_v) sum_j beta' phi(point_j)

over lambda in a multiplier ball and ||beta|| <= c_n, where candidates c run
over the opposite sample's support. The default engine is projected
subgradient ascent in the gamma-parameterization (lambda = inv_root @ gamma),
so both feasible sets are Euclidean balls and projections are norm clips; a
cvxpy second-order-cone engine is available for high-accuracy verification on
finite supports.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import DimensionError, DownstreamSample


@dataclass(frozen=True)
class MultiplierBall:
    """Feasible set for the moment multiplier: unit ball or ellipsoid.

    The ellipsoid is {inv_root @ gamma : ||gamma|| <= radius}; ``root`` must be
    the matching inverse (both symmetric, e.g. from one eigendecomposition) so
    membership tests are exact. ``radius=0`` degenerates to the singleton {0}.
    """

    shape: str = "unit-ball"
    inv_root: np.ndarray | None = None
    root: np.ndarray | None = None
    radius: float = 1.0

    @classmethod
    def unit(cls, radius=1.0):
        return cls("unit-ball", None, None, float(radius))

    @classmethod
    def ellipsoid(cls, inv_root, root):
        return cls("ellipsoid", np.asarray(inv_root, dtype=np.float64),
                   np.asarray(root, dtype=np.float64), 1.0)

    def scaled_inv_root(self, d):
        """radius * Sigma^{-1/2} as a dense symmetric (d, d) matrix."""
        if self.shape == "unit-ball":
            return self.radius * np.eye(d)
        if self.inv_root.shape != (d, d):
            raise DimensionError("ball.inv_root", (d, d), self.inv_root.shape)
        return self.radius * self.inv_root

    def contains(self, lam, tol=1e-12):
        lam = np.asarray(lam, dtype=np.float64)
        if self.radius == 0.0:
            return bool(np.all(lam == 0.0))
        gamma = lam if self.shape == "unit-ball" else self.root @ lam
        return float(np.linalg.norm(gamma)) <= self.radius + tol


@dataclass(frozen=True)
class InnerSupport:
    """Candidate points for the inner infimum.

    Either an explicit finite support (``points``), a per-coordinate ``grid``
    of specs ``("levels", values)`` / ``("range", lo, hi, resolution)`` where
    ``lo``/``hi`` of None mean the observed range padded by ``padding``, or
    neither (auto: coordinates with few distinct observed values become
    levels, the rest ranges). At most one range coordinate is supported and it
    must be the scalar proxy slot; it is solved in grouped closed form with
    per-observation kink points and observed values added as candidates.
    """

    points: np.ndarray | None = None
    grid: tuple | None = None
    add_kinks: bool = True
    include_observed: bool = True
    padding: float = 0.05
    resolution: int = 201

    @classmethod
    def from_points(cls, points):
        return cls(points=np.atleast_2d(np.asarray(points, dtype=np.float64)))

    @classmethod
    def auto(cls, **kw):
        return cls(**kw)


@dataclass(frozen=True)
class ResolvedSupport:
    """Support after binding to data: explicit candidate list or grouped 1-d form."""

    kind: str  # "dense" | "grouped"
    dim: int
    points: np.ndarray | None = None          # dense: (m, dim)
    group_points: np.ndarray | None = None    # grouped: (G, dim), continuous coord zeroed
    cont_idx: int = -1
    x_all: np.ndarray | None = None           # grouped: per-group sorted positions, concatenated
    grp_start: np.ndarray | None = None
    add_kinks: bool = True

    def candidate_point(self, group, position):
        pt = self.group_points[group].copy()
        pt[self.cont_idx] = position
        return pt


AUTO_LEVEL_LIMIT = 12
DENSE_CANDIDATE_CAP = 65536


def resolve_support(support, observed, dim, cont_allowed_idx):
    """Bind an InnerSupport to observed points of the enumerated space.

    ``observed`` is an (n, dim) array from the sample whose support is being
    enumerated (or None); ``cont_allowed_idx`` is the only coordinate allowed
    to be continuous, or -1 to forbid range coordinates.
    """
    if isinstance(support, ResolvedSupport):
        if support.dim != dim:
            raise DimensionError("support", dim, support.dim)
        return support
    if support.points is not None:
        pts = support.points
        if pts.shape[0] == 0:
            raise ValueError("inner support is empty")
        if pts.shape[1] != dim:
            raise DimensionError("support.points", dim, pts.shape[1])
        return ResolvedSupport("dense", dim, points=pts)
    if support.grid is not None:
        specs = list(support.grid)
        if len(specs) != dim:
            raise DimensionError("support.grid", f"{dim} coordinate specs", len(specs))
    else:
        if observed is None:
            raise ValueError("auto inner support requires observed points")
        specs = []
        for c in range(dim):
            vals = np.unique(observed[:, c])
            if len(vals) <= AUTO_LEVEL_LIMIT:
                specs.append(("levels", vals))
            else:
                specs.append(("range", None, None, support.resolution))
    coords = []
    cont = []
    for c, spec in enumerate(specs):
        if spec[0] == "levels":
            coords.append(np.sort(np.asarray(spec[1], dtype=np.float64))[::-1])
        elif spec[0] == "range":
            _, lo, hi, res = spec
            if lo is None or hi is None:
                if observed is None:
                    raise ValueError("range spec without bounds requires observed points")
                olo, ohi = float(observed[:, c].min()), float(observed[:, c].max())
                pad = support.padding * max(ohi - olo, 1e-12)
                lo = olo - pad if lo is None else lo
                hi = ohi + pad if hi is None else hi
            pos = np.linspace(float(lo), float(hi), int(res))
            if support.include_observed and observed is not None:
                pos = np.concatenate([pos, observed[:, c]])
            coords.append(np.unique(pos))
            cont.append(c)
        else:
            raise ValueError(f"unknown coordinate spec {spec[0]!r}")
    if not cont:
        pts = np.array(list(itertools.product(*coords)))
        if len(pts) > DENSE_CANDIDATE_CAP:
            raise ValueError(f"discrete support has {len(pts)} cells, cap is {DENSE_CANDIDATE_CAP}")
        return ResolvedSupport("dense", dim, points=pts)
    if len(cont) > 1:
        raise ValueError("at most one continuous (range) coordinate is supported")
    ci = cont[0]
    if ci != cont_allowed_idx:
        raise ValueError(
            f"continuous coordinate must be the scalar proxy slot (index {cont_allowed_idx}), got {ci}"
        )
    disc_cols = [c for c in range(dim) if c != ci]
    keys = np.array(list(itertools.product(*[coords[c] for c in disc_cols])))
    if keys.size == 0:
        keys = np.zeros((1, 0))
    G = keys.shape[0]
    group_points = np.zeros((G, dim))
    for gi in range(G):
        group_points[gi, disc_cols] = keys[gi]
    x = coords[ci]
    x_all = np.ascontiguousarray(np.tile(x, G))
    grp_start = np.arange(G + 1, dtype=np.int64) * len(x)
    return ResolvedSupport("grouped", dim, group_points=group_points, cont_idx=ci,
                           x_all=x_all, grp_start=grp_start, add_kinks=support.add_kinks)


@dataclass
class SolverConfig:
    """Configuration for the dual maximization."""

    engine: str = "subgradient"      # "subgradient" | "socp"
    max_iters: int = 50000
    tol: float = 1e-9                # stop when the certified duality gap falls below this
    improve_tol: float = 1e-9        # stop when best value stalls over improve_window iters
    improve_window: int = 200
    step_scale: float = 1.0          # a in a/sqrt(t), divided by the initial subgradient norm
    polyak: bool = False             # certificate-based Polyak steps instead of a/sqrt(t)
    seed: int = 0
    grid_resolution: int = 201
    padding: float = 0.05
    c_n_exponent: float = 0.4


@dataclass
class DualSolution:
    """Maximizer, value and diagnostics of one dual solve."""

    lam: np.ndarray
    beta: np.ndarray
    value: float
    iterations: int
    subgradient_norm_at_exit: float
    converged: bool
    gap: float
    engine: str
    c_n: float
    block_ends: tuple = ()


@dataclass
class _Problem:
    """Solver-ready arrays shared by both engines."""

    kind: str
    d: int
    Ar: np.ndarray
    Phi: np.ndarray            # (m, K_total), coefficient bound folded in
    mu: np.ndarray             # (K_total,)
    w: np.ndarray              # (n,) weights summing to 1
    block_ends: np.ndarray
    scales: np.ndarray         # per-block coefficient bounds
    support: ResolvedSupport
    # dense
    TA: np.ndarray | None = None
    # grouped
    q_pre: np.ndarray | None = None
    s_abs: np.ndarray | None = None
    zh: np.ndarray | None = None
    PhiKink: np.ndarray | None = None


def _weights(sample_weights, n):
    if sample_weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(sample_weights, dtype=np.float64)
    if w.shape != (n,):
        raise DimensionError("weights", (n,), w.shape)
    if (w < 0).any() or w.sum() <= 0:
        raise ValueError("row weights must be nonnegative with positive sum")
    return w / w.sum()


def _dedup_rows(rows, w):
    # canonical row order makes the solve exactly invariant to input permutations
    uniq, inv = np.unique(rows, axis=0, return_inverse=True)
    wu = np.zeros(len(uniq))
    np.add.at(wu, inv, w)
    return uniq, wu


def _candidate_blocks(cand, d_z, d_zh, partition):
    """Per-sieve views of the candidate points, in each block's own layout."""
    if partition is None:
        return [cand]
    blocks = []
    for z_idx, zh_idx, s_idx in partition:
        cols = list(z_idx) + [d_z + j for j in zh_idx] + [d_z + d_zh + k for k in s_idx]
        blocks.append(cand[:, cols])
    return blocks


def _sieve_blocks(sieves, candidate_blocks, c_ns):
    mats = []
    ends = []
    total = 0
    for sieve, pts, c_n in zip(sieves, candidate_blocks, c_ns):
        mats.append(c_n * sieve(pts))
        total += sieve.K
        ends.append(total)
    return np.ascontiguousarray(np.hstack(mats)), np.array(ends, dtype=np.int64)


def _effective_cn(sieve, n_floor, cfg):
    if sieve.coeff_bound is not None:
        return float(sieve.coeff_bound)
    return float(n_floor) ** cfg.c_n_exponent


def _complexity_warning(c_ns, Ks, n_floor):
    ratio = max(c_ns) * np.sqrt(sum(Ks)) / np.sqrt(n_floor)
    if ratio > 1.0:
        warnings.warn(
            f"sieve complexity c_n*sqrt(K)/sqrt(n) = {ratio:.2f} exceeds 1; "
            "the asymptotic rate condition is strained",
            stacklevel=3,
        )


def _qtilde_dense(model, theta, row_main, row_zh, row_s, cand, d_zh, d_s, swap):
    """qtilde tensor (n, m, d) against explicit candidates.

    swap=False: rows are downstream (w, zhat, s) and candidates validation
    points (z, zhat', s'); row_main holds w. swap=True: rows are validation
    (z, zhat', s') and candidates downstream points (w, zhat, s); row_main
    holds z.
    """
    n = row_main.shape[0]
    m = cand.shape[0]
    d = model.dim_q + d_zh + d_s
    out = np.empty((n, m, d))
    for c in range(m):
        if swap:
            wc = cand[c, :model.dim_w]
            zhc = cand[c, model.dim_w:model.dim_w + d_zh]
            sc = cand[c, model.dim_w + d_zh:]
            q = model.eval_batch(np.repeat(wc[None, :], n, axis=0), row_main, theta)
        else:
            zc = cand[c, :model.dim_z]
            zhc = cand[c, model.dim_z:model.dim_z + d_zh]
            sc = cand[c, model.dim_z + d_zh:]
            q = model.eval_batch(row_main, np.repeat(zc[None, :], n, axis=0), theta)
        out[:, c, :model.dim_q] = q
        out[:, c, model.dim_q:model.dim_q + d_zh] = np.abs(row_zh[:, 0, :] - zhc)
        out[:, c, model.dim_q + d_zh:] = np.abs(row_s[:, 0, :] - sc)
    return out


def _build_dense(model, theta, rows, weights, support, sieves, c_ns, mu, ball,
                 partition, swap):
    d0 = rows[0].shape[1]
    d_zh = rows[1].shape[1]
    d_s = rows[2].shape[1]
    row_feat = np.hstack(rows)
    w = _weights(weights, row_feat.shape[0])
    row_feat, w = _dedup_rows(row_feat, w)
    row_main = row_feat[:, :d0]
    row_zh = row_feat[:, d0:d0 + d_zh][:, None, :]
    row_s = row_feat[:, d0 + d_zh:][:, None, :]
    Qt = _qtilde_dense(model, theta, row_main, row_zh, row_s, support.points, d_zh, d_s, swap)
    d = Qt.shape[2]
    Ar = ball.scaled_inv_root(d)
    TA = np.ascontiguousarray(Qt @ Ar)
    if swap:
        cand_blocks = [support.points]
    else:
        cand_blocks = _candidate_blocks(support.points, model.dim_z, d_zh, partition)
    Phi, ends = _sieve_blocks(sieves, cand_blocks, c_ns)
    return _Problem("dense", d, Ar, Phi, mu, w, ends, np.array(c_ns), support, TA=TA)


def _build_grouped(model, theta, rows, weights, support, sieves, c_ns, mu, ball, partition):
    d0 = rows[0].shape[1]
    d_zh = rows[1].shape[1]
    d_s = rows[2].shape[1]
    if d_zh != 1:
        raise ValueError("grouped inner support requires a scalar proxy coordinate")
    row_feat = np.hstack(rows)
    w = _weights(weights, row_feat.shape[0])
    row_feat, w = _dedup_rows(row_feat, w)
    n = row_feat.shape[0]
    row_main = row_feat[:, :d0]
    zh = np.ascontiguousarray(row_feat[:, d0])
    row_s = row_feat[:, d0 + 1:]
    gp = support.group_points
    G = gp.shape[0]
    d_z = model.dim_z
    q_pre = np.empty((n, G, model.dim_q))
    s_abs = np.empty((n, G, d_s))
    for g in range(G):
        zg = gp[g, :d_z]
        sg = gp[g, d_z + 1:]
        q_pre[:, g, :] = model.eval_batch(row_main, np.repeat(zg[None, :], n, axis=0), theta)
        s_abs[:, g, :] = np.abs(row_s - sg)
    d = model.dim_q + 1 + d_s
    Ar = ball.scaled_inv_root(d)
    m = support.x_all.shape[0]
    cand_pts = np.empty((m, support.dim))
    for g in range(G):
        lo, hi = support.grp_start[g], support.grp_start[g + 1]
        cand_pts[lo:hi] = gp[g]
        cand_pts[lo:hi, support.cont_idx] = support.x_all[lo:hi]
    kink_pts = np.empty((n * G, support.dim))
    for g in range(G):
        kink_pts[g * n:(g + 1) * n] = gp[g]
        kink_pts[g * n:(g + 1) * n, support.cont_idx] = zh
    Phi, ends = _sieve_blocks(sieves, _candidate_blocks(cand_pts, d_z, d_zh, partition), c_ns)
    PhiK, _ = _sieve_blocks(sieves, _candidate_blocks(kink_pts, d_z, d_zh, partition), c_ns)
    PhiKink = np.ascontiguousarray(PhiK.reshape(G, n, -1).transpose(1, 0, 2))
    return _Problem("grouped", d, Ar, Phi, mu, w, ends, np.array(c_ns), support,
                    q_pre=np.ascontiguousarray(q_pre), s_abs=np.ascontiguousarray(s_abs),
                    zh=zh, PhiKink=PhiKink)


def _solve_socp(problem):
    import cvxpy as cp

    if problem.kind != "dense":
        raise ValueError("the socp engine requires an explicit finite support")
    TA, Phi, mu, w = problem.TA, problem.Phi, problem.mu, problem.w
    n, m, d = TA.shape
    K = Phi.shape[1]
    gam = cp.Variable(d)
    bet = cp.Variable(K)
    u = cp.Variable(n)
    cons = [cp.norm(gam) <= 1]
    b0 = 0
    for b1 in problem.block_ends:
        cons.append(cp.norm(bet[b0:int(b1)]) <= 1)
        b0 = int(b1)
    for c in range(m):
        cons.append(u <= TA[:, c, :] @ gam - Phi[c] @ bet)
    prob = cp.Problem(cp.Maximize(w @ u + mu @ bet), cons)
    prob.solve(solver=cp.CLARABEL)
    if gam.value is None:
        raise RuntimeError(f"socp engine failed: status {prob.status}")
    g = np.asarray(gam.value, dtype=np.float64).reshape(d)
    b = np.asarray(bet.value, dtype=np.float64).reshape(K)
    ng = np.linalg.norm(g)
    if ng > 1.0:
        g /= ng
    b0 = 0
    for b1 in problem.block_ends:
        nb = np.linalg.norm(b[b0:int(b1)])
        if nb > 1.0:
            b[b0:int(b1)] /= nb
        b0 = int(b1)
    # report the exact objective at the clipped (hence feasible) point
    uvals, _ = _kernels.eval_dense(TA, Phi, g, b)
    value = float(problem.w @ uvals + mu @ b)
    if value < 0.0:
        g = np.zeros(d)
        b = np.zeros(K)
        value = 0.0
    return g, b, value, 1, 0.0, True, float("nan")


def _solve_problem(problem, cfg):
    if cfg.engine == "socp":
        return _solve_socp(problem)
    if cfg.engine != "subgradient":
        raise ValueError(f"unknown solver engine {cfg.engine!r}")
    args = (problem.mu, problem.w, problem.block_ends, cfg.max_iters, cfg.step_scale,
            cfg.tol, cfg.improve_tol, cfg.improve_window, cfg.polyak)
    if problem.kind == "dense":
        g, b, value, iters, gnorm, stop, gap = _kernels.solve_dense(
            problem.TA, problem.Phi, *args)
    else:
        g, b, value, iters, gnorm, stop, gap = _kernels.solve_grouped(
            problem.Ar, problem.q_pre, problem.s_abs, problem.zh,
            problem.support.x_all, problem.support.grp_start,
            problem.Phi, problem.PhiKink, problem.support.add_kinks, *args)
    return g, b, value, iters, gnorm, stop != _kernels.STOP_CAP, gap


def _finish(problem, cfg, g, b, value, iters, gnorm, conv, gap):
    # both kernel families parameterize lambda = Ar @ gamma
    lam = problem.Ar @ g
    beta = b.copy()
    b0 = 0
    for bi, b1 in enumerate(problem.block_ends):
        beta[b0:int(b1)] *= problem.scales[bi]
        b0 = int(b1)
    return DualSolution(lam=lam, beta=beta, value=float(value), iterations=int(iters),
                        subgradient_norm_at_exit=float(gnorm), converged=bool(conv),
                        gap=float(gap), engine=cfg.engine,
                        c_n=float(problem.scales.max()),
                        block_ends=tuple(int(x) for x in problem.block_ends))


def _check_samples(model, f_sample, g_sample):
    if f_sample.n_d == 0 or g_sample.n_v == 0:
        raise ValueError("samples must be non-empty")
    if f_sample.w.shape[1] != model.dim_w:
        raise DimensionError("f_sample.w", model.dim_w, f_sample.w.shape[1])
    if g_sample.z.shape[1] != model.dim_z:
        raise DimensionError("g_sample.z", model.dim_z, g_sample.z.shape[1])
    if f_sample.z_hat.shape[1] != g_sample.z_hat_prime.shape[1]:
        raise DimensionError("g_sample.z_hat_prime", f_sample.z_hat.shape[1],
                             g_sample.z_hat_prime.shape[1])
    if f_sample.s.shape[1] != g_sample.s_prime.shape[1]:
        raise DimensionError("g_sample.s_prime", f_sample.s.shape[1], g_sample.s_prime.shape[1])


def _full_partition(d_z, d_zh, d_s):
    return [(tuple(range(d_z)), tuple(range(d_zh)), tuple(range(d_s)))]


def _validate_partition(partition, d_z, d_zh, d_s):
    seen = {"z": set(), "zhat": set(), "s": set()}
    dims = {"z": d_z, "zhat": d_zh, "s": d_s}
    for block in partition:
        for name, idx in zip(("z", "zhat", "s"), block):
            for i in idx:
                if i < 0 or i >= dims[name]:
                    raise ValueError(f"partition index {i} out of range for {name}")
                if i in seen[name]:
                    raise ValueError(f"partition blocks overlap on {name} index {i}")
                seen[name].add(i)
    for name in seen:
        if seen[name] != set(range(dims[name])):
            raise ValueError(f"partition must cover all {name} coordinates")


def sieve_dual_value(model, theta, f_sample, g_sample, ball, sieve, support=None,
                     solver_cfg=None, f_weights=None, g_weights=None):
    """Empirical sieve dual criterion with the potential on the validation support.

    Returns a :class:`DualSolution`; the value is always >= 0 because (0, 0)
    is feasible with objective 0. Hitting the iteration cap without a stopping
    rule firing returns the best iterate with ``converged=False``. When
    ``sieve.coeff_bound`` is None, c_n defaults to min(n_d, n_v)**c_n_exponent.
    """
    return multi_marginal_dual_value(
        model, theta, f_sample, [g_sample], None, ball, [sieve], support,
        solver_cfg, f_weights=f_weights,
        g_weights=[g_weights] if g_weights is not None else None)


def multi_marginal_dual_value(model, theta, f_sample, g_samples, partition, ball,
                              sieves, support=None, solver_cfg=None,
                              f_weights=None, g_weights=None):
    """Sieve dual with one potential per validation marginal (L >= 1).

    ``partition`` lists, per marginal, the (z, zhat, s) coordinate index
    tuples of its block; None is allowed only for L=1 and means the full
    block, in which case this is exactly :func:`sieve_dual_value`.
    """
    cfg = solver_cfg or SolverConfig()
    L = len(g_samples)
    if len(sieves) != L:
        raise DimensionError("sieves", f"{L} blocks", len(sieves))
    d_zh = f_sample.z_hat.shape[1]
    d_s = f_sample.s.shape[1]
    if partition is None:
        if L != 1:
            raise ValueError("an explicit partition is required when L > 1")
        partition = _full_partition(model.dim_z, d_zh, d_s)
        _check_samples(model, f_sample, g_samples[0])
        part = None
    else:
        _validate_partition(partition, model.dim_z, d_zh, d_s)
        if f_sample.n_d == 0 or any(g.n_v == 0 for g in g_samples):
            raise ValueError("samples must be non-empty")
        if f_sample.w.shape[1] != model.dim_w:
            raise DimensionError("f_sample.w", model.dim_w, f_sample.w.shape[1])
        part = partition
    n_floor = min([f_sample.n_d] + [g.n_v for g in g_samples])
    c_ns = [_effective_cn(sv, n_floor, cfg) for sv in sieves]
    _complexity_warning(c_ns, [sv.K for sv in sieves], n_floor)
    mu_parts = []
    for l, (g_sample, sieve) in enumerate(zip(g_samples, sieves)):
        gw = _weights(None if g_weights is None else g_weights[l], g_sample.n_v)
        mu_parts.append(c_ns[l] * (gw @ sieve(g_sample.points())))
    mu = np.concatenate(mu_parts)
    if support is None:
        support = InnerSupport.auto(resolution=cfg.grid_resolution, padding=cfg.padding)
    observed = g_samples[0].points() if L == 1 else None
    dim = model.dim_z + d_zh + d_s
    resolved = resolve_support(support, observed, dim, model.dim_z)
    rows = (f_sample.w, f_sample.z_hat, f_sample.s)
    if resolved.kind == "dense":
        problem = _build_dense(model, theta, rows, f_weights, resolved, sieves, c_ns,
                               mu, ball, part, swap=False)
    else:
        problem = _build_grouped(model, theta, rows, f_weights, resolved, sieves, c_ns,
                                 mu, ball, part)
    out = _solve_problem(problem, cfg)
    return _finish(problem, cfg, *out)


def sieve_dual_value_onesided(model, theta, f_sample, g_sample, ball, sieve, support=None,
                              solver_cfg=None, f_weights=None, g_weights=None):
    """Mirror criterion with the potential on the downstream support.

    The inner infimum runs over downstream candidates (w, zhat, s) and the
    linear term averages phi over the downstream sample. Only explicit or
    fully discrete supports are accepted on this side.
    """
    cfg = solver_cfg or SolverConfig()
    _check_samples(model, f_sample, g_sample)
    d_zh = f_sample.z_hat.shape[1]
    d_s = f_sample.s.shape[1]
    n_floor = min(f_sample.n_d, g_sample.n_v)
    c_n = _effective_cn(sieve, n_floor, cfg)
    _complexity_warning([c_n], [sieve.K], n_floor)
    fw = _weights(f_weights, f_sample.n_d)
    downstream_pts = np.hstack([f_sample.w, f_sample.z_hat, f_sample.s])
    mu = c_n * (fw @ sieve(downstream_pts))
    if support is None:
        support = InnerSupport.auto(resolution=cfg.grid_resolution, padding=cfg.padding)
    dim = model.dim_w + d_zh + d_s
    resolved = resolve_support(support, downstream_pts, dim, -1)
    rows = (g_sample.z, g_sample.z_hat_prime, g_sample.s_prime)
    problem = _build_dense(model, theta, rows, g_weights, resolved, [sieve], [c_n],
                           mu, ball, None, swap=True)
    out = _solve_problem(problem, cfg)
    return _finish(problem, cfg, *out)


def inner_values(model, theta, f_sample, lam, beta, sieves, resolved, partition=None):
    """Per-row inner infimum over validation candidates at fixed (lambda, beta).

    Rows keep their original order (no deduplication); returns (values, argmin
    points).
    """
    lam = np.ascontiguousarray(np.asarray(lam, dtype=np.float64))
    beta = np.ascontiguousarray(np.asarray(beta, dtype=np.float64))
    d_zh = f_sample.z_hat.shape[1]
    d_s = f_sample.s.shape[1]
    part = partition if partition is not None and len(sieves) > 1 else None
    ones = [1.0] * len(sieves)
    n = f_sample.n_d
    row_zh = f_sample.z_hat[:, None, :]
    row_s = f_sample.s[:, None, :]
    if resolved.kind == "dense":
        Qt = _qtilde_dense(model, theta, f_sample.w, row_zh, row_s, resolved.points,
                           d_zh, d_s, swap=False)
        cand_blocks = _candidate_blocks(resolved.points, model.dim_z, d_zh, part)
        Phi, _ = _sieve_blocks(sieves, cand_blocks, ones)
        u, arg = _kernels.eval_dense(np.ascontiguousarray(Qt), Phi, lam, beta)
        return u, resolved.points[arg]
    gp = resolved.group_points
    G = gp.shape[0]
    q_pre = np.empty((n, G, model.dim_q))
    s_abs = np.empty((n, G, d_s))
    for g in range(G):
        zg = gp[g, :model.dim_z]
        sg = gp[g, model.dim_z + 1:]
        q_pre[:, g, :] = model.eval_batch(f_sample.w, np.repeat(zg[None, :], n, axis=0), theta)
        s_abs[:, g, :] = np.abs(f_sample.s - sg)
    zh = np.ascontiguousarray(f_sample.z_hat[:, 0])
    m = resolved.x_all.shape[0]
    cand_pts = np.empty((m, resolved.dim))
    for g in range(G):
        lo, hi = resolved.grp_start[g], resolved.grp_start[g + 1]
        cand_pts[lo:hi] = gp[g]
        cand_pts[lo:hi, resolved.cont_idx] = resolved.x_all[lo:hi]
    kink_pts = np.empty((n * G, resolved.dim))
    for g in range(G):
        kink_pts[g * n:(g + 1) * n] = gp[g]
        kink_pts[g * n:(g + 1) * n, resolved.cont_idx] = zh
    Phi, _ = _sieve_blocks(sieves, _candidate_blocks(cand_pts, model.dim_z, d_zh, part), ones)
    PhiK, _ = _sieve_blocks(sieves, _candidate_blocks(kink_pts, model.dim_z, d_zh, part), ones)
    PhiKink = np.ascontiguousarray(PhiK.reshape(G, n, -1).transpose(1, 0, 2))
    d = model.dim_q + 1 + d_s
    eye = np.eye(d)
    args = (eye, np.ascontiguousarray(q_pre), np.ascontiguousarray(s_abs), zh,
            resolved.x_all, resolved.grp_start, Phi, PhiKink, resolved.add_kinks, lam, beta)
    u = _kernels.eval_grouped(*args)
    groups, cands = _kernels.argmin_grouped(*args)
    pts = np.empty((n, resolved.dim))
    for i in range(n):
        pos = resolved.x_all[cands[i]] if cands[i] >= 0 else zh[i]
        pts[i] = resolved.candidate_point(groups[i], pos)
    return u, pts


def inner_inf(model, theta, w, z_hat, s, lam, beta, sieve, support):
    """Inner infimum for a single downstream row; returns (value, argmin point).

    Ties keep the first candidate in enumeration order. The support must be
    explicit or carry bounded grid specs, since there is no observed sample to
    infer ranges from.
    """
    w = np.atleast_1d(np.asarray(w, dtype=np.float64))
    z_hat = np.atleast_1d(np.asarray(z_hat, dtype=np.float64))
    s = np.atleast_1d(np.asarray(s, dtype=np.float64)) if np.asarray(s).size else np.empty(0)
    sample = DownstreamSample(w[None, :], z_hat[None, :],
                              s[None, :] if s.size else np.empty((1, 0)))
    dim = model.dim_z + z_hat.shape[0] + s.shape[0]
    resolved = resolve_support(support, None, dim, model.dim_z)
    u, pts = inner_values(model, theta, sample, lam, beta, [sieve], resolved)
    return float(u[0]), pts[0]
