"""Cross-fitted resampling-free test: normalization, fold statistics, p-value.

One fold estimates the dual maximizer, the complementary fold evaluates the
criterion; the studentized fold statistics are aggregated by their maximum and
compared against standard normal quantiles with a Bonferroni factor of two.
Also provides the naive plug-in F-test baseline and the scalar distribution
primitives it needs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc, erfc

from .dual import (
    DualSolution,
    InnerSupport,
    MultiplierBall,
    SolverConfig,
    inner_values,
    resolve_support,
    sieve_dual_value,
)
from .model import DimensionError

_SQRT2 = np.sqrt(2.0)


def normal_cdf(x):
    """Standard normal distribution function, accurate to ~1 ulp via erfc."""
    return 0.5 * erfc(-np.asarray(x, dtype=np.float64) / _SQRT2)


def f_cdf(x, d1, d2):
    """CDF of the F(d1, d2) distribution via the regularized incomplete beta."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x > 0, betainc(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2)), 0.0)
    return out if out.ndim else float(out)


@dataclass
class FoldAssignment:
    """Balanced two-fold split of both samples."""

    d1: np.ndarray
    d2: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    seed: int

    def downstream(self, m):
        return self.d1 if m == 1 else self.d2

    def validation(self, m):
        return self.v1 if m == 1 else self.v2

    def swapped(self):
        return FoldAssignment(self.d2, self.d1, self.v2, self.v1, self.seed)


def split_folds(n_d, n_v, seed):
    """Uniformly random balanced partition from a Philox stream; fold 1 gets the ceiling."""
    if n_d < 2 or n_v < 2:
        raise ValueError("need at least 2 rows per sample to split")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    pd = rng.permutation(n_d)
    pv = rng.permutation(n_v)
    kd = (n_d + 1) // 2
    kv = (n_v + 1) // 2
    return FoldAssignment(np.sort(pd[:kd]), np.sort(pd[kd:]),
                          np.sort(pv[:kv]), np.sort(pv[kv:]), int(seed))


@dataclass
class NormalizationResult:
    """Block-diagonal covariance normalization diag(Omega, Lambda) and its inverse root."""

    Sigma_hat: np.ndarray
    inv_sqrt: np.ndarray
    root: np.ndarray
    eigen_floor_applied: bool

    def ball(self):
        return MultiplierBall.ellipsoid(self.inv_sqrt, self.root)


def _cov(rows):
    if rows.shape[1] == 0:
        return np.empty((0, 0))
    return np.atleast_2d(np.cov(rows, rowvar=False, ddof=1))


def step1_normalize(model, theta, fold_downstream):
    """Covariance normalization from one downstream fold.

    Omega is the sample covariance of q(W, Zhat; theta) with the proxy plugged
    into the z slot; Lambda is the sample covariance of (Zhat, S). Eigenvalues
    below 1e-8 * trace/dim are floored (generalized inverse square root).
    """
    if fold_downstream.n_d < 2:
        raise ValueError("need at least 2 rows to estimate a covariance")
    if fold_downstream.z_hat.shape[1] != model.dim_z:
        raise DimensionError("z_hat (plug-in slot)", model.dim_z, fold_downstream.z_hat.shape[1])
    q = model.eval_batch(fold_downstream.w, fold_downstream.z_hat, theta)
    omega = _cov(q)
    lam = _cov(np.hstack([fold_downstream.z_hat, fold_downstream.s]))
    d = omega.shape[0] + lam.shape[0]
    sigma = np.zeros((d, d))
    sigma[:omega.shape[0], :omega.shape[0]] = omega
    sigma[omega.shape[0]:, omega.shape[0]:] = lam
    sigma = (sigma + sigma.T) / 2
    vals, vecs = np.linalg.eigh(sigma)
    ref = sigma.trace() / d
    if ref <= 0:
        ref = 1.0
    floor = 1e-8 * ref
    floored = bool((vals < floor).any())
    vals = np.maximum(vals, floor)
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T
    root = (vecs * np.sqrt(vals)) @ vecs.T
    return NormalizationResult(sigma, inv_sqrt, root, floored)


@dataclass
class InferenceConfig:
    """Settings for the cross-fitted test."""

    epsilon: float = 1e-6            # variance floor in the studentized statistic
    seed: int = 0                    # drives the fold split and per-fold solver seeds
    solver: SolverConfig = field(default_factory=SolverConfig)


@dataclass
class TestReport:
    """Everything the test computed, indexed by evaluation fold."""

    theta: np.ndarray
    T1: float
    T2: float
    D_hat_1: float
    D_hat_2: float
    V_hat_1: float
    V_hat_2: float
    epsilon: float
    p_value: float
    fold_seed: int
    n_d: int
    n_v: int
    dual_solutions: dict[int, DualSolution]
    solver_converged: dict[int, bool]
    eigen_floor_applied: dict[int, bool]

    def to_dict(self):
        d = {
            "theta": [float(v) for v in np.atleast_1d(self.theta)],
            "T1": self.T1,
            "T2": self.T2,
            "D1": self.D_hat_1,
            "D2": self.D_hat_2,
            "V1": self.V_hat_1,
            "V2": self.V_hat_2,
            "epsilon": self.epsilon,
            "p": self.p_value,
            "fold_seed": self.fold_seed,
            "n_d": self.n_d,
            "n_v": self.n_v,
        }
        for fit_fold, sol in sorted(self.dual_solutions.items()):
            d[f"lambda_fold{fit_fold}"] = [float(v) for v in sol.lam]
            d[f"beta_fold{fit_fold}"] = [float(v) for v in sol.beta]
            d[f"value_fold{fit_fold}"] = sol.value
            d[f"converged_fold{fit_fold}"] = bool(sol.converged)
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def _fold_statistic(u, v, n_floor, epsilon):
    D = float(u.mean() + v.mean())
    V = float(u.var(ddof=1) / len(u) + v.var(ddof=1) / len(v))
    T = np.sqrt(n_floor) * D / np.sqrt(max(n_floor * V, epsilon))
    return D, V, float(T)


def cross_fit_test(model, theta, downstream, validation, sieve, support=None, cfg=None,
                   folds=None):
    """Two-fold cross-fitted test of H0: theta is in the identified set.

    Per fold m: normalize on fold m's downstream rows, fit the dual on fold m,
    evaluate the held-out criterion on the complementary fold, studentize with
    the variance floor, and aggregate p = min(1, 2 * (1 - Phi(max(T1, T2)))).
    Statistics are indexed by their evaluation fold. Solver non-convergence is
    flagged in the report, not fatal.
    """
    cfg = cfg or InferenceConfig()
    theta = np.asarray(theta, dtype=np.float64)
    n_d, n_v = downstream.n_d, validation.n_v
    if n_d < 4 or n_v < 4:
        raise ValueError("cross-fitting needs at least 4 rows per sample (2 per fold)")
    if folds is None:
        folds = split_folds(n_d, n_v, cfg.seed)
    n_floor = min(n_d, n_v)
    c_n = sieve.coeff_bound if sieve.coeff_bound is not None else float(n_floor) ** cfg.solver.c_n_exponent
    sieve_eff = sieve.with_coeff_bound(c_n)
    dim = model.dim_z + downstream.z_hat.shape[1] + downstream.s.shape[1]
    sup = support if support is not None else InnerSupport.auto(
        resolution=cfg.solver.grid_resolution, padding=cfg.solver.padding)
    resolved = resolve_support(sup, validation.points(), dim, model.dim_z)
    D = {}
    V = {}
    T = {}
    sols = {}
    conv = {}
    floored = {}
    for fit_fold in (1, 2):
        eval_fold = 2 if fit_fold == 1 else 1
        fit_d = downstream.subset(folds.downstream(fit_fold))
        fit_v = validation.subset(folds.validation(fit_fold))
        norm = step1_normalize(model, theta, fit_d)
        floored[fit_fold] = norm.eigen_floor_applied
        solver_cfg = cfg.solver
        solver_cfg = SolverConfig(**{**solver_cfg.__dict__, "seed": cfg.seed + 1000 + fit_fold})
        sol = sieve_dual_value(model, theta, fit_d, fit_v, norm.ball(), sieve_eff,
                               resolved, solver_cfg)
        sols[fit_fold] = sol
        conv[fit_fold] = sol.converged
        held_d = downstream.subset(folds.downstream(eval_fold))
        held_v = validation.subset(folds.validation(eval_fold))
        u, _ = inner_values(model, theta, held_d, sol.lam, sol.beta, [sieve_eff], resolved)
        v = sieve_eff(held_v.points()) @ sol.beta
        D[eval_fold], V[eval_fold], T[eval_fold] = _fold_statistic(u, v, n_floor, cfg.epsilon)
    t_max = max(T[1], T[2])
    p = float(min(1.0, 2.0 * (1.0 - normal_cdf(t_max))))
    return TestReport(theta=theta, T1=T[1], T2=T[2], D_hat_1=D[1], D_hat_2=D[2],
                      V_hat_1=V[1], V_hat_2=V[2], epsilon=cfg.epsilon, p_value=p,
                      fold_seed=folds.seed, n_d=n_d, n_v=n_v, dual_solutions=sols,
                      solver_converged=conv, eigen_floor_applied=floored)


def naive_f_test(downstream, theta, variance_floor=1e-12):
    """Plug-in F-test from the OLS of y on (zhat, c), treating the proxy as exact.

    ``downstream`` must carry w = (y, c) and a scalar proxy. Tests H0: the
    coefficient vector equals ``theta`` against an F(2, n-2) reference.
    """
    theta = np.asarray(theta, dtype=np.float64)
    y = downstream.w[:, 0]
    c = downstream.w[:, 1]
    zh = downstream.z_hat[:, 0]
    n = len(y)
    X = np.column_stack([zh, c])
    if np.linalg.matrix_rank(X) < 2:
        raise ValueError("design matrix (zhat, c) is rank deficient")
    XtX = X.T @ X
    bhat = np.linalg.solve(XtX, X.T @ y)
    resid = y - X @ bhat
    s2 = float(resid @ resid) / (n - 2)
    diff = bhat - theta
    F = float(diff @ XtX @ diff) / (2.0 * max(s2, variance_floor))
    p = float(1.0 - f_cdf(F, 2, n - 2))
    return F, p
