"""Simulation data generator and the upstream logistic-LASSO proxy trainer.

The design: mutually independent N(0,1) draws (V, U, xi, nu) build an
endogenous high-dimensional predictor block, a latent binary regressor driven
by a Gumbel shock whose scale controls how predictable the target is, and a
downstream outcome Y = Z*theta1 + C*theta2 + eps with eps = xi + U correlated
with the endogenous predictors through U.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

NOISE_LEVELS = {"s_L": 0.1, "s_M": 1.0, "s_H": 3.0}

# fixed sub-stream keys under the DGP seed
KAPPA_STREAM = 0
TRAIN_STREAM = 1
EVAL_STREAM = 2


def stream(seed, *key):
    """Counter-based generator for a named stream under a master seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed),) + tuple(int(k) for k in key))))


@dataclass(frozen=True)
class DgpConfig:
    """Design parameters; ``noise_scale`` is a scalar or an (inside, outside) pair.

    A pair (s1, s2) makes the Gumbel scale s1 where |X_1| > 1 and s2 where
    |X_1| <= 1 (heteroskedastic stratified design).
    """

    noise_scale: float | tuple = 1.0
    dim_x_ex: int = 10
    dim_x_en: int = 490
    theta0: tuple = (1.0, 1.0)
    kappa0: float | None = None
    seed: int = 0

    @property
    def dim_x(self):
        return self.dim_x_ex + self.dim_x_en

    def with_kappa(self, **kw):
        """Return a copy with kappa0 calibrated (no-op if already set)."""
        if self.kappa0 is not None:
            return self
        return replace(self, kappa0=calibrate_kappa0(self, **kw))


def _sigma_eta(config, x1):
    s = config.noise_scale
    if np.isscalar(s):
        return np.full_like(x1, float(s))
    s1, s2 = s
    return np.where(np.abs(x1) > 1.0, float(s1), float(s2))


def _gumbel(rng, n):
    u = np.clip(rng.random(n), 1e-300, 1.0 - 1e-16)
    return -np.log(-np.log(u))


def _latent_parts(config, n, rng):
    """Draws (Q, x1, sigma, eta) needed for the Z equation; order of draws is fixed."""
    V = rng.standard_normal(n)
    U = rng.standard_normal(n)
    xi = rng.standard_normal(n)
    nu = rng.standard_normal(n)
    zeta_ex = rng.standard_normal((n, config.dim_x_ex))
    zeta_en = rng.standard_normal((n, config.dim_x_en))
    X_ex = V[:, None] + zeta_ex
    X_en = (V + U)[:, None] + zeta_en
    Q = X_ex.sum(axis=1) / np.sqrt(config.dim_x_ex)
    sigma = _sigma_eta(config, X_ex[:, 0])
    eta = _gumbel(rng, n)
    return V, U, xi, nu, X_ex, X_en, Q, sigma, eta


def generate(config, n, rng=None):
    """Draw n rows of (Y, C, X, Z) from the design.

    ``config.kappa0`` must be set (see :func:`calibrate_kappa0`). ``rng``
    defaults to the stream (config.seed, 10).
    """
    if config.kappa0 is None:
        raise ValueError("kappa0 is not calibrated; call calibrate_kappa0 or with_kappa first")
    if n < 1:
        raise ValueError("n must be >= 1")
    if rng is None:
        rng = stream(config.seed, 10)
    V, U, xi, nu, X_ex, X_en, Q, sigma, eta = _latent_parts(config, n, rng)
    eps = xi + U
    C = V + nu
    Z = (config.kappa0 + Q + sigma * eta > 0).astype(np.float64)
    t1, t2 = config.theta0
    Y = Z * t1 + C * t2 + eps
    X = np.hstack([X_ex, X_en])
    return Y, C, X, Z


def calibrate_kappa0(config, n_draws=1_000_000, tol=1e-3, bracket=(-20.0, 20.0)):
    """Bisect the intercept so the simulated P(Z=1) hits 0.5.

    Uses one fixed set of common random numbers (stream (seed, KAPPA_STREAM)),
    so the result is deterministic for a given config.
    """
    rng = stream(config.seed, KAPPA_STREAM)
    V = rng.standard_normal(n_draws)
    zeta_ex = rng.standard_normal((n_draws, config.dim_x_ex))
    X_ex = V[:, None] + zeta_ex
    Q = X_ex.sum(axis=1) / np.sqrt(config.dim_x_ex)
    sigma = _sigma_eta(config, X_ex[:, 0])
    eta = _gumbel(rng, n_draws)
    shock = Q + sigma * eta

    def prob(k):
        return float((k + shock > 0).mean())

    lo, hi = bracket
    if not (prob(lo) <= 0.5 <= prob(hi)):
        raise ValueError(f"bisection bracket {bracket} does not contain the calibration target")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if prob(mid) < 0.5:
            lo = mid
        else:
            hi = mid
    kappa = 0.5 * (lo + hi)
    if abs(prob(kappa) - 0.5) > tol:
        raise RuntimeError(f"calibration missed the target: P(Z=1)={prob(kappa):.4f}")
    return float(kappa)


def make_stratum(X):
    """Stratum indicator 1{|x_1| > 1} from the first predictor coordinate."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return (np.abs(X[:, 0]) > 1.0).astype(np.float64)


# ---------------------------------------------------------------------------
# logistic LASSO


@dataclass
class LassoModel:
    """Fitted penalized logistic regression for the proxy score."""

    intercept: float
    slopes: np.ndarray
    gamma_star: float
    cv_path: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))  # (gamma, mean CV log-loss)

    def score(self, X):
        """Predicted probability P(Z=1 | X), always inside (0, 1)."""
        v = self.intercept + np.asarray(X, dtype=np.float64) @ self.slopes
        return _sigmoid(v)

    def to_dict(self):
        return {
            "intercept": float(self.intercept),
            "slopes": [float(v) for v in self.slopes],
            "gamma_star": float(self.gamma_star),
            "cv_path": [[float(a), float(b)] for a, b in self.cv_path],
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["intercept"]), np.asarray(d["slopes"], dtype=np.float64),
                   float(d["gamma_star"]), np.asarray(d["cv_path"], dtype=np.float64).reshape(-1, 2))


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def _logistic_objective(z, Xb, tau1, gamma):
    # mean softplus(Xb) - z * Xb + gamma * ||tau1||_1, computed stably
    return float(np.mean(np.logaddexp(0.0, Xb) - z * Xb) + gamma * np.abs(tau1).sum())


def _operator_norm_sq(Xt, iters=50):
    """Squared spectral norm of the design (with intercept column) by power iteration."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(0)))
    v = rng.standard_normal(Xt.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = Xt.T @ (Xt @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam


def fit_logistic_lasso(z, X, gamma, tau0=0.0, tau1=None, lipschitz=None, tol=1e-9,
                       max_iters=2000):
    """Proximal-gradient (ISTA) fit at one penalty; intercept unpenalized.

    Step size 1/L with L = ||[1 X]||_op^2 / (4n). Returns (tau0, tau1,
    objective path); the objective is non-increasing along the path.
    """
    z = np.asarray(z, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    if tau1 is None:
        tau1 = np.zeros(p)
    else:
        tau1 = tau1.copy()
    if lipschitz is None:
        Xt = np.hstack([np.ones((n, 1)), X])
        lipschitz = _operator_norm_sq(Xt) / (4.0 * n)
    step = 1.0 / lipschitz
    Xb = tau0 + X @ tau1
    path = [_logistic_objective(z, Xb, tau1, gamma)]
    for _ in range(max_iters):
        r = (_sigmoid(Xb) - z) / n
        g0 = r.sum()
        g1 = X.T @ r
        tau0 -= step * g0
        tau1 -= step * g1
        tau1 = np.sign(tau1) * np.maximum(np.abs(tau1) - gamma * step, 0.0)
        Xb = tau0 + X @ tau1
        obj = _logistic_objective(z, Xb, tau1, gamma)
        if not np.isfinite(obj):
            raise FloatingPointError("logistic LASSO objective became non-finite")
        prev = path[-1]
        path.append(obj)
        if abs(prev - obj) <= tol * max(1.0, abs(prev)):
            break
    return tau0, tau1, np.array(path)


def default_gamma_grid(z, X, n_points=60, span=1e-4):
    """Log-spaced descending grid below the smallest penalty zeroing all slopes."""
    z = np.asarray(z, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    n = len(z)
    gamma_max = float(np.abs(X.T @ (z - z.mean())).max() / n)
    if gamma_max <= 0:
        gamma_max = 1.0
    return gamma_max * np.logspace(0.0, np.log10(span), n_points)


def _path_losses(z_tr, X_tr, z_te, X_te, grid, lipschitz, tol, max_iters):
    """Warm-started path over a descending grid; held-out mean log-loss per gamma."""
    tau0, tau1 = 0.0, None
    losses = np.empty(len(grid))
    fits = []
    for gi, gamma in enumerate(grid):
        tau0, tau1, _ = fit_logistic_lasso(z_tr, X_tr, gamma, tau0, tau1,
                                           lipschitz=lipschitz, tol=tol, max_iters=max_iters)
        fits.append((tau0, tau1.copy()))
        if X_te is not None:
            Xb = tau0 + X_te @ tau1
            losses[gi] = float(np.mean(np.logaddexp(0.0, Xb) - z_te * Xb))
    return losses, fits


def train_lasso(z, X, gamma_grid=None, folds=5, seed=0, tol=1e-9, max_iters=2000):
    """Five-fold cross-validated logistic LASSO, refit on the full sample.

    The grid defaults to 60 log-spaced points below gamma_max; candidate fits
    are warm-started along the descending path. gamma* minimizes the mean
    held-out log-loss (ties keep the largest penalty).
    """
    z = np.asarray(z, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    n = len(z)
    if n < folds:
        raise ValueError(f"need at least {folds} rows for {folds}-fold cross-validation")
    grid = default_gamma_grid(z, X) if gamma_grid is None else np.asarray(gamma_grid, dtype=np.float64)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed), 0xCBDF))))
    perm = rng.permutation(n)
    losses = np.zeros(len(grid))
    for k in range(folds):
        test_idx = np.sort(perm[k::folds])
        train_mask = np.ones(n, dtype=bool)
        train_mask[test_idx] = False
        X_tr = X[train_mask]
        Xt = np.hstack([np.ones((X_tr.shape[0], 1)), X_tr])
        L = _operator_norm_sq(Xt) / (4.0 * X_tr.shape[0])
        fold_losses, _ = _path_losses(z[train_mask], X_tr, z[test_idx], X[test_idx],
                                      grid, L, tol, max_iters)
        losses += fold_losses / folds
    best = int(np.argmin(losses))
    gamma_star = float(grid[best])
    Xt = np.hstack([np.ones((n, 1)), X])
    L = _operator_norm_sq(Xt) / (4.0 * n)
    _, fits = _path_losses(z, X, None, None, grid[: best + 1], L, tol, max_iters)
    tau0, tau1 = fits[-1]
    return LassoModel(tau0, tau1, gamma_star, np.column_stack([grid, losses]))


def make_proxy(model, X, kind):
    """Proxy from a trained score: binary 1{P > 0.5} (strict) or the raw probability."""
    p = model.score(X)
    if kind == "binary":
        return (p > 0.5).astype(np.float64)
    if kind == "continuous":
        return p
    raise ValueError(f"unknown proxy kind {kind!r}")


def train_design_proxy(config, n_train=5000, **lasso_kw):
    """Train the frozen upstream proxy for a design from its dedicated stream."""
    cfg = config.with_kappa()
    rng = stream(cfg.seed, TRAIN_STREAM)
    _, _, X, Z = generate(cfg, n_train, rng=rng)
    return train_lasso(Z, X, seed=cfg.seed, **lasso_kw)


def evaluate_proxy_accuracy(config, lasso, n_eval=100_000, kind="binary"):
    """Classification accuracy P(Z = Zhat) on a fresh evaluation draw."""
    cfg = config.with_kappa()
    rng = stream(cfg.seed, EVAL_STREAM)
    _, _, X, Z = generate(cfg, n_eval, rng=rng)
    zhat = make_proxy(lasso, X, "binary") if kind == "binary" else (lasso.score(X) > 0.5).astype(float)
    return float((zhat == Z).mean())
