"""Moment models, the augmented moment vector, and the two-sample data containers."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Raised when an input's shape disagrees with a model or sample declaration."""

    def __init__(self, field_name, expected, got):
        self.field_name = field_name
        self.expected = expected
        self.got = got
        super().__init__(f"dimension mismatch in '{field_name}': expected {expected}, got {got}")


def _as_vector(x, name):
    v = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if v.ndim != 1:
        raise DimensionError(name, "1-d vector", f"ndim={v.ndim}")
    return v


class MomentModel:
    """Moment function q(w, z; theta) behind a uniform evaluation interface.

    Subclasses set ``dim_w``, ``dim_z``, ``dim_q``, ``dim_theta`` and implement
    :meth:`eval`. Evaluation must be deterministic and return finite values for
    in-support inputs. ``envelope_hint`` optionally bounds each coordinate's
    magnitude for diagnostics.
    """

    dim_w: int
    dim_z: int
    dim_q: int
    dim_theta: int
    envelope_hint: np.ndarray | None = None

    def eval(self, w, z, theta):
        raise NotImplementedError

    def eval_batch(self, W, Z, theta):
        """Evaluate q row-wise on stacked inputs; returns an (n, dim_q) array.

        The default loops over :meth:`eval`; performance-sensitive models
        should override with a vectorized version.
        """
        W = np.atleast_2d(np.asarray(W, dtype=np.float64))
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        out = np.empty((W.shape[0], self.dim_q))
        for i in range(W.shape[0]):
            out[i] = self.eval(W[i], Z[i], theta)
        return out


class LinearRegressionModel(MomentModel):
    """Linear regression with one latent regressor: w=(y, c), scalar z, theta=(t1, t2).

    Moment vector is (z; c) * (y - t1*z - t2*c), so dim_q = dim_theta = 2 and
    q is affine in theta for fixed (w, z).
    """

    dim_w = 2
    dim_z = 1
    dim_q = 2
    dim_theta = 2

    def eval(self, w, z, theta):
        y, c = w
        resid = y - theta[0] * z[0] - theta[1] * c
        return np.array([z[0] * resid, c * resid])

    def eval_batch(self, W, Z, theta):
        W = np.atleast_2d(np.asarray(W, dtype=np.float64))
        Z = np.asarray(Z, dtype=np.float64).reshape(W.shape[0])
        y, c = W[:, 0], W[:, 1]
        resid = y - theta[0] * Z - theta[1] * c
        return np.column_stack([Z * resid, c * resid])


def eval_moment(model, w, z, theta):
    """Evaluate q(w, z; theta), validating dimensions against the model."""
    w = _as_vector(w, "w")
    z = _as_vector(z, "z")
    theta = _as_vector(theta, "theta")
    if w.shape[0] != model.dim_w:
        raise DimensionError("w", model.dim_w, w.shape[0])
    if z.shape[0] != model.dim_z:
        raise DimensionError("z", model.dim_z, z.shape[0])
    if theta.shape[0] != model.dim_theta:
        raise DimensionError("theta", model.dim_theta, theta.shape[0])
    q = np.asarray(model.eval(w, z, theta), dtype=np.float64)
    if q.shape != (model.dim_q,):
        raise DimensionError("q", (model.dim_q,), q.shape)
    return q


@dataclass
class AugmentedPoint:
    """One realization of the decoupled vector (w, z, zhat, s, zhat', s')."""

    w: np.ndarray
    z: np.ndarray
    z_hat: np.ndarray
    s: np.ndarray
    z_hat_prime: np.ndarray
    s_prime: np.ndarray

    def __post_init__(self):
        for name in ("w", "z", "z_hat", "s", "z_hat_prime", "s_prime"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64)))
        if self.z_hat.shape != self.z_hat_prime.shape:
            raise DimensionError("z_hat_prime", self.z_hat.shape, self.z_hat_prime.shape)
        if self.s.shape != self.s_prime.shape:
            raise DimensionError("s_prime", self.s.shape, self.s_prime.shape)


def eval_augmented(model, p, theta):
    """Stack q(w, z; theta) with the exact-matching penalties |zhat - zhat'| and |s - s'|."""
    q = eval_moment(model, p.w, p.z, theta)
    return np.concatenate([q, np.abs(p.z_hat - p.z_hat_prime), np.abs(p.s - p.s_prime)])


def _check_rows(arrays, names, owner):
    n = None
    for a, name in zip(arrays, names):
        if a.ndim != 2:
            raise DimensionError(f"{owner}.{name}", "2-d array", f"ndim={a.ndim}")
        if n is None:
            n = a.shape[0]
        elif a.shape[0] != n:
            raise DimensionError(f"{owner}.{name}", f"{n} rows", f"{a.shape[0]} rows")
        if not np.isfinite(a).all():
            raise ValueError(f"{owner}.{name} contains non-finite entries")
    return n


def _as_matrix(x, n_rows=None):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if n_rows is not None and a.shape == (0,):
        a = np.empty((n_rows, 0))
    return a


@dataclass
class DownstreamSample:
    """Rows of (w, zhat, s) drawn from the downstream population F."""

    w: np.ndarray
    z_hat: np.ndarray
    s: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    def __post_init__(self):
        self.w = _as_matrix(self.w)
        self.z_hat = _as_matrix(self.z_hat)
        if np.asarray(self.s).size == 0:
            self.s = np.empty((self.w.shape[0], 0))
        self.s = _as_matrix(self.s)
        _check_rows([self.w, self.z_hat, self.s], ["w", "z_hat", "s"], "DownstreamSample")

    @property
    def n_d(self):
        return self.w.shape[0]

    def subset(self, idx):
        return DownstreamSample(self.w[idx], self.z_hat[idx], self.s[idx])


@dataclass
class ValidationSample:
    """Rows of (z, zhat', s') drawn from the validation population G."""

    z: np.ndarray
    z_hat_prime: np.ndarray
    s_prime: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    def __post_init__(self):
        self.z = _as_matrix(self.z)
        self.z_hat_prime = _as_matrix(self.z_hat_prime)
        if np.asarray(self.s_prime).size == 0:
            self.s_prime = np.empty((self.z.shape[0], 0))
        self.s_prime = _as_matrix(self.s_prime)
        _check_rows(
            [self.z, self.z_hat_prime, self.s_prime], ["z", "z_hat_prime", "s_prime"], "ValidationSample"
        )

    @property
    def n_v(self):
        return self.z.shape[0]

    def subset(self, idx):
        return ValidationSample(self.z[idx], self.z_hat_prime[idx], self.s_prime[idx])

    def points(self):
        """Observed validation points as an (n_v, d_z + d_zhat + d_s) array."""
        return np.hstack([self.z, self.z_hat_prime, self.s_prime])


def _read_csv_columns(path, prefixes):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = [row for row in reader if row]
    groups = {p: [] for p in prefixes}
    for j, name in enumerate(header):
        for p in prefixes:
            if name == p.rstrip("_") or name.startswith(p):
                groups[p].append(j)
                break
        else:
            raise ValueError(f"{path}: unrecognized column '{name}' (expected prefixes {prefixes})")
    data = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {i + 2} has {len(row)} fields, header has {len(header)}")
        data[i] = [float(v) for v in row]
    if not np.isfinite(data).all():
        raise ValueError(f"{path}: non-finite entries")
    return {p: data[:, cols] if cols else np.empty((len(rows), 0)) for p, cols in groups.items()}


def load_downstream_csv(path):
    """Load a downstream sample from CSV with columns named w_*, zhat_*, s_*."""
    cols = _read_csv_columns(path, ("w_", "zhat_", "s_"))
    if cols["w_"].shape[1] == 0:
        raise ValueError(f"{path}: no w_* columns")
    if cols["zhat_"].shape[1] == 0:
        raise ValueError(f"{path}: no zhat_* columns")
    return DownstreamSample(cols["w_"], cols["zhat_"], cols["s_"])


def load_validation_csv(path):
    """Load a validation sample from CSV with columns named z_*, zhat_*, s_*."""
    cols = _read_csv_columns(path, ("z_", "zhat_", "s_"))
    if cols["z_"].shape[1] == 0:
        raise ValueError(f"{path}: no z_* columns")
    if cols["zhat_"].shape[1] == 0:
        raise ValueError(f"{path}: no zhat_* columns")
    return ValidationSample(cols["z_"], cols["zhat_"], cols["s_"])
