"""Sieve bases approximating the dual potential on a validation (or downstream) support."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class SieveSpec:
    """Finite linear basis phi: support point -> R^K with a coefficient bound.

    ``basis`` maps an (n, dim) array of points to an (n, K) array of basis
    values. ``bound`` declares sup |phi_k| over the support. ``coeff_bound``
    is the norm cap c_n on the coefficient vector; when None the solver
    derives it from the sample sizes.
    """

    kind: str
    K: int
    basis: Callable[[np.ndarray], np.ndarray]
    bound: float = 1.0
    coeff_bound: float | None = None

    def with_coeff_bound(self, c_n):
        return replace(self, coeff_bound=float(c_n))

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.asarray(self.basis(pts), dtype=np.float64)
        if out.shape != (pts.shape[0], self.K):
            raise ValueError(f"sieve basis returned shape {out.shape}, expected {(pts.shape[0], self.K)}")
        return out


def _cell_indicator_basis(cells):
    cells = np.asarray(cells, dtype=np.float64)

    def basis(pts):
        # exact cell matching: supports are finite and stored exactly
        return (pts[:, None, :] == cells[None, :, :]).all(axis=2).astype(np.float64)

    return basis


def _indicator_polynomial_basis(degree, levels):
    powers = np.arange(degree + 1)

    def basis(pts):
        z = pts[:, 0]
        zh = pts[:, 1]
        poly = zh[:, None] ** powers[None, :]
        blocks = [(z == lev).astype(np.float64)[:, None] * poly for lev in levels]
        return np.hstack(blocks)

    return basis


def make_sieve(kind, **params):
    """Construct a SieveSpec of the given kind.

    kind="cell-indicator": one 0/1 indicator per cell of the product of the
    per-coordinate ``levels``; each coordinate's levels are enumerated in
    descending order, so for a binary (z, zhat') support the cells are
    (1,1), (1,0), (0,1), (0,0).

    kind="indicator-polynomial": for a point (z, zhat') with binary z, the
    K = 2*(degree+1) functions 1(z=1)*zhat'^p then 1(z=0)*zhat'^p, p=0..degree.
    Declared bound assumes |zhat'| <= 1.

    kind="custom": pass ``basis``, ``K`` and optionally ``bound``.
    """
    coeff_bound = params.pop("coeff_bound", None)
    if kind == "cell-indicator":
        levels = [np.sort(np.asarray(lv, dtype=np.float64))[::-1] for lv in params.pop("levels")]
        if params:
            raise ValueError(f"unexpected parameters for cell-indicator sieve: {sorted(params)}")
        cells = np.array(list(itertools.product(*levels)))
        return SieveSpec("cell-indicator", len(cells), _cell_indicator_basis(cells), 1.0, coeff_bound)
    if kind == "indicator-polynomial":
        degree = int(params.pop("degree"))
        levels = params.pop("levels", (1.0, 0.0))
        if params:
            raise ValueError(f"unexpected parameters for indicator-polynomial sieve: {sorted(params)}")
        if degree < 0:
            raise ValueError("degree must be >= 0")
        K = len(levels) * (degree + 1)
        return SieveSpec(
            "indicator-polynomial", K, _indicator_polynomial_basis(degree, levels), 1.0, coeff_bound
        )
    if kind == "custom":
        basis = params.pop("basis")
        K = int(params.pop("K"))
        bound = float(params.pop("bound", 1.0))
        if params:
            raise ValueError(f"unexpected parameters for custom sieve: {sorted(params)}")
        return SieveSpec("custom", K, basis, bound, coeff_bound)
    raise ValueError(f"unsupported sieve kind {kind!r}")
