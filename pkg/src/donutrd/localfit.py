"""Kernel-weighted polynomial fits on one side of the threshold.

The boundary estimate is the intercept of a weighted least-squares fit of
the outcome on powers of the centered running variable ``x - c``. Because
the intercept is linear in the outcomes, every fit also exposes the
*effective weights* ``w`` with ``boundary_value == sum(w * y)``; honest
inference needs them to bound the extrapolation bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .cohort import RdSpec
from .errors import EmptyWindowError, IdentifiabilityError

_RANK_TOL = 1e-10


def kernel_weight(u, kernel: str = "triangular"):
    """Kernel weight at the standardized distance ``u = (age - c) / h``.

    Works elementwise on arrays; scalars in, scalar out.
    """
    a = np.abs(np.asarray(u, dtype=float))
    if kernel == "triangular":
        w = np.maximum(0.0, 1.0 - a)
    elif kernel == "uniform":
        w = (a <= 1.0).astype(float)
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    return float(w) if w.ndim == 0 else w


def _weighted_qr(design: np.ndarray, kernel_weights: np.ndarray, side=None):
    sw = np.sqrt(kernel_weights)
    q, r = np.linalg.qr(sw[:, None] * design)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag.min() <= _RANK_TOL * max(diag.max(), 1.0):
        raise IdentifiabilityError("singular normal equations", side=side)
    return sw, q, r


def _intercept_weights(sw, q, r):
    e1 = np.zeros(r.shape[0])
    e1[0] = 1.0
    z = solve_triangular(r, e1, trans="T")
    return sw * (q @ z)


def effective_weights(design, kernel_weights) -> np.ndarray:
    """First row of ``(X'WX)^{-1} X'W``: the linear weights of the intercept.

    ``design`` must have a leading column of ones followed by powers of the
    centered running variable. Rows with zero kernel weight receive weight
    zero. The result sums to one and is orthogonal to every non-constant
    design column.
    """
    design = np.asarray(design, dtype=float)
    k = np.asarray(kernel_weights, dtype=float)
    if design.ndim != 2 or design.shape[0] != k.shape[0]:
        raise ValueError("design and kernel_weights have mismatched shapes")
    if np.any(k < 0):
        raise ValueError("kernel weights must be non-negative")
    used = k > 0
    out = np.zeros(k.shape[0])
    if used.sum() < design.shape[1]:
        raise IdentifiabilityError("fewer weighted rows than parameters")
    sw, q, r = _weighted_qr(design[used], k[used])
    out[used] = _intercept_weights(sw, q, r)
    return out


@dataclass(frozen=True, eq=False)
class SideFit:
    """Result of a one-sided boundary fit.

    ``coefficients`` are in powers of the centered age ``x - c``;
    ``weights`` are aligned with ``ids`` and ``centered_ages`` and are zero
    for observations outside the kernel window.
    """

    side: str
    boundary_value: float
    coefficients: np.ndarray
    ids: np.ndarray
    centered_ages: np.ndarray
    weights: np.ndarray
    residuals: np.ndarray
    se: float
    n_used: int

    @property
    def effective_weights(self) -> list[tuple[str, float]]:
        return list(zip(self.ids.tolist(), self.weights.tolist()))

    @property
    def centered_weights(self) -> np.ndarray:
        """``(n, 2)`` array of ``(x - c, w)`` pairs, the input of the bias bound."""
        return np.column_stack([self.centered_ages, self.weights])

    def predict(self, centered_x) -> np.ndarray:
        x = np.asarray(centered_x, dtype=float)
        return np.polynomial.polynomial.polyval(x, self.coefficients)

    def to_dict(self) -> dict:
        return {
            "boundary_value": self.boundary_value,
            "se": self.se,
            "n_used": self.n_used,
            "coefficients": [float(c) for c in self.coefficients],
        }


def fit_boundary(ages, y, spec: RdSpec, side: str, ids=None) -> SideFit:
    """Estimate the limit of ``E[y | age]`` at the threshold from one side.

    Parameters
    ----------
    ages, y : array-like
        Running variable and outcome for the observations of one side only.
    spec : RdSpec
        Supplies threshold, bandwidth, kernel, polynomial order and scope.
    side : {"below", "above"}
        Which side the data belong to; used to check inputs and tag errors.
    ids : array-like, optional
        Observation labels carried into ``effective_weights``.

    Returns
    -------
    SideFit
        Intercept estimate with its effective weights and a
        heteroskedasticity-robust standard error ``sqrt(sum(w**2 * e**2))``.
    """
    if side not in ("below", "above"):
        raise ValueError("side must be 'below' or 'above'")
    ages = np.asarray(ages, dtype=float)
    y = np.asarray(y, dtype=float)
    if ages.shape != y.shape or ages.ndim != 1:
        raise ValueError("ages and y must be 1-d arrays of equal length")
    if ids is None:
        ids = np.arange(ages.size).astype(str)
    ids = np.asarray(ids)
    if ages.size == 0:
        raise EmptyWindowError("no observations", side=side)
    xc = ages - spec.threshold
    if side == "below" and np.any(xc >= 0) or side == "above" and np.any(xc <= 0):
        raise ValueError(f"{side} side data must lie strictly on that side of the threshold")

    if spec.scope == "global":
        k = np.ones_like(xc)
    else:
        k = kernel_weight(xc / spec.bandwidth, spec.kernel)
    used = k > 0
    if not used.any():
        raise EmptyWindowError("all kernel weights are zero", side=side)
    n_distinct = np.unique(xc[used]).size
    if n_distinct <= spec.order:
        raise IdentifiabilityError(
            f"{n_distinct} distinct ages in window, order {spec.order} needs "
            f"{spec.order + 1}", side=side)

    # Column scaling leaves the intercept unchanged and conditions the basis.
    scale = max(np.abs(xc[used]).max(), 1.0)
    powers = np.arange(spec.order + 1)
    design = (xc[used, None] / scale) ** powers
    sw, q, r = _weighted_qr(design, k[used], side=side)
    beta = solve_triangular(r, q.T @ (sw * y[used]))
    w_used = _intercept_weights(sw, q, r)

    weights = np.zeros_like(xc)
    weights[used] = w_used
    residuals = np.zeros_like(xc)
    residuals[used] = y[used] - design @ beta
    se = float(np.sqrt(np.sum(w_used ** 2 * residuals[used] ** 2)))
    return SideFit(
        side=side,
        boundary_value=float(beta[0]),
        coefficients=beta / scale ** powers,
        ids=ids,
        centered_ages=xc,
        weights=weights,
        residuals=residuals,
        se=se,
        n_used=int(used.sum()),
    )
