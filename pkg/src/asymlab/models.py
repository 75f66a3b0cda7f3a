"""Model descriptions: unconditional moment restrictions and the linear IV design.

These are pure data holders; estimation and tangent-space construction live in
``gmm``, ``iv`` and ``scores``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ShapeMismatch


@dataclass(frozen=True)
class MomentModel:
    """Moment restriction E[m(theta0, X)] = 0 with l moments and p parameters.

    ``m(theta, x)`` returns an l-vector for a single observation ``x`` (a
    d-vector); ``jac(theta, x)`` returns the l-by-p derivative of ``m`` in
    ``theta``.  ``l == p`` is allowed (just identified) but then the
    overidentification test is degenerate.
    """

    m: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray, np.ndarray], np.ndarray]
    p: int
    l: int
    theta_bounds: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        if self.l < self.p or self.p < 1:
            raise ShapeMismatch(f"need l >= p >= 1, got l={self.l}, p={self.p}")

    def moments_at(self, theta: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Evaluate m on every row of ``points``; returns shape (S, l)."""
        theta = np.asarray(theta, dtype=float)
        out = np.array([self.m(theta, x) for x in points], dtype=float)
        if out.shape != (points.shape[0], self.l):
            raise ShapeMismatch(f"moment function returned shape {out.shape}")
        return out

    def jacobians_at(self, theta: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Evaluate the Jacobian on every row of ``points``; shape (S, l, p)."""
        theta = np.asarray(theta, dtype=float)
        out = np.array([self.jac(theta, x) for x in points], dtype=float).reshape(
            points.shape[0], self.l, self.p
        )
        return out

    def check_jacobian(self, theta: np.ndarray, points: np.ndarray, tol: float = 1e-6) -> None:
        """Central-difference consistency check of ``jac`` against ``m``."""
        theta = np.asarray(theta, dtype=float)
        step = 1e-6
        analytic = self.jacobians_at(theta, points)
        for j in range(self.p):
            up, dn = theta.copy(), theta.copy()
            up[j] += step
            dn[j] -= step
            fd = (self.moments_at(up, points) - self.moments_at(dn, points)) / (2.0 * step)
            err = np.max(np.abs(fd - analytic[:, :, j]))
            if err > tol:
                raise ShapeMismatch(
                    f"jacobian column {j} disagrees with finite differences by {err:.2e}"
                )

    def clip_to_bounds(self, theta: np.ndarray) -> np.ndarray:
        if self.theta_bounds is None:
            return theta
        lo, hi = self.theta_bounds
        return np.clip(theta, lo, hi)

    def within_bounds(self, theta: np.ndarray) -> bool:
        if self.theta_bounds is None:
            return True
        lo, hi = self.theta_bounds
        return bool(np.all(theta >= lo) and np.all(theta <= hi))


@dataclass(frozen=True)
class IVModel:
    """Linear structural model Y = X'beta0 + e with instruments.

    X = (X1', X2')' stacks the possibly endogenous X1 and the exogenous X2;
    the instrument vector is Z = (Z1', X2')'.  Under the null the error is
    conditionally mean zero and homoskedastic given (X1, Z).  ``dims`` is
    (k1, k2, q) = (dim X1, dim X2, dim Z1) with q >= k1 (order condition).
    """

    beta0: np.ndarray
    sigma0_sq: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        k1, k2, q = self.dims
        if min(k1, q) < 1 or k2 < 0:
            raise ShapeMismatch(f"bad dims {self.dims}")
        if q < k1:
            raise ShapeMismatch(f"order condition fails: dim Z1 = {q} < dim X1 = {k1}")
        beta = np.asarray(self.beta0, dtype=float)
        if beta.shape != (k1 + k2,):
            raise ShapeMismatch(f"beta0 has shape {beta.shape}, expected ({k1 + k2},)")
        if not self.sigma0_sq > 0:
            raise ValueError(f"sigma0_sq must be positive, got {self.sigma0_sq}")
        object.__setattr__(self, "beta0", beta)

    @property
    def k1(self) -> int:
        return self.dims[0]

    @property
    def k2(self) -> int:
        return self.dims[1]

    @property
    def q(self) -> int:
        return self.dims[2]

    @property
    def n_params(self) -> int:
        return self.k1 + self.k2

    @property
    def point_dim(self) -> int:
        """Width of a support point / data row laid out as (y, x1, x2, z1)."""
        return 1 + self.k1 + self.k2 + self.q

    def split_rows(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Split (n, point_dim) rows into (y, x1, x2, z1) blocks."""
        rows = np.asarray(rows, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != self.point_dim:
            raise ShapeMismatch(
                f"rows have shape {rows.shape}, expected (*, {self.point_dim}) = (y, x1, x2, z1)"
            )
        k1, k2, q = self.dims
        y = rows[:, 0]
        x1 = rows[:, 1 : 1 + k1]
        x2 = rows[:, 1 + k1 : 1 + k1 + k2]
        z1 = rows[:, 1 + k1 + k2 :]
        return y, x1, x2, z1

    def design_matrices(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (y, X, Z) with X = [x1, x2] and Z = [z1, x2]."""
        y, x1, x2, z1 = self.split_rows(rows)
        return y, np.hstack([x1, x2]), np.hstack([z1, x2])

    def errors_on(self, rows: np.ndarray) -> np.ndarray:
        """Structural errors e = y - X'beta0 on the given rows."""
        y, X, _ = self.design_matrices(rows)
        return y - X @ self.beta0
