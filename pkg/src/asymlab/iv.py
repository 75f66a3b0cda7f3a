"""OLS and 2SLS for the linear IV design, and the estimator-contrast test.

Variance matrices are the homoskedastic forms throughout: the efficiency
claims that make the contrast test work (OLS efficient under exogeneity,
2SLS efficient under instrument validity) hold only in that setting, so
sandwich variances are deliberately out of scope.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .chi2 import TestStatistic
from .dist import DiscreteDistribution, expectation
from .errors import (
    NegativeSpectrumWarning,
    RankDeficientFirstStage,
    ShapeMismatch,
    SingularDesign,
    SingularInstrumentGram,
)
from .models import IVModel
from .scores import (
    ScoreFunction,
    SubspaceBasis,
    centered_score,
    check_iv_null_model,
    iv_population_matrices,
    orthonormal_basis,
)

RANK_TOL = 1e-8  # relative spectral cutoff for the generalized inverse


@dataclass(frozen=True)
class IVDataset:
    """Sample arrays for the linear IV design: y (n,), x1 (n,k1), x2 (n,k2), z1 (n,q)."""

    y: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    z1: np.ndarray

    def __post_init__(self):
        n = self.y.shape[0]
        for name in ("x1", "x2", "z1"):
            block = getattr(self, name)
            if block.ndim != 2 or block.shape[0] != n:
                raise ShapeMismatch(f"{name} has shape {block.shape}, expected ({n}, *)")
        if n <= self.x1.shape[1] + self.x2.shape[1] + self.z1.shape[1]:
            raise ShapeMismatch("need more observations than total columns")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def X(self) -> np.ndarray:
        return np.hstack([self.x1, self.x2])

    @property
    def Z(self) -> np.ndarray:
        return np.hstack([self.z1, self.x2])


def ivdataset_from_rows(rows: np.ndarray, dims: tuple[int, int, int]) -> IVDataset:
    """Split (n, 1+k1+k2+q) rows laid out as (y, x1, x2, z1) into an IVDataset."""
    rows = np.asarray(rows, dtype=float)
    k1, k2, q = dims
    if rows.ndim != 2 or rows.shape[1] != 1 + k1 + k2 + q:
        raise ShapeMismatch(f"rows have shape {rows.shape}, expected (*, {1 + k1 + k2 + q})")
    return IVDataset(
        y=rows[:, 0],
        x1=rows[:, 1 : 1 + k1],
        x2=rows[:, 1 + k1 : 1 + k1 + k2],
        z1=rows[:, 1 + k1 + k2 :],
    )


def write_csv(data: IVDataset, path) -> None:
    """Write the dataset with header y,x1_1..,x2_1..,z1_1.. (one row per observation)."""
    header = (
        ["y"]
        + [f"x1_{j + 1}" for j in range(data.x1.shape[1])]
        + [f"x2_{j + 1}" for j in range(data.x2.shape[1])]
        + [f"z1_{j + 1}" for j in range(data.z1.shape[1])]
    )
    table = np.hstack([data.y[:, None], data.x1, data.x2, data.z1])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(table.tolist())


def read_csv(path) -> IVDataset:
    """Read a dataset written by ``write_csv``; block sizes come from the header."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        body = np.array([[float(v) for v in row] for row in reader])
    k1 = sum(1 for name in header if name.startswith("x1_"))
    k2 = sum(1 for name in header if name.startswith("x2_"))
    q = sum(1 for name in header if name.startswith("z1_"))
    if header[0] != "y" or 1 + k1 + k2 + q != len(header):
        raise ShapeMismatch(f"unrecognized header {header}")
    return ivdataset_from_rows(body, (k1, k2, q))


@dataclass(frozen=True)
class LinearEstimate:
    """A linear estimator's coefficients, asymptotic variance of sqrt(n) * error,
    and residual variance."""

    beta: np.ndarray
    vcov: np.ndarray
    sigma_sq_hat: float


def _solve_spd(mat: np.ndarray, rhs: np.ndarray, error: Exception) -> np.ndarray:
    try:
        chol = scipy.linalg.cho_factor(mat)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        raise error from None
    return scipy.linalg.cho_solve(chol, rhs)


def estimate_ols(data: IVDataset) -> LinearEstimate:
    """Least squares of y on X = [x1, x2] with homoskedastic variance."""
    X, y, n = data.X, data.y, data.n
    xtx = X.T @ X
    beta = _solve_spd(xtx, X.T @ y, SingularDesign("X'X is singular"))
    resid = y - X @ beta
    sigma_sq = float(resid @ resid) / n
    vcov = sigma_sq * _solve_spd(xtx / n, np.eye(X.shape[1]), SingularDesign("X'X is singular"))
    return LinearEstimate(beta=beta, vcov=0.5 * (vcov + vcov.T), sigma_sq_hat=sigma_sq)


def estimate_2sls(data: IVDataset) -> LinearEstimate:
    """Two-stage least squares with instruments Z = [z1, x2]."""
    X, Z, y, n = data.X, data.Z, data.y, data.n
    ztz = Z.T @ Z
    ztx = Z.T @ X
    zty = Z.T @ y
    first = _solve_spd(ztz, np.hstack([ztx, zty[:, None]]), SingularInstrumentGram("Z'Z is singular"))
    xpx = ztx.T @ first[:, :-1]  # X' P_Z X
    xpy = ztx.T @ first[:, -1]
    svals = np.linalg.svd(xpx, compute_uv=False)
    if svals[-1] <= 1e-12 * max(svals[0], 1e-300):
        raise RankDeficientFirstStage("instruments do not span the regressors")
    beta = _solve_spd(xpx, xpy, RankDeficientFirstStage("X'P_Z X is singular"))
    resid = y - X @ beta
    sigma_sq = float(resid @ resid) / n
    vcov = sigma_sq * _solve_spd(
        xpx / n, np.eye(X.shape[1]), RankDeficientFirstStage("X'P_Z X is singular")
    )
    return LinearEstimate(beta=beta, vcov=0.5 * (vcov + vcov.T), sigma_sq_hat=sigma_sq)


def dwh_statistic(data: IVDataset, ols: LinearEstimate, tsls: LinearEstimate) -> TestStatistic:
    """Contrast test n * (b_ols - b_2sls)' V^- (b_ols - b_2sls).

    V estimates the asymptotic variance of the scaled contrast by the
    difference of the two variance matrices, both scaled to the 2SLS residual
    variance (a single variance scale keeps the difference exactly singular
    in the directions where the estimators coincide, so the spectral cutoff
    identifies the rank cleanly).  Eigenvalues below RANK_TOL times the
    largest are zeroed; the dof is the retained rank.  Eigenvalues below the
    negative of the cutoff raise ``NegativeSpectrumWarning`` and are dropped.
    """
    if ols.beta.shape != tsls.beta.shape:
        raise ShapeMismatch("estimates have different parameter dimensions")
    delta = ols.beta - tsls.beta
    # rescale the OLS variance to the 2SLS residual variance; with an exact
    # fit (zero residual variance) both variance estimates are zero already
    ratio = tsls.sigma_sq_hat / ols.sigma_sq_hat if ols.sigma_sq_hat > 0.0 else 1.0
    vdiff = tsls.vcov - ratio * ols.vcov
    vdiff = 0.5 * (vdiff + vdiff.T)
    evals, evecs = np.linalg.eigh(vdiff)
    top = float(evals[-1])
    if top <= 0.0:
        return TestStatistic(value=0.0, dof=0)
    cutoff = RANK_TOL * top
    if evals[0] < -cutoff:
        warnings.warn(
            f"variance difference has negative eigenvalue {evals[0]:.3e}; "
            "keeping the positive part",
            NegativeSpectrumWarning,
            stacklevel=2,
        )
    keep = evals > cutoff
    coords = evecs[:, keep].T @ delta
    value = float(data.n * np.sum(coords**2 / evals[keep]))
    return TestStatistic(value=value, dof=int(keep.sum()))


def population_contrast_rank(dist: DiscreteDistribution, model: IVModel) -> int:
    """Rank of the population variance difference (diagnostic counterpart of dof)."""
    return hausman_contrast_basis(dist, model).dim


# --- population score objects ---------------------------------------------------


def iv_efficient_scores(
    dist: DiscreteDistribution, model: IVModel
) -> tuple[list[ScoreFunction], list[ScoreFunction]]:
    """Efficient scores of the null (exogeneity) and maintained (IV) models.

    Null model: x e / sigma0^2.  Maintained model:
    E[XZ'] E[ZZ']^{-1} z e / sigma0^2.  One score function per coefficient.
    """
    check_iv_null_model(dist, model)
    _, X, Z = model.design_matrices(dist.support)
    e = model.errors_on(dist.support)
    _, exz, ezz = iv_population_matrices(dist, model)
    ell_p = X * (e / model.sigma0_sq)[:, None]
    ell_m = (Z @ np.linalg.solve(ezz, exz.T)) * (e / model.sigma0_sq)[:, None]
    make = lambda vals: [centered_score(dist, vals[:, j]) for j in range(vals.shape[1])]
    return make(ell_p), make(ell_m)


def iv_influence_functions(
    dist: DiscreteDistribution, model: IVModel
) -> tuple[list[ScoreFunction], list[ScoreFunction]]:
    """Population influence functions of OLS and 2SLS for the coefficient vector."""
    check_iv_null_model(dist, model)
    _, X, Z = model.design_matrices(dist.support)
    e = model.errors_on(dist.support)
    exx, exz, ezz = iv_population_matrices(dist, model)
    nu_vals = (X @ np.linalg.inv(exx)) * e[:, None]
    bread = exz @ np.linalg.solve(ezz, exz.T)
    tau_vals = (Z @ np.linalg.solve(ezz, exz.T) @ np.linalg.inv(bread)) * e[:, None]
    make = lambda vals: [centered_score(dist, vals[:, j]) for j in range(vals.shape[1])]
    return make(nu_vals), make(tau_vals)


def hausman_contrast_basis(dist: DiscreteDistribution, model: IVModel) -> SubspaceBasis:
    """Orthonormal basis of the span of the OLS/2SLS influence differences.

    These are the functions whose squared sums compose the contrast statistic
    asymptotically; they live in the detectable subspace (maintained tangent
    space minus the null tangent space) and their count is the population
    degrees of freedom of the test.
    """
    nu, tau = iv_influence_functions(dist, model)
    diffs = [t - v for t, v in zip(tau, nu)]
    keep = [d for d in diffs if d.norm() > 1e-12]
    if not keep:
        return SubspaceBasis(dist, (), label="T_perp_cap_M")
    return orthonormal_basis(dist, keep, label="T_perp_cap_M")


def iv_predicted_biases(
    dist: DiscreteDistribution, model: IVModel, g: ScoreFunction
) -> dict[str, np.ndarray]:
    """Asymptotic means of sqrt(n) * (estimator - beta0) in direction ``g``.

    OLS drifts by E[XX']^{-1} E[X e g]; 2SLS by E[XZ'] E[ZZ']^{-1} E[Z e g].
    """
    _, X, Z = model.design_matrices(dist.support)
    e = model.errors_on(dist.support)
    exx, exz, ezz = iv_population_matrices(dist, model)
    exeg = expectation(dist, X * (e * g.values)[:, None])
    ezeg = expectation(dist, Z * (e * g.values)[:, None])
    bread = exz @ np.linalg.solve(ezz, exz.T)
    ols_bias = np.linalg.solve(exx, exeg)
    tsls_bias = np.linalg.solve(bread, exz @ np.linalg.solve(ezz, ezeg))
    return {"ols": ols_bias, "tsls": tsls_bias}
