"""Catalog of ready-made problem instances and score-direction resolution.

Two built-ins cover the full verification surface:

* ``G1`` — the five-point symmetric distribution on {-2,...,2} with the
  overidentified mean model m(theta, x) = (x - theta, (x - theta)^2 - 1.2):
  one parameter, two moments, one overidentifying restriction.
* ``IV1`` — the eight-point linear IV design built from independent signs
  (z1, w, e), with x1 = z1 + w endogenous, an intercept, and beta0 = (1, 0):
  just-identified instruments, endogeneity testable by an OLS/2SLS contrast.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dist import DiscreteDistribution, make_distribution
from .errors import ConfigInvalid
from .models import IVModel, MomentModel
from .scores import (
    ScoreFunction,
    SubspaceBasis,
    gmm_tangent_basis,
    iv_tangent_bases,
)


@dataclass(frozen=True)
class GmmInstance:
    """A distribution paired with a moment model holding at ``theta0``."""

    name: str
    dist: DiscreteDistribution
    model: MomentModel
    theta0: np.ndarray

    kind = "gmm"

    @property
    def truth(self) -> np.ndarray:
        return self.theta0


@dataclass(frozen=True)
class IvInstance:
    """A distribution satisfying the linear IV null model exactly."""

    name: str
    dist: DiscreteDistribution
    model: IVModel

    kind = "iv"

    @property
    def truth(self) -> np.ndarray:
        return self.model.beta0


Instance = GmmInstance | IvInstance


def overidentified_mean_model(v: float) -> MomentModel:
    """Mean model with a known-variance side restriction: m = (x - t, (x - t)^2 - v)."""

    def m(theta, x):
        d = x[0] - theta[0]
        return np.array([d, d * d - v])

    def jac(theta, x):
        d = x[0] - theta[0]
        return np.array([[-1.0], [-2.0 * d]])

    return MomentModel(m=m, jac=jac, p=1, l=2)


def linear_iv_moment_model(dims: tuple[int, int, int]) -> MomentModel:
    """Instrument orthogonality moments m(beta, row) = z (y - x'beta)."""
    k1, k2, q = dims
    shell = IVModel(beta0=np.zeros(k1 + k2), sigma0_sq=1.0, dims=dims)

    def m(beta, row):
        y, X, Z = shell.design_matrices(row[None, :])
        return Z[0] * (y[0] - X[0] @ beta)

    def jac(beta, row):
        _, X, Z = shell.design_matrices(row[None, :])
        return -np.outer(Z[0], X[0])

    return MomentModel(m=m, jac=jac, p=k1 + k2, l=q + k2)


@lru_cache(maxsize=1)
def g1_instance() -> GmmInstance:
    dist = make_distribution(
        support=[-2.0, -1.0, 0.0, 1.0, 2.0],
        probs=[0.1, 0.2, 0.4, 0.2, 0.1],
    )
    return GmmInstance(
        name="G1", dist=dist, model=overidentified_mean_model(1.2), theta0=np.array([0.0])
    )


@lru_cache(maxsize=1)
def iv1_instance() -> IvInstance:
    rows, probs = [], []
    for z1 in (-1.0, 1.0):
        for w in (-1.0, 1.0):
            for e in (-1.0, 1.0):
                x1 = z1 + w
                y = x1 * 1.0 + 1.0 * 0.0 + e
                rows.append([y, x1, 1.0, z1])
                probs.append(0.125)
    dist = make_distribution(rows, probs)
    model = IVModel(beta0=np.array([1.0, 0.0]), sigma0_sq=1.0, dims=(1, 1, 1))
    return IvInstance(name="IV1", dist=dist, model=model)


_BUILTINS = {"G1": g1_instance, "IV1": iv1_instance}


def instance_by_name(name: str) -> Instance:
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise ConfigInvalid(
            f"unknown instance {name!r}; built-ins are {sorted(_BUILTINS)}"
        ) from None


_BASES_CACHE: dict[int, tuple[SubspaceBasis, ...]] = {}


def tangent_bases(instance: Instance) -> tuple[SubspaceBasis, ...]:
    """(T, T_perp) for a moment instance; (T, T_perp_cap_M, M_perp) for an IV one."""
    key = id(instance)
    if key not in _BASES_CACHE:
        if isinstance(instance, GmmInstance):
            _BASES_CACHE[key] = gmm_tangent_basis(instance.dist, instance.model, instance.theta0)
        else:
            _BASES_CACHE[key] = iv_tangent_bases(instance.dist, instance.model)
    return _BASES_CACHE[key]


def three_way_bases(instance: Instance) -> tuple[SubspaceBasis, SubspaceBasis, SubspaceBasis]:
    """Always a complete (T, detectable, invisible) triple.

    For a moment instance the maintained model is everything, so the
    detectable part is the whole orthocomplement and the invisible part is
    empty.
    """
    bases = tangent_bases(instance)
    if len(bases) == 3:
        return bases
    t_basis, t_perp = bases
    empty = SubspaceBasis(instance.dist, (), label="M_perp")
    return t_basis, t_perp, empty


def resolve_score(instance: Instance, spec: dict) -> ScoreFunction:
    """Build the deviation direction from its configuration entry.

    Either explicit per-support values ({"kind": "values", "values": [...]})
    or coefficients on one of the instance's orthonormal tangent-split bases
    ({"kind": "basis", "space": "T" | "T_perp" | "T_perp_cap_M" | "M_perp",
    "coefficients": [...]}).
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigInvalid("score must be an object with a 'kind' field")
    kind = spec["kind"]
    if kind == "values":
        extra = set(spec) - {"kind", "values"}
        if extra:
            raise ConfigInvalid(f"unknown score fields {sorted(extra)}")
        values = np.asarray(spec.get("values"), dtype=float)
        try:
            return ScoreFunction(instance.dist, values)
        except Exception as exc:
            raise ConfigInvalid(f"bad score values: {exc}") from None
    if kind == "basis":
        extra = set(spec) - {"kind", "space", "coefficients"}
        if extra:
            raise ConfigInvalid(f"unknown score fields {sorted(extra)}")
        space = spec.get("space")
        coefs = np.asarray(spec.get("coefficients"), dtype=float)
        for basis in three_way_bases(instance):
            if basis.label == space:
                if coefs.shape != (basis.dim,):
                    raise ConfigInvalid(
                        f"{space} has dimension {basis.dim}, got {coefs.shape[0]} coefficients"
                    )
                values = coefs @ basis.matrix()
                return ScoreFunction(instance.dist, values)
        labels = [b.label for b in three_way_bases(instance)]
        raise ConfigInvalid(f"space {space!r} not available; choose from {labels}")
    raise ConfigInvalid(f"unknown score kind {kind!r}")
