"""Finite-support probability distributions.

Everything downstream lives on a fixed finite support, so expectations are
finite weighted sums (evaluated with compensated summation, ``math.fsum``)
and mean-zero functions form a finite-dimensional vector space.  Sampling is
inverse-CDF over the fixed support ordering driven by the counter-based
Philox generator, so draws are reproducible for a given 64-bit seed and
independent of any scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DuplicateSupportPoint, LengthMismatch, ZeroOrNegativeProb

_SEED_MASK = 2**64 - 1


@dataclass(frozen=True)
class DiscreteDistribution:
    """Probability mass function on ``S >= 2`` distinct points in R^d.

    ``support`` has shape (S, d) and ``probs`` shape (S,); probs are strictly
    positive and sum to one (normalized at construction).  Instances are
    immutable and safe to share across threads.
    """

    support: np.ndarray
    probs: np.ndarray

    @property
    def n_atoms(self) -> int:
        return self.support.shape[0]

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    def column(self, j: int) -> np.ndarray:
        """Values of coordinate ``j`` on the support, shape (S,)."""
        return self.support[:, j]


@dataclass(frozen=True)
class Dataset:
    """An i.i.d. sample: ``rows`` has shape (n, d), one observation per row."""

    rows: np.ndarray

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def make_distribution(support, probs) -> DiscreteDistribution:
    """Validate and normalize a finite-support distribution.

    ``support`` is a sequence of d-vectors (plain scalars are treated as
    1-vectors); ``probs`` a same-length sequence of strictly positive weights,
    rescaled to sum to one.
    """
    pts = np.asarray(support, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise LengthMismatch(f"support must be a list of vectors, got ndim={pts.ndim}")
    w = np.asarray(probs, dtype=float)
    if w.ndim != 1 or w.shape[0] != pts.shape[0]:
        raise LengthMismatch(
            f"{w.shape[0] if w.ndim == 1 else w.shape} probs for {pts.shape[0]} support points"
        )
    if pts.shape[0] < 2 or pts.shape[1] < 1:
        raise ValueError("need at least 2 support points of dimension >= 1")
    if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(w)):
        raise ValueError("support and probs must be finite")
    if np.any(w <= 0.0):
        raise ZeroOrNegativeProb(f"minimum prob {w.min()} is not strictly positive")
    if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
        raise DuplicateSupportPoint("support points must be pairwise distinct")
    total = math.fsum(w)
    w = w / total
    pts = pts.copy()
    pts.setflags(write=False)
    w.setflags(write=False)
    return DiscreteDistribution(support=pts, probs=w)


def same_distribution(a: DiscreteDistribution, b: DiscreteDistribution) -> bool:
    """True when the two objects describe the identical distribution."""
    if a is b:
        return True
    return (
        a.support.shape == b.support.shape
        and np.array_equal(a.support, b.support)
        and np.array_equal(a.probs, b.probs)
    )


def expectation(dist: DiscreteDistribution, values) -> float | np.ndarray:
    """Exact expectation of a per-support-point function.

    ``values`` has one entry (scalar or vector/matrix) per support point,
    i.e. shape (S,) or (S, ...).  Each output component is a compensated sum
    of the ``prob * value`` products, so linearity and the unit integral hold
    to well below 1e-12.  Returns a float for scalar input, else an array of
    the trailing shape.
    """
    v = np.asarray(values, dtype=float)
    if v.shape[0] != dist.n_atoms:
        raise LengthMismatch(f"{v.shape[0]} values for {dist.n_atoms} support points")
    flat = v.reshape(dist.n_atoms, -1)
    w = dist.probs
    out = np.array(
        [math.fsum(w[s] * flat[s, j] for s in range(dist.n_atoms)) for j in range(flat.shape[1])]
    )
    if v.ndim == 1:
        return float(out[0])
    return out.reshape(v.shape[1:])


def variance(dist: DiscreteDistribution, values) -> float:
    """Variance of a scalar per-support-point function."""
    v = np.asarray(values, dtype=float)
    mean = expectation(dist, v)
    return expectation(dist, (v - mean) ** 2)


def draw_indices(dist: DiscreteDistribution, n: int, seed: int) -> np.ndarray:
    """n i.i.d. categorical draws returned as support indices, shape (n,)."""
    if n < 1:
        raise ValueError(f"sample size must be >= 1, got {n}")
    rng = np.random.Generator(np.random.Philox(key=int(seed) & _SEED_MASK))
    cum = np.cumsum(dist.probs)
    cum[-1] = 1.0  # guard against accumulated rounding at the top
    return np.searchsorted(cum, rng.random(n), side="right")


def draw_sample(dist: DiscreteDistribution, n: int, seed: int) -> Dataset:
    """n i.i.d. draws from ``dist``, deterministic for a given seed."""
    idx = draw_indices(dist, n, seed)
    return Dataset(rows=dist.support[idx])


def replication_seed(master_seed: int, rep: int) -> int:
    """Derive the seed of replication ``rep`` from a master seed.

    Uses a keyed split (``SeedSequence`` with spawn key ``(rep,)``), so the
    per-replication streams are statistically independent and the mapping
    does not depend on how replications are scheduled.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed) & _SEED_MASK, spawn_key=(int(rep),))
    return int(ss.generate_state(1, np.uint64)[0])


def atom_indices(dist: DiscreteDistribution, rows: np.ndarray) -> np.ndarray:
    """Map sample rows back to support indices (rows must be support points)."""
    lookup = {dist.support[s].tobytes(): s for s in range(dist.n_atoms)}
    try:
        return np.array([lookup[row.tobytes()] for row in np.asarray(rows, dtype=float)])
    except KeyError:
        raise LengthMismatch("a row does not match any support point") from None
