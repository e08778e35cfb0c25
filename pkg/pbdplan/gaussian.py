"""
Dense small-matrix Gaussian primitives

Shared by every other module: density evaluation, sampling, PSD repair and
central moments via pairing sums. All values are immutable and every random
draw goes through an explicit generator, so results are reproducible.
"""
import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from pbdplan.config import get_settings
from pbdplan.errors import (
    DimensionError,
    InvalidInput,
    NumericalFailure,
    SingularCovariance,
    UnsupportedOrder,
)

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


# ===== Random streams =====

@dataclass(frozen=True)
class RandomStream:
    """
    Named random stream: a root seed plus a path of non-negative keys

    The same (seed, path) always yields the same numbers, no matter in which
    order streams are created. The planner extends the path with macro and
    sample indices so serial and parallel tree expansion agree.
    """
    seed: int
    path: tuple[int, ...] = ()

    def child(self, *keys: int) -> "RandomStream":
        return RandomStream(self.seed, self.path + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        return make_rng(self.seed, *self.path)


def make_rng(seed: int, *path: int) -> np.random.Generator:
    """Counter-based (Philox) generator for a 64-bit seed and a key path"""
    sequence = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(path))
    return np.random.Generator(np.random.Philox(sequence))


# ===== Shapes =====

def as_vector(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


def as_matrix(m) -> np.ndarray:
    return np.atleast_2d(np.asarray(m, dtype=float))


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def frozen(arr: np.ndarray) -> np.ndarray:
    """Read-only view of arr, copying first if the caller could still write to it"""
    if arr.flags.writeable:
        arr = arr.copy()
        arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Gaussian:
    """
    Multivariate normal N(mean, cov)

    Arrays are stored as read-only float arrays; treat instances as values.
    """
    mean: np.ndarray
    cov: np.ndarray = field(repr=False)

    def __post_init__(self):
        mean = as_vector(self.mean)
        cov = as_matrix(self.cov)
        if cov.shape != (mean.size, mean.size):
            raise DimensionError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        object.__setattr__(self, "mean", frozen(mean))
        object.__setattr__(self, "cov", frozen(cov))

    @property
    def dim(self) -> int:
        return self.mean.size


# ===== Covariance repair =====

def repair_covariance(cov, tolerance: float | None = None) -> np.ndarray:
    """
    Symmetrize a covariance and clamp tiny negative eigenvalues to zero

    Eigenvalues more negative than -tolerance (relative to the largest
    magnitude, floor 1) mean the matrix is not a covariance at all.
    """
    tolerance = get_settings().psd_tolerance if tolerance is None else tolerance
    sym = symmetrize(as_matrix(cov))
    try:
        w, v = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigendecomposition failed: {exc}") from exc
    if w.size == 0 or w.min() >= 0.0:
        return sym
    scale = max(1.0, float(np.abs(w).max()))
    if w.min() < -tolerance * scale:
        raise NumericalFailure(f"covariance has eigenvalue {w.min():.3e}, not positive semi-definite")
    return symmetrize((v * np.clip(w, 0.0, None)) @ v.T)


def covariance_factor(cov) -> np.ndarray:
    """
    Return A with A @ A.T == cov

    Cholesky when cov is positive definite, otherwise the eigen square root
    of the repaired matrix (handles singular PSD covariances such as zero).
    """
    sym = symmetrize(as_matrix(cov))
    try:
        return np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        pass
    fixed = repair_covariance(sym)
    try:
        w, v = np.linalg.eigh(fixed)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"covariance factorization failed: {exc}") from exc
    return v * np.sqrt(np.clip(w, 0.0, None))


# ===== Density and sampling =====

def gaussian_logpdf(g: Gaussian, x) -> np.ndarray | float:
    """
    Log density of g at x

    x may be a single point (D,) or a batch (N, D).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    points = np.atleast_2d(x.reshape(1, -1) if single else x)
    if points.shape[1] != g.dim:
        raise DimensionError(f"point of size {points.shape[1]} for a {g.dim}-D Gaussian")
    try:
        factor = linalg.cho_factor(g.cov, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularCovariance("covariance is not positive definite") from exc
    diag = np.diag(factor[0])
    if np.any(diag <= 0.0) or not np.all(np.isfinite(diag)):
        raise SingularCovariance("covariance is not positive definite")
    diff = points - g.mean
    maha = np.einsum("ij,ji->i", diff, linalg.cho_solve(factor, diff.T, check_finite=False))
    logdet = 2.0 * np.sum(np.log(diag))
    out = -0.5 * (g.dim * LOG_2PI + logdet + maha)
    return float(out[0]) if single else out


def gaussian_pdf(g: Gaussian, x) -> np.ndarray | float:
    """
    Density N(x | mean, cov)

    Symmetric in (mean, x): gaussian_pdf(N(m, S), x) == gaussian_pdf(N(x, S), m).
    """
    return np.exp(gaussian_logpdf(g, x))


def sample_gaussian(g: Gaussian, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """
    Draw mean + A q with cov = A A^T and q standard normal

    Returns shape (D,) when size is None, otherwise (size, D).
    """
    factor = covariance_factor(g.cov)
    n = 1 if size is None else int(size)
    q = rng.standard_normal((n, g.dim))
    samples = g.mean + q @ factor.T
    return samples[0] if size is None else samples


# ===== Central moments =====

def central_moment(cov, exponents, max_order: int | None = None) -> float:
    """
    Central moment E[prod_d (s_d - mu_d)^e_d] of a zero-mean Gaussian

    The multi-index is an exponent vector, one entry per dimension of cov.
    Odd total order gives 0; even order is the sum over all perfect pairings
    of the factors of the product of the paired covariance entries, so
    exponents (1, 1, 1, 1) give s12 s34 + s13 s24 + s14 s23.
    """
    cov = as_matrix(cov)
    exps = tuple(int(e) for e in np.atleast_1d(exponents))
    if len(exps) != cov.shape[0]:
        raise DimensionError(f"{len(exps)} exponents for a {cov.shape[0]}-D covariance")
    if any(e < 0 for e in exps):
        raise InvalidInput("moment exponents must be non-negative")

    order = sum(exps)
    cap = get_settings().moment_order_cap if max_order is None else max_order
    if order > cap:
        raise UnsupportedOrder(f"moment order {order} exceeds cap {cap}")
    if order % 2:
        return 0.0

    labels = tuple(i for i, e in enumerate(exps) for _ in range(e))
    return _pairing_sum(cov, labels)


def _pairing_sum(cov: np.ndarray, labels: tuple[int, ...]) -> float:
    # Memo key is the sorted label multiset; removing items keeps it sorted
    memo: dict[tuple[int, ...], float] = {(): 1.0}

    def pairings(rest: tuple[int, ...]) -> float:
        if rest in memo:
            return memo[rest]
        first, tail = rest[0], rest[1:]
        total = 0.0
        for other, count in Counter(tail).items():
            k = tail.index(other)
            total += count * cov[first, other] * pairings(tail[:k] + tail[k + 1:])
        memo[rest] = total
        return total

    return float(pairings(labels))
