"""Numerical kernel shared by the marginal, copula and verification modules.

Distribution primitives are thin, validated wrappers around ``scipy.special``;
every function accepts a scalar or a numpy array and returns the same kind.
"""

import hashlib
import logging
import math
from collections.abc import Callable
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy import optimize, special
from scipy.linalg import lapack

from bmacopula import consts
from bmacopula.errors import BracketingError, DecompositionError, DomainError

logger = logging.getLogger(__name__)

Matrix = npt.NDArray[np.float64]
"""A dense row-major float matrix."""
FloatOrArray = float | npt.NDArray[np.float64]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _out(value: Any, like: Any) -> Any:
    if np.ndim(like) == 0:
        return float(value)
    return np.asarray(value, dtype=float)


def std_normal_cdf(x: FloatOrArray) -> FloatOrArray:
    """Standard normal CDF Φ(x)."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("std_normal_cdf requires finite input.")
    return _out(special.ndtr(arr), x)


def std_normal_pdf(x: FloatOrArray) -> FloatOrArray:
    """Standard normal density φ(x)."""
    arr = np.asarray(x, dtype=float)
    return _out(np.exp(-0.5 * arr * arr - _LOG_SQRT_2PI), x)


def std_normal_quantile(u: FloatOrArray) -> FloatOrArray:
    """Inverse standard normal CDF Φ⁻¹(u) for u in (0, 1)."""
    arr = np.asarray(u, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("std_normal_quantile requires 0 < u < 1.")
    return _out(special.ndtri(arr), u)


def _check_gamma_params(shape: FloatOrArray, scale: FloatOrArray) -> None:
    if not (np.all(np.asarray(shape) > 0.0) and np.all(np.asarray(scale) > 0.0)):
        raise DomainError("Gamma shape and scale must be positive.")


def gamma_cdf(y: FloatOrArray, shape: FloatOrArray, scale: FloatOrArray) -> FloatOrArray:
    """CDF of the gamma distribution in shape/scale form (mean shape*scale)."""
    _check_gamma_params(shape, scale)
    arr = np.maximum(np.asarray(y, dtype=float), 0.0)
    return _out(special.gammainc(shape, arr / np.asarray(scale, dtype=float)), y)


def gamma_quantile(u: FloatOrArray, shape: FloatOrArray, scale: FloatOrArray) -> FloatOrArray:
    """Inverse gamma CDF for u in [0, 1)."""
    _check_gamma_params(shape, scale)
    arr = np.asarray(u, dtype=float)
    if not np.all((arr >= 0.0) & (arr < 1.0)):
        raise DomainError("gamma_quantile requires 0 <= u < 1.")
    return _out(special.gammaincinv(shape, arr) * np.asarray(scale, dtype=float), u)


def gamma_logpdf(y: FloatOrArray, shape: FloatOrArray, scale: FloatOrArray) -> FloatOrArray:
    """Log density of the gamma distribution; -inf outside (0, inf). Unvalidated."""
    arr = np.asarray(y, dtype=float)
    a = np.asarray(shape, dtype=float)
    s = np.asarray(scale, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (
            special.xlogy(a - 1.0, arr) - arr / s - special.gammaln(a) - a * np.log(s)
        )
    out = np.where(arr > 0.0, out, -np.inf)
    return _out(out, y)


def gamma_moments_to_params(
    mean: FloatOrArray, variance: FloatOrArray
) -> tuple[FloatOrArray, FloatOrArray]:
    """Map (mean, variance) to (shape, scale) so that mean = shape*scale."""
    m = np.asarray(mean, dtype=float)
    v = np.asarray(variance, dtype=float)
    return _out(m * m / v, mean), _out(v / m, mean)


def _square(m: npt.ArrayLike, name: str) -> Matrix:
    arr = np.array(m, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DomainError(f"{name} requires a square matrix, got shape {arr.shape}.")
    return arr


def _check_symmetric(arr: Matrix, name: str) -> None:
    scale = max(1.0, float(np.max(np.abs(arr)))) if arr.size else 1.0
    if not np.allclose(arr, arr.T, rtol=0.0, atol=1e-12 * scale):
        raise DomainError(f"{name} requires a symmetric matrix.")


def cholesky_factor(m: npt.ArrayLike) -> Matrix:
    """Lower-triangular L with L @ L.T == m.

    Raises:
        DecompositionError: with the zero-based index of the failing pivot when
            ``m`` is not positive definite.
    """
    arr = _square(m, "cholesky_factor")
    _check_symmetric(arr, "cholesky_factor")
    if arr.size == 0:
        return arr
    factor, info = lapack.dpotrf(arr, lower=1, clean=1)
    if info > 0:
        raise DecompositionError(info - 1)
    if info < 0:
        raise DomainError(f"Invalid argument {-info} passed to the Cholesky routine.")
    return np.tril(factor)


def bisect_increasing(
    f: Callable[[float], float],
    target: float,
    lo: float,
    hi: float,
    tol: float = 1e-12,
) -> float:
    """Solve f(x) = target for a nondecreasing f on [lo, hi] by bisection."""
    f_lo, f_hi = f(lo), f(hi)
    if not f_lo <= target <= f_hi:
        raise BracketingError(
            f"Target {target!r} outside bracket values [{f_lo!r}, {f_hi!r}]."
        )
    if f_lo == target:
        return lo
    if f_hi == target:
        return hi
    root = optimize.bisect(lambda x: f(x) - target, lo, hi, xtol=tol, maxiter=2000)
    return float(root)


def nearest_correlation_repair(m: npt.ArrayLike) -> Matrix:
    """Return a correlation matrix whose smallest eigenvalue is at least 1e-8.

    Matrices that already satisfy this are returned unchanged. Otherwise
    eigenvalues are clipped and the diagonal renormalised until the bound holds.
    """
    arr = _square(m, "nearest_correlation_repair")
    floor = consts.PD_EIGEN_FLOOR
    if arr.size == 0 or np.linalg.eigvalsh(arr)[0] >= floor:
        return arr
    logger.warning("Repairing non positive definite correlation matrix.")
    repaired = arr
    for _ in range(100):
        eigvals, eigvecs = np.linalg.eigh(repaired)
        # clip a little above the floor so renormalisation does not undo it
        clipped = (eigvecs * np.maximum(eigvals, 2.0 * floor)) @ eigvecs.T
        d = np.sqrt(np.diag(clipped))
        repaired = clipped / np.outer(d, d)
        repaired = 0.5 * (repaired + repaired.T)
        np.fill_diagonal(repaired, 1.0)
        if np.linalg.eigvalsh(repaired)[0] >= floor:
            return repaired
    shrink = 1e-6
    identity = np.eye(arr.shape[0])
    while np.linalg.eigvalsh(repaired)[0] < floor:
        repaired = (1.0 - shrink) * repaired + shrink * identity
        shrink *= 2.0
    return repaired


def stream_id(*parts: object) -> int:
    """Stable 64-bit stream id derived from the string form of ``parts``."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf8")).digest()
    return int.from_bytes(digest[:8], "little")


class RngStream:
    """Reproducible random stream identified by (seed, stream id).

    Backed by numpy's counter-based Philox generator, so distinct stream ids give
    independent sequences and equal ids give bit-identical ones. Instances are
    stateful and must not be shared between concurrent tasks.
    """

    def __init__(self, seed: int, stream: int = 0) -> None:
        if seed < 0 or stream < 0:
            raise DomainError("RngStream seed and stream id must be unsigned.")
        self.seed = int(seed)
        self.stream = int(stream)
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self._generator = np.random.Generator(np.random.Philox(sequence))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream={self.stream})"

    @property
    def generator(self) -> np.random.Generator:
        """The underlying numpy generator."""
        return self._generator

    def standard_normal(self, size: int | tuple[int, ...]) -> npt.NDArray[np.float64]:
        return self._generator.standard_normal(size)

    def uniform(self, size: int | tuple[int, ...]) -> npt.NDArray[np.float64]:
        return self._generator.random(size)

    def integers(self, low: int, high: int) -> int:
        """A single integer in [low, high)."""
        return int(self._generator.integers(low, high))

    def subsample(self, n: int, k: int) -> npt.NDArray[np.intp]:
        """k distinct indices out of range(n)."""
        return self._generator.choice(n, size=k, replace=False)

    def dirichlet(self, alpha: npt.ArrayLike) -> npt.NDArray[np.float64]:
        return self._generator.dirichlet(alpha)
