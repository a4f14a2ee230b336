"""Dense linear algebra, seeded random streams and least squares.

Matrices are plain ``numpy.ndarray`` objects in float64.  Everything random in
the package is drawn from :class:`Prng` (xoshiro256**) so that datasets, weight
initialisations and shuffles are reproducible bit for bit.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "ShapeError",
    "SingularSystemError",
    "Prng",
    "matmul",
    "sample_gaussian",
    "least_squares",
]

_MASK64 = 0xFFFFFFFFFFFFFFFF
_TWO_NEG_53 = 1.0 / (1 << 53)


class ShapeError(ValueError):
    """Raised when array dimensions do not chain."""


class SingularSystemError(ArithmeticError):
    """Raised when a normal-equation system is numerically rank deficient."""


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


class Prng:
    """xoshiro256** generator.

    The 256-bit state is expanded from an integer seed with splitmix64, the
    seeding procedure recommended by the algorithm's authors.  A single
    instance must not be shared between threads.
    """

    def __init__(self, seed: int = 0, *, state: tuple[int, int, int, int] | None = None):
        if state is not None:
            s = tuple(int(x) & _MASK64 for x in state)
            if not any(s):
                raise ValueError("xoshiro256** state must not be all zero")
            self._s = list(s)
            return
        sm = int(seed) & _MASK64
        s = []
        for _ in range(4):
            sm, out = _splitmix64(sm)
            s.append(out)
        self._s = s

    @property
    def state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def next_u64_array(self, n: int) -> np.ndarray:
        """Return the next ``n`` outputs as a uint64 array."""
        s0, s1, s2, s3 = self._s
        out = [0] * n
        for i in range(n):
            x = (s1 * 5) & _MASK64
            out[i] = ((((x << 7) | (x >> 57)) & _MASK64) * 9) & _MASK64
            t = (s1 << 17) & _MASK64
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
        self._s = [s0, s1, s2, s3]
        return np.array(out, dtype=np.uint64)

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        """One double in ``[low, high)`` built from the top 53 bits."""
        u = (self.next_u64() >> 11) * _TWO_NEG_53
        return low + (high - low) * u

    def uniform_array(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.next_u64_array(n) >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53
        return low + (high - low) * u

    def randbelow(self, n: int) -> int:
        """Integer in ``[0, n)`` by the multiply-high method."""
        if n <= 0:
            raise ValueError("n must be positive")
        return (self.next_u64() * n) >> 64

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return np.array(idx, dtype=np.int64)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two 2-D arrays with an explicit shape check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sample_gaussian(rng: Prng, n: int) -> np.ndarray:
    """Draw ``n`` standard normal values with the Box-Muller transform.

    Uniforms are consumed in pairs ``(u1, u2)``; each pair yields the cosine
    and the sine branch.  For odd ``n`` the last sine value is discarded, so
    the stream position depends only on ``ceil(n / 2)``.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return np.zeros(0)
    pairs = (n + 1) // 2
    u = rng.uniform_array(2 * pairs)
    u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    phi = 2.0 * math.pi * u2
    out = np.empty(2 * pairs)
    out[0::2] = r * np.cos(phi)
    out[1::2] = r * np.sin(phi)
    return out[:n]


def _cholesky(a: np.ndarray, rel_tol: float) -> np.ndarray:
    p = a.shape[0]
    lower = np.zeros_like(a)
    diag = np.diag(a)
    scale = float(np.max(np.abs(diag))) if p else 0.0
    if scale <= 0.0:
        raise SingularSystemError("normal matrix has no positive pivot")
    for j in range(p):
        pivot = a[j, j] - float(np.dot(lower[j, :j], lower[j, :j]))
        if pivot <= rel_tol * scale:
            raise SingularSystemError(
                f"pivot {pivot:.3e} at column {j} below {rel_tol:g} x {scale:.3e}"
            )
        lower[j, j] = math.sqrt(pivot)
        for i in range(j + 1, p):
            lower[i, j] = (a[i, j] - float(np.dot(lower[i, :j], lower[j, :j]))) / lower[j, j]
    return lower


def least_squares(x: np.ndarray, y: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    """Solve ``min ||x b - y||`` through the normal equations.

    Parameters
    ----------
    x : (n, p) array
        Design matrix, ``n >= p``.
    y : (n,) or (n, 1) array
        Targets.
    rel_tol : float
        A Cholesky pivot smaller than ``rel_tol`` times the largest diagonal
        entry of ``x.T x`` is treated as rank deficiency.

    Returns
    -------
    (p, 1) array of coefficients.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    if x.ndim != 2:
        raise ShapeError("design matrix must be 2-D")
    n, p = x.shape
    if y.shape[0] != n:
        raise ShapeError(f"{n} design rows but {y.shape[0]} targets")
    if n < p:
        raise SingularSystemError(f"underdetermined system: {n} rows for {p} unknowns")
    gram = matmul(x.T, x)
    rhs = matmul(x.T, y)
    lower = _cholesky(gram, rel_tol)
    # forward then back substitution
    w = np.zeros((p, 1))
    for i in range(p):
        w[i, 0] = (rhs[i, 0] - float(np.dot(lower[i, :i], w[:i, 0]))) / lower[i, i]
    beta = np.zeros((p, 1))
    for i in range(p - 1, -1, -1):
        beta[i, 0] = (w[i, 0] - float(np.dot(lower[i + 1:, i], beta[i + 1:, 0]))) / lower[i, i]
    return beta
