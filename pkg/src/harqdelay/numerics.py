"""Special functions and small numerical kernels shared by the analytic modules.

Everything here is a pure function of its arguments.
"""

import math
from dataclasses import dataclass

import numpy as np


class BracketError(ValueError):
    """Sign conditions for bisection do not hold."""


class ConvergenceError(RuntimeError):
    """An iterative routine hit its iteration cap."""


def lower_incomplete_gamma(m: int, x: float) -> float:
    """Lower incomplete gamma function gamma(m, x) for integer order m >= 1.

    For integer orders gamma(m, x) = (m-1)! (1 - e^-x sum_{k<m} x^k/k!).
    When x is small next to m that difference cancels catastrophically, so
    the same quantity is evaluated through the (exactly equal) tail
    (m-1)! e^-x sum_{k>=m} x^k/k!, whose terms are all positive.
    """
    if int(m) != m or m < 1:
        raise ValueError(f"order must be an integer >= 1, got {m!r}")
    if not x >= 0:
        raise ValueError(f"argument must be >= 0, got {x!r}")
    m = int(m)
    x = float(x)
    if x == 0.0:
        return 0.0
    if m == 1:
        return -math.expm1(-x)
    fact = math.factorial(m - 1)
    if x > m:
        # head sum: result is close to (m-1)!, no cancellation worth fearing
        term = 1.0
        head = 1.0
        for k in range(1, m):
            term *= x / k
            head += term
        return fact * (1.0 - math.exp(-x) * head)
    # tail sum starting at x^m / m!, computed in log space to avoid overflow
    log_first = m * math.log(x) - math.lgamma(m + 1)
    term = 1.0
    tail = 1.0
    k = m
    while True:
        k += 1
        term *= x / k
        tail += term
        if term < 1e-17 * tail:
            break
    return fact * math.exp(log_first - x) * tail


def regularized_lower_gamma(m: int, x: float) -> float:
    """gamma(m, x) / (m-1)!, i.e. the Erlang(m) CDF at x."""
    return lower_incomplete_gamma(m, x) / math.factorial(int(m) - 1)


@dataclass(frozen=True)
class PolynomialCoefficients:
    """Monic polynomial y^M - b_1 y^(M-1) - ... - b_M, stored as (b_1, ..., b_M)."""

    b: tuple

    def __post_init__(self):
        b = tuple(float(v) for v in self.b)
        if len(b) < 1:
            raise ValueError("polynomial degree must be >= 1")
        if any(not v >= 0 for v in b):
            raise ValueError(f"coefficients must be nonnegative, got {b}")
        if not any(v > 0 for v in b):
            raise ValueError("at least one coefficient must be positive")
        object.__setattr__(self, "b", b)

    @property
    def degree(self) -> int:
        return len(self.b)

    def __call__(self, y: float) -> float:
        # Horner on y^M - b_1 y^(M-1) - ... - b_M
        acc = 1.0
        for bi in self.b:
            acc = acc * y - bi
        return acc

    def derivative(self, y: float) -> float:
        M = self.degree
        acc = M * y ** (M - 1)
        for i, bi in enumerate(self.b[:-1], start=1):
            acc -= bi * (M - i) * y ** (M - i - 1)
        return acc

    def numpy_coefficients(self) -> np.ndarray:
        """Coefficients in numpy.roots order (highest power first)."""
        return np.concatenate(([1.0], -np.asarray(self.b)))


def unique_positive_root(poly: PolynomialCoefficients, rel_tol: float = 1e-12,
                         max_iter: int = 200) -> float:
    """The single positive root of y^M - b_1 y^(M-1) - ... - b_M.

    Bisection on (0, 1 + max b_i], the Cauchy bound on the root moduli.
    f is negative on (0, y*) and positive beyond, so the bracket needs no
    search. A couple of safeguarded Newton steps polish the bisection result
    down to rounding level.
    """
    lo = 0.0
    hi = 1.0 + max(poly.b)
    if poly(hi) <= 0.0:
        raise BracketError(f"f(upper={hi}) = {poly(hi)} is not positive")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if poly(mid) > 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= rel_tol * hi:
            break
    else:
        raise ConvergenceError(f"bisection did not reach rel_tol={rel_tol} in {max_iter} steps")

    y = 0.5 * (lo + hi)
    fy = poly(y)
    for _ in range(3):
        d = poly.derivative(y)
        if d <= 0.0:
            break
        step = y - fy / d
        if not (lo <= step <= hi):
            break
        fs = poly(step)
        if abs(fs) >= abs(fy):
            break
        y, fy = step, fs
    return y


def _balance(A: np.ndarray, sweeps: int = 100) -> np.ndarray:
    """Osborne balancing: D^-1 A D with off-diagonal row and column sums equal."""
    A = A.copy()
    for _ in range(sweeps):
        worst = 1.0
        for k in range(A.shape[0]):
            c = A[:, k].sum() - A[k, k]
            r = A[k, :].sum() - A[k, k]
            if c == 0.0 or r == 0.0:
                continue
            f = math.sqrt(c / r)
            A[k, :] *= f
            A[:, k] /= f
            worst = max(worst, f, 1.0 / f)
        if worst < 1.0 + 1e-3:
            break
    return A


def spectral_radius(matrix, tol: float = 1e-13, max_iter: int = 200) -> float:
    """Perron root of a nonnegative square matrix by normalized power iteration.

    The matrix is balanced by a diagonal similarity and shifted by c I, with
    c the largest row sum (>= the Perron root). The shift separates the Perron
    root from the other eigenvalues on the same circle, which nearly cyclic
    matrices have. The iterate starts at the all-ones vector and each step
    squares the normalized iteration operator, so after k steps it equals
    (A + cI)^(2^k) 1 up to scale. Converged when successive Rayleigh-quotient
    estimates agree to `tol` relative.
    """
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if np.any(A < 0):
        raise ValueError("matrix must be entrywise nonnegative")
    if A.shape[0] == 1:
        return float(A[0, 0])
    A = _balance(A)
    shift = float(A.sum(axis=1).max())
    if shift == 0.0:
        return 0.0
    op = A / shift + np.eye(A.shape[0])

    x = np.ones(A.shape[0])
    prev = None
    for _ in range(max_iter):
        x = op @ x
        x /= np.linalg.norm(x)
        est = float(x @ (A @ x))
        if prev is not None and abs(est - prev) <= tol * abs(est):
            return est
        prev = est
        op = op @ op
        op /= np.max(op)
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps")
