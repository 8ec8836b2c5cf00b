"""Effective capacity of the HARQ service process.

The service is Markov modulated: a slot that ends in state 0 removes n bits,
every other slot removes nothing. With phi(theta) = diag(e^{-n theta}, 1, ..., 1)
the log-MGF growth rate of the service is log sp(P phi(theta)), and

    rho_S(theta) = -log sp(Upsilon) / (theta T)       [bits/sec]

with theta in 1/bits. The spectral radius is the unique positive root of a
polynomial with nonnegative coefficients; the root (primary path) and a
power iteration on Upsilon (fallback and cross-check) are both available.
"""

import math
from dataclasses import dataclass

import numpy as np

from .model import ProtocolParams, TransitionProbabilities, steady_state, transition_matrix
from .numerics import PolynomialCoefficients, spectral_radius, unique_positive_root

ROOT_REL_TOL = 1e-12
ROOT_MAX_ITER = 200


@dataclass(frozen=True)
class EffectiveCapacityResult:
    theta: float
    rho_s: float  # bits/sec
    y_star: float  # positive root of f(y); inf if p_0 e^{-n theta} underflows
    sp: float  # spectral radius of Upsilon, = p_0 e^{-n theta} y_star
    method: str = "root"  # "root", "spectral" (fallback) or "deterministic" (M == 1)


def _check_theta(theta):
    if not theta > 0:
        raise ValueError(f"theta must be positive (1/bits), got {theta}")


def build_upsilon(p: TransitionProbabilities, n: float, theta: float) -> np.ndarray:
    """Upsilon = P diag(e^{-n theta}, 1, ..., 1): the transition matrix with the
    column of state 0 (the packet-removing state) scaled by e^{-n theta}."""
    U = transition_matrix(p)
    U[:, 0] *= math.exp(-n * theta)
    return U


def characteristic_poly(p: TransitionProbabilities, n: float, theta: float) -> PolynomialCoefficients:
    """f(y) = y^M - b_1 y^(M-1) - ... - b_M whose positive root y* gives
    sp(Upsilon) = p_0 e^{-n theta} y*.

    b_1 = (1-p_0)/p_0, b_{i+1} = (1-p_i) p_1...p_{i-1} / (p_0 e^{-n theta})^i,
    b_M = p_1...p_{M-2} / (p_0 e^{-n theta})^(M-1).
    Requires p_0, ..., p_{M-2} > 0.
    """
    M = p.M
    q = p.p
    if M == 1:
        raise ValueError("characteristic polynomial is undefined for M = 1")
    if np.any(q[: M - 1] == 0.0):
        raise ValueError("characteristic polynomial needs p_0..p_{M-2} > 0")
    c = q[0] * math.exp(-n * theta)
    b = np.empty(M)
    b[0] = (1.0 - q[0]) / q[0]
    prod = 1.0  # p_1 ... p_{i-1}
    for i in range(1, M - 1):
        b[i] = (1.0 - q[i]) * prod / c**i
        prod *= q[i]
    b[M - 1] = prod / c ** (M - 1)
    return PolynomialCoefficients(tuple(b))


def scaled_characteristic_poly(p: TransitionProbabilities, n: float, theta: float) -> PolynomialCoefficients:
    """The polynomial f rewritten in mu = p_0 e^{-n theta} y e^{n theta / M}.

    mu = sp(Upsilon) e^{n theta / M}, so
    rho_S = n/(M T) - log(mu) / (theta T). Every coefficient is a probability
    weight times e^{-n theta (1 - k/M)} <= 1, so nothing overflows for large
    n theta; tiny terms just underflow to zero.
    """
    M = p.M
    q = p.p
    nt = n * theta
    b = np.empty(M)
    b[0] = (1.0 - q[0]) * math.exp(-nt * (1.0 - 1.0 / M))
    prod = 1.0  # p_1 ... p_{i-1}
    for i in range(1, M - 1):
        b[i] = q[0] * (1.0 - q[i]) * prod * math.exp(-nt * (1.0 - (i + 1) / M))
        prod *= q[i]
    if M > 1:
        b[M - 1] = q[0] * prod
    return PolynomialCoefficients(tuple(b))


def _polish_log_mu(p: TransitionProbabilities, nt: float, mu: float) -> float:
    """log(mu), refined by Newton steps in nu = mu - 1 with a cancellation-free residual.

    The scaled coefficients are b_i = w_i e^{-nt c_i} with sum(w_i) = 1, so
    f(1 + nu) = [(1+nu)^M - sum w_i (1+nu)^(M-1-i)] - sum w_i expm1(-nt c_i) (1+nu)^(M-1-i)
    and both parts are evaluated with expm1/log1p. Near theta = 0 this keeps
    log(mu) accurate relative to its own (tiny) size.
    """
    M, q = p.M, p.p
    w = np.empty(M)
    c = 1.0 - np.arange(1, M + 1) / M
    w[0] = 1.0 - q[0]
    prod = 1.0
    for i in range(1, M - 1):
        w[i] = q[0] * (1.0 - q[i]) * prod
        prod *= q[i]
    w[M - 1] = q[0] * prod
    e = np.expm1(-nt * c)
    k = M - 1 - np.arange(M)

    def resid(nu):
        lg = math.log1p(nu)
        h = math.expm1(M * lg) - float(w @ np.expm1(k * lg))
        return h - float((w * e) @ np.exp(k * lg))

    nu = mu - 1.0
    r = resid(nu)
    for _ in range(4):
        y = 1.0 + nu
        deriv = M * y ** (M - 1) - float((w * (1.0 + e) * k) @ (y ** np.maximum(k - 1, 0)))
        if not deriv > 0.0:
            break
        cand = nu - r / deriv
        if cand <= -1.0:
            break
        rc = resid(cand)
        if abs(rc) >= abs(r):
            break
        nu, r = cand, rc
    return math.log1p(nu)


def effective_capacity(p: TransitionProbabilities, params: ProtocolParams, theta: float,
                       rel_tol: float = ROOT_REL_TOL) -> EffectiveCapacityResult:
    """rho_S(theta) = -log(p_0 e^{-n theta} y*) / (theta T)."""
    _check_theta(theta)
    n, T, M = params.n, params.T, p.M
    if M == 1:
        sp = math.exp(-n * theta)
        y = 1.0 / p.p[0] if p.p[0] > 0 else math.inf  # sp = p_0 e^{-n theta} y
        return EffectiveCapacityResult(theta, n / T, y, sp, "deterministic")

    nt = n * theta
    if np.all(p.p[: M - 1] > 0.0):
        mu = unique_positive_root(scaled_characteristic_poly(p, n, theta),
                                  rel_tol=rel_tol, max_iter=ROOT_MAX_ITER)
        log_sp = _polish_log_mu(p, nt, mu) - nt / M
        method = "root"
    else:
        # the unscaled coefficients divide by these p_i; use the matrix directly
        log_sp = math.log(spectral_radius(build_upsilon(p, n, theta)))
        method = "spectral"
    rho = -log_sp / (theta * T)
    sp = math.exp(log_sp)
    log_c = math.log(p.p[0]) - nt if p.p[0] > 0 else -math.inf
    y = math.exp(log_sp - log_c) if log_sp - log_c < 709.0 else math.inf
    return EffectiveCapacityResult(theta, rho, y, sp, method)


def capacity_limits(p: TransitionProbabilities, params: ProtocolParams) -> tuple:
    """(mean_rate, min_rate) in bits/sec: the theta -> 0 and theta -> inf limits."""
    pi0 = steady_state(p).pi0
    return params.n * pi0 / params.T, params.n / (params.T * p.M)
