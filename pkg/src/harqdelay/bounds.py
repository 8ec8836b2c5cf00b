"""Non-asymptotic backlog and delay bounds from an affine service envelope.

Units
-----
theta is in 1/bits, rates (rho_S, a, delta) in bits/sec, one slot lasts T
seconds. The envelope

    E[exp(-theta S(tau, t))] <= exp(-theta (rho_S T (t - tau) - sigma_S))

counts time in slots, so every rate enters the exponent as rate * T. In
particular the free parameter delta of the sample-path bound enters as
theta * delta * T:

    eps'(b) = exp(theta sigma_S) / (1 - exp(-theta delta T)) * exp(-theta b)
    b       = sigma_S - (log eps' + log(1 - exp(-theta delta T))) / theta

Worked example: theta = 1/bit, T = 1e-4 s, delta = ln(2) / 1e-4 bits/sec gives
exp(-theta delta T) = 1/2; with sigma_S = 0 and eps' = e^-10 this yields
b = 10 + ln 2 = 10.693 bits. The delay bound is d = b / (rho_S - delta)
seconds and the backlog bound q = a d bits, valid while a <= rho_S - delta.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .capacity import effective_capacity
from .model import ProtocolParams, TransitionProbabilities, steady_state, transition_matrix
from .numerics import ConvergenceError

HORIZON_CAP = 100_000
MAX_N_THETA = 700.0  # e^{-n theta} must stay representable
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class InfeasibleError(ValueError):
    """No (theta, delta) makes the queue stable for the requested arrival rate."""


@dataclass(frozen=True)
class ServiceEnvelope:
    theta: float  # 1/bits
    rho_s: float  # envelope rate, bits/sec
    sigma_s: float  # slack, bits
    horizon: int  # slots over which sigma_s was checked explicitly
    T: float = 1.0

    @property
    def rho_slot(self) -> float:
        return self.rho_s * self.T


@dataclass(frozen=True)
class BoundQuery:
    a: float  # arrival rate, bits/sec
    eps_prime: float
    delta: float  # bits/sec

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"arrival rate must be positive, got {self.a}")
        if not 0.0 < self.eps_prime < 1.0:
            raise ValueError(f"eps_prime must lie in (0, 1), got {self.eps_prime}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")


@dataclass(frozen=True)
class DelayBound:
    theta: float
    delta: float
    d: float  # seconds
    q: float  # bits
    b: float  # bits
    envelope: ServiceEnvelope


@njit(cache=True)
def _slack_scan(A, cap, patience, rel_eps):
    """Scan s_t = log max_j (1^T A^t)_j for t = 1..cap (theta-scaled slack).

    Returns (max_s, argmax_t, last_t, grew_recently). Stops early once s_t
    has been non-increasing for `patience` consecutive steps.
    """
    M = A.shape[0]
    r = np.ones(M)
    new = np.empty(M)
    best = 0.0
    best_t = 0
    prev = 0.0
    streak = 0
    last_growth = 0
    t = 0
    while t < cap:
        t += 1
        for j in range(M):
            acc = 0.0
            for i in range(M):
                acc += r[i] * A[i, j]
            new[j] = acc
        mx = 0.0
        for j in range(M):
            r[j] = new[j]
            if r[j] > mx:
                mx = r[j]
        s = math.log(mx)
        tol = rel_eps * max(1.0, abs(s))
        if s > best + tol:
            best = s
            best_t = t
            last_growth = t
        elif s > best:
            best = s
            best_t = t
        if s <= prev + tol:
            streak += 1
        else:
            streak = 0
        prev = s
        if streak >= patience:
            break
    return best, best_t, t, (t - last_growth) < patience


def _scaled_service_matrix(p: TransitionProbabilities, n: float, theta: float,
                           rho_slot: float) -> np.ndarray:
    """Upsilon * exp(theta rho_slot) with the exponents combined before exp."""
    A = transition_matrix(p)
    A[:, 0] *= math.exp(theta * (rho_slot - n))
    A[:, 1:] *= math.exp(theta * rho_slot)
    return A


def _limit_slack(A: np.ndarray) -> float:
    """log max_j lim_t (1^T A^t)_j for a matrix whose Perron root is 1.

    The left and right Perron vectors follow from the sparsity pattern
    (first row plus subdiagonal) by recursion.
    """
    M = A.shape[0]
    v = np.empty(M)
    v[0] = 1.0
    for i in range(M - 1):
        v[i + 1] = A[i + 1, i] * v[i]
    u = np.empty(M)
    u[M - 1] = A[0, M - 1]
    for j in range(M - 2, -1, -1):
        u[j] = A[0, j] + u[j + 1] * A[j + 1, j]
    lim = v.sum() * u / (u @ v)
    return math.log(float(lim.max()))


def slack_term(p: TransitionProbabilities, params: ProtocolParams, theta: float,
               epsilon_margin: float = 0.0, horizon_cap: int = HORIZON_CAP,
               rho_s: float | None = None) -> ServiceEnvelope:
    """Smallest sigma_S making (sigma_S, rho_S - margin) an envelope of the service.

    sigma_S = max_t [rho_slot t + (1/theta) log max_j E(exp(-theta S(0, t)) | X_1 = j)]
    with rho_slot = rho_S T - epsilon_margin (bits/slot). The conditional MGFs
    are the column sums of Upsilon^t, so the scan is a row-vector recursion.
    The scan stops once the sequence has been non-increasing for 10 M steps;
    with zero margin the t -> inf limit of the sequence is included as well.
    """
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    if epsilon_margin < 0:
        raise ValueError("epsilon_margin must be >= 0")
    if params.n * theta > MAX_N_THETA:
        raise ValueError(f"n*theta = {params.n * theta:g} exceeds {MAX_N_THETA}")
    if rho_s is None:
        rho_s = effective_capacity(p, params, theta).rho_s
    rho_slot = rho_s * params.T - epsilon_margin
    env_rate = rho_slot / params.T
    if p.M == 1:
        # one slot, one packet: S(0, t) = n t exactly
        sigma = max(0.0, (rho_slot - params.n) * 1.0)
        return ServiceEnvelope(theta, env_rate, sigma, 1, params.T)

    A = _scaled_service_matrix(p, params.n, theta, rho_slot)
    best, best_t, last_t, growing = _slack_scan(A, int(horizon_cap), 10 * p.M, 1e-13)
    if growing and last_t >= horizon_cap:
        raise ConvergenceError(
            f"slack sequence still growing at horizon_cap={horizon_cap} (theta={theta:g})")
    if epsilon_margin == 0.0:
        best = max(best, _limit_slack(A))
    sigma = max(best, 0.0) / theta
    return ServiceEnvelope(theta, env_rate, sigma, int(last_t), params.T)


def _log1m_exp(x: float) -> float:
    """log(1 - e^{-x}) for x > 0."""
    return math.log(-math.expm1(-x))


def violation_probability(envelope: ServiceEnvelope, delta: float, b: float) -> float:
    """eps'(b), the sample-path deficit violation probability."""
    th = envelope.theta
    return math.exp(th * (envelope.sigma_s - b) - _log1m_exp(th * delta * envelope.T))


def deficit_b(envelope: ServiceEnvelope, delta: float, eps_prime: float) -> float:
    """Deficit b (bits) whose sample-path violation probability is eps_prime."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if not 0.0 < eps_prime < 1.0:
        raise ValueError(f"eps_prime must lie in (0, 1), got {eps_prime}")
    th = envelope.theta
    return envelope.sigma_s - (math.log(eps_prime) + _log1m_exp(th * delta * envelope.T)) / th


def backlog_and_delay(envelope: ServiceEnvelope, query: BoundQuery, b: float | None = None) -> tuple:
    """(q bits, d seconds) with q = a b / (rho_S - delta) and d = q / a."""
    service = envelope.rho_s - query.delta
    if query.a > service:
        raise InfeasibleError(
            f"unstable: a = {query.a:g} > rho_S - delta = {service:g} bits/sec")
    if b is None:
        b = deficit_b(envelope, query.delta, query.eps_prime)
    d = b / service
    return query.a * d, d


def golden_section(f, lo: float, hi: float, tol: float, max_iter: int = 200) -> tuple:
    """Minimize a unimodal f on [lo, hi]; returns (x, f(x))."""
    c = hi - GOLDEN * (hi - lo)
    d = lo + GOLDEN * (hi - lo)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if hi - lo <= tol * max(abs(lo), abs(hi), 1e-300):
            break
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - GOLDEN * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + GOLDEN * (hi - lo)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


THETA_GRID_SPAN = (1e-6, 500.0)  # n*theta; the top end stays below MAX_N_THETA


def default_theta_grid(n: float, points: int = 80) -> np.ndarray:
    """Log grid with n*theta spanning THETA_GRID_SPAN.

    At light load the bound keeps improving as theta grows (the envelope
    approaches the deterministic worst case), so the grid reaches far up.
    """
    lo, hi = THETA_GRID_SPAN
    return np.logspace(math.log10(lo), math.log10(hi), points) / n


def delay_at_theta(p: TransitionProbabilities, params: ProtocolParams, a: float,
                   eps_prime: float, theta: float, tol: float = 1e-9) -> DelayBound | None:
    """Best delay bound at fixed theta (optimized over delta); None if unstable."""
    ec = effective_capacity(p, params, theta)
    if ec.rho_s <= a:
        return None
    env = slack_term(p, params, theta, rho_s=ec.rho_s)
    hi = env.rho_s - a

    def d_of(delta):
        b = deficit_b(env, delta, eps_prime)
        return b / (env.rho_s - delta)

    delta, d = golden_section(d_of, 0.0 + hi * 1e-12, hi, tol)
    b = deficit_b(env, delta, eps_prime)
    return DelayBound(theta, delta, d, a * d, b, env)


def optimize_delay_bound(p: TransitionProbabilities, params: ProtocolParams, a: float,
                         eps_prime: float, theta_grid=None, tol: float = 1e-9,
                         refine: bool = True) -> DelayBound:
    """Minimize d = b / (rho_S(theta) - delta) over theta (log grid) and delta.

    For each grid theta, delta is optimized on (0, rho_S(theta) - a] by
    golden-section search. With `refine` the best grid cell is then polished
    by golden-section search over log(theta) between its neighbours.
    """
    if not a > 0:
        raise ValueError(f"arrival rate must be positive, got {a}")
    if not 0.0 < eps_prime < 1.0:
        raise ValueError(f"eps_prime must lie in (0, 1), got {eps_prime}")
    mean_rate = params.n * steady_state(p).pi0 / params.T
    if a >= mean_rate:
        raise InfeasibleError(
            f"arrival rate {a:g} bits/sec is not below the mean service rate {mean_rate:g}")
    grid = default_theta_grid(params.n) if theta_grid is None else np.sort(np.asarray(theta_grid, float))
    results = [delay_at_theta(p, params, a, eps_prime, th, tol) for th in grid]
    feasible = [i for i, r in enumerate(results) if r is not None]
    if not feasible:
        raise InfeasibleError(f"no theta on the grid gives rho_S(theta) > a = {a:g}")
    k = min(feasible, key=lambda i: results[i].d)
    best = results[k]
    if refine and len(grid) > 2:
        lo = math.log(grid[max(k - 1, 0)])
        hi = math.log(grid[min(k + 1, len(grid) - 1)])
        cache = {}

        def d_log(lt):
            r = delay_at_theta(p, params, a, eps_prime, math.exp(lt), tol)
            cache[lt] = r
            return math.inf if r is None else r.d

        lt, d = golden_section(d_log, lo, hi, 1e-6)
        if d < best.d:
            best = cache[lt]
    return best
