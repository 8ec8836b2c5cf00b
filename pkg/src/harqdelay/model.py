"""HARQ link model: protocol parameters, per-attempt failure probabilities,
steady state of the attempt-counter chain, packet loss and reliable throughput.

The chain has states 0..M-1. State 0 means a packet left the queue in the
last slot; state m >= 1 means the head-of-line packet has failed m attempts.
From state m-1 the next attempt fails with probability p[m-1].
"""

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Protocol as _Interface

import numpy as np

from .numerics import regularized_lower_gamma

DEFAULT_IR_RESOLUTION = 4096


class Protocol(str, enum.Enum):
    T1 = "T1"
    CC = "CC"
    IR = "IR"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown protocol {value!r}; expected one of t1, cc, ir") from None


PROTOCOLS = (Protocol.T1, Protocol.CC, Protocol.IR)


class FadingPower(_Interface):
    """Distribution of the per-slot fading power z = |h|^2."""

    mean: float

    def cdf(self, z): ...

    def pdf(self, z): ...

    def sample(self, rng, size): ...


@dataclass(frozen=True)
class RayleighFading:
    """Exponential fading power with the given mean (Rayleigh amplitude)."""

    mean: float = 1.0

    def cdf(self, z):
        z = np.maximum(z, 0.0)
        return -np.expm1(-z / self.mean)

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        return np.where(z >= 0, np.exp(-z / self.mean) / self.mean, 0.0)

    def sample(self, rng, size):
        # inverse CDF keeps the variate stream identical across platforms
        u = rng.random(size)
        return -self.mean * np.log1p(-u)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class ProtocolParams:
    """Physical and link parameters of one HARQ configuration.

    n: packet size [bits]; T: slot duration [s]; B: bandwidth [Hz];
    M: transmission deadline [attempts]; gamma: average SNR (linear);
    sigma_h_sq: mean fading power.
    """

    n: float
    T: float = 1e-4
    B: float = 1e6
    M: int = 4
    gamma: float = 1.0
    sigma_h_sq: float = 1.0
    protocol: Protocol = Protocol.T1

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol.parse(self.protocol))
        if not self.n >= 0:
            raise ValueError(f"n must be >= 0, got {self.n}")
        if not (self.T > 0 and self.B > 0):
            raise ValueError("T and B must be positive")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be an integer >= 1, got {self.M}")
        object.__setattr__(self, "M", int(self.M))
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.sigma_h_sq > 0:
            raise ValueError(f"sigma_h_sq must be positive, got {self.sigma_h_sq}")

    @property
    def kappa(self) -> float:
        return kappa(self)

    @property
    def fading(self) -> RayleighFading:
        return RayleighFading(self.sigma_h_sq)

    @property
    def peak_rate(self) -> float:
        """n/T bits/sec, the service rate of a slot that removes a packet."""
        return self.n / self.T

    def with_(self, **changes) -> "ProtocolParams":
        return replace(self, **changes)


def kappa(params: ProtocolParams) -> float:
    """Fading-power decoding threshold (2^(n/(TB)) - 1) / gamma."""
    return math.expm1(params.n / (params.T * params.B) * math.log(2.0)) / params.gamma


@dataclass(frozen=True)
class TransitionProbabilities:
    """p[i]: probability that attempt i+1 fails given attempts 1..i failed."""

    p: np.ndarray
    degenerate: bool = False  # set when a 0/0 ratio was replaced by 0

    def __post_init__(self):
        p = np.array(self.p, dtype=float).reshape(-1)
        if p.size < 1:
            raise ValueError("need at least one transition probability")
        if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise ValueError(f"transition probabilities must lie in [0, 1], got {p}")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def M(self) -> int:
        return self.p.size

    def cumulative(self) -> np.ndarray:
        """c[i] = p_0 ... p_i, probability that the first i+1 attempts all fail."""
        return np.cumprod(self.p)

    def __len__(self):
        return self.p.size

    def __getitem__(self, i):
        return self.p[i]


@dataclass(frozen=True)
class SteadyState:
    pi: np.ndarray
    p_lost: float
    throughput: float  # reliable throughput, bits/sec

    @property
    def pi0(self) -> float:
        return float(self.pi[0])


def _ratio_chain(cdf_at_threshold) -> tuple:
    """Turn F_1, ..., F_M (CDFs of the accumulated quantity at the threshold)
    into conditional failure ratios F_m / F_{m-1}, with 0/0 -> 0."""
    F = np.asarray(cdf_at_threshold, dtype=float)
    p = np.empty_like(F)
    p[0] = F[0]
    degenerate = False
    for m in range(1, F.size):
        if F[m - 1] > 0.0:
            p[m] = min(F[m] / F[m - 1], 1.0)
        else:
            p[m] = 0.0
            degenerate = True
    return p, degenerate


def transition_probs_t1(params: ProtocolParams) -> TransitionProbabilities:
    """Type-I: every attempt is decoded on its own slot, so p is constant."""
    p = float(params.fading.cdf(params.kappa))
    return TransitionProbabilities(np.full(params.M, p))


def transition_probs_cc(params: ProtocolParams) -> TransitionProbabilities:
    """Chase combining: attempt m succeeds once z_1 + ... + z_m >= kappa.

    The accumulated power is Erlang(m) in units of sigma_h^2, so
    p_{m-1} = P(m, x) / P(m-1, x) with P the regularized lower gamma and
    x = kappa / sigma_h^2.
    """
    x = params.kappa / params.sigma_h_sq
    F = [regularized_lower_gamma(m, x) for m in range(1, params.M + 1)]
    p, degenerate = _ratio_chain(F)
    return TransitionProbabilities(p, degenerate)


def _log_snr_cdf(params: ProtocolParams, ell):
    """CDF of log(1 + gamma z) at ell >= 0."""
    z = np.expm1(ell) / params.gamma
    return params.fading.cdf(z)


def ir_cdfs(params: ProtocolParams, resolution: int = DEFAULT_IR_RESOLUTION) -> np.ndarray:
    """F_m(c) for m = 1..M, where F_m is the CDF of sum_{i<m} log(1 + gamma z_i)
    and c = log(1 + gamma kappa) is the accumulated-information threshold.

    F_m = F_{m-1} * dF_1 is evaluated on a uniform grid over [0, c]: the mass
    of dF_1 on each cell is exact, and F_{m-1} is averaged over the cell ends
    (trapezoid rule, second order in the grid step).
    """
    if int(resolution) != resolution or resolution < 64:
        raise ValueError(f"resolution must be an integer >= 64, got {resolution}")
    c = math.log1p(params.gamma * params.kappa)
    out = np.zeros(params.M)
    if c == 0.0:
        return out
    grid = np.linspace(0.0, c, int(resolution) + 1)
    F1 = _log_snr_cdf(params, grid)
    w = np.diff(F1)
    out[0] = F1[-1]
    F = F1
    for m in range(1, params.M):
        Fmid = 0.5 * (F[1:] + F[:-1])
        conv = np.convolve(w, Fmid)[: grid.size - 1]
        F = np.concatenate(([0.0], conv))
        out[m] = F[-1]
    return out


def transition_probs_ir(params: ProtocolParams,
                        resolution: int = DEFAULT_IR_RESOLUTION) -> TransitionProbabilities:
    """Incremental redundancy: attempt m succeeds once
    sum_{i<m} log(1 + gamma z_i) >= log(1 + gamma kappa)."""
    F = ir_cdfs(params, resolution)
    p, degenerate = _ratio_chain(F)
    # first attempt has a closed form shared by all protocols
    p[0] = float(params.fading.cdf(params.kappa))
    return TransitionProbabilities(p, degenerate)


def transition_probs(params: ProtocolParams, resolution: int = DEFAULT_IR_RESOLUTION
                     ) -> TransitionProbabilities:
    if params.protocol is Protocol.T1:
        return transition_probs_t1(params)
    if params.protocol is Protocol.CC:
        return transition_probs_cc(params)
    return transition_probs_ir(params, resolution)


def transition_matrix(p: TransitionProbabilities) -> np.ndarray:
    """Column-stochastic matrix P with P[i, j] = Pr(next state i | state j)."""
    M = p.M
    P = np.zeros((M, M))
    P[0, : M - 1] = 1.0 - p.p[: M - 1]
    P[0, M - 1] = 1.0
    for j in range(M - 1):
        P[j + 1, j] = p.p[j]
    return P


def steady_state(p: TransitionProbabilities, n: float = 0.0, T: float = 1.0) -> SteadyState:
    """Stationary law of the attempt-counter chain.

    pi_i = pi_0 p_0 ... p_{i-1}; p_lost = p_0 ... p_{M-1};
    reliable throughput pi_0 (1 - p_lost) n / T.
    """
    c = p.cumulative()
    weights = np.concatenate(([1.0], c[:-1]))
    pi = weights / weights.sum()
    p_lost = float(c[-1])
    throughput = float(pi[0] * (1.0 - p_lost) * n / T)
    pi.setflags(write=False)
    return SteadyState(pi=pi, p_lost=p_lost, throughput=throughput)


def analyze(params: ProtocolParams, resolution: int = DEFAULT_IR_RESOLUTION) -> tuple:
    """(TransitionProbabilities, SteadyState) for one configuration."""
    p = transition_probs(params, resolution)
    return p, steady_state(p, params.n, params.T)


def best_packet_size(gamma: float, T: float = 1e-4, B: float = 1e6,
                     sigma_h_sq: float = 1.0) -> int:
    """Packet size n maximizing the Type-I reliable throughput.

    For Type-I the reliable throughput is (1 - p) n / T for every deadline M,
    so the scan does not depend on M. Integer scan over
    [1, ceil(TB log2(1 + 20 gamma))].
    """
    upper = math.ceil(T * B * math.log2(1.0 + gamma * 20.0))
    n = np.arange(1, upper + 1, dtype=float)
    k = np.expm1(n / (T * B) * math.log(2.0)) / gamma
    tput = np.exp(-k / sigma_h_sq) * n
    return int(n[int(np.argmax(tput))])
