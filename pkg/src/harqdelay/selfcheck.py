"""Cross-validation suite behind `harqdelay self-check`.

quick: analytic identities only (seconds). full: adds 1e7-sample Monte Carlo
agreement and bound soundness against the simulator (minutes).
"""

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .bounds import InfeasibleError, deficit_b, optimize_delay_bound, slack_term, violation_probability
from .capacity import build_upsilon, capacity_limits, effective_capacity
from .model import (PROTOCOLS, Protocol, ProtocolParams, TransitionProbabilities, db_to_linear,
                    ir_cdfs, steady_state, transition_matrix, transition_probs)
from .numerics import lower_incomplete_gamma, spectral_radius
from .sim import SimConfig, empirical_violation, estimate_transition_probs, simulate_queue

GAMMAS_DB = (0.0, 5.0, 10.0)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _corrupt_cc(p: TransitionProbabilities) -> TransitionProbabilities:
    q = p.p.copy()
    if q.size > 1:
        q[1] = 0.999
    return TransitionProbabilities(q)


class SelfCheck:
    """Runs named checks; `fault` injects a corrupted CC p_1 into every analytic call."""

    def __init__(self, inject_fault: bool = False, seed: int = 12345):
        self.inject_fault = inject_fault
        self.seed = seed

    def probs(self, params: ProtocolParams) -> TransitionProbabilities:
        p = transition_probs(params)
        if self.inject_fault and params.protocol is Protocol.CC:
            p = _corrupt_cc(p)
        return p

    # analytic checks

    def check_gamma(self):
        worst = 0.0
        for m in range(1, 8):
            for x in (1e-3, 0.3, 1.0, 4.0, 15.0):
                ref, _ = integrate.quad(lambda t: t ** (m - 1) * math.exp(-t), 0, x,
                                        epsabs=0, epsrel=1e-13)
                worst = max(worst, abs(lower_incomplete_gamma(m, x) - ref) / ref)
        return worst < 1e-10, f"max rel err {worst:.2e}"

    def check_stationary(self):
        worst = 0.0
        for g in GAMMAS_DB:
            for M in range(1, 11):
                for proto in PROTOCOLS:
                    p = self.probs(ProtocolParams(n=82, M=M, gamma=db_to_linear(g), protocol=proto))
                    pi = steady_state(p).pi
                    P = transition_matrix(p)
                    worst = max(worst, np.abs(P @ pi - pi).max(), abs(pi.sum() - 1.0))
        return worst < 1e-12, f"max |P pi - pi| {worst:.2e}"

    def check_dominance(self):
        bad = []
        for g in GAMMAS_DB:
            gamma = db_to_linear(g)
            for M in range(1, 11):
                vals = {}
                for proto in PROTOCOLS:
                    params = ProtocolParams(n=82, M=M, gamma=gamma, protocol=proto)
                    p = self.probs(params)
                    ss = steady_state(p, params.n, params.T)
                    rho = effective_capacity(p, params, 1e-2).rho_s
                    vals[proto] = (ss.p_lost, ss.throughput, rho)
                t1, cc, ir = (vals[x] for x in PROTOCOLS)
                tol = 1e-12
                ok = (ir[0] <= cc[0] + tol and cc[0] <= t1[0] + tol
                      and ir[1] >= cc[1] * (1 - tol) and cc[1] >= t1[1] * (1 - tol)
                      and ir[2] >= cc[2] * (1 - tol) and cc[2] >= t1[2] * (1 - tol))
                if not ok:
                    bad.append(f"gamma={g:g}dB M={M}")
        return not bad, "ordering IR >= CC >= T1 holds" if not bad else "violated at " + ", ".join(bad[:4])

    def check_root_vs_spectral(self):
        rng = np.random.Generator(np.random.PCG64(self.seed))
        worst = 0.0
        for _ in range(200):
            M = int(rng.integers(2, 7))
            p = TransitionProbabilities(rng.uniform(0.01, 0.99, M))
            n = float(rng.uniform(10, 400))
            theta = 10 ** rng.uniform(-6, 0.5) / n
            params = ProtocolParams(n=n, M=M)
            sp_root = effective_capacity(p, params, theta).sp
            sp_mat = spectral_radius(build_upsilon(p, n, theta))
            worst = max(worst, abs(sp_root - sp_mat) / sp_mat)
        return worst < 1e-9, f"max rel diff {worst:.2e}"

    def check_capacity_limit(self):
        worst = 0.0
        for proto in PROTOCOLS:
            params = ProtocolParams(n=82, M=4, protocol=proto)
            p = self.probs(params)
            mean, _ = capacity_limits(p, params)
            rho = effective_capacity(p, params, 1e-6 * params.T / params.n).rho_s
            worst = max(worst, abs(rho - mean) / mean)
        return worst < 5e-3, f"theta->0 rel err {worst:.2e}"

    def check_round_trip(self):
        params = ProtocolParams(n=82, M=4)
        p = self.probs(params)
        env = slack_term(p, params, 0.02)
        worst = 0.0
        for eps in (1e-1, 1e-3, 1e-6, 1e-9):
            for frac in (0.1, 0.5, 0.9):
                delta = frac * env.rho_s
                back = violation_probability(env, delta, deficit_b(env, delta, eps))
                worst = max(worst, abs(back - eps) / eps)
        return worst < 1e-12, f"max rel err {worst:.2e}"

    def check_envelope(self):
        """E[exp(-theta S(0,t)) | X_1 = j] <= exp(-theta(rho t - sigma)) for t <= 200."""
        worst = -math.inf
        for proto in PROTOCOLS:
            params = ProtocolParams(n=82, M=4, protocol=proto)
            p = self.probs(params)
            theta = 0.02
            env = slack_term(p, params, theta)
            U = build_upsilon(p, params.n, theta)
            row = np.ones(p.M)
            for t in range(1, 201):
                row = row @ U
                lhs = math.log(row.max())
                rhs = -theta * (env.rho_slot * t - env.sigma_s)
                worst = max(worst, lhs - rhs)
        return worst <= 1e-9, f"max log excess {worst:.2e}"

    def check_ir_convolution(self):
        params = ProtocolParams(n=82, M=2, protocol=Protocol.IR)
        F = ir_cdfs(params)
        g, k = params.gamma, params.kappa
        thr = math.log1p(g * k)
        # P(log(1+g z1) + log(1+g z2) <= thr), z ~ Exp(1)
        ref, _ = integrate.quad(
            lambda z1: math.exp(-z1) * -math.expm1(-(math.expm1(thr - math.log1p(g * z1)) / g)),
            0, k, epsabs=1e-14, epsrel=1e-12)
        err = abs(F[1] - ref)
        return err < 1e-6, f"|F_2 - quad| {err:.2e}"

    # Monte Carlo checks

    def check_mc_transitions(self):
        worst = 0.0
        for proto in PROTOCOLS:
            params = ProtocolParams(n=82, M=4, protocol=proto)
            p = self.probs(params)
            est = estimate_transition_probs(params, self.seed, 10**7)
            z = np.abs(est.p - p.p) / est.stderr(p.p)
            worst = max(worst, float(z.max()))
        return worst < 3.0, f"max |z| {worst:.2f} (1e7 draws per protocol)"

    def check_mc_queue(self):
        worst = 0.0
        conserved = True
        for proto in PROTOCOLS:
            params = ProtocolParams(n=82, M=4, protocol=proto)
            p = self.probs(params)
            ss = steady_state(p)
            st = simulate_queue(SimConfig(params, a=0.41e6, seed=self.seed, measure_slots=10**7))
            z_lost = abs(st.p_lost - ss.p_lost) / math.sqrt(ss.p_lost * (1 - ss.p_lost) / st.served)
            z_pi = abs(st.pi_hat[0] - ss.pi0) / st.pi0_stderr()
            worst = max(worst, z_lost, z_pi)
            conserved = conserved and st.conservation_ok
        return worst < 3.0 and conserved, f"max |z| {worst:.2f}, conservation {conserved}"

    def check_bound_soundness(self):
        lines, ok = [], True
        for proto in PROTOCOLS:
            params = ProtocolParams(n=82, M=4, protocol=proto)
            p = self.probs(params)
            a = 0.8 * params.n * steady_state(p).pi0 / params.T
            d = {e: optimize_delay_bound(p, params, a, e).d for e in (1e-2, 1e-3)}
            ss = steady_state(p)
            per_slot = a * params.T / params.n * (1.0 - ss.p_lost)  # delivered packets per slot
            slots = math.ceil(1.1e7 / per_slot)
            st = simulate_queue(SimConfig(params, a=a, seed=self.seed, measure_slots=slots))
            v = empirical_violation(st, d_thresholds=list(d.values()))["delay"]
            for e, viol in zip(d, v):
                ok = ok and viol.probability <= e and viol.samples >= 10**7
                lines.append(f"{proto.value} eps'={e:g}: {viol.probability:.2e}")
        return ok, "; ".join(lines)

    def check_stability(self):
        params = ProtocolParams(n=82, M=4)
        p = self.probs(params)
        mean = params.n * steady_state(p).pi0 / params.T
        a = 1.05 * mean
        st = simulate_queue(SimConfig(params, a=a, seed=self.seed, measure_slots=10**6, warmup_slots=0))
        rel = abs(st.queue_slope - (a - mean)) / (a - mean)
        try:
            optimize_delay_bound(p, params, a, 1e-6)
            infeasible = False
        except InfeasibleError:
            infeasible = True
        return rel < 0.05 and infeasible, f"slope rel err {rel:.3f}, infeasible reported {infeasible}"

    QUICK = ("gamma", "stationary", "dominance", "root_vs_spectral", "capacity_limit",
             "round_trip", "envelope", "ir_convolution")
    FULL = QUICK + ("mc_transitions", "mc_queue", "bound_soundness", "stability")

    def run(self, depth: str = "quick", report=None) -> list:
        if depth not in ("quick", "full"):
            raise ValueError(f"depth must be 'quick' or 'full', got {depth!r}")
        results = []
        for name in self.QUICK if depth == "quick" else self.FULL:
            t0 = time.perf_counter()
            try:
                passed, detail = getattr(self, "check_" + name)()
            except Exception as exc:  # a crash is a failed check, not an aborted run
                passed, detail = False, f"{type(exc).__name__}: {exc}"
            res = CheckResult(name, bool(passed), detail, time.perf_counter() - t0)
            results.append(res)
            if report is not None:
                report(res)
        return results
