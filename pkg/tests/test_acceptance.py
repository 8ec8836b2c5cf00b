"""Acceptance gate. Each test prints one PASS/FAIL line for its criterion
(outside pytest's output capture), then asserts.

    pytest tests/test_acceptance.py -v
    python tests/test_acceptance.py
"""

import math
import sys
import time

import numpy as np
import pytest

from harqdelay.bounds import InfeasibleError, deficit_b, optimize_delay_bound, slack_term, violation_probability
from harqdelay.capacity import build_upsilon, effective_capacity
from harqdelay.experiments import preset, run_experiment
from harqdelay.model import (PROTOCOLS, Protocol, ProtocolParams, TransitionProbabilities, analyze,
                             best_packet_size, db_to_linear, steady_state)
from harqdelay.sim import SimConfig, empirical_violation, estimate_transition_probs, simulate_queue, write_packet_csv

# independent oracle values (mpmath, 40 digits) at gamma = 0 dB, n = 82, M = 4
PLOST_T1 = 0.0818359422233161
PI0_T1 = 0.5066034149955146
P1_CC = 0.3343526040535232

SEED = 2024


_capture = {}


@pytest.fixture(autouse=True)
def _uncaptured(capsys):
    _capture["capsys"] = capsys
    yield
    _capture.clear()


def report(num, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {title} | {detail}"
    with _capture["capsys"].disabled():
        print("\n" + line, flush=True)
    assert ok, f"criterion {num} failed: {detail}"


def mean_rate(params):
    p, ss = analyze(params)
    return p, params.n * ss.pi0 / params.T


def test_criterion_1_characteristic_root_matches_spectral_radius():
    rng = np.random.Generator(np.random.PCG64(SEED))
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        M = int(rng.integers(1, 7))
        p = TransitionProbabilities(rng.uniform(1e-3, 1 - 1e-3, M))
        n = float(rng.uniform(10.0, 400.0))
        theta = 10 ** rng.uniform(-6.0, math.log10(50.0)) / n
        r = effective_capacity(p, ProtocolParams(n=n, M=M), theta)
        lhs = p[0] * math.exp(-n * theta) * r.y_star
        sp = float(np.abs(np.linalg.eigvals(build_upsilon(p, n, theta))).max())
        worst = max(worst, abs(lhs - sp) / sp)
    elapsed = time.perf_counter() - t0
    report(1, "root vs spectral radius", worst <= 1e-9 and elapsed < 5.0,
           f"max rel err {worst:.2e} (<= 1e-9), {elapsed:.2f}s (< 5s)")


def test_criterion_2_effective_capacity_limits():
    parts, ok = [], True
    for proto in PROTOCOLS:
        params = ProtocolParams(n=82, M=4, gamma=1.0, protocol=proto)
        p, mean = mean_rate(params)
        floor = params.n / (params.M * params.T)
        lo = effective_capacity(p, params, 1e-6 * params.T / params.n).rho_s
        hi = effective_capacity(p, params, 50.0 / params.n).rho_s
        e_lo, e_hi = abs(lo - mean) / mean, abs(hi - floor) / floor
        ok = ok and e_lo <= 5e-3 and e_hi <= 5e-3
        parts.append(f"{proto.value}: small-theta {e_lo:.1e}, large-theta {e_hi:.2%}")
    report(2, "rho_S limits within 0.5%", ok, "; ".join(parts))


def test_criterion_3_protocol_dominance():
    bad, checked = [], 0
    for g_db in (0.0, 5.0, 10.0):
        gamma = db_to_linear(g_db)
        n = best_packet_size(gamma)
        for M in range(1, 11):
            vals = {}
            for proto in PROTOCOLS:
                params = ProtocolParams(n=n, M=M, gamma=gamma, protocol=proto)
                p, ss = analyze(params)
                rho = [effective_capacity(p, params, nt / n).rho_s for nt in (1e-4, 1e-2, 1.0, 10.0)]
                vals[proto] = (ss.p_lost, ss.throughput, rho)
            t1, cc, ir = (vals[x] for x in PROTOCOLS)
            # ties only at M = 1, where every protocol makes a single attempt
            tol = 1e-12 if M == 1 else 0.0

            def le(x, y):
                return x <= y + tol * max(abs(y), 1.0)

            checks = [le(ir[0], cc[0]), le(cc[0], t1[0]), le(cc[1], ir[1]), le(t1[1], cc[1])]
            checks += [le(c, i) and le(t, c) for t, c, i in zip(t1[2], cc[2], ir[2])]
            checked += len(checks)
            if not all(checks):
                bad.append(f"{g_db:g}dB/M={M}")
    report(3, "IR >= CC >= T1 ordering", not bad,
           f"{checked} comparisons, violations: {', '.join(bad) if bad else 'none'}")


def test_criterion_4_delay_anchors():
    t0 = time.perf_counter()
    text = run_experiment(preset("delay-vs-eps"))
    elapsed = time.perf_counter() - t0
    rows = [ln.split(",") for ln in text.strip().splitlines()[1:]]
    got = {(case.split(";")[0], proto): float(val)
           for _, case, eps, proto, val, *_ in rows if float(eps) == pytest.approx(1e-9)}
    targets = {("gamma_dB=0", "T1"): 78e-3, ("gamma_dB=0", "CC"): 5e-3, ("gamma_dB=0", "IR"): 5e-3,
               ("gamma_dB=5", "T1"): 11e-3, ("gamma_dB=5", "CC"): 4e-3, ("gamma_dB=5", "IR"): 4e-3}
    parts, ok = [], elapsed < 60.0
    for key, target in targets.items():
        d = got[key]
        good = abs(d - target) <= 0.2 * target
        ok = ok and good
        parts.append(f"{key[0][9:]}dB {key[1]} {d * 1e3:.2f}ms vs {target * 1e3:g}ms{'' if good else ' (out)'}")
    report(4, "delay at eps'=1e-9 within 20%", ok, "; ".join(parts) + f"; {elapsed:.1f}s")


@pytest.mark.slow
def test_criterion_5_monte_carlo_agreement():
    t0 = time.perf_counter()
    parts, ok = [], True
    params = ProtocolParams(n=82, M=4, protocol=Protocol.T1)
    st = simulate_queue(SimConfig(params, a=0.41e6, seed=SEED, measure_slots=10**7))
    z_lost = (st.p_lost - PLOST_T1) / math.sqrt(PLOST_T1 * (1 - PLOST_T1) / st.served)
    z_pi = (st.pi_hat[0] - PI0_T1) / st.pi0_stderr()
    ok = ok and abs(z_lost) <= 3 and abs(z_pi) <= 3
    parts.append(f"T1 p_lost z={z_lost:+.2f}, pi_0 z={z_pi:+.2f}")

    cc = estimate_transition_probs(params.with_(protocol=Protocol.CC), SEED, 10**7)
    z_cc = (cc.p[1] - P1_CC) / cc.stderr([P1_CC] * 4)[1]
    ok = ok and abs(z_cc) <= 3
    parts.append(f"CC p_1 z={z_cc:+.2f}")

    ir_params = params.with_(protocol=Protocol.IR)
    p_ir, _ = analyze(ir_params)
    ir = estimate_transition_probs(ir_params, SEED + 1, 10**7)
    z_ir = (ir.p - p_ir.p) / ir.stderr(p_ir.p)
    ok = ok and np.all(np.abs(z_ir) <= 3)
    parts.append("IR z=" + "/".join(f"{z:+.2f}" for z in z_ir))
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 300
    report(5, "Monte Carlo within 3 sigma", ok, "; ".join(parts) + f"; {elapsed:.1f}s")


@pytest.mark.slow
def test_criterion_6_bound_soundness():
    t0 = time.perf_counter()
    parts, ok = [], True
    for proto in PROTOCOLS:
        params = ProtocolParams(n=82, M=4, gamma=1.0, protocol=proto)
        p, mean = mean_rate(params)
        a = 0.8 * mean
        bounds = {eps: optimize_delay_bound(p, params, a, eps).d for eps in (1e-2, 1e-3)}
        delivered_per_slot = a * params.T / params.n * (1 - steady_state(p).p_lost)
        slots = math.ceil(1.1e7 / delivered_per_slot)
        st = simulate_queue(SimConfig(params, a=a, seed=SEED, measure_slots=slots))
        viol = empirical_violation(st, d_thresholds=list(bounds.values()))["delay"]
        for (eps, d), v in zip(bounds.items(), viol):
            ok = ok and v.probability <= eps and v.samples >= 10**7
            parts.append(f"{proto.value} eps'={eps:g}: d={d / params.T:.1f} slots, freq {v.probability:.1e}")
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 600
    report(6, "empirical violation <= eps'", ok, "; ".join(parts) + f"; {elapsed:.1f}s")


def test_criterion_7_round_trip_conservation_determinism(tmp_path):
    worst = 0.0
    for proto in PROTOCOLS:
        params = ProtocolParams(n=82, M=4, protocol=proto)
        p, _ = analyze(params)
        for theta in (1e-4, 1e-3, 1e-2, 0.1):
            env = slack_term(p, params, theta)
            for frac in (0.01, 0.3, 0.9):
                delta = frac * env.rho_s
                for eps in (1e-1, 1e-3, 1e-6, 1e-9, 1e-12):
                    back = violation_probability(env, delta, deficit_b(env, delta, eps))
                    worst = max(worst, abs(back - eps) / eps)

    conserved, runs = True, 0
    for proto in PROTOCOLS:
        for a in (0.0, 0.123456e6, 0.41e6, 0.6e6):
            st = simulate_queue(SimConfig(ProtocolParams(n=82, M=4, protocol=proto), a=a,
                                          seed=runs, measure_slots=200_000))
            conserved = conserved and st.conservation_ok
            runs += 1

    csvs = []
    for name in ("a", "b"):
        path = tmp_path / f"{name}.csv"
        cfg = SimConfig(ProtocolParams(n=82, M=4, protocol=Protocol.CC), a=0.4e6, seed=SEED,
                        measure_slots=100_000, record_packets=True)
        write_packet_csv(simulate_queue(cfg), path)
        csvs.append(path.read_bytes() + run_experiment(preset("plost-vs-M")).encode())
    identical = csvs[0] == csvs[1]
    report(7, "round trip, conservation, determinism", worst <= 1e-12 and conserved and identical,
           f"round-trip max rel err {worst:.1e}; conservation {runs}/{runs} runs {conserved}; "
           f"byte-identical CSV {identical}")


def test_criterion_8_stability_dichotomy():
    parts, ok = [], True
    for proto in PROTOCOLS:
        params = ProtocolParams(n=82, M=4, protocol=proto)
        p, mean = mean_rate(params)
        a = 1.05 * mean
        st = simulate_queue(SimConfig(params, a=a, seed=SEED, measure_slots=10**6, warmup_slots=0))
        rel = abs(st.queue_slope - (a - mean)) / (a - mean)
        try:
            optimize_delay_bound(p, params, a, 1e-6)
            infeasible = False
        except InfeasibleError:
            infeasible = True
        ok = ok and rel <= 0.05 and infeasible
        parts.append(f"{proto.value} slope err {rel:.2%}, infeasible {infeasible}")
    report(8, "overload grows at a - mean and is flagged infeasible", ok, "; ".join(parts))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
