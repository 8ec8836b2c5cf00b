"""Delay bound d(eps') against the simulated delay quantile at the same level.

Prints, per protocol and eps', the bound, the empirical frequency of delays
above it, and the empirical (1 - eps') quantile, all in slots.
"""

import argparse

import numpy as np

from harqdelay.bounds import optimize_delay_bound
from harqdelay.model import PROTOCOLS, ProtocolParams, analyze, db_to_linear
from harqdelay.sim import SimConfig, empirical_violation, simulate_queue


def quantile_from_hist(hist, q):
    cdf = np.cumsum(hist) / hist.sum()
    return int(np.searchsorted(cdf, q))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--gamma-dB", type=float, default=0.0)
    ap.add_argument("--n", type=int, default=82)
    ap.add_argument("--load", type=float, default=0.8)
    ap.add_argument("--slots", type=int, default=2 * 10**7)
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()
    eps_grid = (1e-1, 1e-2, 1e-3, 1e-4)
    print("protocol,eps_prime,bound_slots,violation_freq,empirical_quantile_slots")
    for proto in PROTOCOLS:
        params = ProtocolParams(n=args.n, M=4, gamma=db_to_linear(args.gamma_dB), protocol=proto)
        p, ss = analyze(params)
        a = args.load * params.n * ss.pi0 / params.T
        st = simulate_queue(SimConfig(params, a=a, seed=args.seed, measure_slots=args.slots))
        d = [optimize_delay_bound(p, params, a, e).d for e in eps_grid]
        viol = empirical_violation(st, d_thresholds=d)["delay"]
        for e, dd, v in zip(eps_grid, d, viol):
            print(f"{proto.value},{e:g},{dd / params.T:.2f},{v.probability:.3g},"
                  f"{quantile_from_hist(st.delay_hist, 1 - e)}")


if __name__ == "__main__":
    main()
