"""Table of simulated vs analytic loss and occupancy for each protocol and SNR."""

import argparse
import math

from harqdelay.model import PROTOCOLS, ProtocolParams, analyze, best_packet_size, db_to_linear
from harqdelay.sim import SimConfig, simulate_queue


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--slots", type=int, default=10**7)
    ap.add_argument("--load", type=float, default=0.8, help="arrival rate / mean service rate")
    ap.add_argument("--M", type=int, default=4)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    print("gamma_dB,protocol,n,p_lost_sim,p_lost,z_lost,pi0_sim,pi0,z_pi0")
    for g_db in (0.0, 5.0, 10.0):
        gamma = db_to_linear(g_db)
        n = best_packet_size(gamma)
        for proto in PROTOCOLS:
            params = ProtocolParams(n=n, M=args.M, gamma=gamma, protocol=proto)
            _, ss = analyze(params)
            a = args.load * n * ss.pi0 / params.T
            st = simulate_queue(SimConfig(params, a=a, seed=args.seed, measure_slots=args.slots))
            z_l = (st.p_lost - ss.p_lost) / math.sqrt(ss.p_lost * (1 - ss.p_lost) / st.served)
            z_p = (st.pi_hat[0] - ss.pi0) / st.pi0_stderr()
            print(f"{g_db:g},{proto.value},{n},{st.p_lost:.6g},{ss.p_lost:.6g},{z_l:+.2f},"
                  f"{st.pi_hat[0]:.6g},{ss.pi0:.6g},{z_p:+.2f}")


if __name__ == "__main__":
    main()
