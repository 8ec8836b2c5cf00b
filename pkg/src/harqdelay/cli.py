"""harqdelay command line.

Exit codes: 0 success, 1 validation error, 2 infeasible arrival rate,
3 self-check failure.
"""

import argparse
import csv
import io
import math
import sys

from .bounds import InfeasibleError, delay_at_theta, optimize_delay_bound
from .capacity import capacity_limits, effective_capacity
from .experiments import PRESETS, ConfigError, load_spec, preset, run_experiment
from .model import PROTOCOLS, Protocol, ProtocolParams, analyze, best_packet_size, db_to_linear
from .selfcheck import SelfCheck
from .sim import SimConfig, simulate_queue, wilson_interval, write_packet_csv

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_SELFCHECK = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _link_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("link parameters")
    g.add_argument("--protocol", choices=[x.value.lower() for x in PROTOCOLS], action="append",
                   help="repeatable; default: all three")
    g.add_argument("--n", type=float, help="packet size in bits (default: throughput-optimal T1 size)")
    g.add_argument("--T-us", type=float, default=100.0, help="slot length, microseconds")
    g.add_argument("--B-MHz", type=float, default=1.0, help="bandwidth, MHz")
    g.add_argument("--M", type=int, default=4, help="transmission deadline in attempts")
    g.add_argument("--gamma-dB", type=float, default=0.0, help="average SNR, dB")
    g.add_argument("--sigma-h-sq", type=float, default=1.0, help="mean fading power")
    return p


def _params(args, protocol) -> ProtocolParams:
    gamma = db_to_linear(args.gamma_dB)
    T, B = args.T_us * 1e-6, args.B_MHz * 1e6
    n = args.n if args.n is not None else best_packet_size(gamma, T, B, args.sigma_h_sq)
    return ProtocolParams(n=n, T=T, B=B, M=args.M, gamma=gamma, sigma_h_sq=args.sigma_h_sq,
                          protocol=protocol)


def _protocols(args):
    return tuple(Protocol.parse(p) for p in args.protocol) if args.protocol else PROTOCOLS


def _fmt(x):
    if isinstance(x, str):
        return x
    if isinstance(x, int):
        return str(x)
    return "inf" if math.isinf(x) else format(x, ".12g")


def _emit(rows, header, out):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def cmd_transitions(args):
    rows = []
    for proto in _protocols(args):
        p, _ = analyze(_params(args, proto))
        for m, (pm, cum) in enumerate(zip(p.p, p.cumulative())):
            rows.append((proto.value, m, float(pm), float(cum)))
    _emit(rows, ("protocol", "attempt", "p", "cumulative"), args.out)
    return EXIT_OK


def cmd_steady_state(args):
    rows = []
    for proto in _protocols(args):
        params = _params(args, proto)
        p, ss = analyze(params)
        for i, v in enumerate(ss.pi):
            rows.append((proto.value, f"pi_{i}", float(v)))
        rows.append((proto.value, "p_lost", ss.p_lost))
        rows.append((proto.value, "throughput_bps", ss.throughput))
        rows.append((proto.value, "mean_service_bps", capacity_limits(p, params)[0]))
    _emit(rows, ("protocol", "quantity", "value"), args.out)
    return EXIT_OK


def cmd_effective_capacity(args):
    if args.theta is None:
        raise ValueError("--theta (1/bits) is required")
    rows = []
    for proto in _protocols(args):
        params = _params(args, proto)
        p, _ = analyze(params)
        r = effective_capacity(p, params, args.theta)
        rows.append((proto.value, r.theta, r.rho_s, r.y_star, r.sp, r.method))
    _emit(rows, ("protocol", "theta", "rho_s_bps", "y_star", "sp", "method"), args.out)
    return EXIT_OK


def cmd_delay_bound(args):
    if args.a_Mbps is None or args.eps_prime is None:
        raise ValueError("--a-Mbps and --eps-prime are required")
    a = args.a_Mbps * 1e6
    rows, infeasible = [], []
    for proto in _protocols(args):
        params = _params(args, proto)
        p, _ = analyze(params)
        try:
            if args.theta is not None:
                r = delay_at_theta(p, params, a, args.eps_prime, args.theta)
                if r is None:
                    raise InfeasibleError(f"rho_S(theta={args.theta:g}) <= a")
            else:
                r = optimize_delay_bound(p, params, a, args.eps_prime)
        except InfeasibleError as exc:
            infeasible.append(f"{proto.value}: {exc}")
            rows.append((proto.value,) + ("",) * 6 + (math.inf, math.inf))
            continue
        env = r.envelope
        rows.append((proto.value, r.theta, r.delta, env.rho_s, env.sigma_s, r.b, r.q, r.d, r.d / params.T))
    _emit(rows, ("protocol", "theta_star", "delta_star_bps", "rho_s_bps", "sigma_s_bits",
                 "b_bits", "q_bits", "d_s", "d_slots"), args.out)
    for msg in infeasible:
        print(f"infeasible: {msg}", file=sys.stderr)
    return EXIT_INFEASIBLE if infeasible else EXIT_OK


def cmd_simulate(args):
    if args.a_Mbps is None:
        raise ValueError("--a-Mbps is required")
    protos = _protocols(args)
    if args.out and len(protos) != 1:
        raise ValueError("--out writes a per-packet dump; pick a single --protocol")
    rows = []
    for proto in protos:
        params = _params(args, proto)
        cfg = SimConfig(params, a=args.a_Mbps * 1e6, seed=args.seed, measure_slots=args.slots,
                        warmup_slots=args.warmup, replications=args.replications,
                        record_packets=bool(args.out))
        st = simulate_queue(cfg, workers=args.workers)
        _, ss = analyze(params)
        lo, hi = wilson_interval(st.lost, st.served) if st.served else (math.nan, math.nan)
        rows += [
            (proto.value, "p_lost", st.p_lost, ss.p_lost, lo, hi),
            (proto.value, "pi_0", float(st.pi_hat[0]), ss.pi0,
             float(st.pi_hat[0]) - 1.96 * st.pi0_stderr(), float(st.pi_hat[0]) + 1.96 * st.pi0_stderr()),
            (proto.value, "departures", st.served, "", "", ""),
            (proto.value, "mean_delay_s", float(st.delays_seconds().mean()) if st.delivered else math.nan,
             "", "", ""),
            (proto.value, "queue_slope_bps", st.queue_slope, "", "", ""),
            (proto.value, "conservation_ok", str(st.conservation_ok), "", "", ""),
        ]
        if args.out:
            write_packet_csv(st, args.out)
    _emit(rows, ("protocol", "quantity", "simulated", "analytic", "ci95_low", "ci95_high"), None)
    return EXIT_OK


def cmd_reproduce(args):
    if args.figure_id == "custom":
        if not args.config:
            raise ValueError("reproduce custom needs --config <file.json>")
        spec = load_spec(args.config)
    else:
        spec = preset(args.figure_id)
    text = run_experiment(spec, workers=args.workers)
    out = args.out or spec.out
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_self_check(args):
    def report(r):
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name:<18} {r.seconds:7.2f}s  {r.detail}", flush=True)

    results = SelfCheck(inject_fault=args.inject_fault, seed=args.seed).run(args.depth, report)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_SELFCHECK if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    link = _link_flags()
    out = argparse.ArgumentParser(add_help=False)
    out.add_argument("--out", help="output path (default: stdout)")

    parser = _Parser(prog="harqdelay", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("transitions", parents=[link, out], help="per-attempt failure probabilities") \
        .set_defaults(func=cmd_transitions)
    sub.add_parser("steady-state", parents=[link, out], help="stationary law, loss, throughput") \
        .set_defaults(func=cmd_steady_state)

    p = sub.add_parser("effective-capacity", parents=[link, out], help="rho_S(theta)")
    p.add_argument("--theta", type=float, help="QoS exponent, 1/bits")
    p.set_defaults(func=cmd_effective_capacity)

    p = sub.add_parser("delay-bound", parents=[link, out], help="probabilistic delay and backlog bound")
    p.add_argument("--a-Mbps", type=float, help="arrival rate, Mb/s")
    p.add_argument("--eps-prime", type=float, help="violation probability")
    p.add_argument("--theta", type=float, help="fix theta (1/bits) instead of optimizing")
    p.set_defaults(func=cmd_delay_bound)

    p = sub.add_parser("simulate", parents=[link], help="slot-level Monte Carlo of the queue")
    p.add_argument("--a-Mbps", type=float, help="arrival rate, Mb/s")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--slots", type=int, default=200_000, help="measured slots per replication")
    p.add_argument("--warmup", type=int, help="warm-up slots (default: 10%% of --slots)")
    p.add_argument("--replications", type=int, default=10, help="independent runs, seeds seed..seed+R-1")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="per-packet CSV dump (single protocol)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reproduce", parents=[out], help="run a figure preset or a custom sweep")
    p.add_argument("figure_id", choices=sorted(PRESETS) + ["custom"])
    p.add_argument("--config", help="JSON sweep config for 'custom'")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("self-check", help="run the cross-validation suite")
    p.add_argument("--depth", choices=("quick", "full"), default="quick")
    p.add_argument("--inject-fault", action="store_true", help="corrupt CC p_1 to exercise failure paths")
    p.add_argument("--seed", type=int, default=12345)
    p.set_defaults(func=cmd_self_check)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
