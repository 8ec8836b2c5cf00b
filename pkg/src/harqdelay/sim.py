"""Slot-level Monte Carlo of a HARQ link fed by a constant-rate source.

Timing: slot s covers [(s-1)T, sT). Arrivals accrue a*T bits per slot; a
packet is formed in the slot where its last bit arrives and becomes eligible
for transmission from the next slot on. A packet in service makes one attempt
per slot and leaves the buffer on the first successful decode or after
attempt M (a loss). Delay is departure slot minus arrival slot.

Arrival bookkeeping is exact: a*T is held as a rational num/den bits per slot
and all cumulative counts are integers in units of 1/den bit.

Randomness: replication r uses numpy's PCG64 seeded with seed + r. One uniform
is consumed per slot (idle slots discard theirs), and fading powers come from
the inverse CDF, so a run is reproducible bit for bit.
"""

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numba import njit

from .model import Protocol, ProtocolParams, TransitionProbabilities

CHUNK_SLOTS = 1 << 20
RATE_DENOMINATOR_LIMIT = 10**6
_PROTO_CODE = {Protocol.T1: 0, Protocol.CC: 1, Protocol.IR: 2}


@dataclass(frozen=True)
class SimConfig:
    params: ProtocolParams
    a: float  # arrival rate, bits/sec
    seed: int = 0
    measure_slots: int = 1_000_000
    warmup_slots: int | None = None  # default: 10% of measure_slots
    replications: int = 1
    record_packets: bool = False

    def __post_init__(self):
        if self.measure_slots <= 0:
            raise ValueError("measure_slots must be positive")
        if self.a < 0:
            raise ValueError("arrival rate must be >= 0")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.params.n != int(self.params.n) or self.params.n < 1:
            raise ValueError("simulation needs an integer packet size n >= 1")
        if self.warmup_slots is None:
            object.__setattr__(self, "warmup_slots", self.measure_slots // 10)
        if self.warmup_slots < 0:
            raise ValueError("warmup_slots must be >= 0")

    def bits_per_slot(self) -> Fraction:
        return Fraction(self.a * self.params.T).limit_denominator(RATE_DENOMINATOR_LIMIT)


@dataclass
class SimStats:
    """Aggregated over replications; histograms are indexed by integer value."""

    n: int
    T: float
    M: int
    delay_hist: np.ndarray  # delivered packets, by delay in slots
    lost_delay_hist: np.ndarray  # deadline-discarded packets, by delay in slots
    queue_hist: np.ndarray  # slot boundaries, by floor(backlog in bits)
    attempts_hist: np.ndarray  # departed packets, by number of attempts (index 1..M)
    reached: np.ndarray  # attempts made at attempt index m = 0..M-1
    failed: np.ndarray  # failed decodes at attempt index m
    occupancy: np.ndarray  # busy slots ending in chain state i
    delivered: int = 0
    lost: int = 0
    busy_slots: int = 0
    measured_slots: int = 0
    queue_slope: float = math.nan  # least-squares backlog growth, bits/sec (mean over replications)
    conservation_ok: bool = True
    packets: dict = field(default_factory=dict)  # per-packet records if requested

    @property
    def served(self) -> int:
        return self.delivered + self.lost

    @property
    def p_lost(self) -> float:
        return self.lost / self.served if self.served else math.nan

    @property
    def pi_hat(self) -> np.ndarray:
        return self.occupancy / self.busy_slots if self.busy_slots else np.full(self.M, math.nan)

    def pi0_stderr(self) -> float:
        """Delta-method standard error of pi_hat[0] = departures / busy slots."""
        m = np.arange(self.attempts_hist.size)
        N = self.attempts_hist.sum()
        if N == 0:
            return math.nan
        mean = (m * self.attempts_hist).sum() / N
        var = ((m - mean) ** 2 * self.attempts_hist).sum() / N
        return math.sqrt(var / N) / mean**2

    def transition_estimate(self) -> "TransitionEstimate":
        return TransitionEstimate.from_counts(self.reached, self.failed)

    def delays_seconds(self) -> np.ndarray:
        """Delivered-packet delays expanded from the histogram (seconds)."""
        return np.repeat(np.arange(self.delay_hist.size), self.delay_hist) * self.T


@dataclass(frozen=True)
class TransitionEstimate:
    p: np.ndarray
    reached: np.ndarray
    failed: np.ndarray

    @classmethod
    def from_counts(cls, reached, failed):
        reached = np.asarray(reached, dtype=np.int64)
        failed = np.asarray(failed, dtype=np.int64)
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(reached > 0, failed / np.maximum(reached, 1), 0.0)
        return cls(p, reached, failed)

    def stderr(self, p_ref=None) -> np.ndarray:
        """Binomial standard error per attempt, at p_ref if given (else p_hat)."""
        p = self.p if p_ref is None else np.asarray(p_ref, dtype=float)
        return np.sqrt(p * (1.0 - p) / np.maximum(self.reached, 1))

    def as_transition_probs(self) -> TransitionProbabilities:
        return TransitionProbabilities(self.p)


@njit(cache=True)
def _run_chunk(u, s0, proto, M, kappa, gamma, sigma_sq, log_thr, num, nd, den, n, warmup,
               state, acc_buf, counters, reached, failed, occupancy, attempts_hist,
               delay_out, lost_out, queue_out, reg, rec, rec_on):
    """Advance the queue over len(u) slots starting after slot s0.

    state = [head index, attempt count, formed packets]; acc_buf[0] is the
    accumulated decoding metric of the packet in service.
    counters = [delivered, lost, busy, n_delay, n_lost_delay, n_rec, departures, arrived units]
    where entries 3..5 are per chunk and 6..7 run over warm-up too;
    reg = least-squares sums [count, sum x, sum x^2, sum q, sum x q] with
    x = s - warmup.
    """
    head = state[0]
    att = state[1]
    formed = state[2]
    acc = acc_buf[0]
    nd_cnt = counters[3]
    nl_cnt = counters[4]
    nrec = counters[5]
    for k in range(u.size):
        s = s0 + k + 1
        measuring = s > warmup
        if head < formed:
            z = -sigma_sq * math.log1p(-u[k])
            if proto == 0:
                ok = z >= kappa
            elif proto == 1:
                acc += z
                ok = acc >= kappa
            else:
                acc += math.log1p(gamma * z)
                ok = acc >= log_thr
            if measuring:
                reached[att] += 1
                if not ok:
                    failed[att] += 1
                counters[2] += 1
            att += 1
            if ok or att == M:
                # arrival slot of packet `head`: first s with s*num >= (head+1)*nd
                arr = ((head + 1) * nd + num - 1) // num
                dly = s - arr
                if measuring:
                    attempts_hist[att] += 1
                    occupancy[0] += 1
                    if ok:
                        counters[0] += 1
                        delay_out[nd_cnt] = dly
                        nd_cnt += 1
                    else:
                        counters[1] += 1
                        lost_out[nl_cnt] = dly
                        nl_cnt += 1
                counters[6] += 1
                if rec_on:
                    rec[nrec, 0] = arr
                    rec[nrec, 1] = s
                    rec[nrec, 2] = att
                    rec[nrec, 3] = 0 if ok else 1
                    nrec += 1
                head += 1
                att = 0
                acc = 0.0
            elif measuring:
                occupancy[att] += 1
        counters[7] += num
        total = s * num
        formed = total // nd
        rem_units = total - formed * nd
        if measuring:
            q = (formed - head) * n + rem_units // den
            queue_out[k] = q
            x = float(s - warmup)
            reg[0] += 1.0
            reg[1] += x
            reg[2] += x * x
            reg[3] += float(q)
            reg[4] += x * float(q)
        else:
            queue_out[k] = -1
    state[0] = head
    state[1] = att
    state[2] = formed
    acc_buf[0] = acc
    counters[3] = nd_cnt
    counters[4] = nl_cnt
    counters[5] = nrec


def _add_hist(total, values):
    if values.size == 0:
        return total
    h = np.bincount(values)
    if h.size > total.size:
        h[: total.size] += total
        return h
    total[: h.size] += h
    return total


def _replication(config: SimConfig, rep: int) -> SimStats:
    params = config.params
    M, n = params.M, int(params.n)
    rate = config.bits_per_slot()
    num, den = rate.numerator, rate.denominator
    nd = n * den
    total_slots = config.warmup_slots + config.measure_slots
    rng = np.random.Generator(np.random.PCG64(config.seed + rep))

    kappa = params.kappa
    log_thr = math.log1p(params.gamma * kappa)
    state = np.zeros(3, dtype=np.int64)
    counters = np.zeros(8, dtype=np.int64)
    reached = np.zeros(M, dtype=np.int64)
    failed = np.zeros(M, dtype=np.int64)
    occupancy = np.zeros(M, dtype=np.int64)
    attempts_hist = np.zeros(M + 1, dtype=np.int64)
    reg = np.zeros(5)
    acc_buf = np.zeros(1)
    delay_hist = np.zeros(1, dtype=np.int64)
    lost_hist = np.zeros(1, dtype=np.int64)
    queue_hist = np.zeros(1, dtype=np.int64)
    records = []
    rec_on = bool(config.record_packets)

    s0 = 0
    while s0 < total_slots:
        length = min(CHUNK_SLOTS, total_slots - s0)
        u = rng.random(length)
        delay_out = np.empty(length, dtype=np.int64)
        lost_out = np.empty(length, dtype=np.int64)
        queue_out = np.empty(length, dtype=np.int64)
        rec = np.empty((length if rec_on else 1, 4), dtype=np.int64)
        counters[3:6] = 0
        if num == 0:
            # no arrivals: nothing to serve, queue identically empty
            queue_out[:] = np.where(np.arange(s0 + 1, s0 + length + 1) > config.warmup_slots, 0, -1)
            x = np.arange(s0 + 1, s0 + length + 1, dtype=float)[queue_out >= 0] - config.warmup_slots
            reg[0] += x.size
            reg[1] += x.sum()
            reg[2] += (x * x).sum()
        else:
            _run_chunk(u, s0, _PROTO_CODE[params.protocol], M, kappa, params.gamma,
                       params.sigma_h_sq, log_thr, num, nd, den, n, config.warmup_slots,
                       state, acc_buf, counters, reached, failed, occupancy, attempts_hist,
                       delay_out, lost_out, queue_out, reg, rec, rec_on)
        delay_hist = _add_hist(delay_hist, delay_out[: counters[3]])
        lost_hist = _add_hist(lost_hist, lost_out[: counters[4]])
        queue_hist = _add_hist(queue_hist, queue_out[queue_out >= 0])
        if rec_on and counters[5]:
            records.append(rec[: counters[5]].copy())
        s0 += length

    # conservation in units of 1/den bit: arrivals summed slot by slot must
    # equal departures plus the final backlog (whole packets + partial packet)
    admitted = total_slots * num
    formed = int(state[2])
    departed = int(counters[6])
    remainder = admitted - formed * nd
    backlog = (formed - int(state[0])) * nd + remainder
    conservation_ok = (int(counters[7]) == admitted and departed == int(state[0])
                       and admitted == departed * nd + backlog
                       and 0 <= remainder < nd and departed <= formed
                       and int(attempts_hist.sum()) == int(counters[0] + counters[1]))

    cnt, sx, sxx, sy, sxy = reg
    denom = cnt * sxx - sx * sx
    slope = (cnt * sxy - sx * sy) / denom / params.T if cnt > 1 and denom > 0 else math.nan

    stats = SimStats(
        n=n, T=params.T, M=M,
        delay_hist=delay_hist, lost_delay_hist=lost_hist, queue_hist=queue_hist,
        attempts_hist=attempts_hist, reached=reached, failed=failed, occupancy=occupancy,
        delivered=int(counters[0]), lost=int(counters[1]), busy_slots=int(counters[2]),
        measured_slots=config.measure_slots, queue_slope=slope,
        conservation_ok=bool(conservation_ok),
    )
    if rec_on:
        recs = np.concatenate(records) if records else np.empty((0, 4), dtype=np.int64)
        stats.packets = {"arrival_slot": recs[:, 0], "departure_slot": recs[:, 1],
                         "attempts": recs[:, 2], "lost_flag": recs[:, 3],
                         "admitted_units": admitted, "den": den, "final_queue_packets": formed - departed}
    return stats


def _pad_add(x, y):
    if x.size < y.size:
        x, y = y, x
    out = x.copy()
    out[: y.size] += y
    return out


def merge_stats(parts: list) -> SimStats:
    first = parts[0]
    out = SimStats(
        n=first.n, T=first.T, M=first.M,
        delay_hist=first.delay_hist.copy(), lost_delay_hist=first.lost_delay_hist.copy(),
        queue_hist=first.queue_hist.copy(), attempts_hist=first.attempts_hist.copy(),
        reached=first.reached.copy(), failed=first.failed.copy(), occupancy=first.occupancy.copy(),
        delivered=first.delivered, lost=first.lost, busy_slots=first.busy_slots,
        measured_slots=first.measured_slots, queue_slope=first.queue_slope,
        conservation_ok=first.conservation_ok, packets=first.packets,
    )
    for s in parts[1:]:
        out.delay_hist = _pad_add(out.delay_hist, s.delay_hist)
        out.lost_delay_hist = _pad_add(out.lost_delay_hist, s.lost_delay_hist)
        out.queue_hist = _pad_add(out.queue_hist, s.queue_hist)
        out.attempts_hist += s.attempts_hist
        out.reached += s.reached
        out.failed += s.failed
        out.occupancy += s.occupancy
        out.delivered += s.delivered
        out.lost += s.lost
        out.busy_slots += s.busy_slots
        out.measured_slots += s.measured_slots
        out.conservation_ok = out.conservation_ok and s.conservation_ok
    out.queue_slope = float(np.mean([s.queue_slope for s in parts]))
    return out


def simulate_queue(config: SimConfig, workers: int = 1) -> SimStats:
    """Run all replications and merge their statistics."""
    reps = range(config.replications)
    if workers > 1 and config.replications > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_replication, [config] * config.replications, reps))
    else:
        parts = [_replication(config, r) for r in reps]
    return merge_stats(parts)


def write_packet_csv(stats: SimStats, path) -> None:
    """One row per departed packet: arrival_slot, departure_slot, attempts, lost_flag."""
    if not stats.packets:
        raise ValueError("no per-packet records; run with record_packets=True")
    cols = ("arrival_slot", "departure_slot", "attempts", "lost_flag")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        w.writerows(zip(*(stats.packets[c].tolist() for c in cols)))


@dataclass(frozen=True)
class Violation:
    threshold: float
    probability: float
    lower: float  # Wilson 95% interval
    upper: float
    samples: int


def wilson_interval(k: int, N: int, z: float = 1.959963984540054) -> tuple:
    if N == 0:
        return math.nan, math.nan
    p = k / N
    den = 1.0 + z * z / N
    centre = (p + z * z / (2 * N)) / den
    half = z * math.sqrt(p * (1 - p) / N + z * z / (4 * N * N)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


def _tail(hist: np.ndarray, cut: float) -> tuple:
    """(count of values > cut, total)."""
    N = int(hist.sum())
    idx = math.floor(cut) + 1  # integer values strictly above cut
    idx = max(idx, 0)
    k = int(hist[idx:].sum()) if idx < hist.size else 0
    return k, N


def empirical_violation(stats: SimStats, q_thresholds=(), d_thresholds=()) -> dict:
    """Fractions of backlog samples above q (bits) and delivered delays above d (s)."""
    nq = int(stats.queue_hist.sum())
    nd_ = int(stats.delay_hist.sum())
    if (len(q_thresholds) and nq == 0) or (len(d_thresholds) and nd_ == 0):
        raise ValueError("no samples to evaluate")
    out = {"queue": [], "delay": []}
    for q in q_thresholds:
        k, N = _tail(stats.queue_hist, q)
        out["queue"].append(Violation(q, k / N, *wilson_interval(k, N), N))
    for d in d_thresholds:
        # delays are integer slot counts; compare in slots with a little slack
        # so d = k T exactly is not a violation of delay k
        k, N = _tail(stats.delay_hist, d / stats.T * (1 + 1e-12))
        out["delay"].append(Violation(d, k / N, *wilson_interval(k, N), N))
    return out


def estimate_transition_probs(params: ProtocolParams, seed: int, samples: int,
                              chunk: int = 1 << 20) -> TransitionEstimate:
    """Conditional failure frequencies from independent packet transmissions."""
    if samples < 10**4:
        raise ValueError("need at least 1e4 samples")
    rng = np.random.Generator(np.random.PCG64(seed))
    M = params.M
    kappa = params.kappa
    reached = np.zeros(M, dtype=np.int64)
    failed = np.zeros(M, dtype=np.int64)
    done = 0
    while done < samples:
        size = min(chunk, samples - done)
        z = params.fading.sample(rng, (size, M))
        if params.protocol is Protocol.T1:
            fail = z < kappa
            alive = np.cumprod(fail, axis=1)
        elif params.protocol is Protocol.CC:
            alive = np.cumsum(z, axis=1) < kappa
        else:
            alive = np.cumsum(np.log1p(params.gamma * z), axis=1) < math.log1p(params.gamma * kappa)
        # attempt m is made iff attempts 0..m-1 all failed; failure sets are nested
        fails = alive.sum(axis=0)
        reached += np.concatenate(([size], fails[:-1]))
        failed += fails
        done += size
    return TransitionEstimate.from_counts(reached, failed)
