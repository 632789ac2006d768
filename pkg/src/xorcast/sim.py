"""Slotted simulation of the two feedback coding schemes on a queue network.

Each receiver's undelivered data lives in three pools: fresh packets (q1),
packets overheard by the wrong receiver and awaiting an XOR opportunity
(q2), and poisoned pairs parked after a fresh-pair mixture was heard
somewhere (q3, shared, one entry per pair). Feedback is immediate and
error-free, so every queue move is driven by the realized erasure pattern
of the slot.

q2 entries are (account_id, transmit_id): the packet credited on delivery
versus the bits actually sent on air. They differ after a partial remedy
reception, where the stored remedy packet stands in as a proxy for the
pair-mate that still needs conveying; the proxy is always known to the
opposite receiver, which keeps XOR coding decodable.
"""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .channel import PATTERNS, ChannelModel, stationary_distribution
from .errors import ContractViolation, TraceFormatError
from .filtering import ErasureStats, filter_step, predict_stats
from .region import ActionDistribution

IDLE = 0
FRESH1 = 1
FRESH2 = 2
XOR_BACKLOG = 3
MIX_FRESH = 4
REMEDY = 5
SUB1 = "sub1"   # lone uncoded retransmission from q2 of receiver 1
SUB2 = "sub2"

_COUNT_KEYS = {IDLE: "idle", FRESH1: "fresh1", FRESH2: "fresh2", XOR_BACKLOG: "xor",
               MIX_FRESH: "mix", REMEDY: "remedy", SUB1: "sub1", SUB2: "sub2"}


class QueueState:
    """Mutable queue contents of one run.

    q1: per-receiver deques of packet ids.
    q2: per-receiver deques of (account_id, transmit_id).
    q3: shared deque of (id_rx1, id_rx2, remedy_id, heard_code) where
        heard_code records who heard the original mixture (1, 2, 3 = both).
    """

    __slots__ = ("q1", "q2", "q3")

    def __init__(self):
        self.q1 = (deque(), deque())
        self.q2 = (deque(), deque())
        self.q3 = deque()

    def backlog(self) -> int:
        # a poisoned pair still owes one packet to each receiver
        return (len(self.q1[0]) + len(self.q1[1]) + len(self.q2[0]) +
                len(self.q2[1]) + 2 * len(self.q3))

    def feasible(self, action) -> bool:
        if action == IDLE:
            return True
        if action == FRESH1:
            return bool(self.q1[0])
        if action == FRESH2:
            return bool(self.q1[1])
        if action == XOR_BACKLOG:
            return bool(self.q2[0]) and bool(self.q2[1])
        if action == MIX_FRESH:
            return bool(self.q1[0]) and bool(self.q1[1])
        if action == REMEDY:
            return bool(self.q3)
        if action == SUB1:
            return bool(self.q2[0])
        if action == SUB2:
            return bool(self.q2[1])
        raise ContractViolation(f"unknown action {action!r}")


def _apply(state: QueueState, action, z1: int, z2: int, moves=None):
    """Execute a feasible action under erasure pattern (z1, z2).

    Returns (combo, delivered): the ids on air and a list of (receiver,
    account_id) deliveries. Every branch moves each queue entry at most one
    hop, so callers can audit link usage per slot.
    """
    q1, q2, q3 = state.q1, state.q2, state.q3
    delivered = []
    if action == IDLE:
        return (), delivered
    if action == FRESH1 or action == FRESH2:
        j = 0 if action == FRESH1 else 1
        zj, zo = (z1, z2) if j == 0 else (z2, z1)
        p = q1[j][0]
        if zj == 0:
            q1[j].popleft()
            delivered.append((j + 1, p))
            if moves is not None:
                moves.append((f"q1_{j+1}", f"q4_{j+1}", p))
        elif zo == 0:
            q1[j].popleft()
            q2[j].append((p, p))
            if moves is not None:
                moves.append((f"q1_{j+1}", f"q2_{j+1}", p))
        return (p,), delivered
    if action == SUB1 or action == SUB2:
        j = 0 if action == SUB1 else 1
        zj = z1 if j == 0 else z2
        acct, tid = q2[j][0]
        if zj == 0:
            q2[j].popleft()
            delivered.append((j + 1, acct))
            if moves is not None:
                moves.append((f"q2_{j+1}", f"q4_{j+1}", acct))
        # heard only by the other receiver: it already knows tid, no move
        return (tid,), delivered
    if action == XOR_BACKLOG:
        a1, t1 = q2[0][0]
        a2, t2 = q2[1][0]
        if z1 == 0:
            q2[0].popleft()
            delivered.append((1, a1))
            if moves is not None:
                moves.append(("q2_1", "q4_1", a1))
        if z2 == 0:
            q2[1].popleft()
            delivered.append((2, a2))
            if moves is not None:
                moves.append(("q2_2", "q4_2", a2))
        return tuple(sorted((t1, t2))), delivered
    if action == MIX_FRESH:
        p1 = q1[0][0]
        p2 = q1[1][0]
        if z1 == 0 or z2 == 0:
            if z1 == 0 and z2 == 0:
                remedy, code = p1, 3
            elif z1 == 0:
                remedy, code = p2, 1   # receiver 1 heard it; 2 still needs p2
            else:
                remedy, code = p1, 2
            q1[0].popleft()
            q1[1].popleft()
            q3.append((p1, p2, remedy, code))
            if moves is not None:
                moves.append(("q1_1", "q3", p1))
                moves.append(("q1_2", "q3", p2))
        return tuple(sorted((p1, p2))), delivered
    if action == REMEDY:
        p1, p2, remedy, _code = q3[0]
        if z1 == 0 and z2 == 0:
            q3.popleft()
            delivered.append((1, p1))
            delivered.append((2, p2))
            if moves is not None:
                moves.append(("q3", "q4_1", p1))
                moves.append(("q3", "q4_2", p2))
        elif z1 == 0:
            q3.popleft()
            delivered.append((1, p1))
            q2[1].append((p2, remedy))
            if moves is not None:
                moves.append(("q3", "q4_1", p1))
                moves.append(("q3", "q2_2", p2))
        elif z2 == 0:
            q3.popleft()
            delivered.append((2, p2))
            q2[0].append((p1, remedy))
            if moves is not None:
                moves.append(("q3", "q4_2", p2))
                moves.append(("q3", "q2_1", p1))
        return (remedy,), delivered
    raise ContractViolation(f"unknown action {action!r}")


@dataclass
class StepRecord:
    action: object
    combo: tuple
    received: tuple
    delivered: list
    moves: list


def step(pattern, action, state: QueueState) -> StepRecord:
    """Apply one slot's action to the queue state, in place.

    pattern is (z1, z2) or a pattern index; action is 0..5 or "sub1"/"sub2".
    Infeasible actions (empty source queues) raise ContractViolation.
    """
    if isinstance(pattern, int):
        z1, z2 = PATTERNS[pattern]
    else:
        z1, z2 = pattern
    if z1 not in (0, 1) or z2 not in (0, 1):
        raise ContractViolation(f"bad pattern {(z1, z2)!r}")
    if not state.feasible(action):
        raise ContractViolation(f"action {action!r} infeasible for the current queues")
    moves: list = []
    combo, delivered = _apply(state, action, z1, z2, moves)
    return StepRecord(action=action, combo=combo, received=(z1 == 0, z2 == 0),
                      delivered=delivered, moves=moves)


def maxweight_action(state: QueueState, stats: ErasureStats):
    """Pick the feasible action of maximal weight; ties go to the lowest
    action index, and an empty system idles.

    Weights trade off immediate delivery against the option value of
    overhearing, using the predicted erasure statistics for the slot.
    """
    n11 = len(state.q1[0])
    n12 = len(state.q1[1])
    n21 = len(state.q2[0])
    n22 = len(state.q2[1])
    n3 = len(state.q3)
    e1, e2, e12 = stats.eps1, stats.eps2, stats.eps12
    only2, only1 = stats.eps1_n2, stats.eps_n12
    best = IDLE
    best_w = None
    if n11:
        best, best_w = FRESH1, (1.0 - e1) * n11 + only2 * (n11 - n21)
    if n12:
        w = (1.0 - e2) * n12 + only1 * (n12 - n22)
        if best_w is None or w > best_w:
            best, best_w = FRESH2, w
    if n21 and n22:
        w = (1.0 - e1) * n21 + (1.0 - e2) * n22
        if best_w is None or w > best_w:
            best, best_w = XOR_BACKLOG, w
    if n11 and n12:
        w = (1.0 - e12) * (n11 - n3 + n12 - n3)
        if best_w is None or w > best_w:
            best, best_w = MIX_FRESH, w
    if n3:
        w = (only2 * (n3 - n21) + (1.0 - e1) * n3 +
             only1 * (n3 - n22) + (1.0 - e2) * n3)
        if best_w is None or w > best_w:
            best, best_w = REMEDY, w
    return best


def substitute_action(sampled: int, state: QueueState):
    """Feasibility ladder of the probabilistic scheme.

    A sampled action with an empty source idles, except the backlog XOR
    with exactly one nonempty queue, which degrades to an uncoded
    retransmission of that lone head packet.
    """
    if sampled == XOR_BACKLOG:
        have1, have2 = bool(state.q2[0]), bool(state.q2[1])
        if have1 and have2:
            return XOR_BACKLOG
        if have1:
            return SUB1
        if have2:
            return SUB2
        return IDLE
    return sampled if state.feasible(sampled) else IDLE


@dataclass
class SimReport:
    scheduler: str
    R1: float
    R2: float
    n: int
    seed: int
    arrivals: tuple
    delivered: tuple
    action_counts: dict
    checkpoints: list            # (slot, backlog, delivered1, delivered2)
    final_backlog: int
    warmup: int
    trace: list | None = field(default=None, repr=False)
    slot_rows: list | None = field(default=None, repr=False)

    def throughput(self) -> tuple:
        """Delivery rate per receiver over the post-warmup stretch."""
        span = self.n - self.warmup
        base1 = base2 = 0
        for slot, _b, d1, d2 in self.checkpoints:
            if slot <= self.warmup:
                base1, base2 = d1, d2
        return ((self.delivered[0] - base1) / span, (self.delivered[1] - base2) / span)


def _cumulative(rows):
    out = []
    for row in rows:
        acc = 0.0
        cum = []
        for v in row:
            acc += v
            cum.append(acc)
        out.append(tuple(cum))
    return out


def simulate(model: ChannelModel, scheduler: str, R1: float, R2: float, n: int,
             seed: int, dist: ActionDistribution | None = None,
             collect_trace: bool = False, collect_slots: bool = False,
             checkpoint_every: int | None = None,
             warmup_frac: float = 0.1) -> SimReport:
    """Run n slots of one scheduler against a sampled channel path.

    Bernoulli arrivals at rates R1, R2. The rng draw order per slot is
    fixed (arrival 1, arrival 2, action sample for the probabilistic
    scheduler, erasure pattern, next state), so runs are reproducible from
    the seed alone. Idle slots still advance the channel and the filter.

    The probabilistic scheduler samples from dist's row for the current
    window of past patterns (seeded as all-clear) and never looks at queue
    sizes beyond the feasibility ladder. The max-weight scheduler tracks
    the exact state filter instead and needs no distribution.
    """
    if scheduler not in ("maxweight", "probabilistic"):
        raise ContractViolation(f"unknown scheduler {scheduler!r}")
    if not (0.0 <= R1 <= 1.0 and 0.0 <= R2 <= 1.0):
        raise ContractViolation("arrival rates must lie in [0, 1]")
    if n < 1:
        raise ContractViolation("n must be positive")
    probabilistic = scheduler == "probabilistic"
    if probabilistic:
        if dist is None:
            raise ContractViolation("the probabilistic scheduler needs an action distribution")
        cum_rows = _cumulative(dist.table)
        mask = 4 ** dist.L - 1
    rng = random.Random(seed)
    pi = tuple(stationary_distribution(model))
    pi_cum = _cumulative([pi])[0]
    t_cum = _cumulative(model.transition_rows)
    e_cum = _cumulative(model.emission_rows)
    state = QueueState()
    belief = pi
    win = 0
    counts = {v: 0 for v in _COUNT_KEYS.values()}
    arrivals = [0, 0]
    delivered_n = [0, 0]
    next_id = 0
    cp = checkpoint_every or max(1, n // 4096)
    warmup = int(n * warmup_frac)
    checkpoints = []
    trace = [] if collect_trace else None
    slot_rows = [] if collect_slots else None

    u = rng.random()
    s = 0
    while s < len(pi_cum) - 1 and u >= pi_cum[s]:
        s += 1
    for slot in range(n):
        if rng.random() < R1:
            state.q1[0].append(next_id)
            next_id += 1
            arrivals[0] += 1
        if rng.random() < R2:
            state.q1[1].append(next_id)
            next_id += 1
            arrivals[1] += 1
        if probabilistic:
            u = rng.random()
            row = cum_rows[win]
            a = 0
            while a < 4 and u >= row[a]:
                a += 1
            action = substitute_action(a + 1, state)
        else:
            action = maxweight_action(state, predict_stats(model, belief))
        u = rng.random()
        zi = 0
        row = e_cum[s]
        while zi < 3 and u >= row[zi]:
            zi += 1
        z1, z2 = PATTERNS[zi]
        combo, delivered = _apply(state, action, z1, z2)
        counts[_COUNT_KEYS[action]] += 1
        for j, _pid in delivered:
            delivered_n[j - 1] += 1
        if trace is not None and combo:
            code = 3 if action in (SUB1, SUB2) else action
            trace.append((slot, code, combo, z1 == 0, z2 == 0, tuple(delivered)))
        if slot_rows is not None:
            code = 3 if action in (SUB1, SUB2) else action
            slot_rows.append((slot, code, z1, z2, state.backlog(),
                              delivered_n[0], delivered_n[1]))
        if probabilistic:
            win = ((win << 2) | zi) & mask
        else:
            belief = filter_step(model, belief, zi)
        u = rng.random()
        row = t_cum[s]
        s = 0
        while s < len(row) - 1 and u >= row[s]:
            s += 1
        if (slot + 1) % cp == 0 or slot + 1 == n:
            q1, q2, q3 = state.q1, state.q2, state.q3
            for j in (0, 1):
                held = len(q1[j]) + len(q2[j]) + len(q3) + delivered_n[j]
                assert held == arrivals[j], \
                    f"conservation broken for receiver {j+1} at slot {slot+1}"
            checkpoints.append((slot + 1, state.backlog(), delivered_n[0], delivered_n[1]))
    return SimReport(scheduler=scheduler, R1=R1, R2=R2, n=n, seed=seed,
                     arrivals=tuple(arrivals), delivered=tuple(delivered_n),
                     action_counts=counts, checkpoints=checkpoints,
                     final_backlog=state.backlog(), warmup=warmup, trace=trace,
                     slot_rows=slot_rows)


def stability_verdict(report: SimReport, slope_stable: float = 1e-4,
                      slope_unstable: float = 1e-2,
                      backlog_bound: float = 500.0) -> str:
    """Classify a run as Stable, Unstable or Inconclusive.

    Fits a least-squares line to the backlog over the last half of the run:
    Stable needs both a flat slope (<= slope_stable packets per slot) and a
    modest mean backlog; a slope >= slope_unstable is Unstable; anything in
    between stays Inconclusive. Runs shorter than 10**4 slots are refused.
    """
    if report.n < 10_000:
        raise ContractViolation("a stability verdict needs at least 10^4 slots")
    half = report.n / 2
    xs = [c[0] for c in report.checkpoints if c[0] >= half]
    ys = [c[1] for c in report.checkpoints if c[0] >= half]
    if len(xs) < 2:
        raise ContractViolation("not enough checkpoints in the last half of the run")
    slope = float(np.polyfit(xs, ys, 1)[0])
    mean = float(np.mean(ys))
    if slope <= slope_stable and mean <= backlog_bound:
        return "Stable"
    if slope >= slope_unstable:
        return "Unstable"
    return "Inconclusive"


def _insert_combo(basis: dict, ids) -> None:
    row = set(ids)
    while row:
        piv = max(row)
        other = basis.get(piv)
        if other is None:
            basis[piv] = row
            return
        row = row ^ other


def _decodable(basis: dict, pid: int) -> bool:
    row = {pid}
    while row:
        piv = max(row)
        other = basis.get(piv)
        if other is None:
            return False
        row = row ^ other
    return True


@dataclass
class DecodeReport:
    ok: bool
    receiver_ok: tuple
    failures: list   # (receiver, packet_id, slot), first failure per receiver


def decode_verify(trace) -> DecodeReport:
    """Replay a trace and check every claimed delivery is linearly decodable.

    Each receiver accumulates the GF(2) span of the combinations it heard;
    a delivery claim fails if the packet is outside the span at claim time.
    """
    bases = ({}, {})
    fails: list = []
    bad = [False, False]
    for slot, _action, combo, r1, r2, delivered in trace:
        if r1:
            _insert_combo(bases[0], combo)
        if r2:
            _insert_combo(bases[1], combo)
        for j, pid in delivered:
            if not bad[j - 1] and not _decodable(bases[j - 1], pid):
                bad[j - 1] = True
                fails.append((j, pid, slot))
    receiver_ok = (not bad[0], not bad[1])
    return DecodeReport(ok=all(receiver_ok), receiver_ok=receiver_ok, failures=fails)


def save_trace(trace, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for slot, action, combo, r1, r2, delivered in trace:
            f.write(json.dumps({
                "slot": slot, "action": action, "combo": list(combo),
                "received_rx1": bool(r1), "received_rx2": bool(r2),
                "delivered": [[j, pid] for j, pid in delivered],
            }) + "\n")


def load_trace(path) -> list:
    """Read a JSON-lines trace. Malformed lines raise TraceFormatError with
    the 1-based line number."""
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for i, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise TraceFormatError(f"line {i}: {e.msg}", line=i) from e
            try:
                slot = obj["slot"]
                action = obj["action"]
                combo = tuple(obj["combo"])
                r1 = obj["received_rx1"]
                r2 = obj["received_rx2"]
                delivered = tuple((int(j), int(pid)) for j, pid in obj["delivered"])
                if (isinstance(slot, bool) or not isinstance(slot, int) or
                        not isinstance(r1, bool) or not isinstance(r2, bool) or
                        not all(isinstance(c, int) for c in combo)):
                    raise TypeError
            except (KeyError, TypeError, ValueError) as e:
                raise TraceFormatError(f"line {i}: bad trace record", line=i) from e
            rows.append((slot, action, combo, r1, r2, delivered))
    return rows
