"""Hidden-Markov models of the two-receiver erasure channel state.

A model is a finite-state Markov chain together with a per-state
distribution over the four erasure patterns (z1, z2), where z = 1 means
the corresponding receiver erased the slot. The pattern order is fixed
everywhere in the package: (0,0), (0,1), (1,0), (1,1).
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass

import numpy as np

from .errors import ModelFormatError, NoUniqueStationary, StructuralError

PATTERNS = ((0, 0), (0, 1), (1, 0), (1, 1))
PATTERN_INDEX = {p: i for i, p in enumerate(PATTERNS)}


def pattern_label(idx: int) -> str:
    z1, z2 = PATTERNS[idx]
    return f"{z1}{z2}"


class ChannelModel:
    """Transition matrix over hidden states plus per-state pattern probabilities.

    transition has shape (n, n) and emission (n, 4), both row-stochastic.
    Shape problems raise StructuralError; probabilistic validity is checked
    separately by validate_model so that broken models can still be inspected.
    """

    def __init__(self, transition, emission, labels=None):
        t = np.array(transition, dtype=float)
        e = np.array(emission, dtype=float)
        if t.ndim != 2 or t.shape[0] != t.shape[1] or t.shape[0] < 1:
            raise StructuralError(f"transition must be a square matrix, got shape {t.shape}")
        if e.ndim != 2 or e.shape != (t.shape[0], 4):
            raise StructuralError(f"emission must have shape ({t.shape[0]}, 4), got {e.shape}")
        if labels is not None:
            labels = tuple(str(s) for s in labels)
            if len(labels) != t.shape[0]:
                raise StructuralError("labels length does not match the state count")
        t.setflags(write=False)
        e.setflags(write=False)
        self.transition = t
        self.emission = e
        self.labels = labels
        self.num_states = int(t.shape[0])
        # plain-float copies; the per-slot simulation loop avoids numpy scalars
        self.transition_rows = tuple(tuple(float(v) for v in row) for row in t)
        self.emission_rows = tuple(tuple(float(v) for v in row) for row in e)

    def __repr__(self):
        return f"ChannelModel(states={self.num_states})"


@dataclass
class ValidationReport:
    ok: bool
    violations: list[str]
    strictly_positive: bool
    irreducible: bool
    aperiodic: bool


def _reachable(adj: np.ndarray, start: int) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in np.flatnonzero(adj[u]):
            v = int(v)
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def _strongly_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    return len(_reachable(adj, 0)) == n and len(_reachable(adj.T, 0)) == n


def _sccs(adj: np.ndarray) -> list[set[int]]:
    remaining = set(range(adj.shape[0]))
    comps = []
    while remaining:
        u = next(iter(remaining))
        comp = _reachable(adj, u) & _reachable(adj.T, u)
        comps.append(comp)
        remaining -= comp
    return comps


def _aperiodic_flag(adj: np.ndarray) -> bool:
    """True when every cycle-carrying component has period one.

    Uses breadth-first layering: the gcd of (level[u] + 1 - level[v]) over
    component-internal edges (u, v) is the component period. States that lie
    on no cycle are ignored.
    """
    for comp in _sccs(adj):
        if len(comp) == 1:
            u = next(iter(comp))
            if adj[u, u]:
                continue
            continue
        root = min(comp)
        level = {root: 0}
        queue = [root]
        while queue:
            u = queue.pop(0)
            for v in np.flatnonzero(adj[u]):
                v = int(v)
                if v in comp and v not in level:
                    level[v] = level[u] + 1
                    queue.append(v)
        g = 0
        for u in comp:
            for v in np.flatnonzero(adj[u]):
                v = int(v)
                if v in comp:
                    g = math.gcd(g, level[u] + 1 - level[v])
        if g != 1:
            return False
    return True


def validate_model(model: ChannelModel, atol: float = 1e-12) -> ValidationReport:
    """Check stochasticity, entry ranges, irreducibility and aperiodicity.

    Structural problems (wrong shapes) are raised by the ChannelModel
    constructor; everything else lands in the violations list.
    """
    violations: list[str] = []
    for name, mat in (("transition", model.transition), ("emission", model.emission)):
        if np.any(mat < 0.0) or np.any(mat > 1.0):
            violations.append(f"{name} has entries outside [0, 1]")
        sums = mat.sum(axis=1)
        for i in np.flatnonzero(np.abs(sums - 1.0) > atol):
            violations.append(f"{name} row {int(i)} sums to {sums[i]:.17g}")
    support = model.transition > 0.0
    strictly_positive = bool(np.all(model.transition > 0.0) and np.all(model.emission > 0.0))
    irreducible = _strongly_connected(support)
    aperiodic = _aperiodic_flag(support)
    if not irreducible:
        violations.append("transition support graph is not strongly connected")
    if not aperiodic:
        violations.append("chain has period greater than one")
    return ValidationReport(not violations, violations, strictly_positive, irreducible, aperiodic)


def stationary_distribution(model: ChannelModel, atol: float = 1e-10) -> np.ndarray:
    """Unique stationary distribution of the transition matrix.

    Solved as an augmented linear system and verified to satisfy the balance
    equations within atol. A damped power iteration (which converges for any
    irreducible chain, periodic or not) is the fallback when the direct solve
    is unusable. Reducible chains raise NoUniqueStationary.
    """
    t = model.transition
    n = model.num_states
    if not _strongly_connected(t > 0.0):
        raise NoUniqueStationary("transition support graph is not strongly connected")
    if n == 1:
        return np.array([1.0])
    a = np.vstack([t.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[n] = 1.0
    try:
        pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    except np.linalg.LinAlgError:
        pi = None
    if pi is not None:
        pi = np.clip(pi, 0.0, None)
        total = pi.sum()
        if total > 0.0:
            pi = pi / total
            if np.max(np.abs(pi @ t - pi)) <= atol:
                return pi
    pi = np.full(n, 1.0 / n)
    for _ in range(1_000_000):
        nxt = 0.5 * pi + 0.5 * (pi @ t)
        if np.max(np.abs(nxt - pi)) <= 1e-12:
            pi = nxt
            break
        pi = nxt
    pi = pi / pi.sum()
    if np.max(np.abs(pi @ t - pi)) > atol:
        raise NoUniqueStationary("balance equations not satisfied; chain is numerically reducible")
    return pi


def _cumulative_rows(rows):
    out = []
    for row in rows:
        acc = 0.0
        cum = []
        for v in row:
            acc += v
            cum.append(acc)
        out.append(tuple(cum))
    return tuple(out)


def _draw(rng: random.Random, cum) -> int:
    u = rng.random()
    for i, c in enumerate(cum):
        if u < c:
            return i
    return len(cum) - 1


def sample_trajectory(model: ChannelModel, n: int, seed: int):
    """Sample n slots of hidden states and erasure patterns.

    The slot-0 state is drawn from the stationary distribution. Returns
    (states, patterns) where patterns are (z1, z2) tuples. Deterministic in
    the seed.
    """
    rng = random.Random(seed)
    pi_cum = _cumulative_rows([tuple(stationary_distribution(model))])[0]
    t_cum = _cumulative_rows(model.transition_rows)
    e_cum = _cumulative_rows(model.emission_rows)
    states = []
    patterns = []
    s = _draw(rng, pi_cum)
    for _ in range(n):
        states.append(s)
        patterns.append(PATTERNS[_draw(rng, e_cum[s])])
        s = _draw(rng, t_cum[s])
    return states, patterns


def forgetting_rate_bound(model: ChannelModel) -> float | None:
    """Geometric forgetting rate sigma in (0, 1], or None when unavailable.

    Observations more than L slots old perturb the predicted erasure
    statistics by at most 2 * (1 - sigma) ** L in total variation. The rate
    used here is num_states * min(transition) * min(emission) / max(emission),
    clamped to 1. A single-state model carries no hidden memory at all, so
    sigma is 1 regardless of its emission row. Any zero transition or
    emission entry voids the bound and returns None.
    """
    if model.num_states == 1:
        return 1.0
    t, e = model.transition, model.emission
    if np.any(t <= 0.0) or np.any(e <= 0.0):
        return None
    sigma = model.num_states * float(t.min()) * float(e.min()) / float(e.max())
    return min(sigma, 1.0)


def model_to_dict(model: ChannelModel) -> dict:
    out = {
        "states": model.num_states,
        "transition": [list(row) for row in model.transition_rows],
        "emission": [list(row) for row in model.emission_rows],
    }
    if model.labels is not None:
        out["labels"] = list(model.labels)
    return out


def _parse_matrix(rows, name: str, nrows: int, ncols: int):
    if not isinstance(rows, list) or len(rows) != nrows:
        got = len(rows) if isinstance(rows, list) else type(rows).__name__
        raise ModelFormatError(f"{name}: expected a list of {nrows} rows, got {got}")
    out = []
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != ncols:
            raise ModelFormatError(f"{name}[{i}]: expected a list of {ncols} numbers")
        vals = []
        for j, v in enumerate(row):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ModelFormatError(
                    f"{name}[{i}][{j}]: expected a number, got {type(v).__name__}")
            vals.append(float(v))
        out.append(vals)
    return out


def model_from_dict(obj) -> ChannelModel:
    """Build and validate a model from its JSON dictionary form.

    Schema: {"states": n, "transition": n x n, "emission": n x 4,
    "labels": [n strings], optional}. Any schema or validity violation
    raises ModelFormatError naming the offending field.
    """
    if not isinstance(obj, dict):
        raise ModelFormatError(f"top level: expected an object, got {type(obj).__name__}")
    allowed = {"states", "transition", "emission", "labels"}
    for key in sorted(set(obj) - allowed):
        raise ModelFormatError(f"unknown key {key!r}")
    for key in ("states", "transition", "emission"):
        if key not in obj:
            raise ModelFormatError(f"missing key {key!r}")
    n = obj["states"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ModelFormatError("states: expected a positive integer")
    transition = _parse_matrix(obj["transition"], "transition", n, n)
    emission = _parse_matrix(obj["emission"], "emission", n, 4)
    labels = None
    if "labels" in obj:
        raw = obj["labels"]
        if not isinstance(raw, list) or len(raw) != n or not all(isinstance(s, str) for s in raw):
            raise ModelFormatError(f"labels: expected a list of {n} strings")
        labels = raw
    model = ChannelModel(transition, emission, labels)
    report = validate_model(model)
    if not report.ok:
        raise ModelFormatError("invalid model: " + "; ".join(report.violations))
    return model


def load_model(path) -> ChannelModel:
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"line {e.lineno} column {e.colno}: {e.msg}") from e
    return model_from_dict(obj)


def save_model(model: ChannelModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model_to_dict(model), f, indent=2)
        f.write("\n")
