"""Exact event-driven SIR simulation with one-step contact tracing.

Two contact structures are supported: a rooted random tree generated lazily
as the epidemic spreads, and a static configuration-model graph. Each
infected node carries exponential clocks for infecting each susceptible
downstream neighbour (rate beta), recovering unobserved (alpha) and being
diagnosed (sigma). A diagnosed node is an index case: each infectious
downstream neighbour is removed with probability ``p`` and, under full
tracing, so is the infector. Traced nodes are removed and never trigger
tracing themselves.

Events live in a binary heap; clocks made obsolete by an earlier removal are
discarded when popped.
"""
from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .degree import DegreeModel
from .inference import DetecteeHistogram, EmptyHistogramError
from .kernels import EpidemicParams
from .mixture import TracingMode

RECORD_COLUMNS = ("node", "infection_time", "diagnosis_time", "age", "downstream_infected",
                  "forward_detected", "backward_detected", "total_detected",
                  "outside_infection")

_INFECT, _REMOVE = 0, 1
_INFECTIOUS, _REMOVED = 1, 2


@dataclass(frozen=True)
class IndexCaseRecord:
    node: int
    infection_time: float
    diagnosis_time: float
    downstream_infected: int
    forward_detected: int
    backward_detected: bool
    outside_infection: bool = False
    infector: int = -1  # not exported; -1 for the root

    @property
    def age(self) -> float:
        return self.diagnosis_time - self.infection_time

    @property
    def total_detected(self) -> int:
        return self.forward_detected + int(self.backward_detected)

    def row(self) -> tuple:
        return (self.node, repr(self.infection_time), repr(self.diagnosis_time), repr(self.age),
                self.downstream_infected, self.forward_detected, int(self.backward_detected),
                self.total_detected, int(self.outside_infection))


@dataclass(frozen=True)
class SimConfig:
    """Settings of one simulation replicate.

    ``graph`` is ``"tree"`` or ``"configuration"``. For the configuration
    model ``degree`` is the excess-degree law: a node has ``1 + K`` stubs.
    """

    params: EpidemicParams
    degree: DegreeModel
    mode: TracingMode = TracingMode.FORWARD
    graph: str = "tree"
    n_nodes: int = 100_000
    max_infected: int | None = 100_000
    max_index_cases: int | None = None
    max_time: float | None = None
    window: tuple = (0.0, math.inf)
    seed: int = 0
    discard_extinct: bool = True
    max_restarts: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "mode", TracingMode.parse(self.mode))
        if self.graph not in ("tree", "configuration"):
            raise ValueError(f"graph must be 'tree' or 'configuration', got {self.graph!r}")
        stops = (self.max_infected, self.max_index_cases, self.max_time)
        if all(s is None or s == math.inf for s in stops):
            raise ValueError("at least one stop criterion must be finite")
        t0, t1 = self.window
        if not t0 < t1:
            raise ValueError(f"observation window needs t0 < t1, got {self.window}")


@dataclass
class SimResult:
    records: list
    summary: dict = field(default_factory=dict)
    outside_fraction: float = math.nan

    @property
    def empty(self) -> bool:
        return not self.records

    def histogram(self, mode=None) -> DetecteeHistogram:
        return records_to_histogram(self.records, mode or self.summary.get("mode", "forward"))


class _Stream:
    """Buffered draws from a numpy generator; per-call overhead dominates otherwise."""

    def __init__(self, rng: np.random.Generator, degree: DegreeModel | None, block: int = 8192):
        self.rng = rng
        self.degree = degree
        self.block = block
        self._u = []
        self._e = []
        self._k = []

    def uniform(self) -> float:
        if not self._u:
            self._u = self.rng.random(self.block).tolist()
        return self._u.pop()

    def expo(self) -> float:
        if not self._e:
            self._e = self.rng.standard_exponential(self.block).tolist()
        return self._e.pop()

    def degree_draw(self) -> int:
        if not self._k:
            self._k = np.asarray(self.degree.sample(self.rng, self.block)).tolist()
        return int(self._k.pop())


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _stop_time(cfg: SimConfig) -> float:
    t = cfg.max_time if cfg.max_time is not None else math.inf
    return min(t, cfg.window[1])


def _run_tree_once(cfg: SimConfig, s: _Stream):
    par = cfg.params
    beta, g, p = par.beta, par.removal_rate, par.p
    p_diag = par.p_obs
    full = cfg.mode is TracingMode.FULL
    t0, t1 = cfg.window
    t_stop = _stop_time(cfg)
    max_inf = cfg.max_infected or math.inf
    max_idx = cfg.max_index_cases or math.inf

    parent = [-1]
    inf_time = [0.0]
    state = [_INFECTIOUS]
    children: list[list[int]] = [[]]
    heap: list = []
    seq = 0
    records = []
    counts = {"infected": 1, "recovered": 0, "diagnosed": 0, "traced": 0}

    def infect(v, t):
        nonlocal seq
        r = t + s.expo() / g
        diag = s.uniform() < p_diag
        heapq.heappush(heap, (r, seq, _REMOVE, v, diag))
        seq += 1
        for _ in range(s.degree_draw()):
            ti = t + s.expo() / beta
            if ti < r:
                heapq.heappush(heap, (ti, seq, _INFECT, v, False))
                seq += 1

    infect(0, 0.0)
    reason = "extinct"
    n_idx = 0
    while heap:
        t, _, kind, v, diag = heapq.heappop(heap)
        if t > t_stop:
            reason = "max_time"
            break
        if state[v] != _INFECTIOUS:
            continue
        if kind == _INFECT:
            if counts["infected"] >= max_inf:
                reason = "max_infected"
                break
            c = len(parent)
            parent.append(v)
            inf_time.append(t)
            state.append(_INFECTIOUS)
            children.append([])
            children[v].append(c)
            counts["infected"] += 1
            infect(c, t)
            continue
        state[v] = _REMOVED
        if not diag:
            counts["recovered"] += 1
            continue
        counts["diagnosed"] += 1
        fwd = 0
        if p > 0:
            for c in children[v]:
                if state[c] == _INFECTIOUS and s.uniform() < p:
                    state[c] = _REMOVED
                    fwd += 1
        back = False
        u = parent[v]
        if full and p > 0 and u >= 0 and state[u] == _INFECTIOUS and s.uniform() < p:
            state[u] = _REMOVED
            back = True
        counts["traced"] += fwd + int(back)
        if t0 <= t <= t1:
            records.append(IndexCaseRecord(v, inf_time[v], t, len(children[v]), fwd, back,
                                           infector=u))
            n_idx += 1
            if n_idx >= max_idx:
                reason = "max_index_cases"
                break
    counts["stop_reason"] = reason
    return records, counts


def simulate_tree(cfg: SimConfig) -> SimResult:
    """Simulate the epidemic on a lazily grown rooted random tree.

    The root is infected at time 0 and every infected node has ``K``
    downstream children. Runs that die out before a stop criterion is met
    are discarded and restarted from a fresh root when
    ``cfg.discard_extinct`` is set (the count is reported in the summary).
    """
    if cfg.graph != "tree":
        raise ValueError("simulate_tree needs graph='tree'")
    s = _Stream(_rng(cfg.seed), cfg.degree)
    extinct = 0
    kept = []
    for _ in range(cfg.max_restarts + 1):
        records, counts = _run_tree_once(cfg, s)
        if counts["stop_reason"] != "extinct" or not cfg.discard_extinct:
            kept = records
            break
        extinct += 1
    else:
        counts["stop_reason"] = "all_extinct"
    summary = dict(counts, extinct_runs=extinct, seed=cfg.seed, mode=cfg.mode.value,
                   graph="tree", n_records=len(kept), no_index_cases=not kept)
    return SimResult(kept, summary)


def configuration_graph(n_nodes: int, excess: DegreeModel, rng: np.random.Generator):
    """Uniform stub matching with ``1 + K`` stubs per node.

    An odd stub total is fixed by resampling one node's degree, or, when
    that keeps failing, by removing one stub. Self-loops are dropped and
    multi-edges collapsed. Returns CSR arrays
    ``(indptr, indices)`` of the undirected simple graph.
    """
    deg = np.asarray(excess.sample(rng, n_nodes), dtype=np.int64) + 1
    for _ in range(100):
        if deg.sum() % 2 == 0:
            break
        # odd stub total: resample one node's degree
        deg[int(rng.integers(n_nodes))] = 1 + int(excess.sample(rng))
    else:
        # resampling cannot fix parity for a fixed degree; drop one stub instead
        deg[int(rng.integers(n_nodes))] -= 1
    stubs = np.repeat(np.arange(n_nodes), deg)
    rng.shuffle(stubs)
    a, b = stubs[0::2], stubs[1::2]
    keep = a != b
    a, b = a[keep], b[keep]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    edges = np.unique(lo * np.int64(n_nodes) + hi)
    lo, hi = edges // n_nodes, edges % n_nodes
    src = np.concatenate([lo, hi])
    dst = np.concatenate([hi, lo])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    return np.cumsum(indptr), dst


def _run_graph_once(cfg: SimConfig, s: _Stream, indptr, indices, root: int):
    par = cfg.params
    beta, g, p = par.beta, par.removal_rate, par.p
    p_diag = par.p_obs
    full = cfg.mode is TracingMode.FULL
    t0, t1 = cfg.window
    t_stop = _stop_time(cfg)
    max_inf = cfg.max_infected or math.inf
    max_idx = cfg.max_index_cases or math.inf

    infector: dict[int, int] = {root: -1}
    inf_time: dict[int, float] = {root: 0.0}
    state: dict[int, int] = {root: _INFECTIOUS}
    heap: list = []
    seq = 0
    records = []
    counts = {"infected": 1, "recovered": 0, "diagnosed": 0, "traced": 0}

    def infect(v, t):
        nonlocal seq
        r = t + s.expo() / g
        heapq.heappush(heap, (r, seq, _REMOVE, v, s.uniform() < p_diag, -1))
        seq += 1
        src = infector[v]
        for w in indices[indptr[v]:indptr[v + 1]].tolist():
            if w == src:
                continue
            ti = t + s.expo() / beta
            if ti < r:
                heapq.heappush(heap, (ti, seq, _INFECT, v, False, w))
                seq += 1

    infect(root, 0.0)
    reason = "extinct"
    n_idx = 0
    while heap:
        t, _, kind, v, diag, w = heapq.heappop(heap)
        if t > t_stop:
            reason = "max_time"
            break
        if state[v] != _INFECTIOUS:
            continue
        if kind == _INFECT:
            if w in state:
                continue  # already infected or removed
            if counts["infected"] >= max_inf:
                reason = "max_infected"
                break
            infector[w] = v
            inf_time[w] = t
            state[w] = _INFECTIOUS
            counts["infected"] += 1
            infect(w, t)
            continue
        state[v] = _REMOVED
        if not diag:
            counts["recovered"] += 1
            continue
        counts["diagnosed"] += 1
        src = infector[v]
        fwd = n_down = 0
        outside = False
        for w in indices[indptr[v]:indptr[v + 1]].tolist():
            if w == src or w not in state:
                continue
            n_down += 1
            if infector[w] != v:
                outside = True
            if state[w] == _INFECTIOUS and p > 0 and s.uniform() < p:
                state[w] = _REMOVED
                fwd += 1
        back = False
        if full and p > 0 and src >= 0 and state[src] == _INFECTIOUS and s.uniform() < p:
            state[src] = _REMOVED
            back = True
        counts["traced"] += fwd + int(back)
        if t0 <= t <= t1:
            records.append(IndexCaseRecord(v, inf_time[v], t, n_down, fwd, back, outside,
                                           infector=src))
            n_idx += 1
            if n_idx >= max_idx:
                reason = "max_index_cases"
                break
    counts["stop_reason"] = reason
    return records, counts


def simulate_configuration(cfg: SimConfig) -> SimResult:
    """Simulate the epidemic on a static configuration-model graph.

    "Downstream" neighbours of an infected node are all its neighbours
    except its infector. An index case has an outside infection when a
    downstream neighbour infected before its diagnosis was infected by
    someone else. Runs that die out are restarted from a new uniformly
    chosen initial infective on the same graph.
    """
    if cfg.graph != "configuration":
        raise ValueError("simulate_configuration needs graph='configuration'")
    rng = _rng(cfg.seed)
    indptr, indices = configuration_graph(cfg.n_nodes, cfg.degree, rng)
    s = _Stream(rng, None)
    extinct = 0
    records: list = []
    for _ in range(cfg.max_restarts + 1):
        root = int(rng.integers(cfg.n_nodes))
        records, counts = _run_graph_once(cfg, s, indptr, indices, root)
        if counts["stop_reason"] != "extinct" or not cfg.discard_extinct:
            break
        extinct += 1
    else:
        counts["stop_reason"] = "all_extinct"
        records = []
    frac = (sum(r.outside_infection for r in records) / len(records)) if records else 0.0
    summary = dict(counts, extinct_runs=extinct, seed=cfg.seed, mode=cfg.mode.value,
                   graph="configuration", n_nodes=cfg.n_nodes, n_edges=int(len(indices) // 2),
                   n_records=len(records), no_index_cases=not records, outside_fraction=frac)
    return SimResult(records, summary, frac)


def simulate(cfg: SimConfig) -> SimResult:
    return simulate_tree(cfg) if cfg.graph == "tree" else simulate_configuration(cfg)


def records_to_histogram(records, mode) -> DetecteeHistogram:
    """Histogram of detectees: total (full tracing) or forward-only counts."""
    mode = TracingMode.parse(mode)
    if not records:
        raise EmptyHistogramError("no index-case records")
    if mode is TracingMode.FULL:
        return DetecteeHistogram.from_observations(r.total_detected for r in records)
    return DetecteeHistogram.from_observations(r.forward_detected for r in records)


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()
