"""Greedy feature-block selection driven by quantification error, and the
importance statistics computed on its output."""
from __future__ import annotations

import csv
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from ordquant._parallel import parallel_map
from ordquant.data import Dataset
from ordquant.errors import OrdQuantError, ParameterError
from ordquant.metrics import rie
from ordquant.protocol import ProtocolConfig, run_protocol

log = logging.getLogger(__name__)

ADD_ROUNDS = 3
RBO_PERSISTENCE = 0.9

Loss = Callable[[frozenset], float]


class ProtocolLoss:
    """MNMD of a quantifier restricted to a block selection, memoised.

    Every selection is scored with the same protocol seed, so revisiting a
    configuration returns the cached value. Failed runs score ``inf``.
    """

    def __init__(self, data: Dataset, quantifier: str, cfg: ProtocolConfig):
        self.data = data
        self.quantifier = quantifier
        self.cfg = cfg
        self.cache: dict[tuple[frozenset, int], float] = {}
        self.calls = 0
        self._lock = threading.Lock()

    def __call__(self, selection: Iterable[str]) -> float:
        key = (frozenset(selection), self.cfg.seed)
        with self._lock:
            self.calls += 1
            if key in self.cache:
                return self.cache[key]
        try:
            value = run_protocol(self.data, key[0], self.quantifier, self.cfg).mnmd
        except OrdQuantError as exc:
            log.warning("evaluation of %s failed: %s", sorted(key[0]), exc)
            value = math.inf
        with self._lock:
            self.cache[key] = value
        return value


@dataclass
class TraceEntry:
    round: int
    block: str
    action: str  # "add", "remove" or "reject"
    toggle: str  # the change that was tried: "add" or "remove"
    loss_before: float
    loss_after: float


@dataclass
class SelectionTrace:
    initial: frozenset = frozenset()
    initial_loss: float = math.inf
    initial_candidates: dict = field(default_factory=dict)
    order: list = field(default_factory=list)
    order_losses: dict = field(default_factory=dict)
    entries: list = field(default_factory=list)
    final: frozenset = frozenset()
    final_loss: float = math.inf
    rounds: int = 0

    def accepted(self) -> list[TraceEntry]:
        return [e for e in self.entries if e.action != "reject"]

    def evaluations_per_round(self) -> dict[int, int]:
        """Toggles tried per round (an upper bound on loss evaluations)."""
        counts: dict[int, int] = {}
        for e in self.entries:
            counts[e.round] = counts.get(e.round, 0) + 1
        return counts

    def check(self) -> None:
        """Assert the bookkeeping invariants of a completed search."""
        best = self.initial_loss
        for e in self.entries:
            if e.action == "reject":
                continue
            if not e.loss_after < best:
                raise AssertionError(f"accepted {e} does not improve on {best}")
            if e.action == "add" and e.round >= ADD_ROUNDS:
                raise AssertionError(f"addition outside the first {ADD_ROUNDS} rounds: {e}")
            best = e.loss_after
        if best != self.final_loss:
            raise AssertionError("final loss does not match the last accepted change")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "block", "action", "toggle", "loss_before", "loss_after"])
            for e in self.entries:
                w.writerow([e.round, e.block, e.action, e.toggle, repr(e.loss_before), repr(e.loss_after)])

    @staticmethod
    def read_csv(path) -> list[TraceEntry]:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return [
            TraceEntry(int(r["round"]), r["block"], r["action"], r["toggle"],
                       float(r["loss_before"]), float(r["loss_after"]))
            for r in rows
        ]


def initial_configuration(
    data: Dataset,
    quantifier: str = "emq",
    cfg: ProtocolConfig | None = None,
    groups: Mapping[str, Sequence[str]] | None = None,
    loss: Loss | None = None,
) -> tuple[frozenset, dict[str, float]]:
    """Best of ALL blocks and each group's blocks on its own.

    ``groups`` defaults to the schema's groups. Returns the winning selection
    and the loss of every candidate; ties favour ALL, then declaration order.
    """
    loss = loss or ProtocolLoss(data, quantifier, cfg or ProtocolConfig())
    if groups is None:
        groups = {g: data.schema.blocks_in_group(g) for g in data.schema.group_names}
    candidates = {"ALL": frozenset(data.schema.blocks)}
    for name, blocks in groups.items():
        if name == "ALL":
            raise ParameterError("'ALL' is reserved for the full block set")
        candidates[name] = frozenset(blocks)
    losses = {name: loss(sel) for name, sel in candidates.items()}
    best = min(candidates, key=lambda name: losses[name])
    return candidates[best], losses


def order_blocks(
    data: Dataset,
    quantifier: str = "emq",
    cfg: ProtocolConfig | None = None,
    loss: Loss | None = None,
    threads: int = 1,
) -> tuple[list[str], dict[str, float]]:
    """Blocks sorted by descending loss when used alone (ties by schema order)."""
    loss = loss or ProtocolLoss(data, quantifier, cfg or ProtocolConfig())
    blocks = data.schema.blocks

    def isolated(block):
        try:
            return loss(frozenset([block]))
        except OrdQuantError:
            return math.inf

    losses = dict(zip(blocks, parallel_map(isolated, blocks, threads)))
    order = sorted(blocks, key=lambda b: -losses[b])
    return order, losses


def greedy_search(
    order: Sequence[str],
    initial: Iterable[str],
    loss: Loss,
    margin: float = 0.0,
    add_rounds: int = ADD_ROUNDS,
    initial_loss: float | None = None,
) -> tuple[frozenset, SelectionTrace]:
    """Toggle blocks in ``order`` one at a time, keeping strict improvements.

    Additions are only tried during the first ``add_rounds`` rounds; later
    rounds only try removals. Rounds repeat while any change was kept. A
    change is kept when its loss is below the best loss minus ``margin``.
    """
    current = frozenset(initial)
    best = loss(current) if initial_loss is None else initial_loss
    trace = SelectionTrace(initial=current, initial_loss=best, order=list(order))
    improvement = True
    rnd = 0
    while improvement:
        improvement = False
        for block in order:
            if block in current:
                toggle, cand = "remove", current - {block}
            elif rnd < add_rounds:
                toggle, cand = "add", current | {block}
            else:
                continue
            new = loss(cand) if cand else math.inf
            if new < best - margin:
                trace.entries.append(TraceEntry(rnd, block, toggle, toggle, best, new))
                current, best = cand, new
                improvement = True
            else:
                trace.entries.append(TraceEntry(rnd, block, "reject", toggle, best, new))
        rnd += 1
    trace.final, trace.final_loss, trace.rounds = current, best, rnd
    return current, trace


def greedy_select(
    data: Dataset,
    quantifier: str = "emq",
    cfg: ProtocolConfig | None = None,
    *,
    groups: Mapping[str, Sequence[str]] | None = None,
    initial: Iterable[str] | None = None,
    loss: Loss | None = None,
    margin: float = 0.0,
    threads: int = 1,
) -> tuple[frozenset, SelectionTrace]:
    """Full selection: initial configuration, block ordering, greedy toggling.

    Pass ``initial`` to skip the group-wise exploration and start from a
    given selection.
    """
    loss = loss or ProtocolLoss(data, quantifier, cfg or ProtocolConfig())
    candidates: dict[str, float] = {}
    if initial is None:
        initial, candidates = initial_configuration(data, quantifier, cfg, groups, loss)
    initial = frozenset(data.schema.ordered(initial))
    order, order_losses = order_blocks(data, quantifier, cfg, loss, threads)
    final, trace = greedy_search(order, initial, loss, margin)
    trace.initial_candidates = candidates
    trace.order_losses = order_losses
    return final, trace


def gini(values: Sequence[float]) -> float:
    """Gini concentration of non-negative values (negatives clamped to 0)."""
    x = np.clip(np.asarray(values, dtype=np.float64), 0.0, None)
    total = x.sum()
    if x.size == 0 or total == 0:
        return 0.0
    diffs = np.abs(x[:, None] - x[None, :]).sum()
    return float(diffs / (2 * x.size * total))


def jaccard(a: Iterable, b: Iterable) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def rbo(ra: Sequence, rb: Sequence, persistence: float = RBO_PERSISTENCE) -> float:
    """Extrapolated rank-biased overlap of two duplicate-free rankings.

    Handles rankings of different lengths by assuming the unseen tail of the
    shorter one keeps its overlap rate.
    """
    p = persistence
    if not 0 < p < 1:
        raise ParameterError(f"persistence must lie in (0, 1), got {p}")
    ra, rb = list(ra), list(rb)
    if len(set(ra)) != len(ra) or len(set(rb)) != len(rb):
        raise ParameterError("rankings must not contain duplicates")
    if not ra and not rb:
        return 1.0
    if not ra or not rb:
        return 0.0
    if ra == rb:
        return 1.0
    short, long_ = (ra, rb) if len(ra) <= len(rb) else (rb, ra)
    s, l = len(short), len(long_)
    seen_s, seen_l = set(), set()
    overlap = [0]
    for d in range(1, l + 1):
        if d <= s:
            seen_s.add(short[d - 1])
        seen_l.add(long_[d - 1])
        overlap.append(len(seen_s & seen_l))
    x_s, x_l = overlap[s], overlap[l]
    total = sum(overlap[d] / d * p ** d for d in range(1, l + 1))
    total += sum(x_s * (d - s) / (s * d) * p ** d for d in range(s + 1, l + 1))
    return float((1 - p) / p * total + ((x_l - x_s) / l + x_s / s) * p ** l)


@dataclass
class ImportanceReport:
    task: str
    selection: list
    mnmd_with: float
    mnmd_without: dict  # block -> MNMD after ablating it (None if nothing remains)
    rie: dict  # block -> RIE, None when undefined (singleton selection)
    gini: float = 0.0

    @property
    def ranking(self) -> list[str]:
        """Blocks by descending importance; undefined RIE counts as dominant."""
        key = {b: (math.inf if v is None else v) for b, v in self.rie.items()}
        pos = {b: i for i, b in enumerate(self.selection)}
        return sorted(self.selection, key=lambda b: (-key[b], pos[b]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["task", "block", "mnmd_with", "mnmd_without", "rie", "rie_pct"])
            for b in self.ranking:
                v = self.rie[b]
                w.writerow([
                    self.task, b, repr(self.mnmd_with),
                    "" if self.mnmd_without[b] is None else repr(self.mnmd_without[b]),
                    "" if v is None else repr(v),
                    "" if v is None else repr(100 * v),
                ])

    @classmethod
    def read_csv(cls, path) -> ImportanceReport:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ParameterError(f"empty importance file {path}")
        rie_ = {r["block"]: (float(r["rie"]) if r["rie"] else None) for r in rows}
        without = {r["block"]: (float(r["mnmd_without"]) if r["mnmd_without"] else None) for r in rows}
        rep = cls(rows[0]["task"], [r["block"] for r in rows], float(rows[0]["mnmd_with"]), without, rie_)
        rep.gini = gini([v for v in rie_.values() if v is not None])
        return rep


def importance_report(
    data: Dataset,
    final: Iterable[str],
    quantifier: str = "emq",
    cfg: ProtocolConfig | None = None,
    loss: Loss | None = None,
    task: str = "",
) -> ImportanceReport:
    """RIE of every selected block, from ablating it out of the final selection."""
    final = data.schema.ordered(final)
    if not final:
        raise ParameterError("importance needs a non-empty selection")
    loss = loss or ProtocolLoss(data, quantifier, cfg or ProtocolConfig())
    full = frozenset(final)
    with_all = loss(full)
    without: dict[str, float | None] = {}
    scores: dict[str, float | None] = {}
    for b in final:
        rest = full - {b}
        if not rest:
            without[b], scores[b] = None, None
            continue
        without[b] = loss(rest)
        scores[b] = rie(without[b], with_all)
    defined = [v for v in scores.values() if v is not None]
    return ImportanceReport(task, final, with_all, without, scores, gini(defined))


def overlap_table(
    selections: Mapping[str, Iterable[str]],
    rankings: Mapping[str, Sequence[str]] | None = None,
    persistence: float = RBO_PERSISTENCE,
) -> list[tuple[str, str, float, float]]:
    """Pairwise Jaccard of selected sets and RBO of importance rankings."""
    tasks = list(selections)
    rankings = rankings or {t: list(selections[t]) for t in tasks}
    rows = []
    for i, a in enumerate(tasks):
        for b in tasks[i + 1:]:
            rows.append((a, b, jaccard(selections[a], selections[b]),
                         rbo(rankings[a], rankings[b], persistence)))
    return rows
