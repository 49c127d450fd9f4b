"""Filtered ranking evaluation: head, tail, relation and affiliated-entity prediction."""
from __future__ import annotations

import gc
import json
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .graph import Dataset, Fact, FactArrays
from .model import ModelParams, ScoreConfig, score_batch

TASKS = ("head", "tail", "relation", "affiliated")
TIE_POLICIES = ("optimistic", "mean")
HITS_AT = (1, 3, 10)
RELATION = -1


@dataclass(frozen=True)
class RankResult:
    task: str
    arity: int
    rank: float
    reciprocal_used: bool = False


class KnownIndex:
    """Known facts keyed by a fact with one position blanked out.

    ``fillers(fact, position)`` returns every value that completes the blank
    into a known fact, which is what filtered ranking needs to drop.
    """

    def __init__(self, facts: Iterable[tuple]):
        self._holes: dict[tuple, set[int]] = defaultdict(set)
        self.facts = frozenset(facts)
        for key in self.facts:
            for i in range(len(key)):
                self._holes[(i,) + key[:i] + (None,) + key[i + 1:]].add(key[i])

    def __contains__(self, key: tuple) -> bool:
        return key in self.facts

    def fillers(self, fact: Fact, position: int) -> set[int]:
        key = fact.key()
        i = 0 if position == RELATION else position + 1
        return self._holes.get((i,) + key[:i] + (None,) + key[i + 1:], set())


def _candidates(fact: Fact, position: int, n: int) -> FactArrays:
    arr = FactArrays.from_facts([fact])
    rep = {k: np.repeat(v, n, axis=0) for k, v in vars(arr).items()}
    values = np.arange(n, dtype=np.int64)
    if position == RELATION:
        rep["relation"] = values
    elif position == 0:
        rep["head"] = values
    elif position == 1:
        rep["tail"] = values
    else:
        rep["affiliated"][:, position - 2] = values
    return FactArrays(**rep)


def _true_value(fact: Fact, position: int) -> int:
    if position == RELATION:
        return fact.relation
    return fact.entities[position]


def rank_from_scores(scores: np.ndarray, true_index: int, keep: np.ndarray, tie_policy: str = "optimistic") -> float:
    """Rank of ``scores[true_index]`` among the entries where ``keep`` is True."""
    if tie_policy not in TIE_POLICIES:
        raise ValueError(f"tie_policy must be one of {TIE_POLICIES}")
    if not keep[true_index]:
        raise RuntimeError("true fact was filtered out of its own candidate pool")
    s = scores[keep]
    target = scores[true_index]
    greater = int(np.sum(s > target))
    if tie_policy == "optimistic":
        return 1 + greater
    ties = int(np.sum(s == target)) - 1
    return 1 + greater + ties / 2


def rank_query(fact: Fact, position: int, params: ModelParams, known: KnownIndex,
               cfg: ScoreConfig = ScoreConfig(), tie_policy: str = "optimistic",
               n_candidates: int | None = None) -> RankResult:
    """Filtered rank of ``fact`` when ``position`` (RELATION, 0 head, 1 tail, 2.. affiliated) is blanked."""
    if position == RELATION:
        n = params.n_relations if n_candidates is None else n_candidates
        task = "relation"
    else:
        if not 0 <= position < fact.arity:
            raise ValueError(f"position {position} invalid for arity {fact.arity}")
        n = params.n_entities if n_candidates is None else n_candidates
        task = ("head", "tail")[position] if position < 2 else "affiliated"
    true = _true_value(fact, position)
    keep = np.ones(n, dtype=bool)
    leaked = [v for v in known.fillers(fact, position) if v != true and v < n]
    keep[leaked] = False
    scores = np.full(n, -np.inf)
    idx = np.nonzero(keep)[0]
    cand = _candidates(fact, position, n)
    scores[idx] = score_batch(params, FactArrays(**{k: v[idx] for k, v in vars(cand).items()}), cfg)
    return RankResult(task, fact.arity, rank_from_scores(scores, true, keep, tie_policy))


def _metrics(ranks: Sequence[float]) -> dict:
    r = np.asarray(ranks, dtype=np.float64)
    out = {"count": int(len(r))}
    if len(r) == 0:
        return out
    out["mrr"] = float(np.mean(1.0 / r))
    for k in HITS_AT:
        out[f"hits@{k}"] = float(np.mean(r <= k))
    return out


@dataclass
class MetricReport:
    results: list[RankResult] = field(default_factory=list)

    def metrics(self) -> dict:
        """``{task: {binary|nary|overall: {mrr, hits@1, hits@3, hits@10, count}}}``."""
        groups: dict[str, list[RankResult]] = defaultdict(list)
        for r in self.results:
            groups[r.task].append(r)
            if r.task in ("head", "tail"):
                groups["head/tail"].append(r)
        out = {}
        for task in ("head/tail", "head", "tail", "relation", "affiliated"):
            rs = groups.get(task)
            if not rs:
                continue
            out[task] = {
                "binary": _metrics([r.rank for r in rs if r.arity == 2]),
                "nary": _metrics([r.rank for r in rs if r.arity > 2]),
                "overall": _metrics([r.rank for r in rs]),
            }
        return out

    def to_json(self) -> str:
        return json.dumps(self.metrics(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        lines = [f"{'task':<11}{'split':<9}{'count':>7}{'MRR':>8}{'H@1':>8}{'H@3':>8}{'H@10':>8}"]
        for task, splits in self.metrics().items():
            for split, m in splits.items():
                if not m["count"]:
                    continue
                lines.append(
                    f"{task:<11}{split:<9}{m['count']:>7}{m['mrr']:>8.4f}"
                    f"{m['hits@1']:>8.4f}{m['hits@3']:>8.4f}{m['hits@10']:>8.4f}"
                )
        return "\n".join(lines)


def _queries(fact: Fact, tasks: Sequence[str]) -> list[int]:
    out = []
    if "head" in tasks:
        out.append(0)
    if "tail" in tasks:
        out.append(1)
    if "relation" in tasks:
        out.append(RELATION)
    if "affiliated" in tasks:
        out.extend(range(2, fact.arity))
    return out


def evaluate(dataset: Dataset, params: ModelParams, facts: Sequence[Fact] | None = None,
             tasks: Sequence[str] = TASKS, cfg: ScoreConfig = ScoreConfig(),
             tie_policy: str = "optimistic", known: KnownIndex | None = None,
             workers: int = 1) -> MetricReport:
    """Rank every query of every fact (default: the test split) in the filtered setting."""
    unknown = set(tasks) - set(TASKS)
    if unknown:
        raise ValueError(f"unknown tasks {sorted(unknown)}")
    facts = dataset.test if facts is None else facts
    known = KnownIndex(dataset.known) if known is None else known
    # relation candidates exclude reciprocal relations
    n_rel = dataset.vocab.n_base_relations

    def run(chunk):
        return [
            rank_query(f, pos, params, known, cfg, tie_policy,
                       n_rel if pos == RELATION else None)
            for f in chunk for pos in _queries(f, tasks)
        ]

    if workers == 1 or len(facts) < 2:
        return MetricReport(run(facts))
    chunks = [facts[i::workers] for i in range(workers)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run, chunks))
    return MetricReport([r for part in parts for r in part])


def head_tail_mrr(dataset: Dataset, params: ModelParams, facts: Sequence[Fact],
                  cfg: ScoreConfig = ScoreConfig()) -> float:
    report = evaluate(dataset, params, facts, ("head", "tail"), cfg)
    return report.metrics()["head/tail"]["overall"]["mrr"]


@dataclass
class BenchResult:
    per_fact_seconds: float
    predicted_seconds: float
    measured_seconds: float
    n_facts: int
    n_entities: int
    candidate_facts: int

    @property
    def ratio(self) -> float:
        return self.measured_seconds / self.predicted_seconds

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratio"] = self.ratio
        return d


def bench_eval_time(dataset: Dataset, params: ModelParams, facts: Sequence[Fact] | None = None,
                    cfg: ScoreConfig = ScoreConfig(), probe_size: int = 4096, repeats: int = 3) -> BenchResult:
    """Measure per-fact forward time ``t`` and compare ``t * sum(arity) * |E|`` with a timed run.

    The timed run ranks every entity position of every fact against all
    entities. Timing runs with the garbage collector paused and keeps the best
    of ``repeats`` runs (per query for the ranking pass).
    """
    facts = dataset.test if facts is None else facts
    ne = params.n_entities
    probe_src = FactArrays.from_facts(facts[: max(1, min(len(facts), 64))])
    reps = int(np.ceil(probe_size / len(probe_src)))
    probe = FactArrays(**{k: np.repeat(v, reps, axis=0)[:probe_size] for k, v in vars(probe_src).items()})
    score_batch(params, probe, cfg)  # warm-up
    best = np.inf
    with _gc_paused():
        for _ in range(repeats):
            t0 = time.perf_counter()
            score_batch(params, probe, cfg)
            best = min(best, time.perf_counter() - t0)
    t = best / len(probe)
    n_cand = sum(f.arity for f in facts) * ne
    measured = float(time_queries(dataset, params, facts, cfg, repeats).sum())
    return BenchResult(t, t * n_cand, measured, len(facts), ne, n_cand)


def time_queries(dataset: Dataset, params: ModelParams, facts: Sequence[Fact] | None = None,
                 cfg: ScoreConfig = ScoreConfig(), repeats: int = 1) -> np.ndarray:
    """Wall time of every entity-position ranking query, best of ``repeats`` each."""
    facts = dataset.test if facts is None else facts
    known = KnownIndex(dataset.known)
    out = []
    with _gc_paused():
        for f in facts:
            for pos in range(f.arity):
                best = np.inf
                for _ in range(repeats):
                    t0 = time.perf_counter()
                    rank_query(f, pos, params, known, cfg)
                    best = min(best, time.perf_counter() - t0)
                out.append(best)
    return np.array(out)


@contextmanager
def _gc_paused():
    enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if enabled:
            gc.enable()
