"""Negative sampling, BCE loss and the RSGD/SGD training loop."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ball
from . import grad as G
from .graph import Dataset, Fact, FactArrays
from .model import ModelParams, ScoreConfig, forward_scores

log = logging.getLogger(__name__)

PROB_EPS = 1e-12
CORRUPTION_MODES = ("uniform", "entity")


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    eta: float = 30.0
    beta: int = 128
    nneg: int = 100
    nepoch: int = 800
    patience: int = 3
    seed: int = 0
    eval_every: int = 10
    corruption: str = "uniform"
    workers: int = 1

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.beta < 1:
            raise ValueError("beta must be >= 1")
        if self.nneg < 1:
            raise ValueError("nneg must be >= 1")
        if self.corruption not in CORRUPTION_MODES:
            raise ValueError(f"corruption must be one of {CORRUPTION_MODES}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


# learning rate, batch size, negatives and epochs per published dataset
DATASET_DEFAULTS = {
    "jf17k": dict(eta=30.0, beta=128, nneg=100, nepoch=800),
    "wikipeople": dict(eta=80.0, beta=128, nneg=100, nepoch=400),
    "wiki-filtered": dict(eta=80.0, beta=128, nneg=100, nepoch=400),
}


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    elapsed: float
    valid_mrr: float | None = None

    def line(self) -> str:
        cols = [str(self.epoch), repr(self.loss), f"{self.elapsed:.3f}"]
        if self.valid_mrr is not None:
            cols.append(repr(self.valid_mrr))
        return "\t".join(cols)


@dataclass
class TrainResult:
    params: ModelParams
    log: list[EpochRecord] = field(default_factory=list)
    best_valid_mrr: float | None = None
    epochs_run: int = 0
    rng_state: dict | None = None


def corrupt_batch(facts: FactArrays, nneg: int, n_entities: int, n_relations: int,
                  rng: np.random.Generator, mode: str = "uniform") -> tuple[FactArrays, np.ndarray]:
    """``nneg`` corruptions per fact, each differing from its positive in one position.

    Returns the negatives (grouped by positive, ``nneg`` consecutive rows each)
    and the corrupted position: -1 for the relation, 0 head, 1 tail, 2.. affiliated.
    """
    if n_entities < 2 or (mode == "uniform" and n_relations < 2):
        raise ValueError("need at least two entities and two relations to corrupt facts")
    rep = np.repeat(np.arange(len(facts)), nneg)
    rel = facts.relation[rep].copy()
    head = facts.head[rep].copy()
    tail = facts.tail[rep].copy()
    aff = facts.affiliated[rep].copy()
    arity = 2 + facts.n_affiliated[rep]
    offset = 0 if mode == "entity" else 1
    # position drawn uniformly over the corruptable slots of each fact
    pos = np.floor(rng.random(len(rep)) * (arity + offset)).astype(np.int64) - offset
    draw = rng.random(len(rep))

    is_rel = pos == -1
    r_new = np.floor(draw * (n_relations - 1)).astype(np.int64)
    r_new += r_new >= rel
    rel = np.where(is_rel, r_new, rel)

    entity_pos = ~is_rel
    cur = np.where(pos == 0, head, np.where(pos == 1, tail, 0))
    aff_col = np.clip(pos - 2, 0, max(aff.shape[1] - 1, 0))
    if aff.shape[1]:
        cur = np.where(pos >= 2, aff[np.arange(len(rep)), aff_col], cur)
    e_new = np.floor(draw * (n_entities - 1)).astype(np.int64)
    e_new += e_new >= cur
    head = np.where(entity_pos & (pos == 0), e_new, head)
    tail = np.where(entity_pos & (pos == 1), e_new, tail)
    if aff.shape[1]:
        sel = pos >= 2
        aff[np.nonzero(sel)[0], aff_col[sel]] = e_new[sel]
    return FactArrays(rel, head, tail, aff, facts.n_affiliated[rep].copy()), pos


def negative_sample(fact: Fact, nneg: int, n_entities: int, n_relations: int,
                    rng: np.random.Generator, mode: str = "uniform") -> list[Fact]:
    negs, _ = corrupt_batch(FactArrays.from_facts([fact]), nneg, n_entities, n_relations, rng, mode)
    return negs.to_facts()


def bce_loss(scores: Sequence[float], labels: Sequence[float]) -> float:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or s.size == 0:
        raise ValueError("scores and labels must be non-empty and equally long")
    lo, hi = np.log(PROB_EPS), np.log1p(-PROB_EPS)
    # log p and log(1 - p) with p = sigmoid(s) clamped to [PROB_EPS, 1 - PROB_EPS]
    log_p = np.clip(-np.logaddexp(0.0, -s), lo, hi)
    log_q = np.clip(-np.logaddexp(0.0, s), lo, hi)
    return float(-np.mean(y * log_p + (1 - y) * log_q))


def t_bce_sum(scores: G.Var, labels: np.ndarray, n_total: int) -> G.Var:
    """Tape version of the BCE loss, normalised by ``n_total`` so chunks can be summed."""
    lo, hi = np.log(PROB_EPS), np.log1p(-PROB_EPS)
    log_p = G.clip(G.log_sigmoid(scores), lo, hi)
    log_q = G.clip(G.log_sigmoid(-scores), lo, hi)
    terms = labels * log_p + (1 - labels) * log_q
    return G.mean_all(terms) * (-len(labels) / n_total)


def rsgd_step(param, euclid_grad, eta: float, k: float = 1.0) -> np.ndarray:
    """Riemannian update ``exp_x(-eta * grad_R)`` on rows of ball points."""
    x = np.asarray(param, dtype=np.float64)
    step = -eta * G.riemannian_rescale(euclid_grad, x, k)
    return ball.project_to_ball(ball.exp_map(x, step, k), k)


def sgd_step(param, grad, eta: float):
    return np.asarray(param, dtype=np.float64) - eta * np.asarray(grad, dtype=np.float64)


def apply_gradients(params: ModelParams, store: G.GradientStore, eta: float) -> None:
    """In-place update: RSGD for ball tables, SGD for diagonals and biases."""
    for name, table in params.tables().items():
        rows, grads = store.table(name)
        if len(rows) == 0:
            continue
        grads = grads.reshape((len(rows),) + table.shape[1:])
        if name in ModelParams.BALL_TABLES:
            table[rows] = rsgd_step(table[rows], grads, eta, params.k)
        else:
            table[rows] = sgd_step(table[rows], grads, eta)


def batch_gradients(params: ModelParams, facts: FactArrays, labels: np.ndarray,
                    cfg: ScoreConfig, workers: int = 1) -> tuple[float, G.GradientStore]:
    n = len(facts)

    def run(idx):
        tape = G.Tape()
        sub = _take(facts, idx)
        loss = t_bce_sum(forward_scores(tape, params, sub, cfg), labels[idx], n)
        return float(loss.value), tape.backward(loss)

    if workers == 1:
        return run(np.arange(n))
    chunks = [c for c in np.array_split(np.arange(n), workers) if len(c)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run, chunks))
    loss, store = parts[0]
    for l, s in parts[1:]:
        loss += l
        store = store + s
    return loss, store


def _take(facts: FactArrays, idx: np.ndarray) -> FactArrays:
    return FactArrays(facts.relation[idx], facts.head[idx], facts.tail[idx],
                      facts.affiliated[idx], facts.n_affiliated[idx])


def _concat(a: FactArrays, b: FactArrays) -> FactArrays:
    w = max(a.affiliated.shape[1], b.affiliated.shape[1])

    def pad(x):
        return np.pad(x, ((0, 0), (0, w - x.shape[1])), constant_values=-1)

    return FactArrays(
        np.concatenate([a.relation, b.relation]), np.concatenate([a.head, b.head]),
        np.concatenate([a.tail, b.tail]), np.concatenate([pad(a.affiliated), pad(b.affiliated)]),
        np.concatenate([a.n_affiliated, b.n_affiliated]),
    )


def fit(dataset: Dataset, params: ModelParams, cfg: TrainConfig, score_cfg: ScoreConfig = ScoreConfig(),
        *, rng: np.random.Generator | None = None, start_epoch: int = 0,
        on_step: Callable[[ModelParams], None] | None = None,
        on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Train ``params`` in place on ``dataset.training_facts``.

    When the dataset has a validation split, head/tail MRR is computed every
    ``eval_every`` epochs; the best snapshot is returned and training stops
    after ``patience`` validations without improvement.
    """
    from .evaluate import head_tail_mrr

    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    train = FactArrays.from_facts(dataset.training_facts)
    n = len(train)
    ne, nr = params.n_entities, params.n_relations
    result = TrainResult(params)
    best, best_params, bad = None, None, 0
    t0 = time.perf_counter()
    for epoch in range(start_epoch + 1, cfg.nepoch + 1):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.beta)):
            pos = _take(train, order[start:start + cfg.beta])
            neg, _ = corrupt_batch(pos, cfg.nneg, ne, nr, rng, cfg.corruption)
            batch = _concat(pos, neg)
            labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
            loss, store = batch_gradients(params, batch, labels, score_cfg, cfg.workers)
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {b}, first fact {pos.to_facts()[0]}"
                )
            apply_gradients(params, store, cfg.eta)
            if on_step is not None:
                on_step(params)
            total += loss * len(batch)
            count += len(batch)
        rec = EpochRecord(epoch, total / max(count, 1), time.perf_counter() - t0)
        result.epochs_run = epoch
        if dataset.valid and cfg.eval_every > 0 and epoch % cfg.eval_every == 0:
            mrr = head_tail_mrr(dataset, params, dataset.valid, score_cfg)
            rec.valid_mrr = mrr
            if best is None or mrr > best:
                best, best_params, bad = mrr, params.copy(), 0
            else:
                bad += 1
        result.log.append(rec)
        log.info(rec.line())
        if on_epoch is not None:
            on_epoch(rec)
        if best is not None and bad >= cfg.patience:
            log.info("early stop at epoch %d (best valid MRR %.4f)", epoch, best)
            break
    if best_params is not None:
        result.params = best_params
    result.best_valid_mrr = best
    result.rng_state = rng.bit_generator.state
    return result
