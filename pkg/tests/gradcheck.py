"""Finite-difference comparison of tape gradients on small random batches."""
from __future__ import annotations

import numpy as np

from conftest import random_fact, random_params
from hyper2 import ball
from hyper2.graph import FactArrays
from hyper2.model import ScoreConfig, score_batch
from hyper2.train import batch_gradients, bce_loss, corrupt_batch, _concat

# below this magnitude the relative error is measured against the floor instead
GRAD_FLOOR = 1e-5
TIE_GAP = 1e-4


def min_tie_gap(params, facts, cfg: ScoreConfig) -> float:
    """Smallest gap between the two best candidates of any min/max reduction in the batch."""
    if cfg.aggregation_reduce == "mean":
        return np.inf
    gap = np.inf
    E = params.entity_emb
    for f in facts:
        if not f.affiliated:
            continue
        la = ball.logmap0(E[list(f.affiliated)], params.k)
        for e in (f.head, f.tail):
            le = ball.logmap0(E[e], params.k)
            cands = le + la if cfg.aggregation_combine == "addition" else np.vstack([le, la])
            if len(cands) < 2:
                continue
            s = np.sort(cands, axis=0)
            if cfg.aggregation_reduce == "max":
                s = -np.sort(-cands, axis=0)
            gap = min(gap, np.abs(s[1] - s[0]).min())
    return gap


def random_batch(rng, cfg: ScoreConfig, n_entities=12, n_relations=3, dim=None, max_arity=5, n_pos=3, nneg=2):
    """Parameters with entity norms <= 0.5 and a batch of positives plus corruptions, away from min ties."""
    dim = dim or int(rng.integers(2, 9))
    while True:
        p = random_params(rng, n_entities, n_relations, dim, scale=0.5 / np.sqrt(dim), cfg=cfg)
        for name in p.BALL_TABLES:
            t = getattr(p, name)
            n = np.linalg.norm(t, axis=1, keepdims=True)
            t *= np.minimum(1.0, 0.5 / np.maximum(n, 1e-300))
        pos = [random_fact(rng, n_entities, n_relations, int(rng.integers(2, max_arity + 1))) for _ in range(n_pos)]
        pa = FactArrays.from_facts(pos)
        negs, _ = corrupt_batch(pa, nneg, n_entities, n_relations, rng)
        facts = _concat(pa, negs)
        labels = np.concatenate([np.ones(len(pa)), np.zeros(len(negs))])
        if min_tie_gap(p, facts.to_facts(), cfg) > TIE_GAP:
            return p, facts, labels


def max_relative_error(params, facts, labels, cfg: ScoreConfig, h: float = 1e-6) -> float:
    """Largest |g - fd| / max(|g|, |fd|, GRAD_FLOOR) over every touched coordinate."""
    _, store = batch_gradients(params, facts, labels, cfg)

    def loss():
        return bce_loss(score_batch(params, facts, cfg), labels)

    worst = 0.0
    for name in store.tables():
        table = params.tables()[name]
        rows, grads = store.table(name)
        grads = grads.reshape((len(rows),) + table.shape[1:])
        for i, row in enumerate(rows):
            for col in np.ndindex(table.shape[1:]):
                idx = (row,) + col
                old = table[idx]
                table[idx] = old + h
                up = loss()
                table[idx] = old - h
                down = loss()
                table[idx] = old
                fd = (up - down) / (2 * h)
                g = grads[(i,) + col]
                worst = max(worst, abs(g - fd) / max(abs(g), abs(fd), GRAD_FLOOR))
    return worst
