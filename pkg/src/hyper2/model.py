"""HYPER^2 parameters and scoring.

Affiliated entities are folded into the head and tail in the tangent space at
the origin, then the pair is scored with a hyperbolic distance between the
diagonally stretched head and the offset tail, plus per-entity biases.

The forward pass is written once against :mod:`hyper2.grad` so the same code
serves training (recording tape) and evaluation (``Tape(record=False)``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ball
from . import grad as G
from .graph import Fact, FactArrays

SCORING_VARIANTS = ("full", "no_diag", "no_offset", "diag_both", "swapped")
COMBINES = ("addition", "concatenation")
# rows per scoring block; around this size the temporaries stay in cache
SCORE_CHUNK = 1024


@dataclass(frozen=True)
class ScoreConfig:
    scoring_variant: str = "full"
    aggregation_combine: str = "addition"
    aggregation_reduce: str = "min"

    def __post_init__(self):
        if self.scoring_variant not in SCORING_VARIANTS:
            raise ValueError(f"scoring_variant must be one of {SCORING_VARIANTS}")
        if self.aggregation_combine not in COMBINES:
            raise ValueError(f"aggregation_combine must be one of {COMBINES}")
        if self.aggregation_reduce not in G.REDUCERS:
            raise ValueError(f"aggregation_reduce must be one of {G.REDUCERS}")

    @property
    def uses_tail_diag(self) -> bool:
        return self.scoring_variant == "diag_both"


@dataclass
class ModelParams:
    entity_emb: np.ndarray
    rel_emb: np.ndarray
    rel_diag: np.ndarray
    bias_head: np.ndarray
    bias_tail: np.ndarray
    k: float = 1.0
    # second diagonal, only allocated for the diag_both variant
    rel_diag_tail: np.ndarray | None = None

    BALL_TABLES = ("entity_emb", "rel_emb")

    @property
    def dim(self) -> int:
        return self.entity_emb.shape[1]

    @property
    def n_entities(self) -> int:
        return self.entity_emb.shape[0]

    @property
    def n_relations(self) -> int:
        return self.rel_emb.shape[0]

    def tables(self) -> dict[str, np.ndarray]:
        out = {
            "entity_emb": self.entity_emb,
            "rel_emb": self.rel_emb,
            "rel_diag": self.rel_diag,
            "bias_head": self.bias_head,
            "bias_tail": self.bias_tail,
        }
        if self.rel_diag_tail is not None:
            out["rel_diag_tail"] = self.rel_diag_tail
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.entity_emb.copy(), self.rel_emb.copy(), self.rel_diag.copy(),
            self.bias_head.copy(), self.bias_tail.copy(), self.k,
            None if self.rel_diag_tail is None else self.rel_diag_tail.copy(),
        )

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, arr in self.tables().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        h.update(np.float64(self.k).tobytes())
        return h.hexdigest()


def init_params(seed: int, dim: int, n_entities: int, n_relations: int, k: float = 1.0,
                cfg: ScoreConfig | None = None) -> ModelParams:
    """Embeddings ~ 1e-3 * N(0, 1), diagonals ~ U(-1, 1), biases zero."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    ent = ball.project_to_ball(1e-3 * rng.standard_normal((n_entities, dim)), k)
    rel = ball.project_to_ball(1e-3 * rng.standard_normal((n_relations, dim)), k)
    diag = rng.uniform(-1.0, 1.0, (n_relations, dim))
    diag_tail = None
    if cfg is not None and cfg.uses_tail_diag:
        diag_tail = rng.uniform(-1.0, 1.0, (n_relations, dim))
    return ModelParams(ent, rel, diag, np.zeros(n_entities), np.zeros(n_entities), float(k), diag_tail)


# -- hyperbolic ops on the tape ---------------------------------------------

def _norm(x: G.Var) -> G.Var:
    return G.sqrt(G.clamp_min(G.sum_last(x * x), ball.MIN_NORM**2))


def t_project(x: G.Var, k: float) -> G.Var:
    n = _norm(x)
    outside = k * n.value**2 > (1.0 - ball.BALL_EPS) ** 2
    if not outside.any():
        return x
    return x * G.where(outside, ball.max_norm(k) / n, 1.0)


def t_expmap0(v: G.Var, k: float) -> G.Var:
    sk = np.sqrt(k)
    n = _norm(v)
    return t_project(G.tanh(sk * n) * v / (sk * n), k)


def t_logmap0(y: G.Var, k: float) -> G.Var:
    sk = np.sqrt(k)
    n = _norm(y)
    return G.artanh(sk * n) * y / (sk * n)


def t_mobius_add(x: G.Var, y: G.Var, k: float) -> G.Var:
    xy = G.sum_last(x * y)
    x2 = G.sum_last(x * x)
    y2 = G.sum_last(y * y)
    num = (1 + 2 * k * xy + k * y2) * x + (1 - k * x2) * y
    den = 1 + 2 * k * xy + (k * k) * x2 * y2
    return t_project(num / den, k)


def t_matvec_diag(m: G.Var, x: G.Var, k: float) -> G.Var:
    return t_expmap0(m * t_logmap0(x, k), k)


def t_distance(x: G.Var, y: G.Var, k: float) -> G.Var:
    sk = np.sqrt(k)
    return (2 / sk) * G.artanh(sk * _norm(t_mobius_add(-x, y, k)))


def t_aggregate(head: G.Var, tail: G.Var, affiliated: G.Var | None, mask: np.ndarray,
                cfg: ScoreConfig, k: float) -> tuple[G.Var, G.Var]:
    """Batch aggregation; ``affiliated`` is ``(B, S, d)`` with ``mask`` marking real slots."""
    if affiliated is None or affiliated.shape[1] == 0 or not mask.any():
        return head, tail
    b, _, d = affiliated.shape
    has_aff = mask.any(axis=1)[:, None]
    la = t_logmap0(affiliated, k)
    out = []
    for e in (head, tail):
        le = G.reshape(t_logmap0(e, k), (b, 1, d))
        if cfg.aggregation_combine == "addition":
            cand, cmask = le + la, mask
        else:
            cand = G.concat([le, la], axis=1)
            cmask = np.concatenate([np.ones((b, 1), dtype=bool), mask], axis=1)
        reduced = G.reduce_slots(cand, cmask, cfg.aggregation_reduce)
        # binary facts keep their raw embedding untouched
        out.append(G.where(has_aff, t_expmap0(reduced, k), e))
    return out[0], out[1]


def forward_scores(tape: G.Tape, params: ModelParams, facts: FactArrays, cfg: ScoreConfig) -> G.Var:
    """Scores of a batch of facts, shape ``(B,)``."""
    k = params.k
    _check_ids(params, facts)
    eh = tape.gather("entity_emb", params.entity_emb, facts.head)
    et = tape.gather("entity_emb", params.entity_emb, facts.tail)
    mask = facts.affiliated >= 0
    aff = None
    if facts.affiliated.shape[1] and mask.any():
        aff = tape.gather("entity_emb", params.entity_emb, facts.affiliated, valid=mask)
    eh, et = t_aggregate(eh, et, aff, mask, cfg, k)

    r = tape.gather("rel_emb", params.rel_emb, facts.relation)
    v = cfg.scoring_variant
    if v == "full":
        lhs = t_matvec_diag(tape.gather("rel_diag", params.rel_diag, facts.relation), eh, k)
        rhs = t_mobius_add(et, r, k)
    elif v == "no_diag":
        lhs, rhs = eh, t_mobius_add(et, r, k)
    elif v == "no_offset":
        lhs = t_matvec_diag(tape.gather("rel_diag", params.rel_diag, facts.relation), eh, k)
        rhs = et
    elif v == "diag_both":
        if params.rel_diag_tail is None:
            raise ValueError("diag_both scoring needs params.rel_diag_tail")
        lhs = t_matvec_diag(tape.gather("rel_diag", params.rel_diag, facts.relation), eh, k)
        rt = tape.gather("rel_diag_tail", params.rel_diag_tail, facts.relation)
        rhs = t_mobius_add(t_matvec_diag(rt, et, k), r, k)
    else:  # swapped
        lhs = t_mobius_add(eh, r, k)
        rhs = t_matvec_diag(tape.gather("rel_diag", params.rel_diag, facts.relation), et, k)

    dist = t_distance(lhs, rhs, k)
    bh = tape.gather("bias_head", params.bias_head, facts.head)
    bt = tape.gather("bias_tail", params.bias_tail, facts.tail)
    return G.reshape(-(dist * dist), (len(facts),)) + bh + bt


def _check_ids(params: ModelParams, facts: FactArrays) -> None:
    ne, nr = params.n_entities, params.n_relations
    for name, arr, bound in (("relation", facts.relation, nr), ("head", facts.head, ne),
                             ("tail", facts.tail, ne)):
        if len(arr) and (arr.min() < 0 or arr.max() >= bound):
            raise IndexError(f"{name} id out of range [0, {bound})")
    aff = facts.affiliated[facts.affiliated >= 0]
    if len(aff) and aff.max() >= ne:
        raise IndexError(f"affiliated id out of range [0, {ne})")


def score_batch(params: ModelParams, facts: Sequence[Fact] | FactArrays,
                cfg: ScoreConfig = ScoreConfig(), chunk: int = SCORE_CHUNK) -> np.ndarray:
    """Scores of many facts, computed in blocks of ``chunk`` rows.

    Blocking keeps the temporaries cache-sized, so cost stays linear in the
    number of facts; results do not depend on ``chunk``.
    """
    if not isinstance(facts, FactArrays):
        facts = FactArrays.from_facts(facts)
    n = len(facts)
    if n == 0:
        return np.zeros(0)
    if n <= chunk:
        return forward_scores(G.Tape(record=False), params, facts, cfg).value
    out = np.empty(n)
    for start in range(0, n, chunk):
        sl = slice(start, start + chunk)
        block = FactArrays(facts.relation[sl], facts.head[sl], facts.tail[sl],
                           facts.affiliated[sl], facts.n_affiliated[sl])
        out[sl] = forward_scores(G.Tape(record=False), params, block, cfg).value
    return out


def score(fact: Fact, params: ModelParams, cfg: ScoreConfig = ScoreConfig()) -> float:
    return float(score_batch(params, [fact], cfg)[0])


def aggregate(head, tail, affiliated: Sequence, cfg: ScoreConfig = ScoreConfig(), k: float = 1.0
              ) -> tuple[np.ndarray, np.ndarray]:
    """Affiliated-aware head and tail points for a single fact."""
    head = np.asarray(head, dtype=np.float64)
    tail = np.asarray(tail, dtype=np.float64)
    d = head.shape[-1]
    aff = np.asarray(affiliated, dtype=np.float64).reshape(-1, d) if len(affiliated) else np.zeros((0, d))
    if tail.shape[-1] != d or aff.shape[-1] != d:
        raise ValueError("dimension mismatch between head, tail and affiliated points")
    tape = G.Tape(record=False)
    mask = np.ones((1, len(aff)), dtype=bool)
    a = tape.constant(aff[None]) if len(aff) else None
    h, t = t_aggregate(tape.constant(head[None]), tape.constant(tail[None]), a, mask, cfg, k)
    return h.value[0], t.value[0]


def murp_score(fact: Fact, params: ModelParams) -> float:
    """Binary-fact score straight from the ball kernel, with no aggregation step."""
    if fact.affiliated:
        raise ValueError("murp_score only handles binary facts")
    k = params.k
    eh = params.entity_emb[fact.head]
    et = params.entity_emb[fact.tail]
    lhs = ball.mobius_matvec_diag(params.rel_diag[fact.relation], eh, k)
    rhs = ball.mobius_add(et, params.rel_emb[fact.relation], k)
    d = ball.distance(lhs, rhs, k)
    return float(-d * d + params.bias_head[fact.head] + params.bias_tail[fact.tail])
