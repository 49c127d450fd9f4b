import numpy as np
import pytest

from hyper2 import ball
from hyper2.graph import Fact
from hyper2.model import ScoreConfig, init_params


def random_params(rng, n_entities=8, n_relations=3, dim=4, scale=0.25, cfg=None, biases=True):
    """Parameters spread over the ball (entity norms well inside radius 1)."""
    p = init_params(int(rng.integers(1 << 30)), dim, n_entities, n_relations, cfg=cfg)
    p.entity_emb[:] = ball.project_to_ball(rng.normal(0, scale, p.entity_emb.shape))
    p.rel_emb[:] = ball.project_to_ball(rng.normal(0, scale, p.rel_emb.shape))
    if biases:
        p.bias_head[:] = rng.normal(0, 0.5, n_entities)
        p.bias_tail[:] = rng.normal(0, 0.5, n_entities)
    return p


def random_fact(rng, n_entities, n_relations, arity):
    ents = rng.choice(n_entities, size=arity, replace=False)
    return Fact(int(rng.integers(n_relations)), int(ents[0]), int(ents[1]), tuple(int(e) for e in ents[2:]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def default_cfg():
    return ScoreConfig()


# acceptance verdicts, printed once at the end of the run
VERDICTS: dict[int, str] = {}


def record_verdict(n: int, ok: bool | None, detail: str) -> None:
    status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    VERDICTS[n] = f"{status} criterion {n}: {detail}"
    print(VERDICTS[n])


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
