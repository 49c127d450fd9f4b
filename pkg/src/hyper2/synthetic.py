"""Random hyper-relational KGs for experiments and tests."""
from __future__ import annotations

import numpy as np

from .graph import Dataset, Fact, build_vocab


def random_facts(n_entities: int, n_relations: int, n_facts: int, arities=(2, 3, 4),
                 seed: int = 0, hub_exponent: float = 0.0) -> list[Fact]:
    """Distinct facts with entity-distinct slots.

    With ``hub_exponent`` > 0, entity ``i`` is drawn with weight ``(1 + i) ** -hub_exponent``
    so low-numbered entities become high-degree hubs.
    """
    rng = np.random.default_rng(seed)
    weights = (1.0 + np.arange(n_entities)) ** -hub_exponent
    weights /= weights.sum()
    seen, facts = set(), []
    while len(facts) < n_facts:
        n = int(rng.choice(arities))
        ents = rng.choice(n_entities, size=n, replace=False, p=weights)
        f = Fact(f"r{int(rng.integers(n_relations))}", *[f"e{int(e)}" for e in ents[:2]],
                 tuple(f"e{int(e)}" for e in ents[2:]))
        if f.key() not in seen:
            seen.add(f.key())
            facts.append(f)
    return facts


def synthetic_dataset(n_entities: int = 50, n_relations: int = 5, n_facts: int = 200,
                      arities=(2, 3, 4), seed: int = 0, n_test: int = 0, hub_exponent: float = 0.0) -> Dataset:
    """Training facts plus an optional held-out test split drawn from the same generator.

    Entity and relation names are registered in numeric order so indices
    match the ``e<i>``/``r<i>`` suffixes. With ``n_test=0`` the test split
    equals the training split (memorisation setting).
    """
    facts = random_facts(n_entities, n_relations, n_facts + n_test, arities, seed, hub_exponent)
    train, test = facts[:n_facts], facts[n_facts:] or facts[:n_facts]
    names = [Fact(f"r{r}", f"e{0}", f"e{1}") for r in range(n_relations)]
    names += [Fact("r0", f"e{e}", f"e{e}") for e in range(n_entities)]
    vocab = build_vocab(names)
    idx = vocab.index_fact
    return Dataset(vocab, [idx(f) for f in train], [idx(f) for f in test])
