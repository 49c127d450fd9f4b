"""Measure filtered-ranking time against vocabulary size.

    python scripts/bench_scaling.py --sizes 500 1000 2000 4000
"""
import argparse

import numpy as np

from hyper2.evaluate import bench_eval_time, time_queries
from hyper2.graph import Dataset, Vocabulary
from hyper2.model import init_params
from hyper2.synthetic import random_facts


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[500, 1000, 2000, 4000])
    ap.add_argument("--test", type=int, default=30)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--rounds", type=int, default=5)
    args = ap.parse_args()

    facts = random_facts(min(args.sizes), 5, 200 + args.test, seed=0)
    setups = {}
    for n in args.sizes:
        vocab = Vocabulary([f"e{i}" for i in range(n)], [f"r{i}" for i in range(5)])
        idx = [vocab.index_fact(f) for f in facts]
        setups[n] = (Dataset(vocab, idx[:200], idx[200:]), init_params(0, args.dim, n, 5))
    best = {}
    for _ in range(args.rounds):
        for n, (ds, p) in setups.items():
            t = time_queries(ds, p)
            best[n] = t if n not in best else np.minimum(best[n], t)
    print(f"{'|E|':>7} {'measured s':>11} {'predicted s':>12} {'us/candidate':>13}")
    for n, (ds, p) in setups.items():
        pred = bench_eval_time(ds, p, repeats=1).predicted_seconds
        n_cand = sum(f.arity for f in ds.test) * n
        print(f"{n:>7} {best[n].sum():>11.3f} {pred:>12.3f} {1e6 * best[n].sum() / n_cand:>13.2f}")


if __name__ == "__main__":
    main()
