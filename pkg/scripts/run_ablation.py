"""Train every scoring variant and aggregation setting on one synthetic KG and tabulate MRR.

    python scripts/run_ablation.py --epochs 50
"""
import argparse
import itertools

from hyper2 import evaluate as ev
from hyper2.grad import REDUCERS
from hyper2.graph import add_reciprocals
from hyper2.model import COMBINES, SCORING_VARIANTS, ScoreConfig, init_params
from hyper2.synthetic import synthetic_dataset
from hyper2.train import TrainConfig, fit


def run(ds, cfg: ScoreConfig, args) -> dict:
    p = init_params(args.seed, args.dim, ds.vocab.n_entities, ds.vocab.n_relations, cfg=cfg)
    res = fit(ds, p, TrainConfig(eta=args.eta, beta=args.beta, nneg=args.nneg, nepoch=args.epochs, seed=args.seed), cfg)
    m = ev.evaluate(ds, res.params, cfg=cfg).metrics()
    return {task: m[task]["overall"]["mrr"] for task in ("head/tail", "relation")}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--entities", type=int, default=50)
    ap.add_argument("--facts", type=int, default=300)
    ap.add_argument("--test", type=int, default=60)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--eta", type=float, default=5.0)
    ap.add_argument("--beta", type=int, default=64)
    ap.add_argument("--nneg", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ds = add_reciprocals(synthetic_dataset(args.entities, 5, args.facts, seed=args.seed, n_test=args.test))
    rows = [ScoreConfig(v) for v in SCORING_VARIANTS]
    rows += [ScoreConfig("full", c, r) for c, r in itertools.product(COMBINES, REDUCERS)]
    rows = list(dict.fromkeys(rows))
    print(f"{'variant':<10} {'combine':<14} {'reduce':<7} {'head/tail':>9} {'relation':>9}")
    for cfg in rows:
        m = run(ds, cfg, args)
        print(f"{cfg.scoring_variant:<10} {cfg.aggregation_combine:<14} {cfg.aggregation_reduce:<7} "
              f"{m['head/tail']:>9.3f} {m['relation']:>9.3f}")


if __name__ == "__main__":
    main()
