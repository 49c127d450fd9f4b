"""Train on a small synthetic KG and report how well the training facts are memorised.

    python scripts/run_memorization.py --epochs 300 --beta 128
"""
import argparse
import time

from hyper2 import evaluate as ev
from hyper2.graph import add_reciprocals
from hyper2.model import ScoreConfig, init_params
from hyper2.synthetic import synthetic_dataset
from hyper2.train import TrainConfig, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--entities", type=int, default=50)
    ap.add_argument("--relations", type=int, default=5)
    ap.add_argument("--facts", type=int, default=200)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--eta", type=float, default=5.0)
    ap.add_argument("--beta", type=int, default=128)
    ap.add_argument("--nneg", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--scoring", default="full")
    ap.add_argument("--combine", default="addition")
    ap.add_argument("--reduce", default="min")
    args = ap.parse_args()

    ds = add_reciprocals(synthetic_dataset(args.entities, args.relations, args.facts, seed=args.seed))
    cfg = ScoreConfig(args.scoring, args.combine, args.reduce)
    p = init_params(args.seed, args.dim, ds.vocab.n_entities, ds.vocab.n_relations, cfg=cfg)
    t0 = time.perf_counter()
    res = fit(ds, p, TrainConfig(eta=args.eta, beta=args.beta, nneg=args.nneg, nepoch=args.epochs, seed=args.seed),
              cfg, on_epoch=lambda r: print(r.line()) if r.epoch % 25 == 0 else None)
    print(f"trained {res.epochs_run} epochs in {time.perf_counter() - t0:.1f} s")
    print(ev.evaluate(ds, res.params, ds.train, cfg=cfg).to_table())


if __name__ == "__main__":
    main()
