"""``hyper2`` command line: prepare, train, eval, export-embeddings, bench."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import ball
from . import checkpoint as ck
from .config import ConfigError, RunConfig, build_run_config, dump_run_config
from .evaluate import TASKS, TIE_POLICIES, bench_eval_time, evaluate
from .graph import (
    Dataset, Fact, ParseError, Vocabulary, add_reciprocals, build_vocab, filter_literals,
    literal_predicate, read_nary_file, read_role_value_file, write_nary_file,
)
from .model import init_params
from .train import NumericalError, fit

log = logging.getLogger("hyper2")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CHECKPOINT_NAME = "checkpoint.h2c"


class DataError(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- prepare ------------------------------------------------------------------

def _read_split(path: str, fmt: str) -> tuple[list[Fact], set[str]]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"{path}: no such file")
    if fmt == "jsonl" or (fmt == "auto" and p.suffix in (".jsonl", ".json")):
        return read_role_value_file(p)
    return read_nary_file(p), set()


def _share(counts: dict) -> dict:
    n = max(counts["overall"], 1)
    return {**counts, "binary_pct": 100.0 * counts["binary"] / n, "nary_pct": 100.0 * counts["nary"] / n}


def prepare(train: str, test: str, out: str, valid: str | None = None, fmt: str = "auto",
            filter_lits: bool = False, literal_list: str | None = None) -> dict:
    """Write canonical fact files, vocabulary files and ``report.json`` into ``out``."""
    splits, flagged = {}, set()
    for name, path in (("train", train), ("valid", valid), ("test", test)):
        if path is None:
            splits[name] = None
            continue
        facts, lits = _read_split(path, fmt)
        splits[name] = facts
        flagged |= lits
    report: dict = {}
    if filter_lits or literal_list:
        if literal_list:
            ids = [ln.strip() for ln in Path(literal_list).read_text(encoding="utf-8").splitlines() if ln.strip()]
            pred = literal_predicate(set(ids) | flagged)
        elif flagged:
            pred = literal_predicate(flagged)
        else:
            pred = literal_predicate()
        splits, reports = filter_literals(splits, pred)
        report["literals"] = {k: vars(v) for k, v in reports.items()}
    vocab = build_vocab(*(splits[n] or [] for n in ("train", "valid", "test")))
    ds = Dataset(vocab, [vocab.index_fact(f) for f in splits["train"]],
                 [vocab.index_fact(f) for f in splits["test"]],
                 None if splits["valid"] is None else [vocab.index_fact(f) for f in splits["valid"]])
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    for name in ("train", "valid", "test"):
        if splits[name] is not None:
            write_nary_file(outdir / f"{name}.txt", splits[name])
    (outdir / "entities.txt").write_text("".join(e + "\n" for e in vocab.entities), encoding="utf-8")
    (outdir / "relations.txt").write_text("".join(r + "\n" for r in vocab.relations), encoding="utf-8")
    report.update({
        "n_entities": vocab.n_entities,
        "n_relations": vocab.n_relations,
        "splits": {k: _share(v) for k, v in ds.split_counts().items()},
    })
    (outdir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report


def cmd_prepare(args) -> int:
    report = prepare(args.train, args.test, args.out, args.valid, args.format,
                     args.filter_literals, args.literal_list)
    for name, c in report["splits"].items():
        print(f"{name:<6} {c['overall']:>8} facts  binary {c['binary']:>8} ({c['binary_pct']:.1f}%)"
              f"  n-ary {c['nary']:>8} ({c['nary_pct']:.1f}%)")
    print(f"|E| = {report['n_entities']}  |R| = {report['n_relations']}")
    return EXIT_OK


# -- train --------------------------------------------------------------------

def _load_data(path: str) -> Dataset:
    if not Path(path).is_dir():
        raise DataError(f"{path}: not a dataset directory")
    return Dataset.load(path)


def train_run(cfg: RunConfig, resume: str | None = None) -> ck.Checkpoint:
    ds = add_reciprocals(_load_data(cfg.data))
    tcfg, scfg = cfg.train_config(), cfg.score_config()
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "run.cfg").write_text(dump_run_config(cfg), encoding="utf-8")
    start, rng = 0, np.random.default_rng(tcfg.seed)
    if resume:
        prev = ck.load(resume)
        _check_vocab(prev.vocab, ds.vocab)
        params, start = prev.params, prev.epoch
        if prev.rng_state is not None:
            rng.bit_generator.state = prev.rng_state
    else:
        params = init_params(tcfg.seed, cfg.dim, ds.vocab.n_entities, ds.vocab.n_relations, cfg.k, scfg)
    log_path = outdir / "train.log"
    with open(log_path, "a" if resume else "w", encoding="utf-8") as fh:
        def on_epoch(rec):
            fh.write(rec.line() + "\n")
            fh.flush()
        result = fit(ds, params, tcfg, scfg, rng=rng, start_epoch=start, on_epoch=on_epoch)
    ckpt = ck.Checkpoint(result.params, ds.vocab, tcfg, scfg, result.rng_state,
                         result.best_valid_mrr, result.epochs_run or start)
    ck.save(ckpt, outdir / CHECKPOINT_NAME)
    return ckpt


def _overrides(args, names) -> dict:
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


_TRAIN_KEYS = ("data", "out", "preset", "dim", "k", "eta", "beta", "nneg", "nepoch", "patience",
               "eval_every", "seed", "corruption", "workers", "scoring_variant",
               "aggregation_combine", "aggregation_reduce")


def cmd_train(args) -> int:
    cfg = build_run_config(args.config, _overrides(args, _TRAIN_KEYS))
    if not cfg.data:
        raise ConfigError("no dataset directory given (--data or 'data =' in the config)")
    ckpt = train_run(cfg, args.resume)
    print(f"trained {ckpt.epoch} epochs -> {Path(cfg.out) / CHECKPOINT_NAME}")
    return EXIT_OK


# -- eval / bench / export ----------------------------------------------------

def _check_vocab(ckpt_vocab: Vocabulary, data_vocab: Vocabulary) -> None:
    a_e, a_r = ckpt_vocab.entities, ckpt_vocab.relations[: ckpt_vocab.n_base_relations]
    b_e, b_r = data_vocab.entities, data_vocab.relations[: data_vocab.n_base_relations]
    if a_e != b_e or a_r != b_r:
        raise DataError(
            f"vocabulary mismatch: checkpoint has {len(a_e)} entities / {len(a_r)} relations, "
            f"dataset has {len(b_e)} entities / {len(b_r)} relations"
            + ("" if (len(a_e), len(a_r)) != (len(b_e), len(b_r)) else " (same counts, different ids)")
        )


def _load_for_eval(ckpt_path: str, data: str) -> tuple[ck.Checkpoint, Dataset]:
    ckpt = ck.load(ckpt_path)
    ds = _load_data(data)
    _check_vocab(ckpt.vocab, ds.vocab)
    if ckpt.vocab.has_reciprocals:
        ds = add_reciprocals(ds)
    return ckpt, ds


def cmd_eval(args) -> int:
    ckpt, ds = _load_for_eval(args.checkpoint, args.data)
    tasks = [t.strip() for t in args.tasks.split(",") if t.strip()]
    bad = set(tasks) - set(TASKS)
    if bad:
        raise ConfigError(f"unknown task(s): {', '.join(sorted(bad))}")
    facts = {"test": ds.test, "valid": ds.valid, "train": ds.train}[args.split]
    if facts is None:
        raise DataError(f"dataset has no {args.split} split")
    report = evaluate(ds, ckpt.params, facts, tasks, ckpt.score_config, args.tie_policy,
                      workers=args.workers)
    table = report.to_table()
    print(table)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "report.txt").write_text(table + "\n", encoding="utf-8")
    if args.bench:
        _print_bench(bench_eval_time(ds, ckpt.params, facts, ckpt.score_config), out)
    return EXIT_OK


def _print_bench(res, out: Path | None) -> None:
    print(f"t (per-fact forward)  = {res.per_fact_seconds:.3e} s")
    print(f"predicted T           = {res.predicted_seconds:.3f} s  "
          f"({res.candidate_facts} candidate facts)")
    print(f"measured eval time    = {res.measured_seconds:.3f} s  (ratio {res.ratio:.2f})")
    if out is not None:
        (out / "bench.json").write_text(json.dumps(res.to_dict(), indent=2) + "\n", encoding="utf-8")


def cmd_bench(args) -> int:
    ckpt, ds = _load_for_eval(args.checkpoint, args.data)
    facts = ds.test[: args.limit] if args.limit else ds.test
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    _print_bench(bench_eval_time(ds, ckpt.params, facts, ckpt.score_config), out)
    return EXIT_OK


def export_rows(ckpt: ck.Checkpoint, train: list[Fact] | None = None) -> list[dict]:
    degree = np.zeros(ckpt.params.n_entities, dtype=np.int64)
    for f in train or []:
        for e in f.entities:
            degree[e] += 1
    emb = ckpt.params.entity_emb
    dist = ball.distance(np.zeros_like(emb), emb, ckpt.params.k)
    return [
        {"id": i, "name": name, "degree": int(degree[i]), "origin_distance": float(dist[i]),
         "coords": emb[i].tolist()}
        for i, name in enumerate(ckpt.vocab.entities)
    ]


def cmd_export(args) -> int:
    ckpt = ck.load(args.checkpoint)
    train = None
    if args.data:
        ds = _load_data(args.data)
        _check_vocab(ckpt.vocab, ds.vocab)
        train = ds.train
    rows = export_rows(ckpt, train)
    d = ckpt.params.dim
    header = ["id", "name", "degree", "origin_distance"] + [f"x{j}" for j in range(d)]
    lines = ["\t".join(header)]
    for r in rows:
        lines.append("\t".join([str(r["id"]), r["name"], str(r["degree"]), repr(r["origin_distance"])]
                               + [repr(c) for c in r["coords"]]))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hyper2", description="Hyperbolic embeddings for hyper-relational link prediction")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prepare", help="convert raw splits into a canonical dataset directory")
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--valid")
    s.add_argument("--format", choices=("auto", "nary", "jsonl"), default="auto")
    s.add_argument("--filter-literals", action="store_true",
                   help="drop literals (pattern-based unless a list or per-record 'literals' is given)")
    s.add_argument("--literal-list", help="file with one literal value per line; implies filtering")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config", help="flat 'key = value' config file")
    s.add_argument("--data")
    s.add_argument("--out")
    s.add_argument("--preset", choices=("jf17k", "wikipeople", "wiki-filtered"))
    s.add_argument("--dim", type=int)
    s.add_argument("--k", "--curvature", dest="k", type=float)
    s.add_argument("--eta", "--lr", dest="eta", type=float)
    s.add_argument("--beta", "--batch-size", dest="beta", type=int)
    s.add_argument("--nneg", type=int)
    s.add_argument("--epochs", dest="nepoch", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--eval-every", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--corruption", choices=("uniform", "entity"))
    s.add_argument("--workers", type=int)
    s.add_argument("--scoring", dest="scoring_variant",
                   choices=("full", "no_diag", "no_offset", "diag_both", "swapped"))
    s.add_argument("--combine", dest="aggregation_combine", choices=("addition", "concatenation"))
    s.add_argument("--reduce", dest="aggregation_reduce", choices=("min", "max", "mean"))
    s.add_argument("--resume", help="checkpoint to continue from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="filtered ranking evaluation")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--tasks", default=",".join(TASKS))
    s.add_argument("--split", choices=("test", "valid", "train"), default="test")
    s.add_argument("--tie-policy", choices=TIE_POLICIES, default="optimistic")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--bench", action="store_true", help="also report evaluation-time accounting")
    s.add_argument("--out", default="eval")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export-embeddings", help="dump entity coordinates, degree and origin distance")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", help="dataset directory, for training-graph degrees")
    s.add_argument("--out", help="TSV path (default stdout)")
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("bench", help="evaluation-time accounting")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--limit", type=int, help="use only the first N test facts")
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as err:
        if isinstance(err, (ParseError, ck.CheckpointError)):
            print(f"data error: {err}", file=sys.stderr)
            return EXIT_DATA
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, KeyError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
