"""Facts, vocabularies and dataset ingestion for hyper-relational KGs."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

RECIPROCAL_SUFFIX = "^-1"


class ParseError(ValueError):
    def __init__(self, message: str, line_no: int | None = None, source: str | None = None):
        where = ""
        if source is not None:
            where += f"{source}:"
        if line_no is not None:
            where += f"{line_no}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line_no = line_no
        self.source = source


@dataclass(frozen=True)
class Fact:
    """A relation with its ordered entities: head, tail, then affiliated.

    Ids are raw strings before indexing and ints afterwards.
    """

    relation: object
    head: object
    tail: object
    affiliated: tuple = ()

    def __post_init__(self):
        if not isinstance(self.affiliated, tuple):
            object.__setattr__(self, "affiliated", tuple(self.affiliated))

    @property
    def arity(self) -> int:
        return 2 + len(self.affiliated)

    @property
    def entities(self) -> tuple:
        return (self.head, self.tail) + self.affiliated

    def key(self) -> tuple:
        return (self.relation, self.head, self.tail) + self.affiliated

    def with_entity(self, position: int, value) -> "Fact":
        """Copy with the entity at ``position`` (0=head, 1=tail, 2..=affiliated) replaced."""
        if position == 0:
            return replace(self, head=value)
        if position == 1:
            return replace(self, tail=value)
        aff = list(self.affiliated)
        aff[position - 2] = value
        return replace(self, affiliated=tuple(aff))


def parse_nary_line(line: str, line_no: int | None = None) -> Fact:
    tokens = line.split()
    if len(tokens) < 3:
        raise ParseError(
            f"expected a relation and at least two entities, got {len(tokens)} token(s)", line_no
        )
    return Fact(tokens[0], tokens[1], tokens[2], tuple(tokens[3:]))


def format_nary_line(fact: Fact) -> str:
    return " ".join(str(t) for t in fact.key())


def parse_role_value_record(record: dict, line_no: int | None = None) -> Fact:
    """Build a fact from a ``{head, relation, tail, pairs}`` record; role labels are dropped."""
    missing = [k for k in ("head", "relation", "tail") if record.get(k) in (None, "")]
    if missing:
        raise ParseError(f"record missing {', '.join(missing)}", line_no)
    values = []
    for pair in record.get("pairs", []) or []:
        if len(pair) != 2:
            raise ParseError(f"pair {pair!r} is not [role, value]", line_no)
        values.append(str(pair[1]))
    return Fact(str(record["relation"]), str(record["head"]), str(record["tail"]), tuple(values))


def _content_lines(path: Path) -> Iterator[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            stripped = line.strip()
            if stripped and not stripped.startswith("#"):
                yield i, stripped


def read_nary_file(path) -> list[Fact]:
    path = Path(path)
    facts = []
    for i, line in _content_lines(path):
        try:
            facts.append(parse_nary_line(line, i))
        except ParseError as err:
            raise ParseError(str(err).split(": ", 1)[-1], i, str(path)) from None
    return facts


def read_role_value_file(path) -> tuple[list[Fact], set[str]]:
    """Read JSON-lines records. Returns the facts and any values flagged under ``literals``."""
    path = Path(path)
    facts, literals = [], set()
    for i, line in _content_lines(path):
        try:
            record = json.loads(line)
        except json.JSONDecodeError as err:
            raise ParseError(f"invalid JSON: {err.msg}", i, str(path)) from None
        try:
            facts.append(parse_role_value_record(record, i))
        except ParseError as err:
            raise ParseError(str(err).split(": ", 1)[-1], i, str(path)) from None
        literals.update(str(v) for v in record.get("literals", []) or [])
    return facts, literals


def read_facts(path) -> list[Fact]:
    path = Path(path)
    if path.suffix in (".jsonl", ".json"):
        return read_role_value_file(path)[0]
    return read_nary_file(path)


def write_nary_file(path, facts: Iterable[Fact]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in facts:
            fh.write(format_nary_line(f) + "\n")


_LITERAL_RE = re.compile(
    r"""^(
        [+-]?\d+(\.\d*)?([eE][+-]?\d+)?       # number
      | [+-]?\d{1,4}-\d{1,2}(-\d{1,2})?(T.*)?  # ISO-like date
      | ".*" | '.*'                            # quoted string
    )$""",
    re.VERBOSE,
)


def default_is_literal(value: str) -> bool:
    return bool(_LITERAL_RE.match(str(value)))


def literal_predicate(literal_ids: Iterable[str] | None = None) -> Callable[[str], bool]:
    """Explicit id list if given, otherwise the numeric/date/quoted pattern."""
    if literal_ids is not None:
        ids = frozenset(str(v) for v in literal_ids)
        return ids.__contains__
    return default_is_literal


@dataclass
class Vocabulary:
    entities: list[str] = field(default_factory=list)
    relations: list[str] = field(default_factory=list)
    n_base_relations: int = 0
    has_reciprocals: bool = False

    def __post_init__(self):
        self.entity_index = {e: i for i, e in enumerate(self.entities)}
        self.relation_index = {r: i for i, r in enumerate(self.relations)}
        if not self.has_reciprocals:
            self.n_base_relations = len(self.relations)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def reciprocal(self, rel: int) -> int:
        if not self.has_reciprocals:
            raise ValueError("vocabulary has no reciprocal relations")
        n = self.n_base_relations
        return rel + n if rel < n else rel - n

    def is_reciprocal(self, rel: int) -> bool:
        return self.has_reciprocals and rel >= self.n_base_relations

    def with_reciprocals(self) -> "Vocabulary":
        if self.has_reciprocals:
            raise ValueError("reciprocal relations already added")
        rels = self.relations + [r + RECIPROCAL_SUFFIX for r in self.relations]
        return Vocabulary(list(self.entities), rels, len(self.relations), True)

    def index_fact(self, fact: Fact) -> Fact:
        try:
            return Fact(
                self.relation_index[fact.relation],
                self.entity_index[fact.head],
                self.entity_index[fact.tail],
                tuple(self.entity_index[a] for a in fact.affiliated),
            )
        except KeyError as err:
            raise KeyError(f"unknown id {err.args[0]!r}") from None

    def decode_fact(self, fact: Fact) -> Fact:
        return Fact(
            self.relations[fact.relation],
            self.entities[fact.head],
            self.entities[fact.tail],
            tuple(self.entities[a] for a in fact.affiliated),
        )

    def to_dict(self) -> dict:
        return {
            "entities": self.entities,
            "relations": self.relations,
            "n_base_relations": self.n_base_relations,
            "has_reciprocals": self.has_reciprocals,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(list(d["entities"]), list(d["relations"]), d["n_base_relations"], d["has_reciprocals"])


def build_vocab(*fact_streams: Iterable[Fact]) -> Vocabulary:
    """Index ids by first appearance across the streams, in the order given."""
    entities: dict[str, None] = {}
    relations: dict[str, None] = {}
    for stream in fact_streams:
        for f in stream:
            relations.setdefault(f.relation)
            for e in f.entities:
                entities.setdefault(e)
    return Vocabulary(list(entities), list(relations))


@dataclass
class Dataset:
    """Train/valid/test splits of indexed facts, plus the known-fact index used for filtering."""

    vocab: Vocabulary
    train: list[Fact]
    test: list[Fact]
    valid: list[Fact] | None = None
    # reciprocal mirrors, appended to the training stream only
    train_reciprocal: list[Fact] = field(default_factory=list)

    def __post_init__(self):
        self.known = frozenset(f.key() for f in self.train + (self.valid or []) + self.test)

    @property
    def training_facts(self) -> list[Fact]:
        return self.train + self.train_reciprocal

    @classmethod
    def from_raw(cls, train, test, valid=None) -> "Dataset":
        vocab = build_vocab(train, valid or [], test)
        idx = vocab.index_fact
        return cls(
            vocab,
            [idx(f) for f in train],
            [idx(f) for f in test],
            None if valid is None else [idx(f) for f in valid],
        )

    @classmethod
    def load(cls, directory, with_reciprocals: bool = False) -> "Dataset":
        """Load ``train.txt``/``test.txt`` and optional ``valid.txt`` from a directory.

        If ``entities.txt``/``relations.txt`` exist, their order fixes the indices.
        """
        directory = Path(directory)
        train = read_nary_file(directory / "train.txt")
        test = read_nary_file(directory / "test.txt")
        valid_path = directory / "valid.txt"
        valid = read_nary_file(valid_path) if valid_path.exists() else None
        ent_path, rel_path = directory / "entities.txt", directory / "relations.txt"
        if ent_path.exists() and rel_path.exists():
            vocab = Vocabulary(
                [ln for _, ln in _content_lines(ent_path)], [ln for _, ln in _content_lines(rel_path)]
            )
            idx = vocab.index_fact
            ds = cls(vocab, [idx(f) for f in train], [idx(f) for f in test],
                     None if valid is None else [idx(f) for f in valid])
        else:
            ds = cls.from_raw(train, test, valid)
        return add_reciprocals(ds) if with_reciprocals else ds

    def split_counts(self) -> dict:
        out = {}
        for name, facts in (("train", self.train), ("valid", self.valid), ("test", self.test)):
            if facts is None:
                continue
            binary = sum(1 for f in facts if f.arity == 2)
            out[name] = {"binary": binary, "nary": len(facts) - binary, "overall": len(facts)}
        return out


def add_reciprocals(dataset: Dataset) -> Dataset:
    """Double the relation set and mirror every training fact as ``(r^-1, t, h, aff...)``."""
    vocab = dataset.vocab.with_reciprocals()
    mirrors = [
        Fact(vocab.reciprocal(f.relation), f.tail, f.head, f.affiliated) for f in dataset.train
    ]
    return Dataset(vocab, list(dataset.train), list(dataset.test),
                   None if dataset.valid is None else list(dataset.valid), mirrors)


@dataclass
class LiteralReport:
    dropped_facts: int = 0
    removed_values: int = 0
    reduced_to_binary: int = 0


def filter_facts(facts: Sequence[Fact], is_literal: Callable[[str], bool],
                 report: LiteralReport | None = None) -> list[Fact]:
    report = report if report is not None else LiteralReport()
    out = []
    for f in facts:
        if is_literal(f.head) or is_literal(f.tail):
            report.dropped_facts += 1
            continue
        kept = tuple(a for a in f.affiliated if not is_literal(a))
        if len(kept) != len(f.affiliated):
            report.removed_values += len(f.affiliated) - len(kept)
            if not kept:
                report.reduced_to_binary += 1
            f = replace(f, affiliated=kept)
        out.append(f)
    return out


def filter_literals(splits: dict[str, list[Fact] | None], is_literal: Callable[[str], bool]
                    ) -> tuple[dict[str, list[Fact] | None], dict[str, LiteralReport]]:
    """Remove literals from raw (un-indexed) splits.

    Facts with a literal head or tail are dropped; literal affiliated values are
    removed, so an n-ary fact may shrink down to a binary one.
    """
    out, reports = {}, {}
    for name, facts in splits.items():
        if facts is None:
            out[name] = None
            continue
        reports[name] = LiteralReport()
        out[name] = filter_facts(facts, is_literal, reports[name])
    return out, reports


@dataclass
class FactArrays:
    """Column view of indexed facts; affiliated slots padded with -1."""

    relation: np.ndarray
    head: np.ndarray
    tail: np.ndarray
    affiliated: np.ndarray
    n_affiliated: np.ndarray

    def __len__(self) -> int:
        return len(self.relation)

    @classmethod
    def from_facts(cls, facts: Sequence[Fact], width: int | None = None) -> "FactArrays":
        n = len(facts)
        width = max([len(f.affiliated) for f in facts] + [0]) if width is None else width
        aff = np.full((n, width), -1, dtype=np.int64)
        n_aff = np.zeros(n, dtype=np.int64)
        for i, f in enumerate(facts):
            aff[i, : len(f.affiliated)] = f.affiliated
            n_aff[i] = len(f.affiliated)
        return cls(
            np.fromiter((f.relation for f in facts), np.int64, n),
            np.fromiter((f.head for f in facts), np.int64, n),
            np.fromiter((f.tail for f in facts), np.int64, n),
            aff,
            n_aff,
        )

    def to_facts(self) -> list[Fact]:
        return [
            Fact(int(r), int(h), int(t), tuple(int(a) for a in aff[:k]))
            for r, h, t, aff, k in zip(self.relation, self.head, self.tail, self.affiliated, self.n_affiliated)
        ]
