"""In-memory triple store with alias index, chain enumeration, and execution.

File formats (UTF-8, tab-separated, ``#`` starts a comment line):

* triples:       subject_id  predicate  object  mediator_flag(0|1)
* names:         entity_id   name
* descriptions:  entity_id   description text

A mediator flag of 1 declares the fact's object to be a mediator node;
two-hop inferential chains pass through such nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import FileFormatError, UnknownEntityError
from .features import normalize_name

Chain = tuple[str, ...]

FACT_BUCKETS = 10


@dataclass
class Entity:
    id: str
    names: list[str] = field(default_factory=list)
    description: str | None = None
    fact_count: int = 0


@dataclass(frozen=True)
class Fact:
    subject: str
    predicate: str
    obj: str


@dataclass
class ConstraintTable:
    """Type-constraint candidates per inferential chain, learned from training data."""

    by_chain: dict[Chain, set[str]] = field(default_factory=dict)

    def names_for(self, chain: Chain) -> set[str]:
        return self.by_chain.get(tuple(chain), set())

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for chain in sorted(self.by_chain):
                for name in sorted(self.by_chain[chain]):
                    fh.write("|".join(chain) + "\t" + name + "\n")

    @classmethod
    def from_file(cls, path) -> "ConstraintTable":
        table = cls()
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise FileFormatError(path, line_no, "expected 2 fields")
                chain = tuple(parts[0].split("|"))
                table.by_chain.setdefault(chain, set()).add(parts[1])
        return table


def _read_tsv(path, n_fields: int):
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != n_fields:
                raise FileFormatError(
                    path, line_no, f"expected {n_fields} tab-separated fields, got {len(parts)}"
                )
            yield line_no, parts


class Kb:
    """Immutable-after-build knowledge base; all queries are read-only."""

    def __init__(self):
        self.entities: dict[str, Entity] = {}
        self.facts: list[Fact] = []
        self.mediators: set[str] = set()
        self.alias_index: dict[str, set[str]] = {}
        self._by_subject: dict[str, list[Fact]] = {}
        self._by_subject_pred: dict[tuple[str, str], list[Fact]] = {}

    # -- construction ------------------------------------------------------

    @classmethod
    def build(cls, triples_path, names_path, descriptions_path) -> "Kb":
        kb = cls()
        for line_no, (subj, pred, obj, flag) in _read_tsv(triples_path, 4):
            if flag not in ("0", "1"):
                raise FileFormatError(triples_path, line_no,
                                      f"mediator flag must be 0 or 1, got {flag!r}")
            kb._add_entity(subj)
            kb._add_fact(Fact(subj, pred, obj))
            if flag == "1":
                kb._add_entity(obj)
                kb.mediators.add(obj)
        for _line_no, (entity_id, name) in _read_tsv(names_path, 2):
            kb._add_entity(entity_id)
            entity = kb.entities[entity_id]
            if name not in entity.names:
                entity.names.append(name)
            kb.alias_index.setdefault(normalize_name(name), set()).add(entity_id)
        for line_no, (entity_id, text) in _read_tsv(descriptions_path, 2):
            kb._add_entity(entity_id)
            entity = kb.entities[entity_id]
            if entity.description is not None and entity.description != text:
                raise FileFormatError(descriptions_path, line_no,
                                      f"conflicting description for {entity_id}")
            entity.description = text
        return kb

    def _add_entity(self, entity_id: str) -> None:
        if entity_id not in self.entities:
            self.entities[entity_id] = Entity(id=entity_id)

    def _add_fact(self, fact: Fact) -> None:
        self.facts.append(fact)
        self.entities[fact.subject].fact_count += 1
        self._by_subject.setdefault(fact.subject, []).append(fact)
        self._by_subject_pred.setdefault((fact.subject, fact.predicate), []).append(fact)

    # -- queries -----------------------------------------------------------

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self.entities

    def _require(self, entity_id: str) -> Entity:
        entity = self.entities.get(entity_id)
        if entity is None:
            raise UnknownEntityError(entity_id)
        return entity

    def facts_of(self, entity_id: str) -> list[Fact]:
        return self._by_subject.get(entity_id, [])

    def objects_of(self, entity_id: str, predicate: str) -> list[str]:
        return [f.obj for f in self._by_subject_pred.get((entity_id, predicate), [])]

    def lookup_entities(self, mention: str) -> set[str]:
        """Case-insensitive exact alias match; empty set when unknown."""
        return set(self.alias_index.get(normalize_name(mention), set()))

    def relations_of(self, entity_id: str) -> set[Chain]:
        """All 1-hop chains plus 2-hop chains through declared mediators."""
        self._require(entity_id)
        chains: set[Chain] = set()
        for fact in self.facts_of(entity_id):
            chains.add((fact.predicate,))
            if fact.obj in self.mediators:
                for hop in self.facts_of(fact.obj):
                    chains.add((fact.predicate, hop.predicate))
        return chains

    def fact_count_feature(self, entity_id: str) -> np.ndarray:
        """One-hot of min(9, floor(log2(1 + fact_count))) over 10 buckets."""
        entity = self._require(entity_id)
        bucket = min(FACT_BUCKETS - 1, int(math.floor(math.log2(1 + entity.fact_count))))
        vec = np.zeros(FACT_BUCKETS, dtype=np.float64)
        vec[bucket] = 1.0
        return vec

    def execute(self, entity_id: str, chain: Iterable[str]) -> set[str]:
        """Terminal objects reached by following the chain's predicates in order."""
        return set(self.execute_paths(entity_id, chain))

    def execute_paths(self, entity_id: str, chain: Iterable[str]) -> dict[str, set[tuple[str, ...]]]:
        """Answers mapped to the node paths they were reached through.

        Each path lists the visited nodes excluding the answer itself, so a
        1-hop answer carries (subject,) and a 2-hop one (subject, mediator).
        """
        self._require(entity_id)
        frontier: dict[str, set[tuple[str, ...]]] = {entity_id: {()}}
        for predicate in tuple(chain):
            nxt: dict[str, set[tuple[str, ...]]] = {}
            for node, paths in frontier.items():
                for obj in self.objects_of(node, predicate):
                    bucket = nxt.setdefault(obj, set())
                    for path in paths:
                        bucket.add(path + (node,))
            frontier = nxt
            if not frontier:
                break
        return frontier
