"""Final answer selection: pair scoring, constraint detection, pruning.

Every (entity, chain) pair from the re-ranked candidate list is scored as
rerank_score + relation score; the top-N pairs are executed against the KB,
per-answer scores sum over contributing pairs, detected constraints prune
the answers, and the answers tied at the maximum score survive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InvalidParameterError
from .features import normalize_name, tokenize
from .kb import Chain, ConstraintTable, Kb
from .linker import EntityCandidate, rerank
from .mention import enumerate_spans
from .relation import make_pattern

TEMPORAL_KEYWORDS = frozenset({"was", "were", "did"})
ORDINAL_FIRST = "first"
ORDINAL_LAST = "last"

START_DATE_SUFFIX = ".from"
END_DATE_SUFFIX = ".to"


@dataclass(frozen=True)
class Constraint:
    kind: str  # temporal-past | ordinal-first | ordinal-last | type
    value: str | None = None

    def __str__(self):
        return f"{self.kind}:{self.value}" if self.value else self.kind


@dataclass
class PairCandidate:
    entity_id: str
    chain: Chain
    pair_score: float


@dataclass
class PairProvenance:
    entity_id: str
    chain: Chain
    paths: set[tuple[str, ...]]
    pair_score: float


@dataclass
class AnswerSet:
    scores: dict[str, float] = field(default_factory=dict)
    provenance: dict[str, list[PairProvenance]] = field(default_factory=dict)
    constraints: list[Constraint] = field(default_factory=list)
    reason: str | None = None
    trace: "PipelineTrace | None" = None

    @property
    def answers(self) -> set[str]:
        return set(self.scores)

    def copy_filtered(self, keep) -> "AnswerSet":
        keep = set(keep)
        return AnswerSet(
            scores={a: s for a, s in self.scores.items() if a in keep},
            provenance={a: p for a, p in self.provenance.items() if a in keep},
            constraints=list(self.constraints),
            reason=self.reason,
        )


def select_pairs(candidates: list[EntityCandidate], relation_scorer,
                 pattern_tokens: list[str], kb: Kb, n: int) -> list[PairCandidate]:
    """Top-N (entity, chain) pairs by rerank score plus relation score.

    Ties break toward the larger fact count, then lexicographically by
    (entity id, chain).  Increasing N only extends the list (sorted prefix).
    """
    pairs: list[tuple] = []
    for cand in candidates:
        if cand.rerank_score is None:
            raise InvalidParameterError("candidates must be re-ranked before pair selection")
        base = cand.rerank_score
        for chain in sorted(kb.relations_of(cand.entity_id)):
            score = base + relation_scorer.rel_score(pattern_tokens, chain)
            pairs.append((score, cand.fact_count, cand.entity_id, chain))
    pairs.sort(key=lambda p: (-p[0], -p[1], p[2], p[3]))
    return [PairCandidate(entity_id=e, chain=c, pair_score=s)
            for s, _, e, c in pairs[:n]]


def build_constraint_table(examples, kb: Kb) -> ConstraintTable:
    """Collect type-constraint names per chain from the training items.

    For each (gold entity, gold chain), names of entities attached to the
    mediator nodes along the executed paths are recorded, excluding the
    answers themselves; chains without mediators contribute nothing.
    """
    table = ConstraintTable()
    for ex in examples:
        chain = tuple(ex.chain)
        if ex.entity_id not in kb:
            continue
        paths = kb.execute_paths(ex.entity_id, chain)
        answers = set(paths)
        mediators = {node for path_set in paths.values()
                     for path in path_set for node in path[1:]}
        names: set[str] = set()
        for node in mediators:
            for fact in kb.facts_of(node):
                if fact.obj in answers or fact.obj not in kb.entities:
                    continue
                names.update(kb.entities[fact.obj].names)
        if names:
            table.by_chain.setdefault(chain, set()).update(names)
    return table


def detect_constraints(question_tokens: list[str], chains,
                       table: ConstraintTable) -> list[Constraint]:
    """Keyword-based temporal/ordinal constraints plus text-matched type.

    The type constraint is the table name (over the given chains) sharing the
    most tokens with the question; a tie between distinct names, or no name
    sharing at least one token, yields no type constraint.
    """
    present = set(question_tokens)
    out: list[Constraint] = []
    if present & TEMPORAL_KEYWORDS:
        out.append(Constraint("temporal-past"))
    if ORDINAL_FIRST in present:
        out.append(Constraint("ordinal-first"))
    if ORDINAL_LAST in present:
        out.append(Constraint("ordinal-last"))
    names: set[str] = set()
    for chain in chains:
        names |= table.names_for(tuple(chain))
    best_name, best_count, tied = None, 0, False
    for name in sorted(names):
        count = len(set(tokenize(name)) & present)
        if count > best_count:
            best_name, best_count, tied = name, count, False
        elif count == best_count and count > 0 and name != best_name:
            tied = True
    if best_name is not None and best_count >= 1 and not tied:
        out.append(Constraint("type", best_name))
    return out


def _provenance_nodes(answer: str, prov: list[PairProvenance], kb: Kb) -> set[str]:
    nodes: set[str] = set()
    for p in prov:
        for path in p.paths:
            nodes.update(path[1:])  # mediators only; path[0] is the subject
    if answer in kb.entities:
        nodes.add(answer)
    return nodes


def _date_key(answer: str, prov, kb: Kb):
    keys = []
    for node in _provenance_nodes(answer, prov, kb):
        for fact in kb.facts_of(node):
            if fact.predicate.endswith(START_DATE_SUFFIX):
                try:
                    keys.append(float(fact.obj))
                except ValueError:
                    continue
    return min(keys) if keys else None


def _has_end_date(answer: str, prov, kb: Kb) -> bool:
    return any(fact.predicate.endswith(END_DATE_SUFFIX)
               for node in _provenance_nodes(answer, prov, kb)
               for fact in kb.facts_of(node))


def _connected_to(answer: str, prov, kb: Kb, type_name: str) -> bool:
    wanted = normalize_name(type_name)
    for node in _provenance_nodes(answer, prov, kb):
        for fact in kb.facts_of(node):
            entity = kb.entities.get(fact.obj)
            if entity and any(normalize_name(n) == wanted for n in entity.names):
                return True
    return False


def apply_constraints(answer_set: AnswerSet, constraints: list[Constraint],
                      kb: Kb) -> AnswerSet:
    """Prune answers, composing temporal, then type, then ordinal filters.

    Answers lacking the literal a constraint needs (an end date for
    temporal-past, a comparable start date for ordinals) are dropped by that
    constraint; an empty constraint list is the identity.
    """
    result = answer_set.copy_filtered(answer_set.scores)
    ordered = sorted(constraints, key=lambda c: {"temporal-past": 0, "type": 1,
                                                 "ordinal-first": 2,
                                                 "ordinal-last": 3}[c.kind])
    for constraint in ordered:
        if not result.scores:
            break
        if constraint.kind == "temporal-past":
            keep = [a for a in result.scores
                    if _has_end_date(a, result.provenance[a], kb)]
        elif constraint.kind == "type":
            keep = [a for a in result.scores
                    if _connected_to(a, result.provenance[a], kb, constraint.value)]
        else:
            keyed = [(a, _date_key(a, result.provenance[a], kb))
                     for a in result.scores]
            keyed = [(a, k) for a, k in keyed if k is not None]
            if not keyed:
                keep = []
            else:
                extreme = (min if constraint.kind == "ordinal-first" else max)(
                    k for _, k in keyed)
                keep = [a for a, k in keyed if k == extreme]
        result = result.copy_filtered(keep)
    result.constraints = list(constraints)
    return result


def answer_question(question: str, kb: Kb, mention_detector, linker_model,
                    relation_detector, constraint_table: ConstraintTable,
                    theta: float | None = None, n_pairs: int = 5,
                    use_constraints: bool = True) -> AnswerSet:
    """Run the full pipeline on one question.

    Mentions above the threshold are linked and re-ranked; the mention owning
    the best re-ranked entity defines the question pattern and the candidate
    list for pair selection; the selected pairs are executed, per-answer
    scores summed, constraints applied, and the answers tied at the maximum
    score returned.  The returned set carries a ``trace`` attribute with the
    intermediate rankings for evaluation.
    """
    tokens = tokenize(question)
    trace = PipelineTrace(tokens=tokens)
    mentions = mention_detector.detect(tokens, kb, theta=theta)
    trace.mentions = mentions
    if not mentions:
        matched = any(kb.lookup_entities(" ".join(tokens[s:e])) for s, e in
                      enumerate_spans(len(tokens), mention_detector.max_span))
        reason = "no-mention" if matched else "no-kb-match"
        empty = AnswerSet(reason=reason)
        empty.trace = trace
        return empty

    best = None  # (sort key, mention, reranked list, pattern)
    pooled: dict[str, EntityCandidate] = {}
    for m in mentions:
        candidates = linker_model.rank(tokens, m.span, kb)
        if not candidates:
            continue
        pattern = make_pattern(tokens, m.span)
        reranked = rerank(candidates, m.prob, relation_detector, pattern, kb)
        for cand in reranked:
            held = pooled.get(cand.entity_id)
            if held is None or (-cand.rerank_score, -cand.fact_count) < (
                    -held.rerank_score, -held.fact_count):
                pooled[cand.entity_id] = cand
        top = reranked[0]
        key = (-top.rerank_score, -top.fact_count, top.entity_id,
               -(m.span[1] - m.span[0]), m.span[0])
        if best is None or key < best[0]:
            best = (key, m, reranked, pattern)
    trace.pooled_ranking = sorted(pooled.values(),
                                  key=lambda c: (-c.rerank_score, -c.fact_count,
                                                 c.entity_id))
    if best is None:
        empty = AnswerSet(reason="no-candidates")
        empty.trace = trace
        return empty

    _, mention_used, reranked, pattern = best
    trace.mention_used = mention_used
    trace.pattern = pattern
    pairs = select_pairs(reranked, relation_detector, pattern, kb, n_pairs)
    trace.pairs = pairs

    answer_set = AnswerSet()
    for pair in pairs:
        for ans, paths in kb.execute_paths(pair.entity_id, pair.chain).items():
            answer_set.scores[ans] = answer_set.scores.get(ans, 0.0) + pair.pair_score
            answer_set.provenance.setdefault(ans, []).append(
                PairProvenance(pair.entity_id, pair.chain, paths, pair.pair_score))
    trace.unconstrained_scores = dict(answer_set.scores)

    if use_constraints:
        constraints = detect_constraints(tokens, [p.chain for p in pairs],
                                         constraint_table)
        answer_set = apply_constraints(answer_set, constraints, kb)
    if answer_set.scores:
        top_score = max(answer_set.scores.values())
        answer_set = answer_set.copy_filtered(
            a for a, s in answer_set.scores.items() if s == top_score)
    answer_set.trace = trace
    return answer_set


@dataclass
class PipelineTrace:
    """Intermediate pipeline state kept for metrics and debugging."""

    tokens: list[str] = field(default_factory=list)
    mentions: list = field(default_factory=list)
    pooled_ranking: list[EntityCandidate] = field(default_factory=list)
    mention_used: object | None = None
    pattern: list[str] | None = None
    pairs: list[PairCandidate] = field(default_factory=list)
    unconstrained_scores: dict[str, float] = field(default_factory=dict)
