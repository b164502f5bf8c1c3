"""QA dataset records and the TSV ingest/write round trip.

Line format (UTF-8, ``#`` comments allowed):

    question \t gold_entity_id \t mention_start \t mention_end \t
    chain(pipe-joined predicates) \t answers(comma-joined)

Mention offsets are character offsets into the question text.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import FileFormatError
from .features import tokenize_with_offsets
from .kb import Chain, Kb


@dataclass
class QaExample:
    qid: str
    question: str
    entity_id: str
    mention_start: int
    mention_end: int
    chain: Chain
    answers: frozenset[str]

    def token_span(self) -> tuple[int, int] | None:
        """Token span of the mention: tokens overlapping the char range."""
        covered = [i for i, (_, s, e) in enumerate(tokenize_with_offsets(self.question))
                   if s < self.mention_end and e > self.mention_start]
        if not covered:
            return None
        return covered[0], covered[-1] + 1


@dataclass
class DropReport:
    total: int = 0
    kept: int = 0
    dropped: list[tuple[str, str]] = field(default_factory=list)  # (qid, entity_id)

    def summary(self) -> str:
        return f"{self.kept}/{self.total} examples kept, {len(self.dropped)} dropped"


def parse_line(path, line_no: int, line: str, qid: str) -> QaExample:
    parts = line.split("\t")
    if len(parts) != 6:
        raise FileFormatError(path, line_no,
                              f"expected 6 tab-separated fields, got {len(parts)}")
    question, entity_id, start_s, end_s, chain_s, answers_s = parts
    try:
        start, end = int(start_s), int(end_s)
    except ValueError:
        raise FileFormatError(path, line_no, "mention offsets must be integers")
    if not (0 <= start < end <= len(question)):
        raise FileFormatError(path, line_no,
                              f"mention offsets [{start}, {end}) outside question")
    chain = tuple(p for p in chain_s.split("|") if p)
    if not chain:
        raise FileFormatError(path, line_no, "empty chain")
    answers = frozenset(a for a in answers_s.split(",") if a)
    return QaExample(qid=qid, question=question, entity_id=entity_id,
                     mention_start=start, mention_end=end, chain=chain,
                     answers=answers)


def ingest(path, kb: Kb) -> tuple[list[QaExample], DropReport]:
    """Parse a dataset file; items whose gold entity is missing are dropped."""
    examples: list[QaExample] = []
    report = DropReport()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            report.total += 1
            ex = parse_line(path, line_no, line, qid=f"q{report.total:04d}")
            if ex.entity_id not in kb:
                report.dropped.append((ex.qid, ex.entity_id))
                continue
            report.kept += 1
            examples.append(ex)
    return examples, report


def format_line(ex: QaExample) -> str:
    return "\t".join([
        ex.question,
        ex.entity_id,
        str(ex.mention_start),
        str(ex.mention_end),
        "|".join(ex.chain),
        ",".join(sorted(ex.answers)),
    ])


def write_examples(path, examples) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(format_line(ex) + "\n")
