"""Token error rate and OOV recall over Levenshtein alignments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .kernels import edit_counts


@dataclass(frozen=True)
class EditCounts:
    n: int
    s: int = 0
    d: int = 0
    i: int = 0

    @property
    def errors(self) -> int:
        return self.s + self.d + self.i

    @property
    def matches(self) -> int:
        return self.n - self.s - self.d

    def __add__(self, other: "EditCounts") -> "EditCounts":
        return EditCounts(self.n + other.n, self.s + other.s, self.d + other.d, self.i + other.i)


def levenshtein_counts(ref: Sequence, hyp: Sequence) -> EditCounts:
    """Unit-cost alignment counts; backtrace prefers match > sub > del > ins."""
    _, s, d, i = edit_counts(list(ref), list(hyp))
    return EditCounts(len(ref), s, d, i)


def pool(counts: Iterable[EditCounts]) -> EditCounts:
    total = EditCounts(0)
    for c in counts:
        total = total + c
    return total


def error_rate(counts: EditCounts | Iterable[EditCounts]) -> float:
    """(S + D + I) / N, pooled over utterances before dividing."""
    c = counts if isinstance(counts, EditCounts) else pool(counts)
    if c.n == 0:
        raise ValueError("error rate undefined for an empty reference")
    return c.errors / c.n


def filter_oov(tokens: Sequence, vocab: set) -> list:
    return [t for t in tokens if t not in vocab]


def oov_counts(ref: Sequence, hyp: Sequence, vocab: set) -> EditCounts:
    """Align the OOV-only subsequences of ref and hyp (tokens outside ``vocab``)."""
    return levenshtein_counts(filter_oov(ref, vocab), filter_oov(hyp, vocab))


@dataclass(frozen=True)
class OovRecall:
    value: float | None  # None when the references hold no OOV tokens
    counts: EditCounts
    per_utterance: tuple[EditCounts, ...]

    @property
    def defined(self) -> bool:
        return self.value is not None


def oov_recall(refs: Sequence[Sequence], hyps: Sequence[Sequence], vocab: set) -> OovRecall:
    """(N - S - D) / N over OOV-filtered alignments; insertions are ignored."""
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references vs {len(hyps)} hypotheses")
    per = tuple(oov_counts(r, h, vocab) for r, h in zip(refs, hyps))
    total = pool(per)
    value = None if total.n == 0 else (total.n - total.s - total.d) / total.n
    return OovRecall(value, total, per)
