"""Answer-quality metrics: token F1, BLEU-1, ROUGE-L and embedding similarity.

All metrics are pure functions of their inputs. Tokens are lowercased
whitespace tokens with surrounding punctuation stripped.
"""

from __future__ import annotations

import math
import string
from collections import Counter
from collections.abc import Iterable
from dataclasses import asdict, dataclass

from ..vector_index import Embedder, cosine


@dataclass(frozen=True)
class MetricSet:
    f1: float = 0.0
    bleu1: float = 0.0
    rouge_l: float = 0.0
    embed_sim: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def mean(cls, sets: Iterable[MetricSet]) -> MetricSet:
        rows = list(sets)
        if not rows:
            return cls()
        return cls(
            *(
                math.fsum(getattr(r, f) for r in rows) / len(rows)
                for f in ("f1", "bleu1", "rouge_l", "embed_sim")
            )
        )


def tokens(text: str) -> list[str]:
    return [t for w in text.lower().split() if (t := w.strip(string.punctuation))]


def token_f1(pred: str, ref: str) -> float:
    p, r = tokens(pred), tokens(ref)
    if not p or not r:
        return 0.0
    common = sum((Counter(p) & Counter(r)).values())
    if not common:
        return 0.0
    precision, recall = common / len(p), common / len(r)
    return 2 * precision * recall / (precision + recall)


def bleu1(pred: str, ref: str) -> float:
    """Clipped unigram precision times the brevity penalty."""

    p, r = tokens(pred), tokens(ref)
    if not p or not r:
        return 0.0
    clipped = sum((Counter(p) & Counter(r)).values())
    brevity = math.exp(min(0.0, 1 - len(r) / len(p)))
    return brevity * clipped / len(p)


def lcs_length(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        row = [0]
        for j, y in enumerate(b, start=1):
            row.append(prev[j - 1] + 1 if x == y else max(prev[j], row[j - 1]))
        prev = row
    return prev[-1]


def rouge_l(pred: str, ref: str) -> float:
    p, r = tokens(pred), tokens(ref)
    if not p or not r:
        return 0.0
    lcs = lcs_length(p, r)
    if not lcs:
        return 0.0
    precision, recall = lcs / len(p), lcs / len(r)
    return 2 * precision * recall / (precision + recall)


def embed_sim(pred: str, ref: str, embedder: Embedder) -> float:
    if not pred.strip() or not ref.strip():
        return 0.0
    return cosine(embedder.embed(pred), embedder.embed(ref))


def score_answer(pred: str, ref: str, embedder: Embedder | None = None) -> MetricSet:
    return MetricSet(
        f1=token_f1(pred, ref),
        bleu1=bleu1(pred, ref),
        rouge_l=rouge_l(pred, ref),
        embed_sim=embed_sim(pred, ref, embedder) if embedder else 0.0,
    )
