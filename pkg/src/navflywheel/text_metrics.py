"""Instruction-similarity metrics.

BLEU, ROUGE-L and CIDEr follow their usual caption-evaluation definitions.
``proposition_f1`` compares parsed propositions, with synonyms mapped to
landmark ids; its directional mode also scores the order of turns.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

from .lang import Instruction, edit_similarity, parse

BLEU_EPS = 1e-9
ROUGE_BETA = 1.2
CIDER_SCALE = 10.0

Tokens = Sequence[str]


@dataclass(frozen=True)
class TextScores:
    bleu1: float
    bleu4: float
    rouge_l: float
    cider: float
    prop_f1: float
    prop_f1_dir: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def _toks(x: Instruction | Tokens) -> tuple[str, ...]:
    return tuple(x.tokens) if isinstance(x, Instruction) else tuple(x)


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: Instruction | Tokens, references: Sequence[Instruction | Tokens], n: int = 4) -> float:
    """Sentence BLEU with uniform weights over orders 1..n.

    Zero clipped counts are replaced by ``BLEU_EPS``. Orders for which the
    candidate has no n-grams at all are left out of the geometric mean.
    """
    if not references:
        raise ValueError("bleu needs at least one reference")
    cand = _toks(candidate)
    refs = [_toks(r) for r in references]
    if not cand:
        return 0.0
    log_sum = 0.0
    used = 0
    for k in range(1, n + 1):
        counts = ngrams(cand, k)
        total = sum(counts.values())
        if total == 0:
            continue
        max_ref: Counter = Counter()
        for r in refs:
            for g, c in ngrams(r, k).items():
                max_ref[g] = max(max_ref[g], c)
        clipped = sum(min(c, max_ref[g]) for g, c in counts.items())
        log_sum += math.log((clipped if clipped > 0 else BLEU_EPS) / total)
        used += 1
    c = len(cand)
    r = min((abs(len(x) - c), len(x)) for x in refs)[1]
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / used)


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Instruction | Tokens, references: Sequence[Instruction | Tokens], beta: float = ROUGE_BETA) -> float:
    cand = _toks(candidate)
    best = 0.0
    for ref in references:
        r = _toks(ref)
        lcs = lcs_length(cand, r)
        if lcs == 0:
            continue
        prec, rec = lcs / len(cand), lcs / len(r)
        f = (1 + beta**2) * prec * rec / (rec + beta**2 * prec)
        best = max(best, f)
    return best


def cider(corpus: Sequence[tuple[Instruction | Tokens, Sequence[Instruction | Tokens]]], n: int = 4) -> list[float]:
    """Per-item CIDEr; document frequencies come from the references."""
    if len(corpus) < 2:
        raise ValueError("cider needs a corpus of at least two items")
    items = [(_toks(c), [_toks(r) for r in refs]) for c, refs in corpus]
    log_n = math.log(float(len(items)))
    df: Counter = Counter()
    for _, refs in items:
        seen = set()
        for r in refs:
            for k in range(1, n + 1):
                seen.update(ngrams(r, k))
        df.update(seen)

    def vec(tokens: Tokens, k: int) -> tuple[dict, float]:
        v = {g: c * (log_n - math.log(max(1.0, df[g]))) for g, c in ngrams(tokens, k).items()}
        return v, math.sqrt(sum(x * x for x in v.values()))

    scores = []
    for cand, refs in items:
        total = 0.0
        for k in range(1, n + 1):
            cv, cn = vec(cand, k)
            sims = []
            for r in refs:
                rv, rn = vec(r, k)
                dot = sum(x * rv.get(g, 0.0) for g, x in cv.items())
                sims.append(dot / (cn * rn) if cn > 0 and rn > 0 else 0.0)
            total += sum(sims) / len(sims)
        scores.append(CIDER_SCALE * total / n)
    return scores


def set_f1(cand: frozenset, ref: frozenset) -> float:
    if not cand and not ref:
        return 1.0
    hit = len(cand & ref)
    if hit == 0:
        return 0.0
    p, r = hit / len(cand), hit / len(ref)
    return 2 * p * r / (p + r)


def _harmonic(a: float, b: float) -> float:
    return 0.0 if a + b == 0 else 2 * a * b / (a + b)


def proposition_f1(candidate: Instruction, references: Sequence[Instruction], directional: bool = False) -> float:
    """Best-reference proposition F1; raises on unparseable input."""
    if not references:
        raise ValueError("proposition_f1 needs at least one reference")
    _, cp = parse(candidate)
    best = 0.0
    for ref in references:
        _, rp = parse(ref)
        f = set_f1(cp.semantic, rp.semantic)
        if directional:
            f = _harmonic(f, edit_similarity(cp.directional, rp.directional))
        best = max(best, f)
    return best


def text_scores(
    candidates: Sequence[Instruction], references: Sequence[Sequence[Instruction]]
) -> list[TextScores]:
    """All text metrics for a corpus of (candidate, references) items."""
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    ciders = cider(list(zip(candidates, references)))
    return [
        TextScores(
            bleu1=bleu(c, refs, 1),
            bleu4=bleu(c, refs, 4),
            rouge_l=rouge_l(c, refs),
            cider=cd,
            prop_f1=proposition_f1(c, refs),
            prop_f1_dir=proposition_f1(c, refs, directional=True),
        )
        for c, refs, cd in zip(candidates, references, ciders)
    ]
