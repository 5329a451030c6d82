"""Brute-force reference implementations used as test oracles.

These are written from the metric definitions without sharing code with
the package, and favour obviousness over speed.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

# ---------------------------------------------------------------- paths


def monotone_alignments(n: int, m: int):
    """Every warping path from (0, 0) to (n-1, m-1) with unit steps."""
    def walk(i, j):
        if (i, j) == (n - 1, m - 1):
            yield [(i, j)]
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            a, b = i + di, j + dj
            if a < n and b < m:
                for rest in walk(a, b):
                    yield [(i, j)] + rest
    yield from walk(0, 0)


def dtw_brute(ref, query) -> float:
    return min(
        sum(math.dist(ref[i], query[j]) for i, j in path)
        for path in monotone_alignments(len(ref), len(query))
    )


# ---------------------------------------------------------------- text


def grams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def bleu_brute(cand, refs, n, eps=1e-9) -> float:
    logs = []
    for k in range(1, n + 1):
        cg = grams(cand, k)
        if not cg:
            continue
        clipped = 0
        for g in set(cg):
            clipped += min(cg.count(g), max(grams(r, k).count(g) for r in refs))
        logs.append(math.log(max(clipped, 0) / len(cg)) if clipped else math.log(eps / len(cg)))
    c = len(cand)
    closest = sorted(refs, key=lambda r: (abs(len(r) - c), len(r)))[0]
    bp = 1.0 if c > len(closest) else math.exp(1 - len(closest) / c)
    return bp * math.exp(sum(logs) / len(logs))


def is_subsequence(sub, seq) -> bool:
    it = iter(seq)
    return all(any(x == y for y in it) for x in sub)


def lcs_brute(a, b) -> int:
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for size in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), size):
            if is_subsequence([short[i] for i in idx], long_):
                return size
    return 0


def rouge_l_brute(cand, refs, beta=1.2) -> float:
    best = 0.0
    for r in refs:
        l = lcs_brute(cand, r)
        if l:
            p, rc = l / len(cand), l / len(r)
            best = max(best, (1 + beta**2) * p * rc / (rc + beta**2 * p))
    return best


def cider_brute(corpus, n=4) -> list[float]:
    """Dense TF-IDF vectors over the full n-gram vocabulary of each order."""
    N = len(corpus)
    out = np.zeros(N)
    for k in range(1, n + 1):
        vocab = sorted({g for c, refs in corpus for s in [c, *refs] for g in grams(s, k)})
        col = {g: i for i, g in enumerate(vocab)}
        df = np.array([sum(any(g in grams(r, k) for r in refs) for _, refs in corpus) for g in vocab], dtype=float)
        idf = np.log(N) - np.log(np.maximum(df, 1.0))

        def vec(s):
            v = np.zeros(len(vocab))
            for g in grams(s, k):
                v[col[g]] += 1.0
            return v * idf

        for i, (c, refs) in enumerate(corpus):
            cv = vec(c)
            sims = []
            for r in refs:
                rv = vec(r)
                denom = np.linalg.norm(cv) * np.linalg.norm(rv)
                sims.append(float(cv @ rv / denom) if denom > 0 else 0.0)
            out[i] += np.mean(sims)
    return list(10.0 * out / n)


SYNONYMS = {
    "cot": "bed", "couch": "sofa", "doorway": "door", "pane": "window", "light": "lamp",
    "refrigerator": "fridge", "stove": "oven", "galley": "kitchen", "carpet": "rug",
    "looking-glass": "mirror", "basin": "sink", "fern": "plant",
}


def props_brute(text: str):
    """Hand-rolled proposition extraction for the grammar's clause shapes."""
    sem, dirs = set(), []
    for clause in text.split(" , "):
        words = clause.split()
        if words[0] == "turn":
            dirs.append(words[-1])
        elif words[0] == "walk":
            sem.add((words[1], SYNONYMS.get(words[2], words[2])))
        elif len(words) == 3:
            sem.add(("at", SYNONYMS.get(words[2], words[2])))
    return sem, dirs


def levenshtein_brute(a, b) -> int:
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        levenshtein_brute(a[1:], b) + 1,
        levenshtein_brute(a, b[1:]) + 1,
        levenshtein_brute(a[1:], b[1:]) + (a[0] != b[0]),
    )


def prop_f1_brute(cand: str, refs: list[str], directional: bool) -> float:
    cs, cd = props_brute(cand)
    best = 0.0
    for r in refs:
        rs, rd = props_brute(r)
        if not cs and not rs:
            f = 1.0
        else:
            hit = len(cs & rs)
            f = 0.0 if hit == 0 else 2 * (hit / len(cs)) * (hit / len(rs)) / (hit / len(cs) + hit / len(rs))
        if directional:
            e = 1.0 if not cd and not rd else 1 - levenshtein_brute(cd, rd) / max(len(cd), len(rd))
            f = 0.0 if f + e == 0 else 2 * f * e / (f + e)
        best = max(best, f)
    return best


# frozen 10-item corpus: (candidate, references)
TEXT_CORPUS = [
    ("turn left , stop", ["turn right , stop"]),
    ("walk past bed , stop at sofa", ["walk past cot , stop at couch"]),
    ("turn left , walk past bed , stop", ["turn left , walk past bed , walk to lamp , stop"]),
    ("turn around , walk to door , stop at door", ["turn around , walk to doorway , stop at door", "turn right , walk past door , stop"]),
    ("walk toward sink , turn slightly right , walk past mirror , stop at rug", ["turn slightly right , walk past mirror , stop at carpet"]),
    ("stop", ["stop at plant", "stop"]),
    ("turn right , walk past fridge , turn left , walk past oven , stop at kitchen", ["turn left , walk past refrigerator , turn right , walk past stove , stop at galley"]),
    ("walk past tv , stop", ["turn left , walk to piano , stop at clock"]),
    ("turn left , walk past table , walk past chair , stop at lamp", ["turn left , walk past table , stop at lamp", "walk past chair , turn left , stop at light"]),
    ("turn slightly left , walk to window , stop at window", ["turn slightly left , walk to pane , stop at window"]),
]
