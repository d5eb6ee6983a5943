"""Caption similarity metrics over token sequences."""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from typing import Sequence

Tokens = Sequence[str]


def ngram_counts(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _all_ngrams(tokens: Tokens, max_n: int = 4) -> Counter:
    counts: Counter = Counter()
    for n in range(1, max_n + 1):
        counts.update(ngram_counts(tokens, n))
    return counts


def _closest_ref_len(c_len: int, refs: Sequence[Tokens]) -> int:
    return min((abs(len(r) - c_len), len(r)) for r in refs)[1]


# ---------------------------------------------------------------------------
# BLEU

def bleu4(candidate: Tokens, references: Sequence[Tokens]) -> float:
    """Sentence BLEU-4 with add-one smoothing on zero higher-order precisions.

    Brevity penalty uses the closest reference length (ties to the shorter).
    """
    if not references:
        raise ValueError("bleu4 needs at least one reference")
    c_len = len(candidate)
    if c_len == 0:
        return 0.0
    log_p = 0.0
    for n in range(1, 5):
        cand = ngram_counts(candidate, n)
        max_ref: Counter = Counter()
        for ref in references:
            for g, k in ngram_counts(ref, n).items():
                max_ref[g] = max(max_ref[g], k)
        matched = sum(min(k, max_ref[g]) for g, k in cand.items())
        total = max(0, c_len - n + 1)
        if n == 1 and matched == 0:
            return 0.0
        if matched == 0:
            p = 1.0 / (total + 1)
        else:
            p = matched / total
        log_p += math.log(p)
    r_len = _closest_ref_len(c_len, references)
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(log_p / 4.0)


def corpus_bleu4(pairs: Sequence[tuple[Tokens, Sequence[Tokens]]]) -> float:
    """Corpus-level BLEU-4 as computed by the COCO caption toolkit.

    Statistics are pooled over all (candidate, references) pairs with the
    closest-reference brevity rule and the toolkit's epsilon smoothing.
    """
    small, tiny = 1e-9, 1e-15
    testlen = reflen = 0
    guess = [0] * 4
    correct = [0] * 4
    for cand, refs in pairs:
        maxcounts: dict = {}
        for ref in refs:
            for g, k in _all_ngrams(ref).items():
                maxcounts[g] = max(maxcounts.get(g, 0), k)
        c_len = len(cand)
        testlen += c_len
        reflen += _closest_ref_len(c_len, refs)
        for k in range(4):
            guess[k] += max(0, c_len - k)
        for g, k in _all_ngrams(cand).items():
            correct[len(g) - 1] += min(maxcounts.get(g, 0), k)
    bleu = 1.0
    for k in range(4):
        bleu *= (correct[k] + tiny) / (guess[k] + small)
    score = bleu ** 0.25
    ratio = (testlen + tiny) / (reflen + small)
    if ratio < 1:
        score *= math.exp(1 - 1 / ratio)
    return score


# ---------------------------------------------------------------------------
# METEOR (exact-match stage)

METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5
_SEARCH_BUDGET = 200_000


def _min_chunks(cand: Tokens, ref: Tokens) -> tuple[int, int]:
    """Maximum number of exact unigram matches and the fewest chunks among
    alignments achieving it."""
    ref_pos = defaultdict(list)
    for j, tok in enumerate(ref):
        ref_pos[tok].append(j)
    cand_count = Counter(cand)
    quota = {w: min(cand_count[w], len(ref_pos[w])) for w in cand_count if w in ref_pos}
    matches = sum(quota.values())
    if matches == 0:
        return 0, 0
    remaining = Counter(cand)  # occurrences of each token at or after position i
    best = [matches + 1]
    used = [False] * len(ref)
    budget = [_SEARCH_BUDGET]
    left = dict(quota)

    def dfs(i, prev_i, prev_j, chunks, matched):
        if chunks >= best[0]:
            return
        if matched == matches:
            best[0] = chunks
            return
        if i == len(cand) or budget[0] <= 0:
            return
        budget[0] -= 1
        w = cand[i]
        remaining[w] -= 1
        if left.get(w, 0) > 0:
            # try the continuation of the current chunk first
            order = sorted(ref_pos[w], key=lambda j: (j != prev_j + 1 or prev_i != i - 1, j))
            for j in order:
                if used[j]:
                    continue
                cont = prev_i == i - 1 and j == prev_j + 1
                used[j] = True
                left[w] -= 1
                dfs(i + 1, i, j, chunks + (0 if cont else 1), matched + 1)
                left[w] += 1
                used[j] = False
            if remaining[w] >= left[w]:
                dfs(i + 1, prev_i, prev_j, chunks, matched)
        else:
            dfs(i + 1, prev_i, prev_j, chunks, matched)
        remaining[w] += 1

    dfs(0, -2, -2, 0, 0)
    return matches, min(best[0], matches)


def _meteor_single(cand: Tokens, ref: Tokens) -> float:
    if not cand or not ref:
        return 0.0
    m, chunks = _min_chunks(cand, ref)
    if m == 0:
        return 0.0
    p = m / len(cand)
    r = m / len(ref)
    fmean = p * r / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * r)
    penalty = METEOR_GAMMA * (chunks / m) ** METEOR_BETA
    return fmean * (1 - penalty)


def meteor_lite(candidate: Tokens, references: Sequence[Tokens]) -> float:
    """METEOR restricted to exact unigram matching; best score over references."""
    if not references:
        raise ValueError("meteor_lite needs at least one reference")
    return max(_meteor_single(candidate, ref) for ref in references)


# ---------------------------------------------------------------------------
# CIDEr-D

class DegenerateIDFError(ValueError):
    pass


class CiderD:
    """CIDEr-D scorer with document frequencies from a fixed reference corpus.

    ``documents`` is a list of reference sets; each set counts once per n-gram.
    """

    def __init__(self, documents: Sequence[Sequence[Tokens]], n: int = 4, sigma: float = 6.0,
                 allow_degenerate: bool = False):
        if len(documents) < 2 and not allow_degenerate:
            raise DegenerateIDFError("degenerate IDF: the reference corpus needs at least 2 documents")
        self.n = n
        self.sigma = sigma
        self.df: Counter = Counter()
        for refs in documents:
            seen = set()
            for ref in refs:
                seen.update(_all_ngrams(ref, n))
            self.df.update(seen)
        self.ref_len = math.log(float(len(documents))) if documents else 0.0

    def _vec(self, tokens: Tokens):
        vec = [dict() for _ in range(self.n)]
        norm = [0.0] * self.n
        length = 0
        for g, tf in _all_ngrams(tokens, self.n).items():
            k = len(g) - 1
            w = float(tf) * (self.ref_len - math.log(max(1.0, self.df.get(g, 0.0))))
            vec[k][g] = w
            norm[k] += w * w
            if k == 1:
                length += tf
        return vec, [math.sqrt(x) for x in norm], length

    def _sim(self, hyp, ref):
        vec_h, norm_h, len_h = hyp
        vec_r, norm_r, len_r = ref
        delta = float(len_h - len_r)
        penalty = math.e ** (-(delta ** 2) / (2 * self.sigma ** 2))
        out = []
        for k in range(self.n):
            val = 0.0
            for g, w in vec_h[k].items():
                wr = vec_r[k].get(g, 0.0)
                val += min(w, wr) * wr
            if norm_h[k] != 0 and norm_r[k] != 0:
                val /= norm_h[k] * norm_r[k]
            out.append(val * penalty)
        return out

    def score(self, candidate: Tokens, references: Sequence[Tokens]) -> float:
        if not references:
            raise ValueError("CIDEr needs at least one reference")
        hyp = self._vec(candidate)
        acc = [0.0] * self.n
        for ref in references:
            for k, v in enumerate(self._sim(hyp, self._vec(ref))):
                acc[k] += v
        # numpy-compatible mean to keep parity with the reference toolkit
        mean = sum(acc) / self.n
        return mean / len(references) * 10.0


def cider(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]]) -> list[float]:
    """Per-video CIDEr-D, with IDF over the per-video reference sets."""
    if len(candidates) != len(references):
        raise ValueError("one reference set per candidate is required")
    scorer = CiderD(references)
    return [scorer.score(c, r) for c, r in zip(candidates, references)]
