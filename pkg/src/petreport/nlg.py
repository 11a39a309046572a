"""Text-overlap metrics for generated reports.

BLEU is corpus-level (n-gram counts pooled before the geometric mean)
and reported on a 0..100 scale. ROUGE-L and METEOR are per-pair on 0..1
and averaged over the corpus by the harness helpers. Segmentation is
pluggable so the same metrics serve whitespace languages and CJK text.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import UndefinedMetricError

Tokens = List[str]

METEOR_ALPHA = 0.9   # recall weight in the harmonic mean
METEOR_BETA = 3.0    # fragmentation exponent
METEOR_GAMMA = 0.5   # fragmentation weight


# ---------------------------------------------------------------------------
# segmentation


def _is_cjk(ch: str) -> bool:
    code = ord(ch)
    return (
        0x4E00 <= code <= 0x9FFF      # CJK unified ideographs
        or 0x3400 <= code <= 0x4DBF   # extension A
        or 0xF900 <= code <= 0xFAFF   # compatibility ideographs
        or 0x3040 <= code <= 0x30FF   # kana
        or 0xAC00 <= code <= 0xD7AF   # hangul syllables
    )


def segment_tokens(text: str, mode: str = "whitespace",
                   dictionary: Optional[Sequence[str]] = None) -> Tokens:
    """Split text into tokens.

    whitespace mode splits on unicode whitespace. cjk mode additionally
    breaks ideographic runs, preferring the longest dictionary entry at
    each position and falling back to single characters.
    """
    if mode == "whitespace":
        return text.split()
    if mode != "cjk":
        raise ValueError(f"unknown segmentation mode: {mode!r}")
    words = sorted({w for w in (dictionary or ()) if w}, key=len, reverse=True)
    tokens: Tokens = []
    for chunk in text.split():
        i = 0
        while i < len(chunk):
            if not _is_cjk(chunk[i]):
                j = i + 1
                while j < len(chunk) and not _is_cjk(chunk[j]):
                    j += 1
                tokens.append(chunk[i:j])
                i = j
                continue
            for w in words:
                if chunk.startswith(w, i):
                    tokens.append(w)
                    i += len(w)
                    break
            else:
                tokens.append(chunk[i])
                i += 1
    return tokens


def _paired(candidates, references, what: str):
    if len(candidates) != len(references):
        raise UndefinedMetricError(
            f"{what} needs paired corpora, got {len(candidates)} candidates "
            f"vs {len(references)} references"
        )
    if not candidates:
        raise UndefinedMetricError(f"{what} is undefined on an empty corpus")


# ---------------------------------------------------------------------------
# BLEU


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(candidates: Sequence[str], references: Sequence[str], n: int = 4,
           mode: str = "whitespace") -> float:
    """Corpus BLEU-n in [0, 100].

    Modified n-gram precisions are pooled over all pairs; any order with
    zero matches (or no n-grams at all) zeroes the score, there is no
    smoothing. Brevity penalty uses total corpus lengths.
    """
    _paired(candidates, references, "BLEU")
    if not 1 <= n <= 4:
        raise UndefinedMetricError(f"BLEU order must lie in [1, 4], got {n}")
    cand_tokens = [segment_tokens(c, mode) for c in candidates]
    ref_tokens = [segment_tokens(r, mode) for r in references]
    log_sum = 0.0
    for k in range(1, n + 1):
        matched = total = 0
        for ct, rt in zip(cand_tokens, ref_tokens):
            counts, ref_counts = _ngram_counts(ct, k), _ngram_counts(rt, k)
            matched += sum(min(cnt, ref_counts[g]) for g, cnt in counts.items())
            total += max(len(ct) - k + 1, 0)
        if matched == 0 or total == 0:
            return 0.0
        log_sum += math.log(matched / total)
    c_len = sum(len(t) for t in cand_tokens)
    r_len = sum(len(t) for t in ref_tokens)
    if c_len == 0:
        return 0.0
    brevity = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return 100.0 * brevity * math.exp(log_sum / n)


# ---------------------------------------------------------------------------
# ROUGE-L


def _lcs_len(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str, mode: str = "whitespace") -> float:
    """LCS F-score in [0, 1]; two empty texts count as a perfect match."""
    ct, rt = segment_tokens(candidate, mode), segment_tokens(reference, mode)
    if not ct and not rt:
        return 1.0
    if not ct or not rt:
        return 0.0
    lcs = _lcs_len(ct, rt)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(ct), lcs / len(rt)
    return 2.0 * p * r / (p + r)


# ---------------------------------------------------------------------------
# METEOR


def _align_exact(cand: Tokens, ref: Tokens) -> List[Tuple[int, int]]:
    # each candidate token takes the first unmatched identical reference token
    taken = [False] * len(ref)
    pairs = []
    for i, tok in enumerate(cand):
        for j, rtok in enumerate(ref):
            if not taken[j] and tok == rtok:
                taken[j] = True
                pairs.append((i, j))
                break
    return pairs


def meteor(candidate: str, reference: str, mode: str = "whitespace") -> float:
    """Exact-match METEOR in [0, 1]; zero matches score 0."""
    ct, rt = segment_tokens(candidate, mode), segment_tokens(reference, mode)
    pairs = _align_exact(ct, rt)
    m = len(pairs)
    if m == 0:
        return 0.0
    p, r = m / len(ct), m / len(rt)
    f_mean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r)
    chunks = 1
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        if i1 != i0 + 1 or j1 != j0 + 1:
            chunks += 1
    penalty = METEOR_GAMMA * (chunks / m) ** METEOR_BETA
    return f_mean * (1.0 - penalty)


# ---------------------------------------------------------------------------
# corpus helpers


def corpus_rouge_l(candidates, references, mode: str = "whitespace") -> float:
    _paired(candidates, references, "ROUGE-L")
    return sum(rouge_l(c, r, mode) for c, r in zip(candidates, references)) / len(candidates)


def corpus_meteor(candidates, references, mode: str = "whitespace") -> float:
    _paired(candidates, references, "METEOR")
    return sum(meteor(c, r, mode) for c, r in zip(candidates, references)) / len(candidates)


def nlg_metrics(candidates, references, mode: str = "whitespace") -> Dict[str, float]:
    """Every text metric on the external 0..100 scale, keyed for reports."""
    out = {f"bleu{k}": bleu_n(candidates, references, k, mode) for k in (1, 2, 3, 4)}
    out["rouge_l"] = 100.0 * corpus_rouge_l(candidates, references, mode)
    out["meteor"] = 100.0 * corpus_meteor(candidates, references, mode)
    return out
