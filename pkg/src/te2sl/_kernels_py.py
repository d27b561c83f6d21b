"""Pure-Python reference kernels; used when the compiled extension is unavailable."""

from __future__ import annotations

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK
    return h


def edit_counts(ref, hyp) -> tuple[int, int, int, int]:
    """(matches, substitutions, deletions, insertions) of one minimal alignment.

    Backtrace prefers match, then substitution, deletion, insertion.
    """
    ref = list(ref)
    hyp = list(hyp)
    n, m = len(ref), len(hyp)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dp[i][0] = i
    for j in range(m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        ri = ref[i - 1]
        row, prev = dp[i], dp[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if ri == hyp[j - 1] else 1)
            dele = prev[j] + 1
            ins = row[j - 1] + 1
            row[j] = min(sub, dele, ins)
    i, j = n, m
    hits = subs = dels = inss = 0
    while i > 0 or j > 0:
        cur = dp[i][j]
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dp[i - 1][j - 1] == cur:
            hits += 1
            i -= 1
            j -= 1
        elif i > 0 and j > 0 and dp[i - 1][j - 1] + 1 == cur:
            subs += 1
            i -= 1
            j -= 1
        elif i > 0 and dp[i - 1][j] + 1 == cur:
            dels += 1
            i -= 1
        else:
            inss += 1
            j -= 1
    return hits, subs, dels, inss
