# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: FNV-1a checksum and edit-distance alignment counts."""

from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport malloc, free


def fnv1a64(const unsigned char[::1] data):
    cdef uint64_t h = 0xCBF29CE484222325ULL
    cdef Py_ssize_t i, n = data.shape[0]
    with nogil:
        for i in range(n):
            h = (h ^ data[i]) * 0x100000001B3ULL
    return h


def edit_counts(ref, hyp):
    cdef Py_ssize_t n = len(ref), m = len(hyp)
    cdef Py_ssize_t i, j, w = m + 1
    cdef int64_t *a = <int64_t *> malloc((n + 1) * sizeof(int64_t))
    cdef int64_t *b = <int64_t *> malloc((m + 1) * sizeof(int64_t))
    cdef int64_t *dp = <int64_t *> malloc((n + 1) * (m + 1) * sizeof(int64_t))
    cdef int64_t sub, dele, ins, cur, best
    cdef long hits = 0, subs = 0, dels = 0, inss = 0
    if a == NULL or b == NULL or dp == NULL:
        free(a); free(b); free(dp)
        raise MemoryError()
    try:
        # sequences are compared by identity class: map items to dense ints
        codes = {}
        for i in range(n):
            a[i] = codes.setdefault(ref[i], len(codes))
        for j in range(m):
            b[j] = codes.setdefault(hyp[j], len(codes))
        for i in range(n + 1):
            dp[i * w] = i
        for j in range(m + 1):
            dp[j] = j
        for i in range(1, n + 1):
            for j in range(1, m + 1):
                sub = dp[(i - 1) * w + j - 1] + (0 if a[i - 1] == b[j - 1] else 1)
                dele = dp[(i - 1) * w + j] + 1
                ins = dp[i * w + j - 1] + 1
                best = sub
                if dele < best:
                    best = dele
                if ins < best:
                    best = ins
                dp[i * w + j] = best
        i = n
        j = m
        while i > 0 or j > 0:
            cur = dp[i * w + j]
            if i > 0 and j > 0 and a[i - 1] == b[j - 1] and dp[(i - 1) * w + j - 1] == cur:
                hits += 1
                i -= 1
                j -= 1
            elif i > 0 and j > 0 and dp[(i - 1) * w + j - 1] + 1 == cur:
                subs += 1
                i -= 1
                j -= 1
            elif i > 0 and dp[(i - 1) * w + j] + 1 == cur:
                dels += 1
                i -= 1
            else:
                inss += 1
                j -= 1
    finally:
        free(a)
        free(b)
        free(dp)
    return hits, subs, dels, inss
