"""Naive reference implementations used as independent test oracles.

Everything here is deliberately brute force (plain recursion, flat
enumeration, no memoization, no multiplicity bookkeeping) so that
agreement with the library is evidence, not tautology.
"""

import math


def all_words(m, n):
    """All length-n words over 1..m by plain recursion, lexicographic."""
    if n == 0:
        return [()]
    return [w + (i,) for w in all_words(m, n - 1) for i in range(1, m + 1)]


def word_forward(maps, w, s):
    """phi_w(s) applying the last symbol first."""
    for i in reversed(w):
        s = maps[i - 1](s)
    return s


def word_reversed(maps, w, s):
    for i in w:
        s = maps[i - 1](s)
    return s


def iterated_branch_sum(K, maps, s, t, n):
    """(L^n K)(s, t) by direct recursion, no sharing."""
    if n == 0:
        return K(s, t)
    return math.fsum(
        iterated_branch_sum(K, maps, f(s), f(t), n - 1) for f in maps
    )


def word_sum(K, maps, s, t, n):
    """(L^n K)(s, t) as a flat sum over words."""
    m = len(maps)
    return math.fsum(
        K(word_forward(maps, w, s), word_forward(maps, w, t))
        for w in all_words(m, n)
    )


def diagonal_word_sum(K, maps, s, n):
    m = len(maps)
    return math.fsum(
        K(word_forward(maps, w, s), word_forward(maps, w, s))
        for w in all_words(m, n)
    )
