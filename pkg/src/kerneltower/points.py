"""Branch systems, word combinatorics, and orbit closures.

Points are opaque hashable Python values (strings, ints, tuples); a branch
system is an ordered family of total self-maps phi_1..phi_m acting on them.
Words are tuples of 1-based symbols.  The forward composition applies the
last symbol's map first (phi_w = phi_{i1} o ... o phi_{in}); the reversed
composition applies the first symbol's map first.

All enumerations are deterministic (lexicographic) and guarded by an
explicit cap so that exponential blow-ups surface as resource errors
instead of silent memory exhaustion.
"""

from __future__ import annotations

import itertools
from typing import Callable, Hashable, Iterable, Iterator, Sequence

from .errors import InputError, ResourceError

Point = Hashable
Word = tuple[int, ...]

# Default ceiling on enumerated words / orbit applications.
DEFAULT_WORD_CAP = 2**24

EMPTY_WORD: Word = ()


def point_label(s: Point) -> str:
    """Human-readable label; word-tuples render as digit strings."""
    if isinstance(s, tuple):
        return "".join(str(i) for i in s) if s else "<>"
    if s == "" or s is None:
        return "<>"
    return str(s)


class BranchSystem:
    """A finite family of self-maps phi_1..phi_m on a point universe."""

    def __init__(self, maps: Sequence[Callable[[Point], Point]], name: str = ""):
        if len(maps) < 1:
            raise InputError("a branch system needs at least one map")
        self.maps = tuple(maps)
        self.m = len(maps)
        self.name = name or f"branch-system(m={self.m})"

    def __repr__(self):
        return f"BranchSystem({self.name})"

    def apply(self, i: int, s: Point) -> Point:
        """Apply phi_i (1-based symbol)."""
        if not 1 <= i <= self.m:
            raise InputError(f"symbol {i} out of range 1..{self.m}")
        return self.maps[i - 1](s)

    def children(self, s: Point) -> list[Point]:
        """[phi_1(s), ..., phi_m(s)]."""
        return [f(s) for f in self.maps]

    def forward(self, w: Word, s: Point) -> Point:
        """phi_w(s) = phi_{i1}(phi_{i2}(...phi_{in}(s)...)); empty word is identity."""
        for i in reversed(w):
            s = self.apply(i, s)
        return s

    def reversed(self, w: Word, s: Point) -> Point:
        """Reversed composition: phi_{in}(...phi_{i1}(s)...); empty word is identity."""
        for i in w:
            s = self.apply(i, s)
        return s


def compose_forward(branch: BranchSystem, w: Word, s: Point) -> Point:
    return branch.forward(w, s)


def compose_reversed(branch: BranchSystem, w: Word, s: Point) -> Point:
    return branch.reversed(w, s)


def check_word_cap(m: int, n: int, cap: int = DEFAULT_WORD_CAP) -> int:
    """Number of length-n words, or a resource error when it exceeds the cap."""
    count = m**n
    if count > cap:
        raise ResourceError(
            f"enumerating {m}^{n} = {count} words exceeds the cap {cap}"
        )
    return count


def enumerate_words(m: int, n: int, cap: int = DEFAULT_WORD_CAP) -> list[Word]:
    """All m^n words of length n, lexicographically ordered."""
    if n < 0:
        raise InputError("word length must be nonnegative")
    check_word_cap(m, n, cap)
    return list(itertools.product(range(1, m + 1), repeat=n))


def iter_words(m: int, n: int, cap: int = DEFAULT_WORD_CAP) -> Iterator[Word]:
    """Lazy lexicographic enumeration with the same cap as enumerate_words."""
    check_word_cap(m, n, cap)
    return itertools.product(range(1, m + 1), repeat=n)


def orbit_points_by_level(
    branch: BranchSystem, s: Point, n: int, cap: int = DEFAULT_WORD_CAP
) -> list[list[Point]]:
    """Level k holds phi_w(s) for all words |w| = k, in word-lexicographic order.

    Duplicates are kept, so level k has exactly m^k entries and entry j of
    level k corresponds to the j-th word of enumerate_words(m, k).
    """
    check_word_cap(branch.m, n, cap)
    levels = [[s]]
    for _ in range(n):
        prev = levels[-1]
        # phi_{(i,)+w}(s) = phi_i(phi_w(s)): new symbol outermost, so the
        # lexicographic word order is preserved by iterating symbols outermost.
        levels.append([f(p) for f in branch.maps for p in prev])
    return levels


def orbit_closure(
    branch: BranchSystem,
    base: Iterable[Point],
    depth: int,
    cap: int = DEFAULT_WORD_CAP,
) -> list[Point]:
    """All points phi_w(s), s in base, |w| <= depth, deduplicated.

    Insertion-ordered (base points first, then by level and word order).
    The reversed compositions contribute no new points: over all words of a
    fixed length they produce the same set as the forward compositions.
    """
    if depth < 0:
        raise InputError("orbit depth must be nonnegative")
    seen: dict[Point, None] = dict.fromkeys(base)
    frontier = list(seen)
    budget = cap
    for _ in range(depth):
        nxt = []
        for s in frontier:
            for f in branch.maps:
                budget -= 1
                if budget < 0:
                    raise ResourceError(
                        f"orbit closure exceeded the cap of {cap} map applications"
                    )
                t = f(s)
                if t not in seen:
                    seen[t] = None
                    nxt.append(t)
        if not nxt:
            break
        frontier = nxt
    return list(seen)
