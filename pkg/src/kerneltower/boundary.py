"""Doob-transformed boundary machinery on the symbolic path space.

A positive harmonic gauge turns the branch counts into transition
probabilities p_i(s) = h(phi_i(s))/h(s); cylinder masses extend them
multiplicatively along reversed compositions, the averaging operator Q is
intertwined with the branch-sum operator through the gauge, and the
gauge-normalized kernel operator admits a word expansion whose accumulated
defects are realized as an explicit boundary feature Gram.

Path convention: the chain applies the newest symbol's map to the current
point, s_{k+1} = phi_{w_{k+1}}(s_k), matching the reversed composition.
All shipped identities are level sums, which are convention independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InputError, ModelError
from .kernels import (
    DEFAULT_PSD_TOL,
    Gram,
    Kernel,
    apply_L,
    apply_L_power,
    gram,
    sqrt_factor,
)
from .points import (
    DEFAULT_WORD_CAP,
    BranchSystem,
    Point,
    Word,
    check_word_cap,
    point_label,
)
from .rngs import make_rng
from .tower import Tower


class DoobChain:
    """Transition probabilities from a positive harmonic gauge.

    The domain is the point set where the gauge is strictly positive and
    harmonicity has been verified; probabilities at domain points may push
    mass onto gauge-zero points, which then carry zero cylinder mass.
    """

    def __init__(
        self,
        gauge: Callable[[Point], float],
        branch: BranchSystem,
        domain: Sequence[Point],
        tol: float = 1e-9,
    ):
        self.branch = branch
        self.tol = tol
        self._gauge = gauge
        self.domain = tuple(domain)
        self._domain_set = set(self.domain)
        if not self.domain:
            raise InputError("Doob chain needs a nonempty domain")
        worst = 0.0
        worst_point = None
        for s in self.domain:
            hs = gauge(s)
            if not hs > 0.0:
                raise InputError(f"gauge not positive at {point_label(s)}: {hs!r}")
            residual = abs(math.fsum(gauge(f(s)) for f in branch.maps) - hs) / hs
            if residual > worst:
                worst, worst_point = residual, s
        if worst > tol:
            raise ModelError(
                f"gauge not harmonic: relative residual {worst:.3e} at "
                f"{point_label(worst_point)} exceeds {tol:.1e}"
            )
        self.harmonicity_residual = worst

    def h(self, s: Point) -> float:
        v = self._gauge(s)
        if v < 0.0:
            raise InputError(f"gauge negative at {point_label(s)}: {v!r}")
        return v

    def in_domain(self, s: Point) -> bool:
        return s in self._domain_set

    def require_domain(self, s: Point) -> None:
        if not self.in_domain(s):
            raise InputError(f"point {point_label(s)} outside the Doob domain")

    def probs(self, s: Point) -> list[float]:
        """[p_1(s), ..., p_m(s)]; needs h(s) > 0."""
        hs = self.h(s)
        if hs == 0.0:
            raise InputError(f"transition probabilities undefined at gauge zero {point_label(s)}")
        return [self.h(f(s)) / hs for f in self.branch.maps]

    def p(self, i: int, s: Point) -> float:
        return self.probs(s)[i - 1]


def build_doob(
    gauge: Callable[[Point], float],
    branch: BranchSystem,
    domain: Sequence[Point],
    tol: float = 1e-9,
) -> DoobChain:
    return DoobChain(gauge, branch, domain, tol)


def gauge_from_tower(tower: Tower) -> tuple[Callable[[Point], float], list[Point]]:
    """Surrogate gauge from the deepest computed diagonal.

    Returns the level-N diagonal as a function on the tower base, plus the
    sub-list of base points where it is positive.  Its harmonicity residual
    is bounded by the remaining diagonal tail, which the caller should
    budget via a tail certificate.
    """
    diag = {s: float(tower.levels[-1][a, a]) for a, s in enumerate(tower.points)}

    def h(s):
        try:
            return diag[s]
        except KeyError:
            raise InputError(
                f"surrogate gauge not computed at {point_label(s)}; widen the tower base"
            ) from None

    positive = [s for s in tower.points if diag[s] > 0.0]
    return h, positive


@dataclass
class CylinderTable:
    """Cylinder masses p_w(s) for all words up to a horizon."""

    anchor: Point
    horizon: int
    table: dict[Word, float]

    def mass(self, w: Word) -> float:
        try:
            return self.table[tuple(w)]
        except KeyError:
            raise InputError(f"word {w} beyond the table horizon {self.horizon}") from None

    def level_sum(self, k: int) -> float:
        return math.fsum(p for w, p in self.table.items() if len(w) == k)

    def level_items(self, k: int) -> list[tuple[Word, float]]:
        return [(w, p) for w, p in self.table.items() if len(w) == k]


def _walk_levels(chain: DoobChain, s: Point, n: int, cap: int):
    """Yield per level the list of (word, point, mass) in word-lexicographic order."""
    check_word_cap(chain.branch.m, n, cap)
    level = [((), s, 1.0)]
    yield level
    maps = chain.branch.maps
    for _ in range(n):
        nxt = []
        for w, x, p in level:
            if p == 0.0:
                children = [0.0] * len(maps)
            else:
                hx = chain.h(x)
                children = (
                    [chain.h(f(x)) / hx for f in maps] if hx > 0.0 else [0.0] * len(maps)
                )
            for i, f in enumerate(maps, start=1):
                nxt.append((w + (i,), f(x), p * children[i - 1]))
        level = nxt
        yield level


def _final_level(chain: DoobChain, s: Point, n: int, cap: int):
    level = None
    for level in _walk_levels(chain, s, n, cap):
        pass
    return level


def cylinder_measure(
    chain: DoobChain, s: Point, n: int, cap: int = DEFAULT_WORD_CAP
) -> CylinderTable:
    """All cylinder masses at anchor s down to word length n.

    Masses extend multiplicatively, p_{w i}(s) = p_w(s) * p_i(point at w),
    and equal h(reversed composition at w)/h(s); level sums are 1 up to the
    gauge's harmonicity residual.
    """
    chain.require_domain(s)
    table: dict[Word, float] = {}
    for level in _walk_levels(chain, s, n, cap):
        for w, _x, p in level:
            table[w] = p
    return CylinderTable(anchor=s, horizon=n, table=table)


@dataclass
class PathSample:
    word: Word
    points: list[Point]

    @property
    def step_count(self) -> int:
        return len(self.word)


def sample_path(chain: DoobChain, s: Point, n: int, seed: int) -> PathSample:
    """Draw one length-n chain path starting at s (seeded, reproducible)."""
    chain.require_domain(s)
    rng = make_rng(seed)
    word: list[int] = []
    points = [s]
    x = s
    for _ in range(n):
        probs = chain.probs(x)
        u = float(rng.random())
        acc = 0.0
        chosen = None
        for i, p in enumerate(probs, start=1):
            acc += p
            if u < acc and p > 0.0:
                chosen = i
                break
        if chosen is None:  # roundoff at the top end: last branch with mass
            chosen = max(i for i, p in enumerate(probs, start=1) if p > 0.0)
        word.append(chosen)
        x = chain.branch.apply(chosen, x)
        points.append(x)
    return PathSample(word=tuple(word), points=points)


def apply_Q(chain: DoobChain, f: Callable[[Point], float], s: Point) -> float:
    """(Qf)(s) = sum_i p_i(s) f(phi_i(s)): the chain's one-step average.

    Zero-probability branches (gauge-zero targets) are skipped, so f need
    only be defined where the chain can actually go.
    """
    chain.require_domain(s)
    probs = chain.probs(s)
    return math.fsum(
        p * f(g(s)) for p, g in zip(probs, chain.branch.maps) if p != 0.0
    )


def iterate_Q(chain: DoobChain, f: Callable[[Point], float], s: Point, n: int) -> float:
    """(Q^n f)(s) by memoized recursion over the branch tree."""
    maps = chain.branch.maps
    memo: dict = {}

    def q(k, x):
        if k == 0:
            return f(x)
        key = (k, x)
        v = memo.get(key)
        if v is None:
            hx = chain.h(x)
            if hx == 0.0:
                raise InputError(f"chain left the gauge-positive region at {point_label(x)}")
            terms = []
            for g in maps:
                y = g(x)
                hy = chain.h(y)
                if hy != 0.0:  # zero-probability branches contribute nothing
                    terms.append(hy / hx * q(k - 1, y))
            v = math.fsum(terms)
            memo[key] = v
        return v

    chain.require_domain(s)
    return q(n, s)


@dataclass
class IntertwiningResult:
    one_step_residual: float
    markov_residual: float


def intertwining_check(
    chain: DoobChain,
    f: Callable[[Point], float],
    s: Point,
    n: int,
    cap: int = DEFAULT_WORD_CAP,
) -> IntertwiningResult:
    """Residuals of the gauge intertwining and of the cylinder expectation.

    One step: branch sum of (gauge * f) against gauge times the chain
    average.  n steps: the iterated chain average against the exact finite
    sum over level-n cylinders.
    """
    chain.require_domain(s)
    p_hf = math.fsum(chain.h(g(s)) * f(g(s)) for g in chain.branch.maps)
    r1 = abs(p_hf - chain.h(s) * apply_Q(chain, f, s))

    qn = iterate_Q(chain, f, s, n)
    last = _final_level(chain, s, n, cap)
    expectation = math.fsum(p * f(x) for _w, x, p in last)
    r2 = abs(qn - expectation)
    return IntertwiningResult(one_step_residual=r1, markov_residual=r2)


def h_normalize(J: Kernel, gauge: Callable[[Point], float], name: str = "") -> Kernel:
    """J(s,t) / (h(s) h(t)); gauge zeros raise a domain error with the point."""

    def fn(s, t):
        hs, ht = gauge(s), gauge(t)
        if hs == 0.0 or ht == 0.0:
            bad = s if hs == 0.0 else t
            raise InputError(f"h-normalization at gauge zero {point_label(bad)}")
        return J(s, t) / (hs * ht)

    return Kernel(fn, name=name or f"{J.name}^(h)")


def apply_L_tilde(G: Kernel, chain: DoobChain, name: str = "") -> Kernel:
    """Normalized branching: sum_i p_i(s) p_i(t) G(phi_i(s), phi_i(t)); memoized.

    Branches with zero probability in either argument are skipped (their
    weight vanishes and G may be undefined at gauge-zero points).
    """
    maps = chain.branch.maps

    def fn(s, t):
        ps = chain.probs(s)
        pt = chain.probs(t)
        return math.fsum(
            a * b * G(g(s), g(t))
            for a, b, g in zip(ps, pt, maps)
            if a != 0.0 and b != 0.0
        )

    return Kernel(fn, name=name or f"Lt[{G.name}]", memoize=True)


def apply_L_tilde_power(G: Kernel, chain: DoobChain, n: int) -> Kernel:
    K = G
    for _ in range(n):
        K = apply_L_tilde(K, chain)
    return K


def normalization_commutes(
    J: Kernel,
    chain: DoobChain,
    points: Sequence[Point],
    n: int,
) -> float:
    """max over pairs of |(L^n J)^(h) - Ltilde^n (J^(h))|.

    The two routes must agree: normalizing after n branch steps equals n
    normalized steps after normalizing.
    """
    for s in points:
        chain.require_domain(s)
    lhs = h_normalize(apply_L_power(J, chain.branch, n), chain.h)
    rhs = apply_L_tilde_power(h_normalize(J, chain.h), chain, n)
    pts = list(points)
    worst = 0.0
    for a, s in enumerate(pts):
        for t in pts[a:]:
            worst = max(worst, abs(lhs(s, t) - rhs(s, t)))
    return worst


def tilde_word_expansion(
    G: Kernel,
    chain: DoobChain,
    s: Point,
    t: Point,
    n: int,
    cap: int = DEFAULT_WORD_CAP,
) -> float:
    """Level-n word sum: sum over |w|=n of p_w(s) p_w(t) G at the reversed orbits."""
    chain.require_domain(s)
    chain.require_domain(t)
    level_s = _final_level(chain, s, n, cap)
    level_t = _final_level(chain, t, n, cap)
    return math.fsum(
        ps * pt * G(xs, xt)
        for (_ws, xs, ps), (_wt, xt, pt) in zip(level_s, level_t)
        if ps != 0.0 and pt != 0.0
    )


class ProductCylinderWeights:
    """Product reference measure on the path space: mass of [w] = prod q_{w_k}.

    Every cylinder must carry positive mass; the single-symbol weights must
    sum to one so the level masses are probabilities.
    """

    def __init__(self, symbol_weights: Sequence[float]):
        q = [float(x) for x in symbol_weights]
        if any(x <= 0.0 for x in q):
            raise InputError("cylinder weights must be strictly positive")
        if abs(math.fsum(q) - 1.0) > 1e-9:
            raise InputError("cylinder symbol weights must sum to 1")
        self.symbol_weights = tuple(q)

    @classmethod
    def bernoulli(cls, p: float, m: int = 2) -> "ProductCylinderWeights":
        if m == 2:
            return cls([p, 1.0 - p])
        rest = (1.0 - p) / (m - 1)
        return cls([p] + [rest] * (m - 1))

    def mass(self, w: Word) -> float:
        out = 1.0
        for i in w:
            out *= self.symbol_weights[i - 1]
        return out

    def describe(self) -> str:
        return "product(" + ", ".join(repr(x) for x in self.symbol_weights) + ")"


@dataclass
class BoundaryGram:
    """Boundary feature Gram and its residual against the tower reference."""

    points: tuple
    entries: np.ndarray
    reference: np.ndarray
    levels: int
    weights_desc: str

    @property
    def residual(self) -> float:
        return float(np.max(np.abs(self.entries - self.reference)))

    def gram(self) -> Gram:
        return Gram(self.points, self.entries)


def boundary_feature_gram(
    K: Kernel,
    tower: Tower,
    chain: DoobChain,
    weights: ProductCylinderWeights,
    N: int,
    tol: float = DEFAULT_PSD_TOL,
    cap: int = DEFAULT_WORD_CAP,
) -> BoundaryGram:
    """Truncated boundary feature Gram of the accumulated normalized defects.

    Fibers at (level n, word w) are the cylinder-weighted sections of the
    normalized one-step defect at the reversed orbit points; their Gram is
    compared against the tower's accumulated normalized defects.  The
    reference measure enters each fiber as 1/sqrt(mass) and the level Gram
    as mass, so it cancels analytically and only perturbs roundoff.
    """
    if N < 1:
        raise InputError("boundary feature Gram needs at least one level")
    if tower.horizon < N:
        raise InputError(f"tower horizon {tower.horizon} below requested N={N}")
    base = tower.points
    for s in base:
        chain.require_domain(s)

    LK = apply_L(K, chain.branch)
    defect = Kernel(lambda s, t: LK(s, t) - K(s, t), name=f"defect[{K.name}]")
    defect_h = h_normalize(defect, chain.h)

    # One synchronized walk per base point; word order is shared across them.
    walks = [list(_walk_levels(chain, s, N - 1, cap)) for s in base]

    # Sections are only needed on cylinders with mass; zero-mass fibers
    # vanish and may sit at gauge zeros where the normalized defect is
    # undefined.
    section_points: dict[Point, None] = {}
    for walk in walks:
        for level in walk:
            for _w, x, p in level:
                if p != 0.0:
                    section_points.setdefault(x, None)
    section_list = list(section_points)
    section_index = {x: i for i, x in enumerate(section_list)}
    factor = sqrt_factor(gram(defect_h, section_list).entries, tol)
    section_gram = factor @ factor.T

    r = len(base)
    contribs = []
    for n in range(N):
        n_words = len(walks[0][n])
        for j in range(n_words):
            word = walks[0][n][j][0]
            mass = weights.mass(word)
            if mass <= 0.0:
                raise InputError(f"reference measure vanishes on cylinder {word}")
            root = math.sqrt(mass)
            coef = np.zeros(r)
            idx = np.zeros(r, dtype=int)
            for a, walk in enumerate(walks):
                _w, x, p = walk[n][j]
                if p != 0.0:
                    coef[a] = root * (p / root)
                    idx[a] = section_index[x]
            if np.any(coef != 0.0):
                contribs.append(np.outer(coef, coef) * section_gram[np.ix_(idx, idx)])
    entries = np.sum(np.stack(contribs), axis=0)

    h_vec = np.array([chain.h(s) for s in base])
    reference = (tower.levels[N] - tower.levels[0]) / np.outer(h_vec, h_vec)
    return BoundaryGram(
        points=base,
        entries=entries,
        reference=reference,
        levels=N,
        weights_desc=weights.describe(),
    )
