"""The kernel tower: iterated branching, defects, and the invariant completion.

Level Grams are computed by advancing, per base pair, the multiset of
descendant point pairs one branching step at a time.  On finite-state
systems the multiset collapses to at most S^2 entries with integer
multiplicities; on genuine trees it grows by a factor m per level and is
guarded by the pair cap.  Defects are exact level differences; their PSD
margins are certified per level.

Word-sum evaluation (one sum over all length-n words) is kept as an
independent second route to the same level Grams.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import (
    ContractError,
    DivergenceError,
    InputError,
    ModelError,
    NumericalError,
    ResourceError,
)
from .kernels import (
    DEFAULT_PSD_TOL,
    Gram,
    Kernel,
    PsdReport,
    apply_L,
    gram,
    psd_check,
    sqrt_factor,
)
from .points import (
    DEFAULT_WORD_CAP,
    BranchSystem,
    Point,
    orbit_points_by_level,
    point_label,
)

DEFAULT_MAX_LEVELS = 40
DEFAULT_CEILING = 1e12
TELESCOPE_RTOL = 1e-12


def _canon_pair(x, y):
    """Order a point pair when the point values are comparable."""
    if x == y:
        return (x, y)
    try:
        return (x, y) if x <= y else (y, x)
    except TypeError:
        return (x, y)


def tower_gram_iter(
    K: Kernel,
    branch: BranchSystem,
    points: Sequence[Point],
    pair_cap: int = DEFAULT_WORD_CAP,
) -> Iterator[np.ndarray]:
    """Yield the level-0, level-1, ... Gram matrices of the tower on ``points``.

    Each unordered base pair carries a Counter of descendant pairs with
    multiplicities; one branching step maps every pair through all m maps.
    """
    pts = tuple(points)
    n = len(pts)
    if n == 0:
        raise InputError("tower needs a nonempty base point list")
    maps = branch.maps
    evaluate = K.raw() if isinstance(K, Kernel) else K
    index_pairs = [(a, b) for a in range(n) for b in range(a, n)]
    orbits = [Counter({_canon_pair(pts[a], pts[b]): 1}) for (a, b) in index_pairs]

    while True:
        cache: dict = {}
        cache_get = cache.get
        G = np.empty((n, n), dtype=float)
        for (a, b), orbit in zip(index_pairs, orbits):
            terms = []
            for pair, cnt in orbit.items():
                v = cache_get(pair)
                if v is None:
                    v = evaluate(pair[0], pair[1])
                    cache[pair] = v
                terms.append(cnt * v)
            total = math.fsum(terms)
            G[a, b] = total
            G[b, a] = total
        yield G

        size = 0
        new_orbits = []
        for orbit in orbits:
            nxt: Counter = Counter()
            for (x, y), cnt in orbit.items():
                for f in maps:
                    fx, fy = f(x), f(y)
                    key = _canon_pair(fx, fy)
                    nxt[key] += cnt
            size += len(nxt)
            if size > pair_cap:
                raise ResourceError(
                    f"tower pair orbit exceeded the cap of {pair_cap} pairs; "
                    "reduce the horizon or supply a tail certificate"
                )
            new_orbits.append(nxt)
        orbits = new_orbits


@dataclass
class Tower:
    """Level Grams K_0..K_N and defect Grams D_0..D_{N-1} on a base point list."""

    points: tuple
    horizon: int
    levels: list[np.ndarray]
    defects: list[np.ndarray]
    defect_reports: list[PsdReport]
    trace_increments: list[float]
    telescoping_residual: float
    kernel_name: str = ""

    def level_gram(self, n: int) -> Gram:
        return Gram(self.points, self.levels[n])

    def defect_gram(self, n: int) -> Gram:
        return Gram(self.points, self.defects[n])

    def diagonal(self, n: int) -> np.ndarray:
        return np.diag(self.levels[n]).copy()

    def index(self, s: Point) -> int:
        try:
            return self.points.index(s)
        except ValueError:
            raise InputError(f"point {point_label(s)} not in tower base") from None


def subinvariance_check(
    K: Kernel, branch: BranchSystem, points: Sequence[Point],
    tol: float = DEFAULT_PSD_TOL,
) -> PsdReport:
    """PSD report of the one-step defect LK - K on ``points``.

    A PSD verdict certifies the subinvariance inequality LK >= K on the
    given finite set.
    """
    LK = apply_L(K, branch)
    defect = Kernel(lambda s, t: LK(s, t) - K(s, t), name=f"defect[{K.name}]")
    return psd_check(gram(defect, points), tol)


def build_tower(
    K: Kernel,
    branch: BranchSystem,
    points: Sequence[Point],
    horizon: int,
    tol: float = DEFAULT_PSD_TOL,
    pair_cap: int = DEFAULT_WORD_CAP,
) -> Tower:
    """Compute levels 0..horizon of the tower with per-level defect certification.

    Raises a model error naming the level if any defect Gram fails the PSD
    test, and a numerical error if the telescoping identity drifts beyond
    its budget (it is exact up to float reassociation by construction).
    """
    if horizon < 0:
        raise InputError("tower horizon must be nonnegative")
    it = tower_gram_iter(K, branch, points, pair_cap)
    levels = [next(it) for _ in range(horizon + 1)]
    defects = []
    reports = []
    increments = []
    for n in range(horizon):
        D = levels[n + 1] - levels[n]
        report = psd_check(D, tol)
        if not report.psd:
            raise ModelError(
                f"defect level {n} is not PSD ({report.summary()}); "
                "the kernel is not subinvariant on this set"
            )
        defects.append(D)
        reports.append(report)
        increments.append(float(np.trace(D)))

    reconstructed = levels[0] + sum(defects) if defects else levels[0]
    scale = max(float(np.max(np.abs(levels[-1]))), 1.0)
    residual = float(np.max(np.abs(reconstructed - levels[-1]))) / scale
    if residual > TELESCOPE_RTOL:
        raise NumericalError(
            f"telescoping residual {residual:.3e} exceeds {TELESCOPE_RTOL:.1e}"
        )
    return Tower(
        points=tuple(points),
        horizon=horizon,
        levels=levels,
        defects=defects,
        defect_reports=reports,
        trace_increments=increments,
        telescoping_residual=residual,
        kernel_name=K.name,
    )


def level_via_words(
    K: Kernel,
    branch: BranchSystem,
    points: Sequence[Point],
    n: int,
    cap: int = DEFAULT_WORD_CAP,
) -> Gram:
    """Level-n Gram by direct word-sum expansion (independent of build_tower).

    Sums K over all length-n words applied synchronously to both arguments.
    """
    pts = tuple(points)
    evaluate = K.raw() if isinstance(K, Kernel) else K
    level_of = {s: orbit_points_by_level(branch, s, n, cap)[n] for s in set(pts)}
    r = len(pts)
    G = np.empty((r, r), dtype=float)
    for a in range(r):
        la = level_of[pts[a]]
        for b in range(a, r):
            lb = level_of[pts[b]]
            v = math.fsum(map(evaluate, la, lb))
            G[a, b] = v
            G[b, a] = v
    return Gram(pts, G)


@dataclass(frozen=True)
class TailCertificate:
    """Lyapunov certificate for geometric defect decay.

    Premises (verified by the diagonal module on ``domain``): the one-step
    defect diagonal is bounded by C * r and the branching operator contracts
    r by the factor beta.  With beta < 1 these yield the closed-form tail
    bound C/(1-beta) * beta^N * sqrt(r(s) r(t)) on the limit kernel.
    """

    r_fn: Callable[[Point], float]
    C: float
    beta: float
    domain: tuple
    form: str = "defect"  # "defect" (beta < 1) or "diagonal" (beta <= 1)

    def covers(self, points: Sequence[Point]) -> bool:
        dom = set(self.domain)
        return all(s in dom for s in points)

    def bound(self, s: Point, t: Point, N: int) -> float:
        if self.form != "defect" or not self.beta < 1.0:
            raise ContractError(
                "tail bounds need a defect-form certificate with beta < 1"
            )
        return (
            self.C / (1.0 - self.beta)
            * self.beta**N
            * math.sqrt(self.r_fn(s) * self.r_fn(t))
        )

    def bound_matrix(self, points: Sequence[Point], N: int) -> np.ndarray:
        pts = tuple(points)
        r_vals = np.array([self.r_fn(s) for s in pts], dtype=float)
        root = np.sqrt(r_vals)
        return self.C / (1.0 - self.beta) * self.beta**N * np.outer(root, root)


@dataclass
class KInfinityEstimate:
    """Truncated invariant-completion estimate with a per-entry error bound."""

    points: tuple
    entries: np.ndarray
    bound: np.ndarray
    certified: bool
    levels_used: int
    converged: bool
    trace_history: list[float]
    tower: Tower

    def gram(self) -> Gram:
        return Gram(self.points, self.entries)

    def value(self, s: Point, t: Point) -> float:
        return self.gram().value(s, t)

    @property
    def bound_label(self) -> str:
        return "certified" if self.certified else "uncertified"


def estimate_K_infinity(
    K: Kernel,
    branch: BranchSystem,
    points: Sequence[Point],
    tol: float = DEFAULT_PSD_TOL,
    trace_eps: float | None = None,
    max_levels: int = DEFAULT_MAX_LEVELS,
    ceiling: float = DEFAULT_CEILING,
    certificate: TailCertificate | None = None,
    pair_cap: int = DEFAULT_WORD_CAP,
) -> KInfinityEstimate:
    """Iterate the tower until the trace stalls, then attach an error bound.

    Stopping: trace increment below ``trace_eps`` (default 1e-10 times the
    level-0 trace) or ``max_levels``.  Any diagonal beyond ``ceiling``
    aborts with a divergence report pointing at the diagonal classification
    tools.  With a certificate the per-entry bound is the closed geometric
    form and is labeled certified; otherwise a Cauchy-Schwarz bound is
    extrapolated from the last diagonal increments and labeled uncertified.
    """
    pts = tuple(points)
    if certificate is not None and not certificate.covers(pts):
        raise ContractError(
            "certificate verification domain does not cover the requested points"
        )
    it = tower_gram_iter(K, branch, pts, pair_cap)
    levels = [next(it)]
    traces = [float(np.trace(levels[0]))]
    if trace_eps is None:
        trace_eps = 1e-10 * max(traces[0], 1.0)
    converged = False
    while True:
        diag = np.diag(levels[-1])
        if np.max(diag) > ceiling:
            raise DivergenceError(
                f"tower diagonal {np.max(diag):.3e} exceeded the ceiling {ceiling:.1e} "
                f"at level {len(levels) - 1}; classify the model with the diagonal "
                "module (blow-up witnesses / Lyapunov certificates)",
                level=len(levels) - 1,
                diagonal=float(np.max(diag)),
            )
        if len(levels) > 1 and traces[-1] - traces[-2] < trace_eps:
            converged = True
            break
        if len(levels) > max_levels:
            break
        levels.append(next(it))
        traces.append(float(np.trace(levels[-1])))

    N = len(levels) - 1
    tower = _tower_from_levels(pts, levels, tol, K.name)

    if certificate is not None:
        bound = certificate.bound_matrix(pts, N)
        certified = True
    else:
        tail = _extrapolated_tail_diagonal(levels)
        bound = np.sqrt(np.outer(tail, tail))
        certified = False
    return KInfinityEstimate(
        points=pts,
        entries=levels[-1].copy(),
        bound=bound,
        certified=certified,
        levels_used=N,
        converged=converged,
        trace_history=traces,
        tower=tower,
    )


def _tower_from_levels(pts, levels, tol, kernel_name) -> Tower:
    defects = [levels[n + 1] - levels[n] for n in range(len(levels) - 1)]
    reports = []
    for n, D in enumerate(defects):
        report = psd_check(D, tol)
        if not report.psd:
            raise ModelError(f"defect level {n} is not PSD ({report.summary()})")
        reports.append(report)
    return Tower(
        points=pts,
        horizon=len(levels) - 1,
        levels=levels,
        defects=defects,
        defect_reports=reports,
        trace_increments=[float(np.trace(D)) for D in defects],
        telescoping_residual=0.0,
        kernel_name=kernel_name,
    )


def _extrapolated_tail_diagonal(levels) -> np.ndarray:
    """Geometric extrapolation of remaining diagonal growth from the last two increments."""
    n_pts = levels[0].shape[0]
    if len(levels) == 1:
        return np.full(n_pts, np.inf)  # no increments observed: no information
    if len(levels) == 2:
        d = np.diag(levels[1]) - np.diag(levels[0])
        return np.where(d <= 0.0, 0.0, np.inf)
    d_last = np.diag(levels[-1]) - np.diag(levels[-2])
    d_prev = np.diag(levels[-2]) - np.diag(levels[-3])
    tail = np.empty(n_pts)
    for a in range(n_pts):
        if d_last[a] <= 0.0:
            tail[a] = 0.0
        elif d_prev[a] <= 0.0 or d_last[a] >= d_prev[a]:
            tail[a] = np.inf  # no observed decay: honest "unknown"
        else:
            q = d_last[a] / d_prev[a]
            tail[a] = d_last[a] * q / (1.0 - q)
    return tail


def invariance_residual(
    estimate: KInfinityEstimate, branch: BranchSystem, points: Sequence[Point]
) -> float:
    """max |(L K_inf_est)(s,t) - K_inf_est(s,t)| over pairs from ``points``.

    The estimate must cover the one-step orbit of ``points``.
    """
    est_index = {s: i for i, s in enumerate(estimate.points)}
    for s in points:
        for f in branch.maps:
            if f(s) not in est_index:
                raise InputError(
                    f"estimate does not cover the one-step image of {point_label(s)}; "
                    "estimate over the one-step orbit closure"
                )
    G = estimate.entries
    worst = 0.0
    pts = list(points)
    for a, s in enumerate(pts):
        for t in pts[a:]:
            ls = math.fsum(
                G[est_index[f(s)], est_index[f(t)]] for f in branch.maps
            )
            worst = max(worst, abs(ls - G[est_index[s], est_index[t]]))
    return worst


@dataclass
class MinimalityReport:
    """Premise checks and conclusion for one invariant-majorant candidate."""

    invariance_residual: float
    invariance_ok: bool
    majorant_report: PsdReport
    conclusion: PsdReport | None

    @property
    def premises_ok(self) -> bool:
        return self.invariance_ok and self.majorant_report.psd

    @property
    def ok(self) -> bool:
        return self.premises_ok and self.conclusion is not None and self.conclusion.psd


def minimality_check(
    estimate: KInfinityEstimate,
    candidate: Kernel,
    K: Kernel,
    branch: BranchSystem,
    points: Sequence[Point],
    tol: float = DEFAULT_PSD_TOL,
) -> MinimalityReport:
    """Check candidate >= K, L candidate = candidate, then candidate >= estimate.

    Premise failures are reported separately from the conclusion so that a
    non-invariant or non-majorizing candidate is not mistaken for a
    minimality violation.
    """
    pts = tuple(points)
    G_cand = gram(candidate, pts)
    LJ = apply_L(candidate, branch)
    inv_residual = max(
        abs(LJ(s, t) - candidate(s, t)) for s in pts for t in pts
    )
    scale = max(G_cand.scale(), 1.0)
    invariance_ok = inv_residual <= tol * scale
    majorant_report = psd_check(
        Gram(pts, G_cand.entries - gram(K, pts).entries), tol
    )
    conclusion = None
    if invariance_ok and majorant_report.psd:
        sub = [estimate.points.index(s) for s in pts]
        est_block = estimate.entries[np.ix_(sub, sub)]
        conclusion = psd_check(
            Gram(pts, G_cand.entries - est_block),
            max(tol, float(np.max(estimate.bound)) if np.all(np.isfinite(estimate.bound)) else tol),
        )
    return MinimalityReport(
        invariance_residual=float(inv_residual),
        invariance_ok=invariance_ok,
        majorant_report=majorant_report,
        conclusion=conclusion,
    )


@dataclass
class Embedding:
    """Finite-dimensional defect-space features reproducing the level-N Gram.

    Block 0 is a square-root factor of the base Gram, block n+1 of the
    level-n defect Gram; concatenated rows v(s) satisfy <v(s), v(t)> =
    K_N(s, t) and the block-0 rows alone reproduce K, realizing the
    compression as a coordinate restriction.
    """

    points: tuple
    blocks: list[np.ndarray]

    @property
    def vectors(self) -> np.ndarray:
        return np.hstack(self.blocks)

    def gram(self) -> np.ndarray:
        V = self.vectors
        return V @ V.T

    def level0_gram(self) -> np.ndarray:
        B = self.blocks[0]
        return B @ B.T

    def vector(self, s: Point) -> np.ndarray:
        try:
            a = self.points.index(s)
        except ValueError:
            raise InputError(f"point {point_label(s)} not embedded") from None
        return self.vectors[a]


def defect_embedding(tower: Tower, tol: float = DEFAULT_PSD_TOL) -> Embedding:
    """Factor the base Gram and every defect Gram into feature blocks."""
    blocks = []
    try:
        blocks.append(sqrt_factor(tower.levels[0], tol))
    except NumericalError as exc:
        raise NumericalError(f"base kernel factor failed: {exc}") from exc
    for n, D in enumerate(tower.defects):
        try:
            blocks.append(sqrt_factor(D, tol))
        except NumericalError as exc:
            raise NumericalError(f"defect level {n} factor failed: {exc}") from exc
    emb = Embedding(points=tower.points, blocks=blocks)
    scale = max(float(np.max(np.abs(tower.levels[-1]))), 1.0)
    err = float(np.max(np.abs(emb.gram() - tower.levels[-1])))
    if err > 1e-10 * scale:
        raise NumericalError(
            f"embedding Gram deviates from level-{tower.horizon} Gram by {err:.3e}"
        )
    return emb
