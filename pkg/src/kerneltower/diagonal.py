"""Diagonal dynamics: branch sums, finiteness classification, tail bounds.

The diagonal of the kernel tower evolves under the induced branching
operator on functions, (Pu)(s) = sum_i u(phi_i(s)), so growth questions
reduce to combinatorics of the rooted branch tree.  This module computes
diagonal traces two independent ways, verifies Lyapunov certificates,
searches for branch-counting blow-up witnesses, and evaluates layer-cake
identities and tail bounds.

A finite trace can only ever classify heuristically; rigorous statements
come from verified certificates (decay) or counting witnesses (blow-up).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .errors import ContractError, InputError, NumericalError
from .kernels import Kernel
from .points import (
    DEFAULT_WORD_CAP,
    BranchSystem,
    Point,
    orbit_closure,
    orbit_points_by_level,
    point_label,
)
from .tower import DEFAULT_CEILING, TailCertificate, Tower, tower_gram_iter

CONVERGING = "converging"
DIVERGING = "diverging"
INCONCLUSIVE = "inconclusive"

# Increment-ratio thresholds for the finite-horizon verdict heuristic.
_RATIO_CONVERGING = 1.0 - 1e-6
_RATIO_WINDOW = 3


def apply_P(u: Callable[[Point], float], branch: BranchSystem) -> Callable[[Point], float]:
    """(Pu)(s) = sum_i u(phi_i(s))."""
    maps = branch.maps

    def Pu(s):
        return math.fsum(u(f(s)) for f in maps)

    return Pu


def classify_sequence(values: Sequence[float], eps: float, ceiling: float) -> str:
    """Finite-horizon verdict for a nondecreasing diagonal sequence.

    Ceiling breach is always diverging.  Otherwise: a final increment below
    eps is converging; failing that, a window of strictly decaying increment
    ratios is converging and a window of nondecreasing increments is
    diverging; mixed behavior stays inconclusive.
    """
    values = list(values)
    if any(v > ceiling for v in values):
        return DIVERGING
    if len(values) < 2:
        return INCONCLUSIVE
    incs = [values[k + 1] - values[k] for k in range(len(values) - 1)]
    if incs[-1] <= eps:
        return CONVERGING
    if len(incs) >= 2:
        window = incs[-(_RATIO_WINDOW + 1):]
        ratios = [
            window[k + 1] / window[k] if window[k] > 0 else math.inf
            for k in range(len(window) - 1)
        ]
        if all(q <= _RATIO_CONVERGING for q in ratios):
            return CONVERGING
        if all(q >= 1.0 for q in ratios):
            return DIVERGING
    return INCONCLUSIVE


@dataclass
class DiagonalTrace:
    """u_0(s)..u_N(s) with a finite-horizon verdict; u_N is an envelope lower bound."""

    point: Point
    values: list[float]
    verdict: str

    @property
    def envelope_lower_bound(self) -> float:
        return self.values[-1]

    @property
    def increments(self) -> list[float]:
        return [self.values[k + 1] - self.values[k] for k in range(len(self.values) - 1)]


def diagonal_trace(
    K: Kernel,
    branch: BranchSystem,
    s: Point,
    horizon: int,
    trace_eps: float | None = None,
    ceiling: float = DEFAULT_CEILING,
    cap: int = DEFAULT_WORD_CAP,
) -> DiagonalTrace:
    """Diagonal values u_n(s) for n <= horizon, cross-checked two ways.

    Route one iterates the tower on the single point; route two sums the
    kernel diagonal over all length-n branch words.  Disagreement beyond
    1e-12 (relative) is a numerical failure.
    """
    it = tower_gram_iter(K, branch, [s], cap)
    tower_vals = [float(next(it)[0, 0]) for _ in range(horizon + 1)]

    levels = orbit_points_by_level(branch, s, horizon, cap)
    word_vals = [math.fsum(K(x, x) for x in level) for level in levels]

    for n, (a, b) in enumerate(zip(tower_vals, word_vals)):
        if abs(a - b) > 1e-12 * max(1.0, abs(a)):
            raise NumericalError(
                f"diagonal routes disagree at level {n} for {point_label(s)}: "
                f"{a!r} vs {b!r}"
            )
    if trace_eps is None:
        trace_eps = 1e-10 * max(tower_vals[0], 1.0)
    verdict = classify_sequence(tower_vals, trace_eps, ceiling)
    return DiagonalTrace(point=s, values=tower_vals, verdict=verdict)


@dataclass
class LyapunovRefutation:
    """First violated premise of a proposed Lyapunov certificate."""

    point: Point
    premise: str
    lhs: float
    rhs: float

    def __str__(self):
        return (
            f"premise {self.premise} fails at {point_label(self.point)}: "
            f"{self.lhs!r} > {self.rhs!r}"
        )


def lyapunov_verify(
    diag: Callable[[Point], float],
    branch: BranchSystem,
    r_fn: Callable[[Point], float],
    C: float,
    beta: float,
    domain: Sequence[Point],
    form: str = "defect",
) -> TailCertificate | LyapunovRefutation:
    """Check diag <= C*r and Pr <= beta*r pointwise on ``domain``.

    ``form="defect"`` (beta < 1) certifies geometric tail bounds for the
    one-step defect diagonal; ``form="diagonal"`` (beta <= 1) certifies
    plain finiteness for the kernel diagonal.  Returns the certificate with
    the verification domain recorded, or the first violating point.
    """
    if form not in ("defect", "diagonal"):
        raise InputError(f"unknown certificate form {form!r}")
    if form == "defect" and not 0.0 < beta < 1.0:
        raise InputError("defect-form certificates need 0 < beta < 1")
    if form == "diagonal" and not 0.0 < beta <= 1.0:
        raise InputError("diagonal-form certificates need 0 < beta <= 1")
    if C < 0.0:
        raise InputError("certificate constant C must be nonnegative")
    pts = tuple(domain)
    if not pts:
        raise InputError("certificate needs a nonempty verification domain")
    for s in orbit_closure(branch, pts, 1):
        if not r_fn(s) > 0.0:
            raise InputError(f"Lyapunov function not positive at {point_label(s)}")
    for s in pts:
        lhs = diag(s)
        rhs = C * r_fn(s)
        if lhs > rhs:
            return LyapunovRefutation(point=s, premise="diag <= C*r", lhs=lhs, rhs=rhs)
    for s in pts:
        lhs = math.fsum(r_fn(f(s)) for f in branch.maps)
        rhs = beta * r_fn(s)
        if lhs > rhs:
            return LyapunovRefutation(point=s, premise="Pr <= beta*r", lhs=lhs, rhs=rhs)
    return TailCertificate(r_fn=r_fn, C=C, beta=beta, domain=pts, form=form)


@dataclass
class BlowupWitness:
    """Branch-count witness attempt for diagonal blow-up.

    Valid iff at every requested level the number of words landing in the
    region with diagonal mass >= epsilon reaches rho^level.
    """

    epsilon: float
    rho: float
    levels: list[int]
    counts: list[int]

    @property
    def required(self) -> list[float]:
        return [self.rho**n for n in self.levels]

    @property
    def valid(self) -> bool:
        return all(c >= r for c, r in zip(self.counts, self.required))


def blowup_detect(
    K: Kernel,
    branch: BranchSystem,
    s: Point,
    region: Callable[[Point], bool],
    epsilon: float,
    rho: float,
    levels: Sequence[int],
    cap: int = DEFAULT_WORD_CAP,
) -> BlowupWitness:
    """Count level-n branch words landing in ``region`` with diagonal >= epsilon.

    A valid witness forces the diagonal to exceed epsilon * rho^n along the
    requested levels, hence blow-up when the levels are unbounded.
    """
    if epsilon <= 0.0 or rho <= 1.0:
        raise InputError("blow-up witness needs epsilon > 0 and rho > 1")
    levels = sorted(int(n) for n in levels)
    if not levels or levels[0] < 0:
        raise InputError("blow-up witness needs nonnegative levels")
    by_level = orbit_points_by_level(branch, s, levels[-1], cap)
    counts = [
        sum(1 for x in by_level[n] if region(x) and K(x, x) >= epsilon)
        for n in levels
    ]
    return BlowupWitness(epsilon=epsilon, rho=rho, levels=levels, counts=counts)


def level_set_count(
    K: Kernel,
    branch: BranchSystem,
    s: Point,
    n: int,
    theta: float,
    cap: int = DEFAULT_WORD_CAP,
) -> int:
    """#{words of length n with diagonal value at least theta}, by enumeration."""
    level = orbit_points_by_level(branch, s, n, cap)[n]
    return sum(1 for x in level if K(x, x) >= theta)


@dataclass
class LayerCakeResult:
    integral: float
    word_sum: float

    @property
    def residual(self) -> float:
        return abs(self.integral - self.word_sum)


def layer_cake_check(
    K: Kernel,
    branch: BranchSystem,
    s: Point,
    n: int,
    cap: int = DEFAULT_WORD_CAP,
) -> LayerCakeResult:
    """Exact layer-cake integral of the level-set counts vs the direct word sum.

    The count function is a right-continuous step function with jumps at
    the distinct diagonal values, so the integral is the finite
    summation-by-parts sum_j (v_j - v_{j-1}) * #{values >= v_j}.
    """
    level = orbit_points_by_level(branch, s, n, cap)[n]
    values = sorted(K(x, x) for x in level)
    if values and values[0] < 0.0:
        raise InputError("layer-cake identity needs a nonnegative diagonal")
    total = len(values)
    terms = []
    prev = 0.0
    for i, v in enumerate(values):
        if v > prev:
            terms.append((v - prev) * (total - i))
            prev = v
    integral = math.fsum(terms)
    word_sum = math.fsum(values)
    return LayerCakeResult(integral=integral, word_sum=word_sum)


@dataclass
class TailBound:
    value: float
    certified: bool
    method: str


def tail_bound(
    tower: Tower,
    s: Point,
    t: Point,
    N: int,
    certificate: TailCertificate | None = None,
    oracle_diag: Callable[[Point], float] | None = None,
    require_certified: bool = False,
) -> TailBound:
    """Bound |K_inf(s,t) - K_N(s,t)|.

    With a certificate: the closed geometric form (certified).  Without: a
    Cauchy-Schwarz bound from the limit diagonal when a closed-form one is
    supplied, else a geometric extrapolation of the last two diagonal
    increments, flagged uncertified.
    """
    if N > tower.horizon:
        raise InputError(f"tower horizon {tower.horizon} below requested level {N}")
    if certificate is not None:
        if not certificate.covers([s, t]):
            raise ContractError("certificate domain does not cover the requested points")
        return TailBound(certificate.bound(s, t, N), certified=True, method="certificate")
    if require_certified:
        raise ContractError("certified bound requested but no certificate supplied")
    a, b = tower.index(s), tower.index(t)
    uN_s = tower.levels[N][a, a]
    uN_t = tower.levels[N][b, b]
    if oracle_diag is not None:
        gap_s = max(oracle_diag(s) - uN_s, 0.0)
        gap_t = max(oracle_diag(t) - uN_t, 0.0)
        return TailBound(math.sqrt(gap_s * gap_t), certified=False, method="oracle-diagonal")
    tails = []
    for idx in (a, b):
        if N < 2:
            tails.append(math.inf)
            continue
        d_last = tower.levels[N][idx, idx] - tower.levels[N - 1][idx, idx]
        d_prev = tower.levels[N - 1][idx, idx] - tower.levels[N - 2][idx, idx]
        if d_last <= 0.0:
            tails.append(0.0)
        elif d_prev <= 0.0 or d_last >= d_prev:
            tails.append(math.inf)
        else:
            q = d_last / d_prev
            tails.append(d_last * q / (1.0 - q))
    return TailBound(math.sqrt(tails[0] * tails[1]), certified=False, method="extrapolated")
