"""Kernel evaluation, Gram matrices, and the PSD order.

A kernel is a symmetric real-valued function on pairs of points wrapped in
a :class:`Kernel` for naming and optional memoization.  Everything
downstream is realized through Gram matrices on ordered finite point
lists; positive semidefiniteness is tested by a symmetric eigensolver so
that every verdict carries a quantitative margin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InputError, KernelTowerError, NumericalError
from .points import BranchSystem, Point, point_label

DEFAULT_PSD_TOL = 1e-9


class Kernel:
    """A symmetric pointwise kernel.

    ``fn`` is evaluated once per unordered pair when ``memoize`` is on;
    composed kernels (e.g. the branching operator applied to a base kernel)
    memoize so that repeated Gram assembly over overlapping point sets does
    not re-walk the branch tree.
    """

    def __init__(self, fn: Callable[[Point, Point], float], name: str = "",
                 memoize: bool = False):
        self._fn = fn
        self.name = name or getattr(fn, "__name__", "kernel")
        self._memo: dict | None = {} if memoize else None

    def __repr__(self):
        return f"Kernel({self.name})"

    def __call__(self, s: Point, t: Point) -> float:
        if self._memo is None:
            return self._fn(s, t)
        key = (s, t)
        v = self._memo.get(key)
        if v is None:
            v = self._fn(s, t)
            self._memo[key] = v
            self._memo[(t, s)] = v
        return v

    def raw(self) -> Callable[[Point, Point], float]:
        """Fastest callable for hot loops (skips the wrapper when unmemoized)."""
        return self._fn if self._memo is None else self.__call__


def kernel_from_function(fn, name="", memoize=False) -> Kernel:
    return fn if isinstance(fn, Kernel) else Kernel(fn, name=name, memoize=memoize)


def kernel_sum(a: Kernel, b: Kernel, name: str = "") -> Kernel:
    return Kernel(lambda s, t: a(s, t) + b(s, t), name=name or f"{a.name}+{b.name}")


def kernel_diff(a: Kernel, b: Kernel, name: str = "") -> Kernel:
    return Kernel(lambda s, t: a(s, t) - b(s, t), name=name or f"{a.name}-{b.name}")


def kernel_scale(c: float, a: Kernel, name: str = "") -> Kernel:
    return Kernel(lambda s, t: c * a(s, t), name=name or f"{c}*{a.name}")


def apply_L(J: Kernel, branch: BranchSystem, name: str = "") -> Kernel:
    """The branching operator: (LJ)(s,t) = sum_i J(phi_i(s), phi_i(t)).

    Lazy and memoized per point pair; preserves symmetry and positive
    definiteness since each pullback along (phi_i, phi_i) does.
    """
    maps = branch.maps

    def fn(s, t):
        return math.fsum(J(f(s), f(t)) for f in maps)

    return Kernel(fn, name=name or f"L[{J.name}]", memoize=True)


def apply_L_power(J: Kernel, branch: BranchSystem, n: int) -> Kernel:
    K = J
    for _ in range(n):
        K = apply_L(K, branch)
    return K


@dataclass
class Gram:
    """Kernel values over an ordered finite point list."""

    points: tuple
    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)

    @property
    def size(self) -> int:
        return len(self.points)

    def index(self, s: Point) -> int:
        try:
            return self.points.index(s)
        except ValueError:
            raise InputError(f"point {point_label(s)} not in Gram point list") from None

    def value(self, s: Point, t: Point) -> float:
        return float(self.entries[self.index(s), self.index(t)])

    def scale(self) -> float:
        return float(np.max(np.abs(np.diag(self.entries)))) if self.size else 0.0


@dataclass
class PsdReport:
    """Result of an eigenvalue-based PSD test with a relative tolerance."""

    min_eigenvalue: float
    scale: float
    tol: float
    psd: bool = field(init=False)

    def __post_init__(self):
        self.psd = self.min_eigenvalue >= -self.tol * max(self.scale, 1.0)

    @property
    def margin(self) -> float:
        return self.min_eigenvalue

    def summary(self) -> str:
        verdict = "PSD" if self.psd else "not-PSD"
        return f"{verdict} (min eig {self.min_eigenvalue:.3e}, scale {self.scale:.3e}, tol {self.tol:.1e})"


_default_workers = 1


def set_default_workers(n: int) -> None:
    """Worker cap for Gram assembly (the CLI --threads flag lands here)."""
    global _default_workers
    _default_workers = max(1, int(n))


def _gram_row(J, pts, a):
    out = []
    for b in range(a, len(pts)):
        try:
            out.append(float(J(pts[a], pts[b])))
        except KernelTowerError:
            raise
        except Exception as exc:  # annotate with the offending pair
            raise type(exc)(
                f"kernel {J.name} failed at "
                f"({point_label(pts[a])}, {point_label(pts[b])}): {exc}"
            ) from exc
    return out


def gram(J: Kernel, points: Sequence[Point], workers: int | None = None) -> Gram:
    """Assemble the symmetric Gram matrix, one evaluation per unordered pair.

    Rows may be evaluated by a worker pool; entries are written by index,
    so the result is deterministic regardless of parallelism.
    """
    pts = tuple(points)
    if not pts:
        raise InputError("Gram assembly needs a nonempty point list")
    n = len(pts)
    workers = _default_workers if workers is None else max(1, workers)
    G = np.empty((n, n), dtype=float)
    if workers > 1 and n >= 8:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda a: _gram_row(J, pts, a), range(n)))
    else:
        rows = [_gram_row(J, pts, a) for a in range(n)]
    for a, row in enumerate(rows):
        for off, v in enumerate(row):
            b = a + off
            G[a, b] = v
            G[b, a] = v
    return Gram(pts, G)


def psd_check(G: Gram | np.ndarray, tol: float = DEFAULT_PSD_TOL) -> PsdReport:
    """Smallest-eigenvalue PSD test.

    Verdict PSD iff min eig >= -tol * max(scale, 1) with scale the largest
    absolute diagonal entry; the relative threshold keeps deep towers with
    large diagonals from failing on roundoff.
    """
    A = G.entries if isinstance(G, Gram) else np.asarray(G, dtype=float)
    if not np.all(np.isfinite(A)):
        raise InputError("PSD check on a matrix with non-finite entries")
    if A.size == 0:
        return PsdReport(0.0, 0.0, tol)
    scale = float(np.max(np.abs(np.diag(A))))
    min_eig = float(np.linalg.eigvalsh(A)[0])
    return PsdReport(min_eig, scale, tol)


def psd_leq(G1: Gram, G2: Gram, tol: float = DEFAULT_PSD_TOL) -> PsdReport:
    """PSD report of G2 - G1; verdict PSD means G1 <= G2 in the Loewner order."""
    if G1.points != G2.points:
        raise InputError("psd_leq requires identical point lists")
    return psd_check(Gram(G1.points, G2.entries - G1.entries), tol)


def sqrt_factor(A: np.ndarray, tol: float = DEFAULT_PSD_TOL,
                jitter: float = 1e-12) -> np.ndarray:
    """Symmetric square-root factor R with R @ R.T ~= A.

    Eigendecomposition with small negative eigenvalues clipped at zero;
    eigenvalues below -tol*scale are a genuine PSD failure.  If the clipped
    factor fails to reconstruct A, one diagonal jitter of jitter*scale is
    attempted before giving up.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    scale = max(float(np.max(np.abs(np.diag(A)))), 1.0) if n else 1.0

    def factor(M):
        w, U = np.linalg.eigh(M)
        if w[0] < -tol * scale:
            raise NumericalError(
                f"square-root factorization: eigenvalue {w[0]:.3e} below -tol*scale"
            )
        return U * np.sqrt(np.clip(w, 0.0, None))

    R = factor(A)
    if np.max(np.abs(R @ R.T - A)) <= 1e-10 * scale:
        return R
    R = factor(A + jitter * scale * np.eye(n))
    if np.max(np.abs(R @ R.T - A)) <= 1e-10 * scale:
        return R
    raise NumericalError("square-root factor failed to reconstruct input after jitter")
