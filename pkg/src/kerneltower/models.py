"""Builtin models with closed-form oracles, plus user finite-state models.

The word-tree model lives on the set of all finite words over {1..m}
(points are int tuples) with prefixing maps; its tower, defects, limit
kernel, and harmonic gauge all have closed forms, evaluated here directly
so they stay independent test oracles for the computed machinery.

Finite-state models are tables: S states, m map tables, one symmetric PSD
kernel table.  The feeder model is a small builtin finite-state instance
with a genuinely nontrivial defect and a nondegenerate Doob chain.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError, InputError
from .kernels import DEFAULT_PSD_TOL, Kernel, psd_check
from .points import BranchSystem, Point


class Model:
    """Common surface of builtin and user models."""

    name: str = "model"
    branch: BranchSystem
    kernel: Kernel
    has_oracle = False

    def point(self, spec) -> Point:
        raise NotImplementedError

    def points(self, specs: Sequence) -> list[Point]:
        return [self.point(x) for x in specs]


def _parse_word(spec, m: int) -> tuple[int, ...]:
    if isinstance(spec, tuple):
        word = spec
    elif isinstance(spec, list):
        word = tuple(spec)
    elif isinstance(spec, str):
        if spec in ("", "<>"):
            word = ()
        else:
            try:
                word = tuple(int(ch) for ch in spec)
            except ValueError:
                raise InputError(f"word label {spec!r} must be digits over 1..{m}") from None
    else:
        raise InputError(f"cannot interpret {spec!r} as a word point")
    for i in word:
        if not 1 <= i <= m:
            raise InputError(f"symbol {i} in word {spec!r} out of range 1..{m}")
    return word


def _prefix_branch(m: int) -> BranchSystem:
    def make(i):
        sym = (i,)
        return lambda s: sym + s

    return BranchSystem([make(i) for i in range(1, m + 1)], name=f"prefix-tree(m={m})")


class WordTreeModel(Model):
    """Words over {1..m} with prefixing maps and a geometric defect tower.

    Kernel: a diagonal part plus eta times a rank-one part, minus a
    diagonal strict-subinvariance term that the branching operator scales
    by r.  Closed forms: level n kernel = limit - r^n * (strict term),
    defects r^n (1-r) * (strict term), gauge (1+eta) m^{-|s|}.
    """

    has_oracle = True

    def __init__(self, m: int = 2, r: float = 0.5, c: float = 0.5, eta: float = 1.0):
        if m < 2:
            raise InputError("word-tree model needs m >= 2")
        if not 0.0 < r < 1.0:
            raise InputError("word-tree model needs 0 < r < 1")
        if not 0.0 < c < 1.0:
            raise InputError("word-tree model needs 0 < c < 1")
        if eta < 0.0:
            raise InputError("word-tree model needs eta >= 0")
        self.m, self.r, self.c, self.eta = m, float(r), float(c), float(eta)
        self.name = f"word-tree(m={m},r={r},c={c},eta={eta})"
        self.branch = _prefix_branch(m)
        self._inv_m = 1.0 / m
        self._inv_sqrt_m = m ** -0.5
        # Power tables shared by the kernel and its oracles, grown on demand,
        # so both evaluation routes use bit-identical building blocks.
        self._pim: list[float] = [1.0]   # m^-k
        self._pism: list[float] = [1.0]  # m^(-k/2)
        self._pr: list[float] = [1.0]    # r^k
        self.kernel = Kernel(self._make_eval(), name=f"K[{self.name}]")
        # Named parts, exposed for order/invariance tests.
        self.diag_invariant = Kernel(self._j0, name="J0")   # L-invariant, diagonal
        self.rank_one = Kernel(self._j1, name="J1")         # L-invariant, rank one
        self.strict_part = Kernel(self._e, name="E")        # L E = r E
        self.majorant = Kernel(self._j, name="J")           # = limit kernel

    def point(self, spec) -> Point:
        return _parse_word(spec, self.m)

    # power tables -------------------------------------------------------
    def _pow(self, table: list[float], base: float, k: int) -> float:
        while len(table) <= k:
            table.append(base ** len(table))
        return table[k]

    # kernel parts -----------------------------------------------------
    def _j0(self, u, v):
        return self._pow(self._pim, self._inv_m, len(u)) if u == v else 0.0

    def _j1(self, u, v):
        return self._pow(self._pism, self._inv_sqrt_m, len(u) + len(v))

    def _e(self, u, v):
        if u != v:
            return 0.0
        k = len(u)
        return self.c * self._pow(self._pr, self.r, k) * self._pow(self._pim, self._inv_m, k)

    def _j(self, u, v):
        return self._j0(u, v) + self.eta * self._j1(u, v)

    def _make_eval(self):
        # Flat closure for the hot path; aliases the shared power tables.
        pim, pism, pr = self._pim, self._pism, self._pr
        inv_m, inv_sqrt_m = self._inv_m, self._inv_sqrt_m
        r, c, eta = self.r, self.c, self.eta

        def evaluate(u, v):
            lu = len(u)
            k = lu + len(v)
            while len(pism) <= k:
                pism.append(inv_sqrt_m ** len(pism))
            val = eta * pism[k]
            if u == v:
                while len(pim) <= lu:
                    pim.append(inv_m ** len(pim))
                while len(pr) <= lu:
                    pr.append(r ** len(pr))
                val += pim[lu] * (1.0 - c * pr[lu])
            return val

        return evaluate

    # closed-form oracles ----------------------------------------------
    def oracle_level(self, n: int, u, v) -> float:
        """Level-n tower kernel."""
        return self._j(u, v) - self.r**n * self._e(u, v)

    def oracle_defect(self, n: int, u, v) -> float:
        """Level-n defect kernel (diagonal, geometric in n)."""
        return self.r**n * (1.0 - self.r) * self._e(u, v)

    def oracle_limit(self, u, v) -> float:
        """Minimal invariant majorant of the kernel."""
        return self._j(u, v)

    def oracle_gauge(self, s) -> float:
        """Harmonic gauge = limit diagonal = (1+eta) m^{-|s|}."""
        return (1.0 + self.eta) * self._pow(self._pim, self._inv_m, len(s))

    def defect_lyapunov(self):
        """(r, C, beta) with defect diagonal = C*r exactly and Pr = beta*r."""
        rate = self.r * self._inv_m

        def r_fn(s):
            return rate ** len(s)

        return r_fn, (1.0 - self.r) * self.c, self.r

    def diagonal_lyapunov(self):
        """(r, C) with kernel diagonal <= C*r and Pr = r (beta = 1)."""

        def r_fn(s):
            return self._inv_m ** len(s)

        return r_fn, 1.0 + self.eta


class DivergentDeltaModel(Model):
    """Identity kernel on the word tree: every diagonal doubles per level.

    The branching operator multiplies the identity kernel by m, so the
    diagonal is m^n and the tower has no finite completion anywhere; used
    as the canonical blow-up witness model.
    """

    has_oracle = True

    def __init__(self, m: int = 2):
        if m < 2:
            raise InputError("divergent delta model needs m >= 2")
        self.m = m
        self.name = f"delta(m={m})"
        self.branch = _prefix_branch(m)
        self.kernel = Kernel(lambda u, v: 1.0 if u == v else 0.0, name="delta")

    def point(self, spec) -> Point:
        return _parse_word(spec, self.m)

    def oracle_level(self, n: int, u, v) -> float:
        return float(self.m**n) if u == v else 0.0

    def oracle_defect(self, n: int, u, v) -> float:
        return float(self.m**n * (self.m - 1)) if u == v else 0.0

    def oracle_diagonal(self, n: int) -> float:
        return float(self.m**n)


class FiniteStateModel(Model):
    """S states, m map tables, one symmetric PSD kernel table."""

    def __init__(self, maps: Sequence[Sequence[int]], kernel: Sequence[Sequence[float]],
                 name: str = "finite-state", tol: float = DEFAULT_PSD_TOL,
                 lyapunov: Mapping | None = None):
        table = np.asarray(kernel, dtype=float)
        if table.ndim != 2 or table.shape[0] != table.shape[1]:
            raise InputError("finite-state kernel table must be square")
        self.S = table.shape[0]
        if not np.allclose(table, table.T, atol=1e-12):
            raise InputError("finite-state kernel table must be symmetric")
        report = psd_check(table, tol)
        if not report.psd:
            raise InputError(f"finite-state kernel table is not PSD: {report.summary()}")
        self.maps_table = [list(row) for row in maps]
        if not self.maps_table:
            raise InputError("finite-state model needs at least one map table")
        for k, row in enumerate(self.maps_table):
            if len(row) != self.S:
                raise InputError(f"map table {k} has {len(row)} entries, expected {self.S}")
            for s, x in enumerate(row):
                if not isinstance(x, int) or not 0 <= x < self.S:
                    raise InputError(f"map table {k} sends state {s} to {x!r}, outside 0..{self.S - 1}")
        self.table = table
        self.m = len(self.maps_table)
        self.name = name
        self.branch = BranchSystem(
            [(lambda row: (lambda s: row[s]))(row) for row in self.maps_table],
            name=f"{name}-maps",
        )
        self.kernel = Kernel(lambda s, t: float(table[s, t]), name=f"K[{name}]")
        self.lyapunov = dict(lyapunov) if lyapunov else None

    def point(self, spec) -> Point:
        try:
            s = int(spec)
        except (TypeError, ValueError):
            raise InputError(f"finite-state point {spec!r} must be an integer state") from None
        if not 0 <= s < self.S:
            raise InputError(f"state {s} outside 0..{self.S - 1}")
        return s

    def all_states(self) -> list[int]:
        return list(range(self.S))


def feeder_model() -> FiniteStateModel:
    """3-state builtin: one feeder state with a one-step defect.

    State 1 is the kernel-null sink, state 0 a fixed spine, state 2 feeds
    into the spine under both maps.  The defect is supported at the feeder
    (value 0.5), the tower is constant from level 1 on, and the harmonic
    gauge (1, 0, 2) gives a nondegenerate Doob chain on states {0, 2}.
    """
    return FiniteStateModel(
        maps=[[0, 1, 0], [1, 1, 0]],
        kernel=[[1.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 1.5]],
        name="feeder",
    )


def load_finite_state(record: Mapping) -> FiniteStateModel:
    """Build a finite-state model from a config record, with path-qualified errors."""
    if "maps" not in record:
        raise InputError("finite-state config: missing 'maps'")
    if "kernel" not in record:
        raise InputError("finite-state config: missing 'kernel'")
    maps = record["maps"]
    try:
        maps = [[int(x) for x in row] for row in maps]
    except (TypeError, ValueError):
        raise InputError("finite-state config: 'maps' must be lists of integers") from None
    try:
        kernel = [[float(x) for x in row] for row in record["kernel"]]
    except (TypeError, ValueError):
        raise InputError("finite-state config: 'kernel' must be lists of numbers") from None
    name = str(record.get("name", "finite-state"))
    lyap = record.get("lyapunov")
    try:
        return FiniteStateModel(maps, kernel, name=name, lyapunov=lyap)
    except InputError as exc:
        raise InputError(f"finite-state config: {exc}") from None


def oracle_level(model: Model, n: int, s, t) -> float:
    if not model.has_oracle:
        raise ContractError(f"model {model.name} has no closed-form level oracle")
    return model.oracle_level(n, s, t)


def oracle_defect(model: Model, n: int, s, t) -> float:
    if not model.has_oracle:
        raise ContractError(f"model {model.name} has no closed-form defect oracle")
    return model.oracle_defect(n, s, t)


def build_model(kind: str, params: Mapping) -> Model:
    """Registry used by config ingestion."""
    if kind == "word-tree":
        return WordTreeModel(
            m=int(params.get("m", 2)),
            r=float(params.get("r", 0.5)),
            c=float(params.get("c", 0.5)),
            eta=float(params.get("eta", 1.0)),
        )
    if kind == "delta":
        return DivergentDeltaModel(m=int(params.get("m", 2)))
    if kind == "feeder":
        return feeder_model()
    if kind == "finite-state":
        return load_finite_state(params)
    raise InputError(f"unknown model kind {kind!r} (expected word-tree | delta | feeder | finite-state)")
