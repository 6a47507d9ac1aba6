"""Factor graph representation and a Levenberg-Marquardt least-squares solver.

Variables are real vector blocks, factors are weighted residual functions over
a few blocks, and solving means minimizing the sum of squared whitened
residuals.  The normal equations are assembled block-sparse from the
factor-variable adjacency and factored densely, which is fast enough for
horizon-sized problems (a few hundred scalars).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

__all__ = [
    "VariableKey",
    "Values",
    "Factor",
    "FactorGraph",
    "SolverConfig",
    "SolveStats",
    "LinearSystem",
    "GraphStructureError",
    "FactorNumericalError",
    "ResidualDomainError",
    "map_objective",
    "linearize",
    "solve_lm",
]

# Damping is never pushed past this before the solver gives up.
_LAMBDA_CAP = 1e12


class GraphStructureError(Exception):
    """Graph and values disagree (missing block, undeclared key, disconnected)."""


class FactorNumericalError(Exception):
    """A factor produced a non-finite residual or Jacobian entry."""

    def __init__(self, label: str, what: str):
        super().__init__(f"factor '{label}': non-finite {what}")
        self.label = label


class ResidualDomainError(Exception):
    """A factor cannot be evaluated at the given point.

    Raised during a trial-step evaluation this rejects the step (the solver
    backs off by raising the damping); raised anywhere else it propagates.
    """


@dataclass(frozen=True)
class VariableKey:
    """Handle for one optimization block: an ordinal id plus its dimension."""

    id: int
    dim: int

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError(f"variable dim must be positive, got {self.dim}")


class Values:
    """Assignment of a real vector to every variable key."""

    __slots__ = ("_data",)

    def __init__(self, data: dict[VariableKey, np.ndarray] | None = None):
        self._data: dict[VariableKey, np.ndarray] = {}
        if data:
            for key, vec in data.items():
                self.set(key, vec)

    def set(self, key: VariableKey, vec) -> None:
        arr = np.asarray(vec, dtype=float)
        if arr.shape != (key.dim,):
            raise GraphStructureError(
                f"block for variable {key.id} has shape {arr.shape}, expected ({key.dim},)"
            )
        self._data[key] = arr

    def __getitem__(self, key: VariableKey) -> np.ndarray:
        try:
            return self._data[key]
        except KeyError:
            raise GraphStructureError(f"no value for variable {key.id}") from None

    def __contains__(self, key: VariableKey) -> bool:
        return key in self._data

    def __len__(self) -> int:
        return len(self._data)

    def keys(self):
        return self._data.keys()

    def copy(self) -> "Values":
        out = Values()
        out._data = {k: v.copy() for k, v in self._data.items()}
        return out

    def retract(self, ordering: Sequence[VariableKey], offsets: dict[VariableKey, int],
                delta: np.ndarray) -> "Values":
        """New Values with `delta` (stacked per `ordering`) added to each block."""
        out = Values()
        data = out._data
        for key in ordering:
            off = offsets[key]
            data[key] = self._data[key] + delta[off:off + key.dim]
        # variables outside the ordering (none in practice) carry over unchanged
        for key, vec in self._data.items():
            if key not in data:
                data[key] = vec.copy()
        return out


@dataclass
class Factor:
    """Weighted residual over an ordered tuple of variable blocks.

    `residual(values)` returns an m-vector, `jacobians(values)` one m-by-dim
    matrix per key, in key order.  The noise model is isotropic: the factor
    contributes ``0.5 * ||residual||^2 / sigma^2`` to the objective.

    `hinge` marks factors whose Jacobians are exactly zero wherever the
    residual is zero (one-sided penalties); the linearizer skips their
    Jacobian evaluation when inactive.
    """

    keys: tuple[VariableKey, ...]
    residual: Callable[[Values], np.ndarray]
    jacobians: Callable[[Values], list[np.ndarray]]
    sigma: float
    label: str = "factor"
    hinge: bool = False

    def __post_init__(self):
        self.keys = tuple(self.keys)
        if self.sigma <= 0:
            raise ValueError(f"factor '{self.label}': sigma must be positive")

    def whitened_residual(self, values: Values) -> np.ndarray:
        return np.asarray(self.residual(values), dtype=float) / self.sigma


class FactorGraph:
    """Bipartite model: declared variable keys plus the factors over them."""

    def __init__(self):
        self.variables: dict[int, VariableKey] = {}
        self.factors: list[Factor] = []

    def add_variable(self, key: VariableKey) -> VariableKey:
        existing = self.variables.get(key.id)
        if existing is not None and existing != key:
            raise GraphStructureError(f"variable id {key.id} already declared with dim {existing.dim}")
        self.variables[key.id] = key
        return key

    def add_factor(self, factor: Factor) -> None:
        for key in factor.keys:
            if self.variables.get(key.id) != key:
                raise GraphStructureError(
                    f"factor '{factor.label}' references undeclared variable {key.id}"
                )
        self.factors.append(factor)

    def ordering(self) -> list[VariableKey]:
        return [self.variables[i] for i in sorted(self.variables)]

    def check_connected(self) -> None:
        """Union-find over factor adjacency; solvable graphs are one component."""
        if not self.variables:
            raise GraphStructureError("graph has no variables")
        parent = {i: i for i in self.variables}

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for f in self.factors:
            ids = [k.id for k in f.keys]
            for other in ids[1:]:
                parent[find(other)] = find(ids[0])
        roots = {find(i) for i in self.variables}
        if len(roots) > 1:
            raise GraphStructureError(f"graph is disconnected ({len(roots)} components)")


@dataclass
class SolverConfig:
    """Levenberg-Marquardt settings; eta is the infinity-norm update threshold.

    `min_relative_decrease` is a plateau stop: once an accepted step improves
    the objective by less than this fraction, the solve counts as converged.
    Large-residual problems (this planner's windows among them) otherwise
    crawl with step norms that never reach eta.
    """

    eta: float = 1e-4
    lambda_init: float = 1e-4
    lambda_factor: float = 10.0
    max_iterations: int = 100
    min_relative_decrease: float = 1e-2

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.lambda_init <= 0:
            raise ValueError("lambda_init must be positive")
        if self.lambda_factor <= 1:
            raise ValueError("lambda_factor must exceed 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.min_relative_decrease < 0:
            raise ValueError("min_relative_decrease must be nonnegative")


@dataclass
class SolveStats:
    iterations: int = 0
    initial_objective: float = 0.0
    final_objective: float = 0.0
    converged: bool = False
    wall_time: float = 0.0
    final_lambda: float = 0.0


@dataclass
class LinearSystem:
    """Whitened linearization: per-factor Jacobian blocks and residuals.

    The Gauss-Newton step solves min ||J delta + b||^2 where J stacks the
    whitened blocks at their variable column offsets and b stacks the whitened
    residuals.  Only adjacency blocks are stored; everything else is zero.
    """

    ordering: list[VariableKey]
    offsets: dict[VariableKey, int]
    num_cols: int
    num_rows: int
    factor_keys: list[tuple[VariableKey, ...]]
    blocks: list[list[np.ndarray]]
    residuals: list[np.ndarray]
    row_offsets: list[int] = field(default_factory=list)

    def residual_vector(self) -> np.ndarray:
        b = np.empty(self.num_rows)
        for off, r in zip(self.row_offsets, self.residuals):
            b[off:off + r.shape[0]] = r
        return b

    def jacobian_dense(self) -> np.ndarray:
        J = np.zeros((self.num_rows, self.num_cols))
        for row, keys, blks in zip(self.row_offsets, self.factor_keys, self.blocks):
            for key, blk in zip(keys, blks):
                col = self.offsets[key]
                J[row:row + blk.shape[0], col:col + key.dim] = blk
        return J

    def nonzero_block_count(self) -> int:
        return sum(len(blks) for blks in self.blocks)

    def variable_block_pairs(self) -> set[tuple[int, int]]:
        """Variable-id pairs with a structurally nonzero block in J^T J."""
        pairs: set[tuple[int, int]] = set()
        for keys in self.factor_keys:
            ids = [k.id for k in keys]
            for a in ids:
                for b in ids:
                    pairs.add((a, b))
        return pairs

    def normal_equations(self) -> tuple[np.ndarray, np.ndarray]:
        """Assemble H = J^T J and g = J^T b by scattering adjacency blocks.

        Factors whose Jacobian blocks are all zero (inactive hinges) are
        skipped; most limit and boundary factors are inactive at any healthy
        iterate.
        """
        H = np.zeros((self.num_cols, self.num_cols))
        g = np.zeros(self.num_cols)
        offs = self.offsets
        for keys, blks, r in zip(self.factor_keys, self.blocks, self.residuals):
            if not blks:
                continue
            if len(keys) == 1:
                ka = keys[0]
                Ja = blks[0]
                oa = offs[ka]
                g[oa:oa + ka.dim] += Ja.T @ r
                H[oa:oa + ka.dim, oa:oa + ka.dim] += Ja.T @ Ja
                continue
            n = len(keys)
            for a in range(n):
                ka = keys[a]
                Ja = blks[a]
                oa = offs[ka]
                g[oa:oa + ka.dim] += Ja.T @ r
                for b in range(a, n):
                    kb = keys[b]
                    ob = offs[kb]
                    prod = Ja.T @ blks[b]
                    H[oa:oa + ka.dim, ob:ob + kb.dim] += prod
                    if b != a:
                        H[ob:ob + kb.dim, oa:oa + ka.dim] += prod.T
        return H, g


def map_objective(graph: FactorGraph, values: Values) -> float:
    """Negative log posterior up to constants: sum of 0.5 ||r_f||^2 / sigma_f^2."""
    total = 0.0
    for f in graph.factors:
        r = f.residual(values)
        total += float(np.dot(r, r)) / (f.sigma * f.sigma)
    return 0.5 * total


def linearize(graph: FactorGraph, values: Values) -> LinearSystem:
    """Whitened Jacobian blocks and residuals of every factor at `values`."""
    ordering = graph.ordering()
    offsets: dict[VariableKey, int] = {}
    col = 0
    for key in ordering:
        if key not in values:
            raise GraphStructureError(f"values missing variable {key.id}")
        offsets[key] = col
        col += key.dim

    factor_keys: list[tuple[VariableKey, ...]] = []
    blocks: list[list[np.ndarray]] = []
    residuals: list[np.ndarray] = []
    row_offsets: list[int] = []
    row = 0
    for f in graph.factors:
        w = 1.0 / f.sigma
        raw = np.asarray(f.residual(values), dtype=float)
        if not np.all(np.isfinite(raw)):
            raise FactorNumericalError(f.label, "residual")
        r = raw * w
        if f.hinge and not raw.any():
            # inactive one-sided penalty: zero residual implies zero Jacobian
            factor_keys.append(f.keys)
            blocks.append([])
            residuals.append(r)
            row_offsets.append(row)
            row += r.shape[0]
            continue
        jacs = f.jacobians(values)
        whitened: list[np.ndarray] = []
        for key, J in zip(f.keys, jacs):
            Jw = np.asarray(J, dtype=float) * w
            if Jw.shape != (r.shape[0], key.dim):
                raise GraphStructureError(
                    f"factor '{f.label}': Jacobian shape {Jw.shape} does not match "
                    f"residual dim {r.shape[0]} and variable dim {key.dim}"
                )
            if not np.all(np.isfinite(Jw)):
                raise FactorNumericalError(f.label, "Jacobian")
            whitened.append(Jw)
        factor_keys.append(f.keys)
        blocks.append(whitened)
        residuals.append(r)
        row_offsets.append(row)
        row += r.shape[0]

    return LinearSystem(
        ordering=ordering,
        offsets=offsets,
        num_cols=col,
        num_rows=row,
        factor_keys=factor_keys,
        blocks=blocks,
        residuals=residuals,
        row_offsets=row_offsets,
    )


def solve_lm(graph: FactorGraph, initial: Values,
             config: SolverConfig | None = None) -> tuple[Values, SolveStats]:
    """Minimize the graph objective from `initial` by Levenberg-Marquardt.

    Steps solve the damped normal equations (H + lambda I) delta = -g; a step
    is accepted only if it strictly decreases the objective, otherwise the
    damping grows and the values stay put.  Iteration stops once the computed
    update has infinity norm below `eta` or the iteration budget runs out.
    """
    config = config or SolverConfig()
    graph.check_connected()
    for key in graph.ordering():
        if key not in initial:
            raise GraphStructureError(f"initial values missing variable {key.id}")

    t_start = time.perf_counter()
    values = initial.copy()
    objective = map_objective(graph, values)
    stats = SolveStats(initial_objective=objective, final_objective=objective)

    lam = config.lambda_init
    lin = linearize(graph, values)
    H, g = lin.normal_equations()

    for _ in range(config.max_iterations):
        # Marquardt scaling: damp relative to the diagonal, since whitened
        # diagonals can span many orders of magnitude across factor types.
        diag = np.diag(H).copy()
        damping = np.maximum(diag, 1e-12 * max(float(diag.max(initial=0.0)), 1.0))
        idx = np.arange(H.shape[0])
        delta = None
        while delta is None:
            Hd = H.copy()
            Hd[idx, idx] += lam * damping
            try:
                cho = scipy.linalg.cho_factor(Hd, lower=True, check_finite=False)
            except scipy.linalg.LinAlgError:
                lam *= config.lambda_factor
                if lam > _LAMBDA_CAP:
                    stats.final_objective = objective
                    stats.final_lambda = lam
                    stats.wall_time = time.perf_counter() - t_start
                    return values, stats
                continue
            delta = scipy.linalg.cho_solve(cho, -g, check_finite=False)
        stats.iterations += 1

        small = float(np.max(np.abs(delta))) < config.eta if delta.size else True
        trial = values.retract(lin.ordering, lin.offsets, delta)
        try:
            trial_objective = map_objective(graph, trial)
        except ResidualDomainError:
            trial_objective = math.inf

        # Gain ratio (actual over model-predicted decrease); the damping moves
        # only when the quadratic model is clearly good or clearly poor, which
        # avoids burning iterations on accept/reject ping-pong.
        predicted = 0.5 * float(lam * delta @ (damping * delta) - g @ delta)
        rho = (objective - trial_objective) / predicted if predicted > 0 else -1.0

        if trial_objective < objective:
            decrease = objective - trial_objective
            values = trial
            objective = trial_objective
            if rho > 0.75:
                lam = max(lam / config.lambda_factor, 1e-12)
            elif rho < 0.25:
                lam *= config.lambda_factor
            if decrease < config.min_relative_decrease * max(objective, 1e-300):
                stats.converged = True
                break
            if not small:
                lin = linearize(graph, values)
                H, g = lin.normal_equations()
        else:
            lam *= config.lambda_factor
            if lam > _LAMBDA_CAP:
                break
        if small:
            stats.converged = True
            break

    stats.final_objective = objective
    stats.final_lambda = lam
    stats.wall_time = time.perf_counter() - t_start
    return values, stats
