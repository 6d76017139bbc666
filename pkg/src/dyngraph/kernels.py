"""Mark spaces and symmetric connection/update kernels.

A kernel assigns a nonnegative weight kappa(x, y) to a pair of vertex
marks.  Connection probabilities in a graph on n vertices are
kappa(x, y) / n, capped at 1.  Update kernels beta(x, y) (or one-argument
vertex rates beta(x)) control how fast edges are refreshed.

Two mark spaces are supported: a finite set {0, .., r-1} with an explicit
weight vector, and the unit interval (0, 1] with Lebesgue measure.  Kernels
on the unit interval can be projected onto a dyadic finite partition, which
yields a finite-type kernel bounded above by the original one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

__all__ = [
    "MarkSpace",
    "Kernel",
    "MatrixKernel",
    "FactorKernel",
    "PrefAttachKernel",
    "StrongKernel",
    "WeakKernel",
    "UpdateEtaKernel",
    "VertexRateKernel",
    "constant_kernel",
    "connection_prob",
    "finitary_approximation",
    "graphical_check",
    "GraphicalDiagnostics",
]

_WEIGHT_TOL = 1e-12


class KernelDomainError(ValueError):
    """Raised when a kernel is evaluated outside its mark domain."""


@dataclass(frozen=True)
class MarkSpace:
    """Type space of vertex marks together with its reference measure."""

    kind: str                      # "finite" or "unit_interval"
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind == "finite":
            if not self.weights:
                raise ValueError("finite mark space needs a weight vector")
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0):
                raise ValueError("mark weights must be nonnegative")
            if abs(float(w.sum()) - 1.0) > _WEIGHT_TOL:
                raise ValueError("mark weights must sum to 1 within 1e-12")
        elif self.kind == "unit_interval":
            if self.weights is not None:
                raise ValueError("unit_interval mark space carries no weights")
        else:
            raise ValueError(f"unknown mark space kind: {self.kind!r}")

    @classmethod
    def finite(cls, weights) -> "MarkSpace":
        return cls(kind="finite", weights=tuple(float(w) for w in weights))

    @classmethod
    def single_type(cls) -> "MarkSpace":
        return cls.finite([1.0])

    @classmethod
    def unit_interval(cls) -> "MarkSpace":
        return cls(kind="unit_interval")

    @property
    def r(self) -> int:
        if self.kind != "finite":
            raise ValueError("r is defined for finite mark spaces only")
        return len(self.weights)

    @property
    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


def _check_unit_mark(x) -> float:
    x = float(x)
    if not (0.0 < x <= 1.0):
        raise KernelDomainError(f"mark {x} outside (0, 1]")
    return x


class Kernel:
    """Symmetric binary kernel on a mark space."""

    def __call__(self, x, y) -> float:
        raise NotImplementedError

    def max_value(self) -> float:
        """Supremum of the kernel, when finite and known."""
        raise NotImplementedError(
            f"{type(self).__name__} has no finite max; project it first")


@dataclass(frozen=True)
class MatrixKernel(Kernel):
    """Finite-type kernel given by a symmetric nonnegative matrix."""

    values: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        m = np.asarray(self.values, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("kernel matrix must be square")
        if np.any(m < 0):
            raise ValueError("kernel matrix must be nonnegative")
        if not np.allclose(m, m.T, atol=0, rtol=0):
            raise ValueError("kernel matrix must be symmetric")
        object.__setattr__(self, "_array", m)

    @classmethod
    def from_array(cls, arr) -> "MatrixKernel":
        m = np.asarray(arr, dtype=float)
        return cls(tuple(tuple(float(v) for v in row) for row in m))

    @property
    def r(self) -> int:
        return self._array.shape[0]

    @property
    def array(self) -> np.ndarray:
        return self._array

    def __call__(self, x, y) -> float:
        r = self._array.shape[0]
        xi, yi = int(x), int(y)
        if not (0 <= xi < r and 0 <= yi < r):
            raise KernelDomainError(f"type index ({x}, {y}) out of range for r={r}")
        return float(self._array[xi, yi])

    def max_value(self) -> float:
        return float(self._array.max())


def constant_kernel(c: float, r: int = 1) -> MatrixKernel:
    """Constant kernel on r finite types."""
    return MatrixKernel.from_array(np.full((r, r), float(c)))


class _UnitIntervalKernel(Kernel):
    """Base for the power-law kernel presets on (0, 1].

    All presets diverge as a mark tends to 0, so 0 itself is rejected.
    """

    def __call__(self, x, y) -> float:
        return self._eval(_check_unit_mark(x), _check_unit_mark(y))

    def _eval(self, x: float, y: float) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class FactorKernel(_UnitIntervalKernel):
    """a * x^-gamma * y^-gamma (rank-one product form)."""

    a: float = 1.0
    gamma: float = 0.25

    def _eval(self, x, y):
        return self.a * x ** (-self.gamma) * y ** (-self.gamma)


@dataclass(frozen=True)
class PrefAttachKernel(_UnitIntervalKernel):
    """a * min(x,y)^-gamma * max(x,y)^(gamma-1)."""

    a: float = 1.0
    gamma: float = 0.25

    def _eval(self, x, y):
        lo, hi = (x, y) if x <= y else (y, x)
        return self.a * lo ** (-self.gamma) * hi ** (self.gamma - 1.0)


@dataclass(frozen=True)
class StrongKernel(_UnitIntervalKernel):
    """a * min(x,y)^-gamma."""

    a: float = 1.0
    gamma: float = 0.25

    def _eval(self, x, y):
        return self.a * min(x, y) ** (-self.gamma)


@dataclass(frozen=True)
class WeakKernel(_UnitIntervalKernel):
    """a * max(x,y)^-(gamma+1)."""

    a: float = 1.0
    gamma: float = 0.25

    def _eval(self, x, y):
        return self.a * max(x, y) ** (-(self.gamma + 1.0))


@dataclass(frozen=True)
class UpdateEtaKernel(_UnitIntervalKernel):
    """b * (x^-(gamma*eta) + y^-(gamma*eta)), the update-speed preset.

    eta > 0 slows refreshes of low-mark pairs down relative to eta < 0.
    """

    b: float = 1.0
    gamma: float = 0.25
    eta: float = 1.0

    def _eval(self, x, y):
        e = self.gamma * self.eta
        return self.b * (x ** (-e) + y ** (-e))


class UnaryKernel:
    """One-argument rate, used by the vertex-updating dynamics."""

    def __call__(self, x) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class VertexRateKernel(UnaryKernel):
    """Per-vertex update rate beta(x).

    For finite types pass a rate vector; on the unit interval pass
    b and exponent so that beta(x) = b * x^-exponent.
    """

    values: tuple[float, ...] | None = None
    b: float = 1.0
    exponent: float = 0.0

    def __call__(self, x) -> float:
        if self.values is not None:
            xi = int(x)
            if not (0 <= xi < len(self.values)):
                raise KernelDomainError(f"type index {x} out of range")
            return float(self.values[xi])
        return self.b * _check_unit_mark(x) ** (-self.exponent)

    def max_value(self) -> float:
        if self.values is None:
            raise NotImplementedError("project unit-interval rates first")
        return float(max(self.values))


def connection_prob(kernel: Kernel, x, y, n: int) -> float:
    """Edge probability kappa(x, y)/n, capped at 1."""
    if n <= 0:
        raise ValueError("n must be positive")
    return min(kernel(x, y) / n, 1.0)


# -- Finitary projection -----------------------------------------------------

# Per-cell grid resolution used to approximate the infimum of a kernel over
# a dyadic cell.  The presets above are coordinate-monotone, so the infimum
# sits at a cell corner and the grid is exact for them; for general kernels
# this is only a grid minimum.
_INF_GRID = 32


def _cell_points(i: int, m: int) -> np.ndarray:
    """Evaluation grid inside dyadic cell (i*2^-m, (i+1)*2^-m].

    The left endpoint is excluded (marks live in (0, 1]) while the right
    endpoint is included, matching the half-open cells.
    """
    lo = i * 2.0 ** (-m)
    hi = (i + 1) * 2.0 ** (-m)
    step = (hi - lo) / _INF_GRID
    return lo + step * np.arange(1, _INF_GRID + 1)


@dataclass(frozen=True)
class FinitaryApproximation:
    """Finite-type lower bound of a unit-interval kernel."""

    matrix: MatrixKernel
    mark_space: MarkSpace
    level: int

    def project(self, x) -> int:
        """Cell index of a unit-interval mark."""
        x = _check_unit_mark(x)
        return min(int(math.ceil(x * 2 ** self.level)) - 1, 2 ** self.level - 1)


def finitary_approximation(kernel: Kernel, m: int) -> FinitaryApproximation:
    """Project a unit-interval kernel to 2^m dyadic cells.

    Entry (i, j) is the grid minimum of the kernel over cell_i x cell_j, so
    the projected kernel never exceeds the original on the corresponding
    cells, and refining m can only increase each entry.
    """
    if m < 0:
        raise ValueError("level m must be nonnegative")
    cells = 2 ** m
    pts = [_cell_points(i, m) for i in range(cells)]
    vals = np.empty((cells, cells))
    for i in range(cells):
        for j in range(i, cells):
            grid = np.array([kernel(x, y) for x in pts[i] for y in pts[j]])
            vals[i, j] = vals[j, i] = grid.min()
    weights = [2.0 ** (-m)] * cells
    return FinitaryApproximation(
        matrix=MatrixKernel.from_array(vals),
        mark_space=MarkSpace.finite(weights),
        level=m,
    )


# -- Graphicality diagnostics ------------------------------------------------


@dataclass
class GraphicalDiagnostics:
    """Empirical sums against their Monte-Carlo limit integrals."""

    lhs_kappa: float
    rhs_kappa: float
    rhs_kappa_se: float
    lhs_kappa_beta: float
    rhs_kappa_beta: float
    rhs_kappa_beta_se: float
    mark_discrepancy: float | None = None

    def gaps(self) -> tuple[float, float]:
        return (self.lhs_kappa - self.rhs_kappa,
                self.lhs_kappa_beta - self.rhs_kappa_beta)


def _pair_sum_finite(kernel_vals: np.ndarray, counts: np.ndarray, n: int) -> float:
    """sum over unordered pairs of min(kappa, n), normalized by n^2."""
    r = len(counts)
    total = 0.0
    for a in range(r):
        for b in range(a, r):
            v = min(kernel_vals[a, b], float(n))
            npairs = counts[a] * (counts[a] - 1) / 2 if a == b else counts[a] * counts[b]
            total += v * npairs
    return total / n ** 2


def _pair_sum_marks(func, marks: np.ndarray, n: int, chunk: int = 256) -> float:
    """Same pair sum for continuous marks, evaluated in row chunks."""
    total = 0.0
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        block = func(marks[lo:hi, None], marks[None, :])
        block = np.minimum(block, float(n))
        # keep strictly-upper-triangular part of the block rows
        for i in range(lo, hi):
            total += float(block[i - lo, i + 1:].sum())
    return total / n ** 2


def graphical_check(kappa: Kernel, beta, vs, mc_samples: int = 100_000,
                    rng: np.random.Generator | None = None) -> GraphicalDiagnostics:
    """Compare the two finite-n pair sums with their limiting integrals.

    vs is a vertex-space realization (see dyngraph.vertexspace).  The
    right-hand sides (1/2) iint kappa dmu dmu and (1/2) iint beta*kappa are
    estimated by Monte-Carlo over mark pairs with standard errors.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    n = vs.n
    marks = vs.marks

    def beta_of(x, y):
        if isinstance(beta, UnaryKernel):
            # one-argument rates refresh a pair whenever either endpoint
            # updates, hence the sum
            return beta(x) + beta(y)
        return beta(x, y)

    if vs.mark_space.kind == "finite":
        counts = vs.type_counts.astype(float)
        r = vs.mark_space.r
        kv = np.array([[kappa(a, b) for b in range(r)] for a in range(r)])
        bv = np.array([[beta_of(a, b) for b in range(r)] for a in range(r)])
        lhs1 = _pair_sum_finite(kv, counts, n)
        lhs2 = _pair_sum_finite(bv * kv, counts, n)
        xs = rng.choice(r, size=mc_samples, p=vs.mark_space.weight_array)
        ys = rng.choice(r, size=mc_samples, p=vs.mark_space.weight_array)
        k_samp = kv[xs, ys]
        bk_samp = (bv * kv)[xs, ys]
        disc = vs.discrepancy()
    else:
        def kv_fun(x, y):
            return np.vectorize(kappa)(x, y)

        def bkv_fun(x, y):
            return np.vectorize(lambda a, b: beta_of(a, b) * kappa(a, b))(x, y)

        lhs1 = _pair_sum_marks(kv_fun, marks, n)
        lhs2 = _pair_sum_marks(bkv_fun, marks, n)
        xs = rng.random(mc_samples)
        ys = rng.random(mc_samples)
        xs[xs == 0.0] = 1.0
        ys[ys == 0.0] = 1.0
        k_samp = np.array([kappa(x, y) for x, y in zip(xs, ys)])
        bk_samp = np.array([beta_of(x, y) * kappa(x, y) for x, y in zip(xs, ys)])
        disc = None

    rhs1 = 0.5 * float(k_samp.mean())
    rhs1_se = 0.5 * float(k_samp.std(ddof=1)) / math.sqrt(mc_samples)
    rhs2 = 0.5 * float(bk_samp.mean())
    rhs2_se = 0.5 * float(bk_samp.std(ddof=1)) / math.sqrt(mc_samples)
    return GraphicalDiagnostics(lhs1, rhs1, rhs1_se, lhs2, rhs2, rhs2_se, disc)
