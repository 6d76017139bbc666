"""Mark spaces, kernel presets, and the finitary projection."""

import math

import numpy as np
import pytest

from dyngraph.kernels import (
    FactorKernel,
    KernelDomainError,
    MarkSpace,
    MatrixKernel,
    PrefAttachKernel,
    StrongKernel,
    UpdateEtaKernel,
    VertexRateKernel,
    WeakKernel,
    connection_prob,
    constant_kernel,
    finitary_approximation,
    graphical_check,
)
from dyngraph.vertexspace import realize


def test_mark_space_finite_weights_validate():
    ms = MarkSpace.finite([0.25, 0.75])
    assert ms.r == 2
    assert ms.weight_array.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        MarkSpace.finite([0.5, 0.6])
    with pytest.raises(ValueError):
        MarkSpace.finite([-0.1, 1.1])
    with pytest.raises(ValueError):
        MarkSpace.finite([])


def test_mark_space_unit_interval_carries_no_weights():
    ms = MarkSpace.unit_interval()
    with pytest.raises(ValueError):
        _ = ms.r
    with pytest.raises(ValueError):
        MarkSpace(kind="unit_interval", weights=(1.0,))
    with pytest.raises(ValueError):
        MarkSpace(kind="circle")


def test_matrix_kernel_checks_shape_and_symmetry():
    with pytest.raises(ValueError):
        MatrixKernel.from_array([[1.0, 2.0]])
    with pytest.raises(ValueError):
        MatrixKernel.from_array([[1.0, 2.0], [3.0, 1.0]])
    with pytest.raises(ValueError):
        MatrixKernel.from_array([[1.0, -2.0], [-2.0, 1.0]])
    k = MatrixKernel.from_array([[1.0, 2.0], [2.0, 4.0]])
    assert k(0, 1) == 2.0
    assert k(1, 1) == 4.0
    assert k.max_value() == 4.0
    with pytest.raises(KernelDomainError):
        k(0, 2)


def test_constant_kernel():
    k = constant_kernel(1.5, r=3)
    assert all(k(a, b) == 1.5 for a in range(3) for b in range(3))
    assert k.max_value() == 1.5


def test_unit_interval_preset_formulas():
    # spot values straight from the closed forms
    x, y = 0.25, 0.5
    g = 0.25
    assert FactorKernel(2.0, g)(x, y) == pytest.approx(
        2.0 * x ** -g * y ** -g)
    assert PrefAttachKernel(1.0, g)(x, y) == pytest.approx(
        x ** -g * y ** (g - 1.0))
    assert StrongKernel(1.0, g)(x, y) == pytest.approx(x ** -g)
    assert WeakKernel(1.0, g)(x, y) == pytest.approx(y ** -(g + 1.0))
    assert UpdateEtaKernel(1.0, g, 2.0)(x, y) == pytest.approx(
        x ** (-2 * g) + y ** (-2 * g))
    # symmetry
    for kern in (FactorKernel(), PrefAttachKernel(), StrongKernel(),
                 WeakKernel(), UpdateEtaKernel()):
        assert kern(x, y) == pytest.approx(kern(y, x))


def test_unit_interval_presets_reject_mark_zero():
    for kern in (FactorKernel(), PrefAttachKernel(), StrongKernel(),
                 WeakKernel(), UpdateEtaKernel()):
        with pytest.raises(KernelDomainError):
            kern(0.0, 0.5)
        with pytest.raises(KernelDomainError):
            kern(0.5, 1.5)


def test_vertex_rate_kernel_both_parameterizations():
    vr = VertexRateKernel(values=(1.0, 3.0))
    assert vr(0) == 1.0 and vr(1) == 3.0
    assert vr.max_value() == 3.0
    with pytest.raises(KernelDomainError):
        vr(2)
    power = VertexRateKernel(b=2.0, exponent=0.5)
    assert power(0.25) == pytest.approx(2.0 * 0.25 ** -0.5)
    with pytest.raises(NotImplementedError):
        power.max_value()


def test_connection_prob_caps_at_one():
    k = constant_kernel(5.0)
    assert connection_prob(k, 0, 0, 100) == pytest.approx(0.05)
    assert connection_prob(k, 0, 0, 3) == 1.0
    with pytest.raises(ValueError):
        connection_prob(k, 0, 0, 0)


def test_finitary_approximation_lower_bound_and_monotone():
    kern = StrongKernel(1.0, 0.5)
    fa2 = finitary_approximation(kern, 2)
    fa3 = finitary_approximation(kern, 3)
    assert fa2.mark_space.r == 4 and fa3.mark_space.r == 8
    # dominated by the kernel on sampled mark pairs of each cell
    rng = np.random.default_rng(5)
    for _ in range(200):
        x, y = rng.random(2)
        x, y = max(x, 1e-9), max(y, 1e-9)
        i, j = fa2.project(x), fa2.project(y)
        assert fa2.matrix(i, j) <= kern(x, y) + 1e-12
    # refinement never lowers the value at matching cells: cell i at level 2
    # splits into 2i, 2i+1 at level 3
    a2, a3 = fa2.matrix.array, fa3.matrix.array
    for i in range(4):
        for j in range(4):
            for ii in (2 * i, 2 * i + 1):
                for jj in (2 * j, 2 * j + 1):
                    assert a3[ii, jj] >= a2[i, j] - 1e-12


def test_finitary_projection_indices():
    fa = finitary_approximation(StrongKernel(), 2)
    # cells are ((i) 2^-m, (i+1) 2^-m]; right endpoints land in their cell
    assert fa.project(0.25) == 0
    assert fa.project(0.250001) == 1
    assert fa.project(1.0) == 3
    with pytest.raises(KernelDomainError):
        fa.project(0.0)


def test_finitary_weights_are_uniform():
    fa = finitary_approximation(FactorKernel(), 3)
    assert np.allclose(fa.mark_space.weight_array, 1.0 / 8)


def test_graphical_check_finite_types_tight():
    # constant kernel on a balanced two-type space: the pair sum has an
    # exactly computable limit, and the Monte-Carlo side must agree
    ms = MarkSpace.finite([0.5, 0.5])
    vs = realize(ms, 400, "finite_counts")
    kappa = constant_kernel(2.0, r=2)
    beta = constant_kernel(1.0, r=2)
    gd = graphical_check(kappa, beta, vs, mc_samples=20000,
                         rng=np.random.default_rng(1))
    # lhs -> (1/2) kappa = 1 as n grows; exact value misses only the diagonal
    assert gd.lhs_kappa == pytest.approx(1.0, abs=0.01)
    assert gd.rhs_kappa == pytest.approx(1.0, abs=1e-9)
    assert abs(gd.lhs_kappa - gd.rhs_kappa) <= 0.01
    assert gd.mark_discrepancy == 0.0
    gap1, gap2 = gd.gaps()
    assert abs(gap1) <= 0.01 and abs(gap2) <= 0.01


def test_graphical_check_vertex_rates_sum_endpoints():
    # with a one-argument rate the pair refresh rate is the endpoint sum
    ms = MarkSpace.finite([1.0])
    vs = realize(ms, 200, "finite_counts")
    kappa = constant_kernel(1.0)
    beta = VertexRateKernel(values=(1.5,))
    gd = graphical_check(kappa, beta, vs, mc_samples=5000,
                         rng=np.random.default_rng(2))
    assert gd.rhs_kappa_beta == pytest.approx(0.5 * 3.0 * 1.0, abs=1e-9)


def test_graphical_check_unit_interval_marks():
    ms = MarkSpace.unit_interval()
    vs = realize(ms, 300, "deterministic_grid")
    kern = StrongKernel(1.0, 0.25)
    # eta = 0 turns the update preset into the constant rate 2b = 1
    flat_beta = UpdateEtaKernel(0.5, 0.25, 0.0)
    gd = graphical_check(kern, flat_beta, vs, mc_samples=20000,
                         rng=np.random.default_rng(3))
    # exact limit: (1/2) iint min(x,y)^(-1/4) = 1/(0.75 * 1.75)
    limit = 1.0 / (0.75 * 1.75)
    assert gd.rhs_kappa == pytest.approx(limit, abs=5 * gd.rhs_kappa_se)
    assert gd.lhs_kappa == pytest.approx(gd.rhs_kappa,
                                         abs=5 * gd.rhs_kappa_se + 0.02)
    assert gd.mark_discrepancy is None
