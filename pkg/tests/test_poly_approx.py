from __future__ import annotations

import json
import math
from fractions import Fraction

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from heact.errors import ArgumentError, DomainError, NumericalError
from heact.poly_approx import (
    PUBLISHED_SOFTPLUS4,
    ActivationKind,
    PolyApprox,
    SampleGrid,
    WeightScheme,
    alternation_count,
    bernstein_bound,
    bernstein_rho,
    build_grid,
    eval_activation,
    eval_poly,
    fit_activation,
    lp_minimax_verify,
    max_error,
    powell_refine,
    published_softplus,
    weighted_max_residual,
    wls_fit,
)

SP, RELU, SWISH = ActivationKind.SOFTPLUS, ActivationKind.RELU, ActivationKind.SWISH
PAPER = WeightScheme.three_band()


@pytest.fixture(scope="module")
def paper_grid():
    return build_grid((-7, 7), PAPER, 1401)


@pytest.fixture(scope="module")
def fits():
    return {k: fit_activation(k) for k in ActivationKind}


# ---------------------------------------------------------------- activations


def test_activation_values():
    assert eval_activation(SP, 0.0) == pytest.approx(math.log(2), abs=1e-15)
    assert eval_activation(RELU, -5.0) == 0.0
    assert eval_activation(SWISH, 0.0) == 0.0


def test_softplus_at_seven_matches_high_precision():
    x = sympy.Integer(7)
    ref = float(sympy.log(1 + sympy.exp(x)).evalf(40))
    assert eval_activation(SP, 7.0) == pytest.approx(ref, abs=1e-14)
    assert str(ref).startswith("7.000911")


def test_softplus_overflow_safe():
    assert eval_activation(SP, 800.0) == 800.0
    assert eval_activation(SP, -800.0) == 0.0


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_activation_rejects_non_finite(bad):
    with pytest.raises(DomainError):
        eval_activation(SP, bad)


@given(st.floats(-7, 7))
def test_activations_finite_on_domain(x):
    for k in ActivationKind:
        assert math.isfinite(eval_activation(k, x))


def test_activation_parse():
    assert ActivationKind.parse("ReLU") is RELU
    with pytest.raises(ArgumentError):
        ActivationKind.parse("tanh")


# ---------------------------------------------------------------- weights and grids


def test_weight_scheme_boundaries_closed():
    w = PAPER.weight_at(np.array([-4.0, -3.0, 3.0, 4.0, -3.5, 3.5, 0.0, -7.0, 7.0]))
    assert w.tolist() == [2, 3, 3, 2, 1, 1, 3, 2, 2]


def test_weight_scheme_first_match_wins():
    s = WeightScheme(((0, 2, 5.0), (1, 3, 7.0)), 1.0)
    assert s.weight_at(np.array([1.5, 2.5, 4.0])).tolist() == [5.0, 7.0, 1.0]


def test_weight_spec_parse():
    assert WeightScheme.parse("paper") == PAPER
    s = WeightScheme.parse("-3:3:3,-7:-4:2,4:7:2,1")
    assert s == PAPER
    assert WeightScheme.parse(s.to_spec()) == s
    assert WeightScheme.parse("0:1:4").default_weight == 1.0
    for bad in ("", "a:b:c", "1:2", "0:1:-1", "2,0:1:3"):
        with pytest.raises(ArgumentError):
            WeightScheme.parse(bad)


def test_build_grid_examples():
    g = build_grid((-7, 7), PAPER, 3)
    assert g.points.tolist() == [-7, 0, 7]
    assert g.weights.tolist() == [2, 3, 2]
    g = build_grid((-7, 7), PAPER, 1401)
    i = int(np.argmin(np.abs(g.points - 3.5)))
    assert g.points[i] == pytest.approx(3.5, abs=1e-12)
    assert g.weights[i] == 1
    assert g.points[0] == -7 and g.points[-1] == 7
    assert np.all(np.diff(g.points) > 0)
    g = build_grid((0, 1), WeightScheme.uniform(), 11)
    assert np.all(g.weights == 1)


def test_build_grid_errors():
    with pytest.raises(ArgumentError):
        build_grid((0, 1), PAPER, 1)
    with pytest.raises(ArgumentError):
        build_grid((1, 1), PAPER, 10)
    with pytest.raises(ArgumentError):
        SampleGrid(np.array([0.0, 0.0, 1.0]), np.ones(3))


# ---------------------------------------------------------------- evaluation


def test_eval_poly_published_values():
    assert eval_poly(PUBLISHED_SOFTPLUS4, 0.0) == 0.738099333
    exact = sum(Fraction(repr(c)) for c in PUBLISHED_SOFTPLUS4)
    assert eval_poly(PUBLISHED_SOFTPLUS4, 1.0) == pytest.approx(float(exact), abs=1e-15)
    assert float(exact) == pytest.approx(1.3261380005, abs=1e-10)
    assert eval_poly([0.0] * 5, 3.3) == 0.0


@given(
    st.lists(st.floats(-1, 1), min_size=1, max_size=9),
    st.floats(-7, 7),
)
def test_horner_matches_power_sum(coeffs, x):
    naive = sum(c * x**k for k, c in enumerate(coeffs))
    scale = sum(abs(c) * abs(x) ** k for k, c in enumerate(coeffs))
    assert abs(eval_poly(coeffs, x) - naive) <= 1e-12 * max(1.0, scale)


# ---------------------------------------------------------------- fitting


def test_wls_reproduces_polynomials():
    grid = build_grid((-7, 7), PAPER, 301)
    c = wls_fit(grid, lambda x: x**2, 2)
    np.testing.assert_allclose(c, [0, 0, 1], atol=1e-10)
    c = wls_fit(grid, lambda x: np.full_like(x, 2.5), 4)
    np.testing.assert_allclose(c, [2.5, 0, 0, 0, 0], atol=1e-10)


def test_wls_rank_deficient():
    grid = SampleGrid(np.array([0.0, 1.0, 2.0, 3.0]), np.ones(4))
    with pytest.raises(ArgumentError):
        wls_fit(grid, SP, 4)


def test_wls_softplus_loose(paper_grid):
    c = wls_fit(paper_grid, SP, 4)
    assert max_error(c, SP)[0] <= 0.10


def test_powell_fixed_point(paper_grid):
    init = np.array([0.0, 0.0, 1.0])
    out = powell_refine(init, paper_grid, lambda x: x**2)
    np.testing.assert_array_equal(out, init)


@pytest.mark.parametrize("kind", list(ActivationKind))
@pytest.mark.parametrize("degree", [2, 4])
def test_powell_monotone(paper_grid, kind, degree):
    init = wls_fit(paper_grid, kind, degree)
    out = powell_refine(init, paper_grid, kind)
    assert weighted_max_residual(out, paper_grid, kind) <= weighted_max_residual(init, paper_grid, kind)


def test_powell_perturbed_starts_agree(paper_grid):
    init = wls_fit(paper_grid, SP, 4)
    base = powell_refine(init, paper_grid, SP)
    rng = np.random.default_rng(5)
    for _ in range(3):
        start = init * (1 + rng.uniform(-0.1, 0.1, init.size))
        out = powell_refine(start, paper_grid, SP)
        np.testing.assert_allclose(out, base, atol=1e-4, rtol=0)


def test_powell_non_finite_objective(paper_grid):
    with pytest.raises(NumericalError):
        powell_refine(np.array([np.nan, 0, 0]), paper_grid, SP)


def test_fit_errors(fits):
    assert fits[SP].e_max_unweighted <= 0.08
    assert 0.28 <= fits[RELU].e_max_unweighted <= 0.38
    assert 0.14 <= fits[SWISH].e_max_unweighted <= 0.22
    assert fits[SP].e_max_unweighted < fits[SWISH].e_max_unweighted < fits[RELU].e_max_unweighted


def test_grid_density_stability(fits):
    c = fits[SP].coeffs
    assert abs(max_error(c, SP, n_eval=10_001)[0] - max_error(c, SP, n_eval=100_001)[0]) < 1e-3


def test_max_error_exact_and_published():
    assert max_error([1.0, -2.0, 0.5, 0.0, 0.25], lambda x: 1 - 2 * x + 0.5 * x**2 + 0.25 * x**4)[0] < 1e-12
    e, x = max_error(PUBLISHED_SOFTPLUS4, SP)
    assert e == pytest.approx(0.067, abs=0.005)
    assert -7 <= x <= 7


# ---------------------------------------------------------------- LP


def test_lp_exact_polynomial():
    grid = build_grid((-7, 7), PAPER, 1401)
    res = lp_minimax_verify(grid, lambda x: 0.5 - x + 0.01 * x**3, 4)
    assert res.e_max_weighted < 1e-8
    np.testing.assert_allclose(res.coeffs, [0.5, -1, 0, 0.01, 0], atol=1e-8)


def test_lp_softplus_alternates(paper_grid, fits):
    res = lp_minimax_verify(paper_grid, SP, 4)
    assert res.alternation_count >= 6
    assert res.passes(4)
    assert res.refined_points <= 10
    # the LP optimum can only improve on Powell's discrete objective
    assert res.e_max_weighted <= fits[SP].e_max_weighted + 1e-6
    low = lp_minimax_verify(paper_grid, SP, 2)
    assert low.e_max_weighted > res.e_max_weighted


def test_alternation_count():
    assert alternation_count(np.array([1.0, -1.0, 0.2, 1.0, -0.99]), 1.0) == 4
    assert alternation_count(np.zeros(5), 0.0) == 0


# ---------------------------------------------------------------- bound


def test_bernstein():
    assert bernstein_rho(math.pi / 7) == pytest.approx(1.566, abs=1e-3)
    assert bernstein_bound(math.pi / 7, 4) == pytest.approx(math.exp(-4 * math.pi / 7))
    assert bernstein_bound(math.pi / 7, 4) == pytest.approx(0.166, abs=1e-3)
    assert bernstein_bound(math.pi / 7, 0) == 1.0
    with pytest.raises(ArgumentError):
        bernstein_rho(0.0)


# ---------------------------------------------------------------- PolyApprox


def test_published_softplus():
    p = published_softplus()
    assert p.degree == 4 and len(p.coeffs) == 5
    assert p(0.0) == p.coeffs[0]
    assert p.coeffs[3] == -1.5983e-17  # carried as published


def test_poly_json_roundtrip(tmp_path, fits):
    p = fits[SP]
    d = json.loads(p.to_json())
    for key in ("activation", "degree", "domain", "coeffs_ascending", "e_max_unweighted", "e_max_weighted"):
        assert key in d
    q = PolyApprox.from_json(p.to_json())
    assert q.coeffs.tobytes() == p.coeffs.tobytes()
    path = tmp_path / "p.json"
    p.save(path)
    assert PolyApprox.load(path).to_dict() == p.to_dict()


def test_error_curve_csv(fits):
    lines = fits[SP].error_curve_csv(n_eval=11).splitlines()
    assert lines[0] == "x,f(x),p(x),abs_error"
    assert len(lines) == 12


def test_clamp(fits):
    p = fits[SP]
    assert p(p.clamp(10.0)) == p(7.0)
    assert p(p.clamp(-10.0)) == p(-7.0)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=1, max_size=5))
def test_exact_reproduction_property(coeffs):
    grid = build_grid((-7, 7), PAPER, 401)
    target = lambda x: eval_poly(coeffs, x)  # noqa: E731
    c = wls_fit(grid, target, 4)
    assert np.max(np.abs(eval_poly(c, grid.points) - target(grid.points))) < 1e-10 * max(1.0, 7**4 * max(map(abs, coeffs)))
