import json
import math

import numpy as np
import pytest
from numpy.polynomial import legendre as L

from qufem.assembly import classical_global
from qufem.mesh import DomainMask, position_be, position_be_dim
from qufem.qcore import extract_block
from qufem.quad import (
    PolySpec,
    assemble_force_vector,
    assemble_neumann_vector,
    assemble_variable_coeff,
    classical_force_vector,
    classical_variable_assemble,
    filling_fraction,
    force_coefficients,
    gauss_legendre,
    gauss_point_position_be,
    local_coefficients,
    mqet_beta_norm,
    mqet_decompose,
    mqet_transform,
    poly_transform_diagonal,
    qsp_apply,
    qsp_matrix,
    qsp_phases,
)

X = PolySpec.monomial([0, 1])
X2 = PolySpec.monomial([0, 0, 1])
ONE = PolySpec.constant(1.0)
XY = PolySpec({(1, 1): 1.0}, 2)


def dense(be):
    return extract_block(be).to_array()


# --- quadrature -------------------------------------------------------------------


def test_gauss_small_rules():
    r1 = gauss_legendre(1)
    assert np.allclose(r1.points, [0]) and np.allclose(r1.weights, [2])
    r2 = gauss_legendre(2)
    assert np.allclose(r2.points, [-1 / math.sqrt(3), 1 / math.sqrt(3)], atol=1e-15)
    assert np.allclose(r2.weights, [1, 1], atol=1e-15)
    r3 = gauss_legendre(3)
    assert r3.weights @ r3.points ** 4 == pytest.approx(2 / 5, abs=1e-14)
    with pytest.raises(ValueError):
        gauss_legendre(0)


@pytest.mark.parametrize("G", range(1, 11))
def test_gauss_exactness(G):
    rule = gauss_legendre(G)
    assert rule.weights.sum() == pytest.approx(2, rel=1e-13)
    assert (rule.weights > 0).all()
    for k in range(2 * G):
        exact = 0.0 if k % 2 else 2 / (k + 1)
        got = rule.weights @ rule.points ** k
        assert abs(got - exact) <= 1e-12 * max(1, abs(exact))


def test_alternative_weight_denominator_is_not_exact():
    # Writing the denominator as (1 - x)^2 instead of (1 - x^2) breaks the rule.
    G = 3
    x = gauss_legendre(G).points
    coef = np.zeros(G + 1)
    coef[-1] = 1
    w = 2 / ((1 - x) ** 2 * L.legval(x, L.legder(coef)) ** 2)
    assert abs(w.sum() - 2) > 1e-3


def test_element_maps():
    rule = gauss_legendre(2)
    pts = rule.element_points(0.25, [0, 3])
    assert np.allclose(pts[1], 0.25 * ((rule.points + 1) / 2 + 3))
    assert rule.element_weights(0.25).sum() == pytest.approx(0.25)


# --- polynomials ----------------------------------------------------------------


def test_polyspec_basics():
    assert X2.degree == 2 and X2.parity == 0
    assert PolySpec.monomial([1, 1]).parity is None
    assert X2.sup_norm_bound == pytest.approx(1)
    t2 = PolySpec.chebyshev([0, 0, 1])
    assert np.allclose(t2.monomial_coeffs(), [-1, 0, 2])
    assert XY(0.5, 0.25) == pytest.approx(0.125)
    with pytest.raises(ValueError):
        PolySpec({(1,): 1.0}, 2)


def test_polyspec_from_config():
    p = PolySpec.from_json(json.dumps({"basis": "chebyshev", "coefficients": [0, 0, 0, 1],
                                       "sup_norm": 1.0, "domain": [-1, 1]}))
    assert p.sup_norm_bound == 1.0 and p.degree == 3
    q = PolySpec.from_dict({"nvars": 2, "coefficients": {"1,1": 2.0, "0,0": 1.0}})
    assert q(1.0, 1.0) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        PolySpec.from_dict({"basis": "hermite", "coefficients": [1]})


def test_filling_fraction():
    assert filling_fraction(np.ones(16)) == pytest.approx(1)
    v = np.zeros(16)
    v[0] = 1
    assert filling_fraction(v) == pytest.approx(0.25)
    assert filling_fraction(np.zeros(4)) == 0


# --- Gauss-point position operators ------------------------------------------------


def test_gauss_point_position_diagonal():
    h = 1 / 7
    xl = -1 / math.sqrt(3)
    be = gauss_point_position_be(0, 1, 3)
    diag = np.diag(dense(be)).real
    expected = h * ((xl + 1) / 2 + np.arange(8))
    expected[7] = 0
    assert np.allclose(diag, expected, atol=1e-13)
    e = np.arange(7)
    assert ((diag[:7] >= h * e) & (diag[:7] <= h * (e + 1))).all()
    assert 1 <= be.alpha <= 1 + h
    assert be.alpha == pytest.approx(h * (xl + 1) / 2 + 1)


def test_gauss_point_operators_commute():
    from qufem.quad import _axis_operator
    ops = [dense(_axis_operator(gauss_point_position_be(l, 1, 2), ax, 2, 2))
           for l in range(2) for ax in range(2)]
    for a in ops:
        for b in ops:
            assert np.abs(a @ b - b @ a).max() == 0


# --- polynomial transforms ------------------------------------------------------


def test_poly_transform_examples():
    pos = position_be(3)
    lam = np.arange(8) / 7
    assert np.allclose(np.diag(dense(poly_transform_diagonal(pos, X))), lam)
    assert np.allclose(dense(poly_transform_diagonal(pos, ONE)), np.eye(8))
    assert np.allclose(np.diag(dense(poly_transform_diagonal(pos, X2))), lam ** 2)
    with pytest.raises(ValueError):
        poly_transform_diagonal(pos, PolySpec.monomial([0, 2.0], sup_norm_bound=1.0))


def test_poly_transform_rejects_offdiagonal():
    from qufem.qcore import be_sparse1
    with pytest.raises(ValueError):
        poly_transform_diagonal(be_sparse1(np.array([1, 0]), np.ones(2)), X)


@pytest.mark.parametrize("cheb", [[0, 1], [0, 0, 1], [0, 0, 0, 1], [0, 0.3, 0, -0.5],
                                  [0.1, 0, 0.4, 0, 0.2]])
def test_qsp_reconstruction(cheb):
    poly = PolySpec.chebyshev(cheb, domain=(-1.0, 1.0))
    phases = qsp_phases(poly)
    xs = np.cos(np.linspace(0, np.pi, 100))
    got = qsp_matrix(phases.phases, xs)[:, 0, 0].real
    assert np.abs(got - poly(xs)).max() <= 1e-8
    assert phases.phases.size == poly.degree + 1


def test_qsp_errors():
    with pytest.raises(ValueError):
        qsp_phases(PolySpec.monomial([0.2, 0.5, 0.3]))
    with pytest.raises(ValueError):
        qsp_phases(PolySpec.monomial([0, 2.0]))
    with pytest.raises(ValueError):
        qsp_phases(PolySpec.monomial([0] * 18 + [1.0]))


@pytest.mark.parametrize("cheb", [[0, 1], [0, 0, 1], [0, 0, 0, 1]])
def test_qsp_matches_exact_backend(cheb):
    poly = PolySpec.chebyshev(cheb, domain=(-1.0, 1.0))
    pos = position_be(3)
    got = dense(qsp_apply(pos, qsp_phases(poly)))
    expected = dense(poly_transform_diagonal(pos, poly))
    assert np.abs(got - expected).max() <= 1e-8


def test_qsp_identity_degree_one():
    pos = position_be(2)
    assert np.abs(dense(qsp_apply(pos, qsp_phases(X))) - dense(pos) / pos.alpha).max() <= 1e-8


# --- multivariate transform -----------------------------------------------------


def test_mqet_product():
    bes = [position_be_dim(0, 2, 2), position_be_dim(1, 2, 2)]
    got = np.diag(dense(mqet_transform(bes, XY)))
    j = np.arange(16)
    assert np.allclose(got, (j % 4) / 3 * (j // 4) / 3, atol=1e-12)
    assert mqet_beta_norm(XY, 2) <= 4


def test_mqet_single_variable_reduces():
    pos = position_be(3)
    assert np.allclose(dense(mqet_transform([pos], X2)), dense(poly_transform_diagonal(pos, X2)))


@pytest.mark.parametrize("D", [2, 3, 4])
def test_mqet_beta_bound_random(D):
    rng = np.random.default_rng(D)
    terms = {(a, b): rng.normal() for a in range(D) for b in range(D)}
    poly = PolySpec(terms, 2, domain=(-1.0, 1.0))
    xs = np.cos(np.linspace(0, np.pi, 41))
    sup = np.abs(poly(*np.meshgrid(xs, xs))).max()
    scaled = PolySpec({k: v / sup for k, v in terms.items()}, 2, domain=(-1.0, 1.0))
    assert mqet_beta_norm(scaled, D) <= (D + 2)
    rebuilt = sum(np.asarray(np.polynomial.chebyshev.chebval(0.3, t.q_cheb))
                  * np.prod([math.cos(sk * math.acos(-0.6)) for sk in t.s])
                  for t in mqet_decompose(scaled, D))
    assert rebuilt == pytest.approx(scaled(-0.6, 0.3), abs=1e-10)


# --- variable-coefficient assembly ----------------------------------------------


@pytest.mark.parametrize("p,n", [(1, 2), (1, 3), (3, 2), (3, 4)])
def test_constant_coefficient_recovers_mass(p, n):
    arr = assemble_variable_coeff(ONE, "mass", p, n)
    assert np.abs(dense(arr.be) - classical_global(1, p, n, "mass").toarray()).max() <= 1e-10


@pytest.mark.parametrize("f", [X, X2], ids=["x", "x2"])
@pytest.mark.parametrize("kind", ["mass", "stiffness"])
@pytest.mark.parametrize("p,n", [(1, 3), (3, 4)])
def test_variable_coefficient_agreement_1d(f, kind, p, n):
    arr = assemble_variable_coeff(f, kind, p, n)
    expected = classical_variable_assemble(f, kind, p, n).toarray()
    assert np.abs(dense(arr.be) - expected).max() <= 1e-8
    assert arr.be.alpha <= arr.alpha_analytic * (1 + 1e-12)


def test_variable_coefficient_agreement_2d():
    arr = assemble_variable_coeff(XY, "mass", 1, 2, d=2)
    expected = classical_variable_assemble(XY, "mass", 1, 2, d=2).toarray()
    assert np.abs(dense(arr.be) - expected).max() <= 1e-8


def test_linear_subnormalization_bound():
    # For linear elements the integrand magnitudes integrate exactly.
    for kind, total in (("mass", 1.0), ("stiffness", 4.0)):
        arr = assemble_variable_coeff(X, kind, 1, 3)
        assert arr.be.alpha <= X.sup_norm_bound * total + 1e-12


def test_qsp_backend_in_assembly():
    f = PolySpec.monomial([0, 0, 1])
    a = assemble_variable_coeff(f, "mass", 1, 2, backend="qsp")
    b = assemble_variable_coeff(f, "mass", 1, 2)
    assert np.abs(dense(a.be) - dense(b.be)).max() <= 1e-8


def test_local_coefficients_sum_to_elemental():
    from qufem.elements import elemental_arrays
    c = local_coefficients("stiffness", 3, 4, 1)
    assert np.allclose(c.sum(axis=0), elemental_arrays(3).ke, atol=1e-12)
    with pytest.raises(ValueError):
        local_coefficients("advection", 1, 2, 1)


# --- force vectors --------------------------------------------------------------


def test_force_constant_linear():
    res = assemble_force_vector(ONE, None, 1, 3)
    h = 1 / 7
    expected = np.full(8, h)
    expected[[0, 7]] = h / 2
    assert np.allclose(res.vector, expected, atol=1e-12)
    assert res.filling_fraction == pytest.approx(1)
    assert res.amplification_rounds == 1


def test_force_zero_is_flagged():
    res = assemble_force_vector(PolySpec.constant(0.0), None, 1, 3)
    assert res.flagged_zero and res.norm == 0 and not res.state.any()


@pytest.mark.parametrize("f,p,n,d", [(X, 1, 3, 1), (X2, 3, 4, 1), (XY, 1, 2, 2),
                                     (PolySpec({(2, 0): 1.0, (0, 1): 0.5}, 2), 1, 3, 2)])
def test_force_matches_classical(f, p, n, d):
    res = assemble_force_vector(f, None, p, n, d)
    expected = classical_force_vector(f, p, n, d)
    assert np.abs(res.state - expected / np.linalg.norm(expected)).max() <= 1e-10
    assert np.abs(res.vector - expected).max() <= 1e-10
    assert np.linalg.norm(res.state) == pytest.approx(1)


def test_linear_force_weights_sum_to_one():
    assert np.abs(force_coefficients(1, 2, 1)).sum() == pytest.approx(1)
    assert np.abs(force_coefficients(1, 2, 2)).sum() == pytest.approx(1)


def test_cubic_force_weights_sum_to_one():
    # Expected to fail: cubic basis functions are negative at some Gauss points.
    assert np.abs(force_coefficients(3, 4, 1)).sum() == pytest.approx(1, abs=1e-12)


def test_neumann_vector_1d_and_2d():
    mask = DomainMask.unconstrained(3, 1)
    neu = np.zeros(8, dtype=bool)
    neu[7] = True
    m1 = DomainMask(mask.active, mask.fixed, neu)
    v = assemble_neumann_vector(PolySpec.constant(2.0), m1)
    assert v[7] == pytest.approx(2.0) and np.count_nonzero(v) == 1
    box = DomainMask.box(2, 2)
    m2 = DomainMask(box.active, np.zeros_like(box.fixed), box.fixed)
    v2 = assemble_neumann_vector(PolySpec.constant(1.0, 2), m2).reshape(4, 4)
    h = 1 / 3
    assert np.allclose(v2[[0, 0, 3, 3], [0, 3, 0, 3]], h)
    assert np.allclose(v2[0, 1:3], h) and np.allclose(v2[1:3, 1:3], 0)
    assert v2.sum().real == pytest.approx(4.0)
