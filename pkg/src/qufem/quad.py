"""Gauss-Legendre quadrature, Gauss-point position operators, polynomial transforms,
variable-coefficient assembly and force vectors."""

from __future__ import annotations

import itertools
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import chebyshev as C
from numpy.polynomial import legendre as L
from numpy.polynomial import polynomial as P
from scipy.optimize import least_squares

from .assembly import AssembledArray
from .elements import basis_matrix, grad_matrix
from .interaction import indicator_be
from .mesh import DomainMask, element_projector_be, mesh_for_qubits, position_be
from .qcore import (
    SIM_QUBITS,
    BlockEncoding,
    DiagonalOp,
    EmbedOp,
    PermutationOp,
    ProductOp,
    be_adjoint,
    be_apply,
    be_chain,
    be_hermitize,
    be_lcu,
    be_product,
    be_scale,
    be_sparse1,
    be_tensor_chain,
    identity_be,
)

# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    order_g: int
    points: np.ndarray
    weights: np.ndarray

    def element_points(self, h: float, e) -> np.ndarray:
        """``x_l^e = h ((x_l + 1) / 2 + e)``; shape ``(len(e), G)``."""
        e = np.atleast_1d(np.asarray(e, dtype=float))
        return h * ((self.points[None, :] + 1) / 2 + e[:, None])

    def element_weights(self, h: float) -> np.ndarray:
        return h / 2 * self.weights

    @property
    def unit_points(self) -> np.ndarray:
        """Points mapped to [0, 1]."""
        return (self.points + 1) / 2


def gauss_legendre(order_g: int) -> QuadratureRule:
    """Roots of ``P_G`` from the Legendre companion matrix, polished by Newton steps;
    weights ``2 / ((1 - x^2) P_G'(x)^2)``."""
    if order_g < 1:
        raise ValueError("need at least one point")
    coef = np.zeros(order_g + 1)
    coef[-1] = 1.0
    dcoef = L.legder(coef)
    x = np.sort(L.legroots(coef).real)
    for _ in range(3):
        x = x - L.legval(x, coef) / L.legval(x, dcoef)
    w = 2.0 / ((1.0 - x ** 2) * L.legval(x, dcoef) ** 2)
    return QuadratureRule(order_g, x, w)


# ---------------------------------------------------------------------------
# Polynomials
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PolySpec:
    """Polynomial in ``nvars`` variables ``(x^0, ..., x^{d-1})``.

    ``terms`` maps exponent tuples to coefficients.  ``sup_norm_bound`` bounds
    ``|f|`` on ``domain`` (a box); it is computed when omitted.
    """

    terms: Mapping[tuple, complex]
    nvars: int = 1
    sup_norm_bound: float | None = None
    domain: tuple = (0.0, 1.0)

    def __post_init__(self):
        clean = {}
        for exps, c in self.terms.items():
            exps = tuple(int(e) for e in (exps if isinstance(exps, tuple) else (exps,)))
            if len(exps) != self.nvars or min(exps, default=0) < 0:
                raise ValueError(f"bad exponent tuple {exps}")
            if c != 0:
                clean[exps] = clean.get(exps, 0) + c
        object.__setattr__(self, "terms", clean)
        if self.sup_norm_bound is None:
            object.__setattr__(self, "sup_norm_bound", self._sup_bound())

    # construction
    @classmethod
    def monomial(cls, coeffs: Sequence[complex], **kw) -> PolySpec:
        return cls({(i,): c for i, c in enumerate(coeffs)}, 1, **kw)

    @classmethod
    def chebyshev(cls, coeffs: Sequence[float], **kw) -> PolySpec:
        return cls.monomial(C.cheb2poly(np.asarray(coeffs, dtype=float)), **kw)

    @classmethod
    def constant(cls, c: float, nvars: int = 1, **kw) -> PolySpec:
        return cls({(0,) * nvars: c}, nvars, **kw)

    @classmethod
    def from_dict(cls, spec: Mapping) -> PolySpec:
        """Parse ``{"basis", "nvars", "coefficients", "sup_norm", "domain"}``.

        Univariate coefficients are a list; multivariate ones map
        ``"e0,e1,..."`` exponent strings to values.
        """
        basis = spec.get("basis", "monomial")
        nvars = int(spec.get("nvars", 1))
        coeffs = spec["coefficients"]
        kw = {}
        if "sup_norm" in spec:
            kw["sup_norm_bound"] = float(spec["sup_norm"])
        if "domain" in spec:
            kw["domain"] = tuple(spec["domain"])
        if isinstance(coeffs, Mapping):
            if basis != "monomial":
                raise ValueError("multivariate coefficients must use the monomial basis")
            terms = {tuple(int(t) for t in k.split(",")): complex(v) for k, v in coeffs.items()}
            return cls(terms, nvars, **kw)
        if nvars != 1:
            raise ValueError("list coefficients are univariate")
        if basis == "chebyshev":
            return cls.chebyshev(coeffs, **kw)
        if basis != "monomial":
            raise ValueError(f"unknown basis {basis!r}")
        return cls.monomial(coeffs, **kw)

    @classmethod
    def from_json(cls, text: str) -> PolySpec:
        return cls.from_dict(json.loads(text))

    # queries
    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def axis_degree(self, axis: int) -> int:
        return max((e[axis] for e in self.terms), default=0)

    @property
    def parity(self) -> int | None:
        """0 or 1 for definite parity, else ``None``."""
        par = {sum(e) % 2 for e in self.terms}
        if len(par) > 1:
            return None
        return par.pop() if par else 0

    def __call__(self, *xs):
        if len(xs) != self.nvars:
            raise ValueError(f"expected {self.nvars} arguments")
        xs = [np.asarray(x, dtype=float) for x in xs]
        out = np.zeros(np.broadcast(*xs).shape, dtype=complex)
        for exps, c in self.terms.items():
            term = np.full(out.shape, c, dtype=complex)
            for x, e in zip(xs, exps):
                if e:
                    term = term * x ** e
            out = out + term
        if all(np.isreal(c) for c in self.terms.values()):
            return out.real
        return out

    def monomial_coeffs(self) -> np.ndarray:
        if self.nvars != 1:
            raise ValueError("univariate only")
        c = np.zeros(self.degree + 1, dtype=complex)
        for (e,), v in self.terms.items():
            c[e] += v
        return c

    def chebyshev_coeffs(self) -> np.ndarray:
        return C.poly2cheb(self.monomial_coeffs().real)

    def _sup_bound(self) -> float:
        if not self.terms:
            return 0.0
        lo, hi = self.domain
        if self.nvars == 1:
            c = self.monomial_coeffs()
            crit = P.polyroots(P.polyder(c)) if c.size > 2 else np.array([])
            crit = crit[np.abs(crit.imag) < 1e-12].real if crit.size else crit
            xs = np.concatenate([[lo, hi], crit[(crit >= lo) & (crit <= hi)],
                                 np.linspace(lo, hi, 257)])
            return float(np.max(np.abs(P.polyval(xs, c))))
        # Rigorous bound from the coefficient magnitudes on the box.
        r = max(abs(lo), abs(hi))
        return float(sum(abs(c) * r ** sum(e) for e, c in self.terms.items()))


def filling_fraction(values: np.ndarray, sup_norm: float | None = None) -> float:
    """``(1 / |f|_inf) sqrt(sum |f|^2 / N^d)`` over grid samples."""
    values = np.asarray(values)
    sup = float(np.max(np.abs(values))) if sup_norm is None else sup_norm
    if sup == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.abs(values) ** 2)) / sup)


# ---------------------------------------------------------------------------
# Gauss-point position operators
# ---------------------------------------------------------------------------


def gauss_point_position_be(ell: int, p: int, n: int, order_g: int | None = None) -> BlockEncoding:
    """``h Pi [((x_l + 1) / 2) I + X]`` on the element register.

    Subnormalization ``h (x_l + 1) / 2 + p``, using ``h (N - 1) = p``.
    """
    params, _ = mesh_for_qubits(1, p, n)
    rule = gauss_legendre(order_g or p + 1)
    if not 0 <= ell < rule.order_g:
        raise ValueError("Gauss point index out of range")
    h = params.h
    shift = h * (rule.points[ell] + 1) / 2
    lcu = be_lcu([identity_be(n), position_be(n)], coeffs=[shift, h])
    return be_product(element_projector_be(n, p), lcu)


def _diagonal_of(be: BlockEncoding, sim_qubits: int = SIM_QUBITS) -> np.ndarray:
    blk = be.block(sim_qubits)
    diag = blk.diagonal()
    off = blk - sp.diags_array(diag)
    if off.nnz and np.max(np.abs(off.data)) > 1e-12:
        raise ValueError("encoded operator is not diagonal")
    return diag


def poly_transform_diagonal(be: BlockEncoding, poly: PolySpec, scale: float = 1.0,
                            sim_qubits: int = SIM_QUBITS) -> BlockEncoding:
    """Encoding of ``diag(q(scale * lambda_i))`` with subnormalization ``|q|_inf``.

    ``lambda_i`` are the eigenvalues of the normalized block; ``scale =
    be.alpha`` evaluates ``q`` on the encoded operator itself.
    """
    if poly.nvars != 1:
        raise ValueError("univariate polynomial required")
    lam = _diagonal_of(be, sim_qubits)
    if np.max(np.abs(lam.imag), initial=0.0) > 1e-12:
        raise ValueError("diagonal has complex entries")
    vals = np.asarray(poly(scale * lam.real), dtype=complex)
    bound = poly.sup_norm_bound
    if bound == 0:
        bound = 1.0
    if np.max(np.abs(vals), initial=0.0) > bound * (1 + 1e-12):
        raise ValueError("polynomial exceeds its sup-norm bound on the spectrum")
    amps = vals / bound
    over = np.abs(amps) > 1
    amps[over] = amps[over] / np.abs(amps[over])
    return be_scale(be_sparse1(np.arange(lam.size), amps), bound)


# ---------------------------------------------------------------------------
# Quantum signal processing
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QSPPhases:
    phases: np.ndarray
    parity: int
    target: PolySpec
    residual: float


def qsp_matrix(phases: np.ndarray, x) -> np.ndarray:
    """``e^{i phi_0 Z} prod_j [O(x) e^{i phi_j Z}]`` for each ``x``; shape ``(len(x), 2, 2)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    s = np.sqrt(np.clip(1 - x ** 2, 0, None))
    o = np.empty((x.size, 2, 2), dtype=complex)
    o[:, 0, 0], o[:, 0, 1], o[:, 1, 0], o[:, 1, 1] = x, -s, s, x
    out = np.broadcast_to(np.diag(np.exp(1j * phases[0] * np.array([1, -1]))),
                          (x.size, 2, 2)).copy()
    for phi in phases[1:]:
        rot = np.diag(np.exp(1j * phi * np.array([1, -1])))
        out = out @ o @ rot
    return out


def qsp_phases(poly: PolySpec, tol: float = 1e-8, seed: int = 7) -> QSPPhases:
    """Phases with ``Re <0|U_Phi(x)|0> = P(x)`` by least squares on Chebyshev nodes."""
    if poly.nvars != 1:
        raise ValueError("univariate polynomial required")
    deg = poly.degree
    if deg > 16:
        raise ValueError("degree above 16 is out of range for the phase solver")
    par = poly.parity
    if par is None or par != deg % 2:
        raise ValueError("target polynomial lacks definite parity matching its degree")
    coeffs = poly.monomial_coeffs()
    if np.max(np.abs(coeffs.imag)) > 0:
        raise ValueError("real coefficients required")
    coeffs = coeffs.real
    probe = np.cos(np.linspace(0, np.pi, 101))
    if np.max(np.abs(P.polyval(probe, coeffs))) > 1 + 1e-12:
        raise ValueError("target exceeds 1 in magnitude on [-1, 1]")
    half = max(1, math.ceil((deg + 1) / 2))
    nodes = np.cos((2 * np.arange(1, half + 1) - 1) * np.pi / (4 * half))
    target = P.polyval(nodes, coeffs)

    def resid(phi):
        return qsp_matrix(phi, nodes)[:, 0, 0].real - target

    rng = np.random.default_rng(seed)
    starts = [np.zeros(deg + 1)]
    dl = np.zeros(deg + 1)
    dl[-1] = np.pi / 2
    starts.append(dl)
    starts += [rng.uniform(-np.pi, np.pi, deg + 1) * 0.1 for _ in range(8)]
    best = None
    for x0 in starts:
        sol = least_squares(resid, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=4000)
        err = np.max(np.abs(qsp_matrix(sol.x, probe)[:, 0, 0].real - P.polyval(probe, coeffs)))
        if best is None or err < best[1]:
            best = (sol.x, err)
        if err <= tol * 1e-2:
            break
    phases, err = best
    if err > tol:
        raise RuntimeError(f"phase optimization residual {err:.2e} exceeds {tol:.0e}")
    return QSPPhases(phases, par, poly, float(err))


def _qsp_circuit(be: BlockEncoding, phases: np.ndarray) -> BlockEncoding:
    """Projector-controlled phases interleaved with ``O = U_A (2 Pi - I)`` on
    ``(extra, ancillas, system)``; requires a Hermitian ``U_A``."""
    m, n = be.ancillas, be.system_qubits
    dims = [2, 1 << m, 1 << n]
    anc_zero = np.zeros(1 << m, dtype=bool)
    anc_zero[0] = True
    idx = np.arange(2 << m)
    f, a = np.divmod(idx, 1 << m)
    c0x = EmbedOp(PermutationOp((f ^ anc_zero[a]) * (1 << m) + a), dims, [0, 1])
    xgate = EmbedOp(PermutationOp(np.array([1, 0])), dims, [0])
    zgate = EmbedOp(DiagonalOp([1, -1]), dims, [0])
    u_a = EmbedOp(be.unitary, dims, [1, 2])
    reflect_then_u = ProductOp([u_a, xgate, c0x, zgate, c0x, xgate])

    def rotation(phi):
        return ProductOp([c0x, EmbedOp(DiagonalOp(np.exp(-1j * phi * np.array([1, -1]))),
                                       dims, [0]), c0x])

    ops = [rotation(phases[0])]
    for phi in phases[1:]:
        ops += [reflect_then_u, rotation(phi)]
    return BlockEncoding(ProductOp(ops), 1.0, m + 1, n)


def qsp_apply(be: BlockEncoding, phases: QSPPhases) -> BlockEncoding:
    """``(1, .)`` encoding of ``P(A / alpha)`` from the phase sequence.

    Non-Hermitian unitaries are first dilated to a Hermitian encoding of the
    same block.  The real-coefficient part is taken as the average of the
    sequences for ``Phi`` and ``-Phi``.
    """
    herm = be_hermitize(be)
    plus = _qsp_circuit(herm, phases.phases)
    minus = _qsp_circuit(herm, -phases.phases)
    return be_lcu([plus, minus], coeffs=[0.5, 0.5])


# ---------------------------------------------------------------------------
# Multivariate eigenvalue transform
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MQETTerm:
    s: tuple
    q_cheb: np.ndarray
    beta: float


def _cheb_sup(coeffs: np.ndarray) -> float:
    if coeffs.size == 0 or not np.any(coeffs):
        return 0.0
    crit = C.chebroots(C.chebder(coeffs)) if coeffs.size > 2 else np.array([])
    crit = crit[np.abs(np.imag(crit)) < 1e-12].real if crit.size else np.array([])
    xs = np.concatenate([[-1.0, 1.0], crit[(crit >= -1) & (crit <= 1)],
                         np.cos(np.linspace(0, np.pi, 257))])
    return float(np.max(np.abs(C.chebval(xs, coeffs))))


def mqet_decompose(poly: PolySpec, degree_bound: int | None = None) -> list[MQETTerm]:
    """``g = sum_s Q_s(x^{d-1}) prod_k T_{s_k}(x^k)`` over ``s`` in ``[D]^{d-1}``.

    ``Q_s`` is the Chebyshev projection along the leading axes, evaluated by
    Chebyshev-Gauss quadrature with ``2D + 1`` nodes per axis.
    """
    d = poly.nvars
    D = degree_bound or max(poly.axis_degree(a) for a in range(d)) + 1
    if any(poly.axis_degree(a) >= D for a in range(d)):
        raise ValueError("degree bound D must exceed every per-axis degree")
    M = 2 * D + 1
    theta = (2 * np.arange(M) + 1) * np.pi / (2 * M)
    nodes = np.cos(theta)
    ycheb = np.cos((2 * np.arange(D) + 1) * np.pi / (2 * D))  # interpolation nodes in x^{d-1}
    terms = []
    for s in itertools.product(range(D), repeat=d - 1):
        weight = np.prod([(2 - (sk == 0)) / M for sk in s]) if s else 1.0
        grids = np.meshgrid(*([nodes] * (d - 1)), ycheb, indexing="ij") if d > 1 else [ycheb]
        cheb = np.ones(grids[0].shape)
        for k, sk in enumerate(s):
            cheb = cheb * np.cos(sk * np.arccos(grids[k]))
        vals = np.asarray(poly(*grids), dtype=float) * cheb
        qvals = vals.sum(axis=tuple(range(d - 1))) * weight if d > 1 else vals
        q = C.chebfit(ycheb, qvals, D - 1)
        beta = _cheb_sup(q)
        if beta > 1e-14:
            terms.append(MQETTerm(tuple(s), q, beta))
    return terms


def mqet_transform(bes: Sequence[BlockEncoding], poly: PolySpec,
                   degree_bound: int | None = None, scales: Sequence[float] | None = None,
                   sim_qubits: int = SIM_QUBITS) -> BlockEncoding:
    """Encoding of ``g(A^(0), ..., A^(d-1))`` for commuting diagonal encodings.

    Argument ``k`` is ``scales[k]`` times the normalized block of ``bes[k]``;
    each Chebyshev factor is a ``(1, 1)`` diagonal encoding and the terms are
    combined by LCU with weights ``beta_s``.
    """
    d = len(bes)
    if poly.nvars != d:
        raise ValueError("polynomial arity does not match the operator family")
    scales = [1.0] * d if scales is None else list(scales)
    lams = [np.real(_diagonal_of(b, sim_qubits)) * sc for b, sc in zip(bes, scales)]
    if any(np.max(np.abs(l), initial=0) > 1 + 1e-12 for l in lams):
        raise ValueError("arguments must lie in [-1, 1]")
    lams = [np.clip(l, -1, 1) for l in lams]
    dim = lams[0].size
    if d == 1:
        return poly_transform_diagonal(bes[0], poly, scales[0], sim_qubits)
    terms = mqet_decompose(poly, degree_bound)
    ident = np.arange(dim)
    cheb_cache = {}

    def t_factor(k, sk):
        if (k, sk) not in cheb_cache:
            cheb_cache[(k, sk)] = be_sparse1(ident, np.cos(sk * np.arccos(lams[k])))
        return cheb_cache[(k, sk)]

    products, betas = [], []
    for term in terms:
        q = be_sparse1(ident, C.chebval(lams[d - 1], term.q_cheb) / term.beta)
        factors = [q] + [t_factor(k, sk) for k, sk in enumerate(term.s)]
        products.append(be_chain(*factors))
        betas.append(term.beta)
    return be_lcu(products, coeffs=betas)


def mqet_beta_norm(poly: PolySpec, degree_bound: int | None = None) -> float:
    return float(sum(t.beta for t in mqet_decompose(poly, degree_bound)))


# ---------------------------------------------------------------------------
# Variable-coefficient assembly
# ---------------------------------------------------------------------------


def local_coefficients(kind: str, p: int, order_g: int, d: int) -> np.ndarray:
    """``c[l, a, b] = w_l B[N_a, N_b](xi_l)`` on the reference cell ``[0, 1]^d``.

    ``l`` and the local indices are multi-indices flattened with the highest
    axis most significant.
    """
    rule = gauss_legendre(order_g)
    xi, w = rule.unit_points, rule.weights / 2
    nb, gb = basis_matrix(p, xi), grad_matrix(p, xi)  # (nen, G)
    mass1 = np.einsum("ag,bg->gab", nb, nb) * w[:, None, None]
    stiff1 = np.einsum("ag,bg->gab", gb, gb) * w[:, None, None]

    def kron_g(factors):
        # Kronecker over axes for both the Gauss index and the local indices.
        out = factors[0]
        for f in factors[1:]:
            g1, a1, _ = out.shape
            g2, a2, _ = f.shape
            out = np.einsum("gab,hcd->ghacbd", out, f).reshape(g1 * g2, a1 * a2, a1 * a2)
        return out

    if kind == "mass":
        return kron_g([mass1] * d)
    if kind == "stiffness":
        total = None
        for slot in range(d):
            factors = [mass1] * d
            factors[slot] = stiff1
            t = kron_g(factors)
            total = t if total is None else total + t
        return total
    raise ValueError(f"unknown bilinear form {kind!r}")


def _gauss_coordinates(p: int, n: int, order_g: int) -> np.ndarray:
    """Physical Gauss-point coordinates ``[l, e]`` for every element register value."""
    params, _ = mesh_for_qubits(1, p, n)
    rule = gauss_legendre(order_g)
    e = np.arange(1 << n)
    coords = rule.element_points(params.h, e).T
    coords[:, e >= params.numel] = 0.0
    return coords


def _multi(idx: int, base: int, d: int) -> tuple:
    """Flat index -> digits, most-significant axis first."""
    return tuple(int(v) for v in np.unravel_index(idx, (base,) * d))


def _axis_operator(be: BlockEncoding, axis: int, d: int, n: int) -> BlockEncoding:
    factors = [identity_be(n)] * d
    factors[d - 1 - axis] = be
    return be_tensor_chain(*factors)


def coefficient_operator(f: PolySpec, ell: tuple, p: int, n: int, order_g: int,
                         backend: str = "exact") -> BlockEncoding:
    """Encoding of ``f(X_l)`` for the multi-index Gauss point ``ell`` (highest axis first)."""
    d = len(ell)
    pos = []
    for axis in range(d):
        g = gauss_point_position_be(ell[d - 1 - axis], p, n, order_g)
        pos.append((_axis_operator(g, axis, d, n), g.alpha))
    if d == 1:
        be, alpha = pos[0]
        if backend == "qsp":
            return _qsp_coefficient(be, f, alpha)
        return poly_transform_diagonal(be, f, alpha)
    return mqet_transform([b for b, _ in pos], f, scales=[a for _, a in pos])


def _qsp_coefficient(be: BlockEncoding, f: PolySpec, alpha: float) -> BlockEncoding:
    """QSP route for a definite-parity ``f`` evaluated on ``alpha * block``."""
    c = f.monomial_coeffs().real * alpha ** np.arange(f.degree + 1)
    # Phases need |P| <= 1 on all of [-1, 1], not only on the spectrum.
    bound = PolySpec.monomial(c, domain=(-1.0, 1.0)).sup_norm_bound
    scaled = PolySpec.monomial(c / bound, domain=(-1.0, 1.0))
    return be_scale(qsp_apply(be, qsp_phases(scaled)), bound)


def _indicator_d(n: int, p: int, a: tuple) -> BlockEncoding:
    return be_tensor_chain(*[indicator_be(n, p, j) for j in a])


def assemble_variable_coeff(f: PolySpec, bilinear_kind: str, p: int, n: int,
                            order_g: int | None = None, d: int = 1,
                            backend: str = "exact") -> AssembledArray:
    """``F = sum_ab A_a (sum_l c_lab f(X_l)) A_b^dagger`` on the reference-cell scale."""
    if f.nvars != d:
        raise ValueError("coefficient arity does not match the dimension")
    G = order_g or p + 1 + math.ceil(max(f.degree, 0) / 2)
    coef = local_coefficients(bilinear_kind, p, G, d)
    nen = p + 1
    f_ops = {}
    terms = []
    for a in range(nen ** d):
        for b in range(nen ** d):
            c = coef[:, a, b]
            live = np.flatnonzero(np.abs(c) > 1e-15)
            if live.size == 0:
                continue
            parts = []
            for l in live:
                if l not in f_ops:
                    f_ops[l] = coefficient_operator(f, _multi(l, G, d), p, n, G, backend)
                parts.append(f_ops[l])
            inner = be_lcu(parts, coeffs=c[live])
            ia = _indicator_d(n, p, _multi(a, nen, d))
            ib = _indicator_d(n, p, _multi(b, nen, d))
            terms.append(be_chain(ia, inner, be_adjoint(ib)))
    be = be_lcu(terms, coeffs=np.ones(len(terms)))
    bound = f.sup_norm_bound * float(np.abs(coef).sum())
    return AssembledArray(be, bound, bilinear_kind)


def classical_variable_assemble(f: PolySpec, kind: str, p: int, n: int,
                                order_g: int | None = None, d: int = 1) -> sp.csr_array:
    """Same quadrature, assembled element by element on the reference-cell scale."""
    G = order_g or p + 1 + math.ceil(max(f.degree, 0) / 2)
    coef = local_coefficients(kind, p, G, d)
    _, conn = mesh_for_qubits(d, p, n)
    numel, nen, N = conn.numel, conn.nen, conn.numnp
    rule = gauss_legendre(G)
    h = 1.0 / numel
    pts1 = rule.element_points(h, np.arange(numel))  # (numel, G)
    elems = np.array(list(itertools.product(range(numel), repeat=d)))
    gidx = np.array(list(itertools.product(range(G), repeat=d)))
    # f at every (element, Gauss point); axis order highest first in the index tuples
    args = [pts1[elems[:, d - 1 - ax]][:, gidx[:, d - 1 - ax]] for ax in range(d)]
    fvals = np.asarray(f(*args), dtype=complex)  # (numel^d, G^d)
    local = fvals @ coef.reshape(coef.shape[0], -1)  # (numel^d, nen^d * nen^d)
    locs = np.array(list(itertools.product(range(nen), repeat=d)))
    weights = N ** np.arange(d - 1, -1, -1)
    glob = np.zeros((locs.shape[0], elems.shape[0]), dtype=np.int64)
    for ax in range(d):
        glob += conn.ix[locs[:, ax][:, None], elems[:, ax][None, :]] * weights[ax]
    na = locs.shape[0]
    rows = np.repeat(glob[:, None, :], na, axis=1)
    cols = np.repeat(glob[None, :, :], na, axis=0)
    vals = local.T.reshape(na, na, -1)
    return sp.csr_array((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(N ** d, N ** d))


# ---------------------------------------------------------------------------
# Force vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForceAssembly:
    state: np.ndarray
    norm: float
    filling_fraction: float
    amplification_rounds: int
    success_prob: float
    flagged_zero: bool = False

    @property
    def vector(self) -> np.ndarray:
        return self.state * self.norm


def force_coefficients(p: int, order_g: int, d: int) -> np.ndarray:
    """``c[l, a] = w_l N_a(xi_l)`` on the reference cell."""
    rule = gauss_legendre(order_g)
    c1 = (basis_matrix(p, rule.unit_points) * rule.weights / 2).T  # (G, nen)
    return reduce(lambda x, y: np.einsum("ga,hb->ghab", x, y).reshape(
        x.shape[0] * y.shape[0], -1), [c1] * d)


def force_operator(f: PolySpec, p: int, n: int, d: int = 1,
                   order_g: int | None = None, element_weights=None) -> BlockEncoding:
    """``sum_a A_a (sum_l c_la f(X_l)) W A_a^dagger`` with an optional diagonal element weight ``W``."""
    G = order_g or p + 1 + math.ceil(max(f.degree, 0) / 2)
    coef = force_coefficients(p, G, d)
    nen = p + 1
    f_ops = {}
    terms = []
    for a in range(nen ** d):
        c = coef[:, a]
        live = np.flatnonzero(np.abs(c) > 1e-15)
        parts = []
        for l in live:
            if l not in f_ops:
                f_ops[l] = coefficient_operator(f, _multi(l, G, d), p, n, G)
            parts.append(f_ops[l])
        inner = be_lcu(parts, coeffs=c[live])
        if element_weights is not None:
            inner = be_product(inner, be_sparse1(np.arange(element_weights.size),
                                                 element_weights))
        ia = _indicator_d(n, p, _multi(a, nen, d))
        terms.append(be_chain(ia, inner, be_adjoint(ia)))
    return be_lcu(terms, coeffs=np.ones(len(terms)))


def assemble_force_vector(f: PolySpec, mask: DomainMask | None, p: int, n: int, d: int = 1,
                          order_g: int | None = None) -> ForceAssembly:
    """Body-force vector ``int f N_j`` from the force operator applied to the uniform state.

    Amplitude amplification is modelled as exact renormalization; the round
    count is ``ceil(1 / F)`` for the nodal filling fraction ``F``.
    """
    params, _ = mesh_for_qubits(d, p, n)
    N = params.numnp ** d
    grid = _node_grid(params.numnp, d)
    fvals = np.asarray(f(*grid), dtype=complex)
    if not f.terms or not np.any(fvals):
        z = np.zeros(N, dtype=complex)
        return ForceAssembly(z, 0.0, 0.0, 0, 0.0, True)
    op = force_operator(f, p, n, d, order_g)
    uniform = np.full(N, 1 / math.sqrt(N), dtype=complex)
    out = be_apply(op, uniform)
    raw = float(np.linalg.norm(out))
    if raw * op.alpha < 1e-14:
        return ForceAssembly(np.zeros(N, dtype=complex), 0.0, 0.0, 0, 0.0, True)
    physical_norm = raw * op.alpha * math.sqrt(N) * params.h ** d
    ff = filling_fraction(fvals.ravel())
    rounds = math.ceil(1 / ff) if ff > 0 else 0
    return ForceAssembly(out / raw, physical_norm, ff, rounds, raw ** 2)


def _node_grid(numnp: int, d: int) -> list[np.ndarray]:
    """Node coordinates ``x^axis`` on the flattened grid, axis 0 least significant."""
    x = np.arange(numnp) / (numnp - 1)
    mesh = np.meshgrid(*([x] * d), indexing="ij")  # mesh[k] varies along array axis k
    return [mesh[d - 1 - axis].ravel() for axis in range(d)]


def node_coordinates(n: int, d: int) -> list[np.ndarray]:
    return _node_grid(1 << n, d)


def classical_force_vector(f: PolySpec, p: int, n: int, d: int = 1,
                           order_g: int | None = None) -> np.ndarray:
    """Physical ``int f N_j`` by element-wise quadrature."""
    G = order_g or p + 1 + math.ceil(max(f.degree, 0) / 2)
    params, conn = mesh_for_qubits(d, p, n)
    coef = force_coefficients(p, G, d)  # (G^d, nen^d)
    numel, nen, N = conn.numel, conn.nen, conn.numnp
    rule = gauss_legendre(G)
    pts1 = rule.element_points(params.h, np.arange(numel))
    elems = np.array(list(itertools.product(range(numel), repeat=d)))
    gidx = np.array(list(itertools.product(range(G), repeat=d)))
    args = [pts1[elems[:, d - 1 - ax]][:, gidx[:, d - 1 - ax]] for ax in range(d)]
    fvals = np.asarray(f(*args), dtype=complex)
    local = fvals @ coef  # (numel^d, nen^d)
    locs = np.array(list(itertools.product(range(nen), repeat=d)))
    weights = N ** np.arange(d - 1, -1, -1)
    glob = np.zeros((locs.shape[0], elems.shape[0]), dtype=np.int64)
    for ax in range(d):
        glob += conn.ix[locs[:, ax][:, None], elems[:, ax][None, :]] * weights[ax]
    out = np.zeros(N ** d, dtype=complex)
    np.add.at(out, glob.ravel(), local.T.ravel())
    return out * params.h ** d


def assemble_neumann_vector(flux: PolySpec, mask: DomainMask, p: int = 1) -> np.ndarray:
    """Boundary-flux vector ``int_{Gamma_N} g N_j`` over faces whose nodes are all Neumann.

    In 1D the faces are the end points.  In 2D each side of the box is a 1D
    line: a force operator weighted by the face indicator is applied there and
    scattered back onto the grid.
    """
    d, n = mask.d, mask.n
    N = 1 << n
    flat = mask.neumann.ravel()
    out = np.zeros(N ** d, dtype=complex)
    if d == 1:
        for v in (0, N - 1):
            if flat[v]:
                out[v] = complex(flux(np.array(v / (N - 1))))
        return out
    if d != 2:
        raise ValueError("boundary flux vectors are implemented for d <= 2")
    params, conn = mesh_for_qubits(1, p, n)
    sides = {  # (flat indices along the side, coordinate map t -> (x0, x1))
        "y0": (np.arange(N), lambda s: (s, 0 * s)),
        "y1": ((N - 1) * N + np.arange(N), lambda s: (s, 0 * s + 1)),
        "x0": (np.arange(N) * N, lambda s: (0 * s, s)),
        "x1": (np.arange(N) * N + N - 1, lambda s: (0 * s + 1, s)),
    }
    for idx, coords in sides.values():
        on = flat[idx]
        faces = np.zeros(N)
        faces[: conn.numel] = np.all(on[conn.ix], axis=0)
        if not faces.any():
            continue
        trace = _trace_poly(flux, coords)
        op = force_operator(trace, p, n, 1, element_weights=faces)
        vec = be_apply(op, np.full(N, 1 / math.sqrt(N), dtype=complex)) * op.alpha
        out[idx] += vec * math.sqrt(N) * params.h
    return out


def _trace_poly(flux: PolySpec, coords) -> PolySpec:
    """Restrict a bivariate polynomial to a side parameterized by ``t``."""
    t = np.linspace(0, 1, flux.degree + 1) if flux.degree else np.array([0.0])
    x0, x1 = coords(t)
    vals = np.asarray(flux(x0, x1), dtype=float)
    c = P.polyfit(t, vals, max(flux.degree, 0)) if flux.degree else vals[:1]
    return PolySpec.monomial(c)
