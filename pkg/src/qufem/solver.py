"""System extraction, direct solves with norm recovery, and the two Poisson demos."""

from __future__ import annotations

import itertools
import json
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import AssembledArray, assemble_global_dd, classical_global
from .constraints import BlockSystem, dirichlet_state, lagrange_system
from .mesh import DomainMask, mask_from_rows, mesh_for_qubits
from .qcore import BlockEncoding, be_lcu, be_scale
from .quad import (
    PolySpec,
    assemble_force_vector,
    assemble_variable_coeff,
    classical_force_vector,
    classical_variable_assemble,
    gauss_legendre,
    node_coordinates,
)

MAX_EXTRACT_QUBITS = 13


# ---------------------------------------------------------------------------
# Coefficients
# ---------------------------------------------------------------------------


def _as_poly(value, d: int) -> PolySpec:
    if isinstance(value, PolySpec):
        return value
    if isinstance(value, Mapping):
        return PolySpec.from_dict({"nvars": d, **value})
    return PolySpec.constant(float(value), d)


@dataclass(frozen=True, eq=False)
class PDECoefficients:
    """``-div(D grad u) + k u = f`` with flux ``h`` on Neumann faces and ``g`` on Dirichlet nodes."""

    diffusivity: PolySpec
    reaction: PolySpec
    force: PolySpec
    flux: PolySpec
    dirichlet: PolySpec | np.ndarray

    @classmethod
    def build(cls, d: int, diffusivity=1.0, reaction=0.0, force=0.0, flux=0.0,
              dirichlet=0.0) -> PDECoefficients:
        g = dirichlet if isinstance(dirichlet, np.ndarray) else _as_poly(dirichlet, d)
        out = cls(_as_poly(diffusivity, d), _as_poly(reaction, d), _as_poly(force, d),
                  _as_poly(flux, d), g)
        out.check_coercive(d)
        return out

    @classmethod
    def from_dict(cls, spec: Mapping, d: int) -> PDECoefficients:
        keys = ("diffusivity", "reaction", "force", "flux", "dirichlet")
        unknown = set(spec) - set(keys)
        if unknown:
            raise ValueError(f"unknown coefficient keys {sorted(unknown)}")
        kw = {k: spec[k] for k in keys if k in spec}
        if isinstance(kw.get("dirichlet"), list):
            kw["dirichlet"] = np.asarray(kw["dirichlet"], dtype=float)
        return cls.build(d, **kw)

    def check_coercive(self, d: int, samples: int = 33) -> None:
        x = np.linspace(0, 1, samples)
        grid = np.meshgrid(*([x] * d), indexing="ij")
        vals = np.real(np.asarray(self.diffusivity(*grid)))
        if np.min(vals) <= 0:
            raise ValueError("diffusivity must be bounded away from zero")


# ---------------------------------------------------------------------------
# Extraction and solves
# ---------------------------------------------------------------------------


def _encoding_of(obj) -> BlockEncoding:
    if isinstance(obj, (AssembledArray, BlockSystem)):
        return obj.be
    if isinstance(obj, BlockEncoding):
        return obj
    raise TypeError(f"cannot extract from {type(obj).__name__}")


def extract_system(obj, sim_qubits: int | None = None) -> sp.csr_array:
    """``alpha`` times the post-selected block, column by column."""
    be = _encoding_of(obj)
    if be.system_qubits > MAX_EXTRACT_QUBITS:
        raise ValueError(f"system dimension 2^{be.system_qubits} exceeds 2^{MAX_EXTRACT_QUBITS}")
    blk = be.block() if sim_qubits is None else be.block(sim_qubits)
    return sp.csr_array(blk * be.alpha)


@dataclass(frozen=True)
class SolveReport:
    u: np.ndarray
    lam: np.ndarray
    u_norm: float
    u_norm_direct: float
    p_qlsp: float
    kappa: float
    residual: float
    alpha: float
    beta: float
    rhs_norm: float


def singular_values(mat, hermitian: bool | None = None) -> tuple[float, float]:
    """Extreme singular values; Hermitian matrices use shift-invert eigenvalues."""
    mat = sp.csc_array(mat)
    dim = mat.shape[0]
    if hermitian is None:
        hermitian = abs(mat - mat.conj().T).max() < 1e-12 if mat.nnz else True
    if dim <= 1024:
        s = np.linalg.svd(mat.toarray(), compute_uv=False)
        return float(s[-1]), float(s[0])
    if hermitian:
        lo = spla.eigsh(mat, k=1, sigma=0, which="LM", return_eigenvectors=False)
        hi = spla.eigsh(mat, k=1, which="LM", return_eigenvectors=False)
        return float(abs(lo[0])), float(abs(hi[0]))
    lo = spla.svds(mat, k=1, which="SM", return_singular_vectors=False)
    hi = spla.svds(mat, k=1, which="LM", return_singular_vectors=False)
    return float(lo[0]), float(hi[0])


def solve_qlsp(matrix, rhs: np.ndarray, alpha: float, beta_lower: float | None = None,
               split: int | None = None) -> SolveReport:
    """Direct solve plus the exact success probability ``(beta / alpha)^2 |L^-1 f|^2``.

    ``split`` separates ``u`` from trailing multiplier entries.
    """
    mat = sp.csc_array(matrix)
    rhs = np.asarray(rhs, dtype=complex)
    fn = float(np.linalg.norm(rhs))
    if fn == 0:
        raise ValueError("zero right-hand side")
    smin, smax = singular_values(mat)
    if smin <= 1e-13 * max(smax, 1.0):
        raise ValueError("singular system")
    beta = smin if beta_lower is None else float(beta_lower)
    if beta > smin * (1 + 1e-9):
        raise ValueError("beta exceeds the smallest singular value")
    sol = spla.spsolve(mat, rhs)
    p = (beta / alpha) ** 2 * float(np.linalg.norm(spla.spsolve(mat, rhs / fn))) ** 2
    recovered = alpha / beta * fn * math.sqrt(p)
    direct = float(np.linalg.norm(sol))
    residual = float(np.linalg.norm(mat @ sol - rhs))
    split = sol.size if split is None else split
    return SolveReport(sol[:split], sol[split:], recovered, direct, p, smax / smin, residual,
                       alpha, beta, fn)


# ---------------------------------------------------------------------------
# Operators for the PDE
# ---------------------------------------------------------------------------


def physical_operator(coeffs: PDECoefficients, d: int, p: int, n: int) -> BlockEncoding:
    """``L = K_D + M_k`` on the physical mesh.

    Reference-cell arrays scale as ``h^(d-2)`` (stiffness) and ``h^d`` (mass).
    """
    params, _ = mesh_for_qubits(d, p, n)
    h = params.h
    terms, weights = [], []
    if _is_constant(coeffs.diffusivity):
        k_arr, _ = assemble_global_dd(d, p, n)
        terms.append(k_arr.be)
        weights.append(_constant_value(coeffs.diffusivity) * h ** (d - 2))
    else:
        terms.append(assemble_variable_coeff(coeffs.diffusivity, "stiffness", p, n, d=d).be)
        weights.append(h ** (d - 2))
    if coeffs.reaction.terms:
        if _is_constant(coeffs.reaction):
            _, m_arr = assemble_global_dd(d, p, n)
            terms.append(m_arr.be)
            weights.append(_constant_value(coeffs.reaction) * h ** d)
        else:
            terms.append(assemble_variable_coeff(coeffs.reaction, "mass", p, n, d=d).be)
            weights.append(h ** d)
    if len(terms) == 1:
        if weights[0] <= 0:
            raise ValueError("non-positive operator scale")
        return be_scale(terms[0], weights[0])
    return be_lcu(terms, coeffs=weights)


def _is_constant(poly: PolySpec) -> bool:
    return all(sum(e) == 0 for e in poly.terms)


def _constant_value(poly: PolySpec) -> float:
    return float(np.real(sum(poly.terms.values()))) if poly.terms else 0.0


def classical_operator(coeffs: PDECoefficients, d: int, p: int, n: int) -> sp.csr_array:
    """All-classical counterpart of :func:`physical_operator` for constant coefficients
    or via the classical quadrature oracle otherwise."""
    params, _ = mesh_for_qubits(d, p, n)
    h = params.h
    if _is_constant(coeffs.diffusivity):
        mat = classical_global(d, p, n, "stiffness") * _constant_value(coeffs.diffusivity)
    else:
        mat = classical_variable_assemble(coeffs.diffusivity, "stiffness", p, n, d=d)
    mat = mat * h ** (d - 2)
    if coeffs.reaction.terms:
        if _is_constant(coeffs.reaction):
            mm = classical_global(d, p, n, "mass") * _constant_value(coeffs.reaction)
        else:
            mm = classical_variable_assemble(coeffs.reaction, "mass", p, n, d=d)
        mat = mat + mm * h ** d
    return sp.csr_array(mat)


def classical_dirichlet_solve(mat, f: np.ndarray, mask: DomainMask,
                              ubar: np.ndarray | None = None) -> np.ndarray:
    """Row-replacement solve: constrained values imposed, free rows solved."""
    free = mask.free
    mat = sp.csr_array(mat)
    u = np.zeros(f.size, dtype=complex) if ubar is None else np.asarray(ubar, dtype=complex).copy()
    u[~free] = 0 if ubar is None else u[~free]
    rhs = f[free] - mat[free][:, ~free] @ u[~free]
    u[free] = spla.spsolve(sp.csc_array(mat[free][:, free]), rhs)
    return u


# ---------------------------------------------------------------------------
# Demos
# ---------------------------------------------------------------------------


def cal_mask(n: int = 5) -> DomainMask:
    """Letter-shaped domain shipped with the package, resampled to ``2^n`` nodes per side."""
    text = resources.files("qufem").joinpath("data/cal_mask.txt").read_text()
    rows = [r.strip() for r in text.splitlines() if r.strip()]
    base = np.array([[c == "1" for c in r] for r in rows])
    N = 1 << n
    idx = (np.arange(N) * base.shape[0]) // N
    sampled = base[np.ix_(idx, idx)]
    return mask_from_rows(["".join("1" if v else "0" for v in r) for r in sampled])


@dataclass(frozen=True, eq=False)
class DemoResult:
    name: str
    n: int
    report: SolveReport
    mask: DomainMask
    u_classical: np.ndarray
    extras: dict = field(default_factory=dict)

    @property
    def grid_shape(self) -> tuple:
        return self.mask.active.shape

    def u_grid(self) -> np.ndarray:
        return self.report.u.real.reshape(self.grid_shape)

    def lam_grid(self) -> np.ndarray:
        return self.report.lam.real.reshape(self.grid_shape)

    @property
    def max_rel_diff(self) -> float:
        scale = float(np.max(np.abs(self.u_classical))) or 1.0
        return float(np.max(np.abs(self.report.u - self.u_classical))) / scale


def solve_dirichlet_problem(coeffs: PDECoefficients, mask: DomainMask, p: int = 1,
                            name: str = "custom") -> DemoResult:
    """Quantum-assembled Lagrange system, extracted and solved directly, with a classical
    FEM solve of the same mesh alongside."""
    d, n = mask.d, mask.n
    op = physical_operator(coeffs, d, p, n)
    force = assemble_force_vector(coeffs.force, mask, p, n, d)
    f = force.vector
    if isinstance(coeffs.dirichlet, np.ndarray):
        ubar = dirichlet_state(mask, coeffs.dirichlet)
    elif coeffs.dirichlet.terms:
        ubar = dirichlet_state(mask, poly=coeffs.dirichlet)
    else:
        ubar = np.zeros(f.size, dtype=complex)
    system = lagrange_system(op, mask, ubar, f)
    mat = extract_system(system)
    report = solve_qlsp(mat, system.rhs_vector, system.be.alpha, split=f.size)
    classical = classical_dirichlet_solve(classical_operator(coeffs, d, p, n),
                                          classical_force_vector(coeffs.force, p, n, d),
                                          mask, system.ubar)
    extras = {"force_filling_fraction": force.filling_fraction,
              "force_rounds": force.amplification_rounds,
              "alpha_operator": op.alpha,
              "ancillas": system.be.ancillas,
              "system_qubits": system.be.system_qubits}
    return DemoResult(name, n, report, mask, classical, extras)


def demo_poisson_cal(n: int = 5, f: PolySpec | None = None,
                     mask: DomainMask | None = None) -> DemoResult:
    """``-lap u = f`` on the letter domain with homogeneous boundary values."""
    f = PolySpec({(1, 1): 1.0}, 2) if f is None else f
    mask = cal_mask(n) if mask is None else mask
    coeffs = PDECoefficients.build(2, force=f)
    res = solve_dirichlet_problem(coeffs, mask, name="cal")
    interior = mask.free
    res.extras["lambda_interior_max"] = float(np.max(np.abs(res.report.lam[interior]),
                                                     initial=0.0))
    res.extras["u_constrained_max"] = float(np.max(np.abs(res.report.u[mask.constrained]),
                                                   initial=0.0))
    return res


def duct_series(x, y, g: float = 1.0, terms: int = 50) -> np.ndarray:
    """``-lap u = g`` on the unit square with ``u = 0`` on the edges, double sine series
    over the first ``terms`` odd indices per axis."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros(np.broadcast(x, y).shape)
    odd = 2 * np.arange(terms) + 1
    sx = np.sin(np.pi * odd[:, None] * x.ravel()[None, :])
    sy = np.sin(np.pi * odd[:, None] * y.ravel()[None, :])
    coef = 16 * g / (np.pi ** 4 * odd[:, None] * odd[None, :]
                     * (odd[:, None] ** 2 + odd[None, :] ** 2))
    out = np.einsum("mn,mi,ni->i", coef, sx, sy)
    return out.reshape(np.broadcast(x, y).shape)


def l2_error_vs_series(u: np.ndarray, n: int, g: float = 1.0, order_g: int = 3) -> float:
    """Element-wise Gauss ``G x G`` L2 error of the bilinear interpolant against the series."""
    N = 1 << n
    h = 1.0 / (N - 1)
    grid = u.real.reshape(N, N)  # [y, x]
    rule = gauss_legendre(order_g)
    xi = (rule.points + 1) / 2
    w = rule.weights / 2
    total = 0.0
    e = np.arange(N - 1)
    for (a, wa), (b, wb) in itertools.product(zip(xi, w), repeat=2):
        # a along x, b along y
        val = ((1 - a) * (1 - b) * grid[np.ix_(e, e)] + a * (1 - b) * grid[np.ix_(e, e + 1)]
               + (1 - a) * b * grid[np.ix_(e + 1, e)] + a * b * grid[np.ix_(e + 1, e + 1)])
        X = (e[None, :] + a) * h
        Y = (e[:, None] + b) * h
        ex = duct_series(np.broadcast_to(X, val.shape), np.broadcast_to(Y, val.shape), g)
        total += wa * wb * float(np.sum((val - ex) ** 2))
    return math.sqrt(total * h * h)


def center_value(u: np.ndarray, n: int) -> float:
    """Value at the square's center: mean of the four central nodes."""
    N = 1 << n
    grid = u.real.reshape(N, N)
    c = N // 2
    return float(grid[c - 1:c + 1, c - 1:c + 1].mean())


def demo_square_duct(n: int = 5, dpdx_over_mu: float = -1.0,
                     convergence: bool = True) -> DemoResult:
    """Fully developed duct flow ``lap u = (1/mu) dp/dx`` with no-slip walls."""
    g = -dpdx_over_mu
    mask = DomainMask.box(n, 2)
    coeffs = PDECoefficients.build(2, force=PolySpec.constant(g, 2))
    res = solve_dirichlet_problem(coeffs, mask, name="duct")
    u = res.report.u
    grid = res.u_grid()
    res.extras["center_velocity"] = center_value(u, n)
    res.extras["center_series"] = float(duct_series(0.5, 0.5, g))
    res.extras["asymmetry"] = float(max(np.max(np.abs(grid - grid.T)),
                                        np.max(np.abs(grid - grid[::-1])),
                                        np.max(np.abs(grid - grid[:, ::-1]))))
    res.extras["flow_rate"] = observable(PolySpec.constant(1.0, 2), u, n, 2)
    N = 1 << n
    res.extras["flow_rate_riemann"] = float(np.sum(grid) / (N - 1) ** 2)
    err = l2_error_vs_series(u, n, g)
    res.extras["l2_error"] = err
    if convergence and n > 2:
        coarse = solve_dirichlet_problem(coeffs, DomainMask.box(n - 1, 2), name="duct")
        err_c = l2_error_vs_series(coarse.report.u, n - 1, g)
        res.extras["l2_error_coarse"] = err_c
        res.extras["l2_ratio"] = err_c / err
    return res


def observable(r: PolySpec, u: np.ndarray, n: int, d: int, p: int = 1) -> float:
    """``r^T M u`` with nodal ``r`` and the physical mass matrix."""
    params, _ = mesh_for_qubits(d, p, n)
    mass = classical_global(d, p, n, "mass") * params.h ** d
    rv = np.asarray(r(*node_coordinates(n, d)), dtype=complex)
    rv = np.broadcast_to(rv, (params.numnp ** d,))
    return float(np.real(rv @ (mass @ np.asarray(u, dtype=complex))))


def dirichlet_laplacian_kappa(ns=range(3, 8)) -> list[tuple[int, float]]:
    """Condition numbers of the 1D Dirichlet Laplacian (free block) per level."""
    out = []
    for n in ns:
        k = classical_global(1, 1, n, "stiffness").toarray()[1:-1, 1:-1]
        s = np.linalg.svd(k, compute_uv=False)
        out.append((n, float(s[0] / s[-1])))
    return out


def summary_json(res: DemoResult, ledger: Mapping | None = None) -> str:
    rep = res.report
    data = {
        "demo": res.name,
        "n": res.n,
        "u_norm_recovered": rep.u_norm,
        "u_norm_direct": rep.u_norm_direct,
        "p_qlsp": rep.p_qlsp,
        "kappa": rep.kappa,
        "residual": rep.residual,
        "alpha": rep.alpha,
        "beta": rep.beta,
        "rhs_norm": rep.rhs_norm,
        "max_rel_diff_vs_classical": res.max_rel_diff,
        **res.extras,
    }
    if ledger is not None:
        data["gate_cost"] = dict(ledger)
    return json.dumps(data, indent=2, sort_keys=True)
