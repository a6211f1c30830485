"""Global stiffness and mass arrays, assembled classically and as block-encodings."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import gates
from .elements import elemental_arrays, elemental_prep_oracles, tensor_elemental
from .gates import GateCost
from .interaction import indicator_cost, uoi_be, uoi_cost
from .mesh import Connectivity, mesh_for_qubits, order_bits
from .qcore import BlockEncoding, be_lcu, be_tensor_chain, make_prep_pair


@dataclass(frozen=True, eq=False)
class AssembledArray:
    be: BlockEncoding
    alpha_analytic: float
    kind: str
    cost: GateCost = GateCost()
    ledger_ancillas: int | None = None


def classical_assemble(conn: Connectivity, elem_matrix: np.ndarray) -> sp.csr_array:
    """``sum_e sum_jk A^e_jk |IX(j,e)><IX(k,e)|`` element by element."""
    elem_matrix = np.asarray(elem_matrix)
    nen = conn.nen
    if elem_matrix.shape != (nen, nen):
        raise ValueError("elemental matrix does not match the element")
    rows = np.repeat(conn.ix, nen, axis=0)  # (j, k) pairs in row-major order
    cols = np.tile(conn.ix, (nen, 1))
    vals = np.repeat(elem_matrix.ravel(), conn.numel)
    return sp.csr_array((vals, (rows.ravel(), cols.ravel())),
                        shape=(conn.numnp, conn.numnp))


def classical_assemble_dd(conn: Connectivity, elem_matrix: np.ndarray, d: int) -> sp.csr_array:
    """Assembly on the tensor mesh, local index ``(j_{d-1}, ..., j_0)`` most-significant first."""
    nen, numel, N = conn.nen, conn.numel, conn.numnp
    if elem_matrix.shape != (nen ** d, nen ** d):
        raise ValueError("elemental matrix does not match the d-dimensional element")
    local = np.array(list(itertools.product(range(nen), repeat=d)))  # (nen^d, d)
    elems = np.array(list(itertools.product(range(numel), repeat=d)))  # (numel^d, d)
    weights = N ** np.arange(d - 1, -1, -1)
    # global[a, e] = sum_axis IX(local[a, axis], elems[e, axis]) * N^(d-1-axis)
    glob = np.zeros((local.shape[0], elems.shape[0]), dtype=np.int64)
    for ax in range(d):
        glob += conn.ix[local[:, ax][:, None], elems[:, ax][None, :]] * weights[ax]
    na = local.shape[0]
    rows = np.repeat(glob, na, axis=0).ravel()
    cols = np.tile(glob, (na, 1)).ravel()
    vals = np.repeat(np.asarray(elem_matrix).ravel(), elems.shape[0])
    return sp.csr_array((vals, (rows, cols)), shape=(N ** d, N ** d))


def assembly_cost(n: int, p: int, elem_matrix: np.ndarray) -> tuple[GateCost, int]:
    """Toffoli ledger and post-selected ancillas for the 1D unit-of-interaction LCU."""
    nen = p + 1
    terms = [(j, k) for j in range(nen) for k in range(nen) if elem_matrix[j, k] != 0]
    b = max(1, int(np.ceil(np.log2(len(terms))))) if len(terms) > 1 else 0
    per_term = 1 if p == 1 else 2
    cost = GateCost()
    for j, k in terms:
        cost = cost + gates.controlled_cost(uoi_cost(n, p, j, k), b)
    ledger = gates.compression_ledger(nen * nen, per_term)
    return cost + ledger.cost, ledger.ancillas


def assemble_global_1d(elem_matrix: np.ndarray, p: int, n: int,
                       kind: str = "custom") -> AssembledArray:
    """LCU of the units of interaction weighted by the elemental entries."""
    order_bits(p)
    mesh_for_qubits(1, p, n)
    elem_matrix = np.asarray(elem_matrix, dtype=float)
    nen = p + 1
    terms, coeffs = [], []
    for j in range(nen):
        for k in range(nen):
            terms.append(uoi_be(n, p, j, k))
            coeffs.append(elem_matrix[j, k])
    coeffs = np.array(coeffs)
    pair = _elemental_pair(elem_matrix, p, kind)
    be = be_lcu(terms, pair if pair is not None else make_prep_pair(coeffs))
    cost, anc = assembly_cost(n, p, elem_matrix)
    return AssembledArray(be, float(np.abs(coeffs).sum()), kind, cost, anc)


def _elemental_pair(elem_matrix, p, kind):
    """Use the dedicated prepare oracles for the standard arrays."""
    if kind not in ("stiffness", "mass"):
        return None
    arr = elemental_arrays(p)
    ref = arr.ke if kind == "stiffness" else arr.me
    if not np.allclose(ref, elem_matrix, atol=1e-13):
        return None
    pk, pm = elemental_prep_oracles(arr)
    return pk if kind == "stiffness" else pm


def assemble_stiffness_1d(p: int, n: int) -> AssembledArray:
    return assemble_global_1d(elemental_arrays(p).ke, p, n, "stiffness")


def assemble_mass_1d(p: int, n: int) -> AssembledArray:
    return assemble_global_1d(elemental_arrays(p).me, p, n, "mass")


def assemble_global_dd(d: int, p: int, n: int) -> tuple[AssembledArray, AssembledArray]:
    """``K^(d) = sum_i M (x) .. K (slot i) .. (x) M`` and ``M^(d) = M^(x)d``."""
    if d < 1:
        raise ValueError("dimension must be positive")
    k1 = assemble_stiffness_1d(p, n)
    m1 = assemble_mass_1d(p, n)
    if d == 1:
        return k1, m1
    mass = be_tensor_chain(*([m1.be] * d))
    slots = []
    for axis in range(d):
        factors = [m1.be] * d
        factors[d - 1 - axis] = k1.be
        slots.append(be_tensor_chain(*factors))
    stiff = be_lcu(slots, coeffs=np.ones(d))
    alpha_k = d * k1.alpha_analytic * m1.alpha_analytic ** (d - 1)
    alpha_m = m1.alpha_analytic ** d
    cost_k = d * (k1.cost + (d - 1) * m1.cost)
    cost_m = d * m1.cost
    anc_k = d * k1.ledger_ancillas + max(0, int(np.ceil(np.log2(d))))
    return (AssembledArray(stiff, alpha_k, "stiffness", cost_k, anc_k),
            AssembledArray(mass, alpha_m, "mass", cost_m, d * m1.ledger_ancillas))


def classical_global(d: int, p: int, n: int, kind: str) -> sp.csr_array:
    """Classical reference for the unscaled global stiffness or mass."""
    _, conn = mesh_for_qubits(d, p, n)
    ke, me = tensor_elemental(p, d)
    return classical_assemble_dd(conn, ke if kind == "stiffness" else me, d)


def write_triplets(mat, path: str | Path) -> None:
    """Comma-separated ``row,col,value`` triplets, one per nonzero."""
    coo = sp.coo_array(mat)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write("row,col,value\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            v = complex(v)
            val = f"{v.real:.17g}" if v.imag == 0 else f"{v.real:.17g}{v.imag:+.17g}j"
            fh.write(f"{r},{c},{val}\n")


COST_CONSTRUCTS = ("stiffness_1d", "mass_1d", "uoi", "indicator", "division", "mod_p")


def cost_sweep(construct: str, ns, p: int = 1) -> list[dict]:
    """Ledger rows for one construct over qubit counts; ``n`` not divisible by ``m`` is skipped."""
    m = order_bits(p)
    rows = []
    for n in ns:
        if n % m or n < 2:
            continue
        if construct in ("stiffness_1d", "mass_1d"):
            arr = elemental_arrays(p)
            cost, anc = assembly_cost(n, p, arr.ke if construct == "stiffness_1d" else arr.me)
            toff = cost.toffoli
        elif construct == "uoi":
            c = uoi_cost(n, p, 0, 1)
            toff, anc = c.toffoli, (1 if p == 1 else 2) + c.extra_workspace_qubits
        elif construct == "indicator":
            c = indicator_cost(n, p, 1)
            toff, anc = c.toffoli, 1 + c.extra_workspace_qubits
        elif construct == "division":
            toff, anc = gates.division_toffoli(n, m), m
        elif construct == "mod_p":
            c = gates.mod_p_unitary(n, p).cost
            toff, anc = c.toffoli, m + c.extra_workspace_qubits
        else:
            raise ValueError(f"unknown construct {construct!r}; choose from {COST_CONSTRUCTS}")
        rows.append({"construct": construct, "n": n, "m": m, "p": p,
                     "toffoli": int(toff), "ancillas": int(anc)})
    return rows
