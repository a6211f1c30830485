"""Structured Cartesian meshes, connectivity oracles, position operators and projectors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import gates
from .qcore import (
    BlockEncoding,
    PermutationOp,
    be_lcu,
    be_tensor_chain,
    identity_be,
    unitary_be,
)


@dataclass(frozen=True)
class MeshParams:
    d: int
    p: int
    m: int
    n: int
    numnp: int
    numel: int
    nen: int
    h: float
    periodic: bool = False

    @property
    def nodes(self) -> np.ndarray:
        """Node coordinates along one axis."""
        return np.arange(self.numnp) / (self.numnp - 1)


@dataclass(frozen=True)
class Connectivity:
    """``ix[j, e]`` is the global node of local node ``j`` in element ``e``."""

    ix: np.ndarray
    numnp: int

    @property
    def nen(self) -> int:
        return self.ix.shape[0]

    @property
    def numel(self) -> int:
        return self.ix.shape[1]

    @property
    def injective_per_row(self) -> bool:
        return all(np.unique(row).size == row.size for row in self.ix)


def order_bits(p: int) -> int:
    """``m`` with ``p = 2^m - 1``."""
    if p < 1 or (p + 1) & p:
        raise ValueError(f"element order {p} is not of the form 2^m - 1")
    return (p + 1).bit_length() - 1


def build_mesh(d: int, p: int, k: int, periodic: bool = False) -> tuple[MeshParams, Connectivity]:
    """Mesh with ``2^(m k)`` nodes per axis and connectivity ``IX(j, e) = e p + j``."""
    if d < 1 or k < 1:
        raise ValueError("need d >= 1 and k >= 1")
    m = order_bits(p)
    n = m * k
    numnp = 1 << n
    if periodic:
        if numnp % p:
            raise ValueError("periodic meshes need p to divide the node count")
        numel = numnp // p
    else:
        numel = sum((1 << m) ** i for i in range(k))
        assert numel * p + 1 == numnp
    ix = (np.arange(numel)[None, :] * p + np.arange(p + 1)[:, None]) % numnp
    params = MeshParams(d, p, m, n, numnp, numel, p + 1, 1.0 / numel, periodic)
    return params, Connectivity(ix, numnp)


def mesh_for_qubits(d: int, p: int, n: int) -> tuple[MeshParams, Connectivity]:
    m = order_bits(p)
    if n % m:
        raise ValueError(f"n={n} is not a multiple of m={m} for p={p}")
    return build_mesh(d, p, n // m)


def _n_of(conn: Connectivity) -> int:
    return conn.numnp.bit_length() - 1


def _ix_full(conn: Connectivity) -> np.ndarray:
    """Connectivity extended to every element index of the n-qubit register."""
    n = _n_of(conn)
    dim = 1 << n
    p = conn.nen - 1
    e = np.arange(dim)
    table = (e[None, :] * p + np.arange(conn.nen)[:, None]) % dim
    table[:, : conn.numel] = conn.ix
    return table


def o_ix_oracle(conn: Connectivity, compact: bool = False) -> PermutationOp:
    """Connectivity oracle on ``(j, e, out)`` or, compactly, ``(j, e) -> (j, IX(j, e))``.

    Element indices beyond ``numel`` follow the same arithmetic rule and are
    masked downstream by the element comparator.
    """
    if not conn.injective_per_row:
        raise ValueError("connectivity rows are not injective")
    n = _n_of(conn)
    dim = 1 << n
    jbits = max(1, math.ceil(math.log2(conn.nen)))
    jdim = 1 << jbits
    table = np.zeros((jdim, dim), dtype=np.int64)
    table[: conn.nen] = _ix_full(conn)
    table[conn.nen:] = np.arange(dim)[None, :]
    if compact:
        for row in table:
            if np.unique(row).size != dim:
                raise ValueError("compact oracle needs bijective rows")
        j, e = np.divmod(np.arange(jdim * dim), dim)
        return PermutationOp(j * dim + table[j, e])
    idx = np.arange(jdim * dim * dim)
    j, rest = np.divmod(idx, dim * dim)
    e, out = np.divmod(rest, dim)
    return PermutationOp((j * dim + e) * dim + (out ^ table[j, e]))


# --- position operators --------------------------------------------------------

def _pauli_z(n: int, i: int) -> PermutationOp:
    """``Z`` on qubit ``i`` counted from the least-significant end."""
    dim = 1 << n
    bit = (np.arange(dim) >> i) & 1
    return PermutationOp(np.arange(dim), 1.0 - 2.0 * bit)


def position_be(n: int) -> BlockEncoding:
    """``(N - 1)``-encoding of ``diag(0, ..., N-1)`` as an LCU of ``I`` and the ``Z^(i)``."""
    dim = 1 << n
    terms = [identity_be(n)] + [unitary_be(_pauli_z(n, i), hermitian=True) for i in range(n)]
    coeffs = [(dim - 1) / 2] + [-(2 ** i) / 2 for i in range(n)]
    return be_lcu(terms, coeffs=coeffs)


def position_be_dim(i: int, d: int, n: int) -> BlockEncoding:
    """``X^(i)`` on ``d`` axes; axis ``i`` counted from the right."""
    if not 0 <= i < d:
        raise ValueError("axis out of range")
    factors = [identity_be(n)] * d
    factors[d - 1 - i] = position_be(n)
    return be_tensor_chain(*factors)


def element_projector_be(n: int, p: int) -> BlockEncoding:
    """``(1, 1)`` encoding of ``sum_{e < numel} |e><e|`` via the element comparator."""
    m = order_bits(p)
    numel = ((1 << n) - 1) // p if n % m == 0 else None
    if numel is None:
        raise ValueError("invalid (n, p) pair")
    comp = gates.less_than_flag(n, numel)
    return BlockEncoding(comp.op, 1.0, 1, n, hermitian=True)


# --- domains and boundary projectors ------------------------------------------------

@dataclass(frozen=True, eq=False)
class DomainMask:
    """Node flags on a full ``(2^n)^d`` grid, indexed ``[j_{d-1}, ..., j_0]``."""

    active: np.ndarray
    fixed: np.ndarray
    neumann: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.neumann is None:
            object.__setattr__(self, "neumann", np.zeros_like(self.active, dtype=bool))
        for a in (self.active, self.fixed, self.neumann):
            if a.shape != self.active.shape or a.dtype != bool:
                raise ValueError("mask arrays must be boolean and share a shape")
        if np.any((self.fixed | self.neumann) & ~self.active):
            raise ValueError("fixed and Neumann nodes must be active")

    @property
    def d(self) -> int:
        return self.active.ndim

    @property
    def n(self) -> int:
        return self.active.shape[0].bit_length() - 1

    @property
    def constrained(self) -> np.ndarray:
        """Nodes pinned by constraints: Dirichlet nodes plus inactive nodes (flat)."""
        return (self.fixed | ~self.active).ravel()

    @property
    def free(self) -> np.ndarray:
        return ~self.constrained

    @classmethod
    def box(cls, n: int, d: int) -> DomainMask:
        """Whole grid active, every face node fixed."""
        N = 1 << n
        active = np.ones((N,) * d, dtype=bool)
        fixed = np.zeros_like(active)
        for ax in range(d):
            sl = [slice(None)] * d
            sl[ax] = 0
            fixed[tuple(sl)] = True
            sl[ax] = N - 1
            fixed[tuple(sl)] = True
        return cls(active, fixed)

    @classmethod
    def unconstrained(cls, n: int, d: int) -> DomainMask:
        N = 1 << n
        active = np.ones((N,) * d, dtype=bool)
        return cls(active, np.zeros_like(active))

    @classmethod
    def from_active(cls, active: np.ndarray) -> DomainMask:
        """Fix every active node that touches an inactive node or the grid edge."""
        active = np.asarray(active, dtype=bool)
        padded = np.pad(active, 1, constant_values=False)
        interior = np.ones_like(active)
        d = active.ndim
        for shift in np.ndindex(*(3,) * d):
            sl = tuple(slice(s, s + active.shape[i]) for i, s in enumerate(shift))
            interior &= padded[sl]
        return cls(active, active & ~interior)


def load_mask(path: str | Path) -> DomainMask:
    """Read a 2D bitmap of 0/1 rows, top row = largest y index."""
    rows = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    return mask_from_rows(rows)


def mask_from_rows(rows: list[str]) -> DomainMask:
    N = len(rows)
    if any(len(r) != N for r in rows) or N & (N - 1):
        raise ValueError("mask must be a square bitmap with power-of-two side")
    if any(c not in "01" for r in rows for c in r):
        raise ValueError("mask rows may contain only 0 and 1")
    active = np.array([[c == "1" for c in r] for r in rows[::-1]], dtype=bool)
    return DomainMask.from_active(active)


def mask_to_rows(mask: DomainMask) -> list[str]:
    return ["".join("1" if v else "0" for v in row) for row in mask.active[::-1]]


def interior_projector(mask: DomainMask) -> sp.csr_array:
    return sp.diags_array(mask.free.astype(float), format="csr").astype(complex)


def boundary_oracle(mask: DomainMask) -> tuple[PermutationOp, BlockEncoding]:
    """Flag constrained nodes; the oracle is a ``(1, 1)`` encoding of ``P_int``."""
    flag = gates.flag_oracle(mask.constrained)
    nq = mask.n * mask.d
    return flag.op, BlockEncoding(flag.op, 1.0, 1, nq, hermitian=True)


def boundary_projector_be(mask: DomainMask) -> BlockEncoding:
    """``(1, 1)`` encoding of ``P_bd = I - P_int`` (flag inverted before post-selection)."""
    flag = gates.flag_oracle(~mask.constrained)
    return BlockEncoding(flag.op, 1.0, 1, mask.n * mask.d, hermitian=True)


def interior_be_1d(n: int) -> tuple[BlockEncoding, gates.GateCost]:
    """``P_int`` for the two end nodes from ``(c_{0^n}-NOT)(c_{1^n}-NOT)``."""
    circuit = gates.compose(gates.or_gate(n), gates.multi_cnot(n))
    return BlockEncoding(circuit.op, 1.0, 1, n, hermitian=True), circuit.cost


def interior_be_box(n: int, d: int) -> BlockEncoding:
    """Interior projector of the box, ``P_int`` tensored over the axes."""
    one, _ = interior_be_1d(n)
    return be_tensor_chain(*([one] * d))
