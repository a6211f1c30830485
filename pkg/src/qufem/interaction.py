"""Units of interaction and local-to-global indicator matrices, by reference sum and by circuit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import gates
from .gates import GateCost
from .mesh import Connectivity, order_bits
from .qcore import BlockEncoding, EmbedOp, IdentityOp, PermutationOp, ProductOp, kron_op


@dataclass(frozen=True)
class InteractionSpec:
    j: int
    k: int
    p: int
    n: int
    periodic: bool = False

    def __post_init__(self):
        if not (0 <= self.j <= self.p and 0 <= self.k <= self.p):
            raise ValueError("local node index out of range")


def uoi_reference(conn: Connectivity, j: int, k: int) -> sp.csr_array:
    """``sum_e |IX(j, e)><IX(k, e)|`` summed element by element."""
    if not conn.injective_per_row:
        raise ValueError("connectivity rows are not injective")
    rows, cols = conn.ix[j], conn.ix[k]
    data = np.ones(rows.size, dtype=complex)
    return sp.csr_array((data, (rows, cols)), shape=(conn.numnp, conn.numnp))


def indicator_reference(conn: Connectivity, j: int) -> sp.csr_array:
    """``sum_e |IX(j, e)><e|``."""
    e = np.arange(conn.numel)
    data = np.ones(e.size, dtype=complex)
    return sp.csr_array((data, (conn.ix[j], e)), shape=(conn.numnp, conn.numnp))


def shift_matrix(n: int, k: int) -> sp.csr_array:
    dim = 1 << n
    rows = (np.arange(dim) + k) % dim
    return sp.csr_array((np.ones(dim, dtype=complex), (rows, np.arange(dim))), shape=(dim, dim))


def periodic_reference(n: int, p: int, j: int, k: int) -> sp.csr_array:
    """Periodic units: ``S^j diag(i mod p == 0) S^{-k}``."""
    dim = 1 << n
    diag = sp.diags_array((np.arange(dim) % p == 0).astype(complex))
    return sp.csr_array(shift_matrix(n, j) @ diag @ shift_matrix(n, -k))


def _sandwich(n: int, ancillas: int, core: PermutationOp, j: int, k: int) -> ProductOp:
    """``(I (x) S^j) core (I (x) S^{-k})`` on ``(ancillas, system)``."""
    anc = IdentityOp(1 << ancillas)
    return ProductOp([kron_op(anc, gates.shift_op(n, j).op), core,
                      kron_op(anc, gates.shift_op(n, -k).op)])


def uoi_be_p1(n: int, j: int, k: int, periodic: bool = False,
              reduced: bool = False) -> BlockEncoding:
    """``(1, 1)`` encoding of the linear-element unit ``A_jk``.

    ``A_00`` is a single ``C^n(NOT)`` onto the flag; the others are shifted
    copies.  ``reduced=True`` builds ``A_11`` directly from the OR gate.
    """
    if j not in (0, 1) or k not in (0, 1):
        raise ValueError("linear elements have local nodes 0 and 1")
    if reduced:
        if (j, k) != (1, 1):
            raise ValueError("the OR-gate form exists only for A_11")
        return BlockEncoding(gates.or_gate(n).op, 1.0, 1, n, hermitian=True)
    if periodic:
        core = PermutationOp(np.arange(2 << n))
    else:
        core = gates.multi_cnot(n).op
    hermitian = j == k == 0
    return BlockEncoding(_sandwich(n, 1, core, j, k), 1.0, 1, n, hermitian=hermitian)


def _uoi_p_core(n: int, p: int, periodic: bool) -> PermutationOp:
    """Net action on ``(flag1, flag2, system)``.

    ``flag1 ^= (i mod p != 0)`` and, unless periodic, ``flag2 ^= (i == 2^n - 1)``.
    """
    dim = 1 << n
    idx = np.arange(4 * dim)
    f1, rest = np.divmod(idx, 2 * dim)
    f2, i = np.divmod(rest, dim)
    f1 = f1 ^ (i % p != 0)
    if not periodic:
        f2 = f2 ^ (i == dim - 1)
    return PermutationOp((f1 * 2 + f2) * dim + i)


def uoi_p_circuit_with_workspace(n: int, p: int, periodic: bool = False) -> ProductOp:
    """The unit circuit including its remainder workspace.

    Registers ``(flag1, flag2, work_m, system)``: NOT on flag1, remainder into
    the workspace, zero-controlled NOT onto flag1, uncompute, then ``C^n(NOT)``
    onto flag2.
    """
    m = gates.bits_for(p)
    dim, mdim = 1 << n, 1 << m
    dims = [2, 2, mdim, dim]
    not_f1 = EmbedOp(PermutationOp(np.array([1, 0])), dims, [0])
    modp = EmbedOp(gates.mod_p_unitary(n, p).op, dims, [3, 2])
    zero_ctrl = EmbedOp(gates.or_gate(m).op, dims, [0, 2])
    ops = [modp.adjoint(), zero_ctrl, modp, not_f1]
    if not periodic:
        ops.insert(0, EmbedOp(gates.multi_cnot(n).op, dims, [1, 3]))
    return ProductOp(ops)


def uoi_be_p(n: int, p: int, j: int, k: int, periodic: bool = False) -> BlockEncoding:
    """``(1, 2)`` encoding of the order-``p`` unit ``A_jk`` via the remainder flag."""
    m = order_bits(p)
    if n % m:
        raise ValueError(f"n={n} incompatible with p={p}")
    if not (0 <= j <= p and 0 <= k <= p):
        raise ValueError("local node index out of range")
    core = _uoi_p_core(n, p, periodic)
    return BlockEncoding(_sandwich(n, 2, core, j, k), 1.0, 2, n, hermitian=(j == k == 0))


def uoi_be(n: int, p: int, j: int, k: int, periodic: bool = False) -> BlockEncoding:
    """Dedicated linear-element circuit for ``p = 1``, remainder circuit otherwise."""
    if p == 1:
        return uoi_be_p1(n, j, k, periodic)
    return uoi_be_p(n, p, j, k, periodic)


def indicator_be(n: int, p: int, j: int) -> BlockEncoding:
    """``(1, 1)`` encoding of ``sum_e |IX(j, e)><e|``.

    The comparator flags ``e >= numel``; then ``S^j U_{(. p) % N}`` relabels
    the element index as its ``j``-th global node.
    """
    m = order_bits(p)
    if n % m:
        raise ValueError(f"n={n} incompatible with p={p}")
    numel = ((1 << n) - 1) // p
    comp = gates.less_than_flag(n, numel)
    relabel = ProductOp([gates.shift_op(n, j).op, gates.mul_mod_unitary(n, p).op])
    unitary = ProductOp([kron_op(IdentityOp(2), relabel), comp.op])
    return BlockEncoding(unitary, 1.0, 1, n, hermitian=(p == 1 and j == 0))


# --- costs ------------------------------------------------------------------------

def uoi_cost(n: int, p: int, j: int, k: int, periodic: bool = False) -> GateCost:
    shifts = GateCost(gates.shift_toffoli(n, j) + gates.shift_toffoli(n, -k))
    if p == 1:
        core = GateCost() if periodic else gates.multi_cnot(n).cost
        return core + shifts
    m = gates.bits_for(p)
    core = 2 * gates.mod_p_unitary(n, p).cost + gates.or_gate(m).cost
    if not periodic:
        core = core + gates.multi_cnot(n).cost
    return core + shifts


def indicator_cost(n: int, p: int, j: int) -> GateCost:
    numel = ((1 << n) - 1) // p
    return (gates.less_than_flag(n, numel).cost + gates.mul_mod_unitary(n, p).cost
            + GateCost(gates.shift_toffoli(n, j)))
