"""Dirichlet constraints: Lagrange-multiplier block systems, partitioned encodings,
partitioned right-hand sides and the projector method."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import DomainMask, boundary_oracle, boundary_projector_be, position_be_dim
from .qcore import (
    BlockEncoding,
    EmbedOp,
    HermitianDilationOp,
    IdentityOp,
    PermutationOp,
    ProductOp,
    SelectOp,
    be_apply,
    be_chain,
    be_lcu,
    kron_op,
)
from .quad import PolySpec, mqet_transform, poly_transform_diagonal

# ---------------------------------------------------------------------------
# Partitioned encodings
# ---------------------------------------------------------------------------


def block_position_be(i: int, j: int, be: BlockEncoding) -> BlockEncoding:
    """Encoding of ``|i><j| (x) A`` on ``(block qubit, system)``.

    Registers ``(flag, ancillas, block, system)``: ``X^j`` on the block qubit,
    CNOT from the block qubit onto the flag, ``U_A``, then ``X^i``.  A block
    value other than ``j`` raises the flag and is discarded by post-selection.
    """
    if i not in (0, 1) or j not in (0, 1):
        raise ValueError("block indices are 0 or 1")
    m, n = be.ancillas, be.system_qubits
    dims = [2, 1 << m, 2, 1 << n]
    xgate = PermutationOp(np.array([1, 0]))
    cnot = PermutationOp(np.array([0, 3, 2, 1]))  # (flag, block): flag ^= block
    ops = [EmbedOp(be.unitary, dims, [1, 3]), EmbedOp(cnot, dims, [0, 2])]
    if j:
        ops.append(EmbedOp(xgate, dims, [2]))
    if i:
        ops.insert(0, EmbedOp(xgate, dims, [2]))
    unit = sp.csr_array(([1.0], ([i], [j])), shape=(2, 2))
    return BlockEncoding(ProductOp(ops), be.alpha, m + 1, n + 1, be.epsilon,
                         hermitian=False,
                         structure=lambda s: sp.csr_array(sp.kron(unit, be.block(s))))


def block_encode_partitioned(blocks: Sequence[Sequence[BlockEncoding | None]]) -> BlockEncoding:
    """LCU of the ``|i><j| (x) A_ij`` encodings; ``None`` marks a zero block.

    Subnormalization ``sum alpha_ij``; ancillas ``max m_ij + 1`` plus the
    select register.
    """
    terms = []
    n = None
    for i in range(2):
        for j in range(2):
            b = blocks[i][j]
            if b is None:
                continue
            if n is not None and b.system_qubits != n:
                raise ValueError("blocks act on different system sizes")
            n = b.system_qubits
            terms.append(block_position_be(i, j, b))
    if not terms:
        raise ValueError("all blocks are zero")
    return be_lcu(terms, coeffs=np.ones(len(terms)))


def block_encode_saddle(a: BlockEncoding, b: BlockEncoding) -> BlockEncoding:
    """Two-term route for ``[[A, B], [B^dagger, 0]]`` on a two-qubit block register.

    The encoded matrix is ``[[A, B, 0, 0], [B^dagger, 0, aI, 0], [0, aI, 0, bI],
    [0, 0, bI, aI]]`` with ``a, b`` the two subnormalizations; the top-left
    ``2 x 2`` corner is the saddle-point matrix.  Subnormalization ``a + b``.
    """
    if a.system_qubits != b.system_qubits:
        raise ValueError("blocks act on different system sizes")
    n = a.system_qubits
    m = max(a.ancillas, b.ancillas)
    adim, sdim = 1 << m, 1 << n

    def padded(be):
        pad = m - be.ancillas
        return be.unitary if pad == 0 else kron_op(IdentityOp(1 << pad), be.unitary)

    ua, ub = padded(a), padded(b)
    dims = [adim, 4, sdim]
    first = ProductOp([
        EmbedOp(PermutationOp(np.array([0, 2, 1, 3])), dims, [1]),
        EmbedOp(SelectOp({0: ua}, 4, adim * sdim), dims, [1, 0, 2]),
    ])
    dims2 = [adim, 2, 2, sdim]
    second = ProductOp([
        EmbedOp(SelectOp({1: PermutationOp(np.array([1, 0]))}, 2, 2), dims2, [1, 2]),
        EmbedOp(SelectOp({0: HermitianDilationOp(ub)}, 2, 2 * adim * sdim),
                dims2, [1, 2, 0, 3]),
    ])
    ident = sp.identity(sdim, dtype=complex, format="csr")

    def first_block(s):
        blk = sp.lil_array((4 * sdim, 4 * sdim), dtype=complex)
        blk[:sdim, :sdim] = a.block(s)
        blk[sdim:2 * sdim, 2 * sdim:3 * sdim] = ident
        blk[2 * sdim:3 * sdim, sdim:2 * sdim] = ident
        blk[3 * sdim:, 3 * sdim:] = ident
        return sp.csr_array(blk)

    def second_block(s):
        blk = sp.lil_array((4 * sdim, 4 * sdim), dtype=complex)
        bb = b.block(s)
        blk[:sdim, sdim:2 * sdim] = bb
        blk[sdim:2 * sdim, :sdim] = bb.conj().T
        blk[2 * sdim:3 * sdim, 3 * sdim:] = ident
        blk[3 * sdim:, 2 * sdim:3 * sdim] = ident
        return sp.csr_array(blk)

    t1 = BlockEncoding(first, a.alpha, m, n + 2, structure=first_block)
    t2 = BlockEncoding(second, b.alpha, m, n + 2, structure=second_block)
    return be_lcu([t1, t2], coeffs=[1.0, 1.0])


# ---------------------------------------------------------------------------
# Right-hand sides and boundary data
# ---------------------------------------------------------------------------


def _is_zero(v: np.ndarray) -> bool:
    return not np.any(v)


def partitioned_rhs(f0: np.ndarray, f1: np.ndarray,
                    weights: tuple[float, float] | None = None) -> np.ndarray:
    """``(w0 |0>|f0> + w1 |1>|f1>) / sqrt(w0^2 + w1^2)`` from an ``R_y`` on the block qubit
    and controlled preparations; equal weights by default.

    A zero input is a flagged-zero branch: its half of the amplitude is lost.
    """
    f0 = np.asarray(f0, dtype=complex)
    f1 = np.asarray(f1, dtype=complex)
    if f0.shape != f1.shape:
        raise ValueError("blocks differ in length")
    for v in (f0, f1):
        if not _is_zero(v) and abs(np.linalg.norm(v) - 1) > 1e-10:
            raise ValueError("block states must be normalized or flagged zero")
    w0, w1 = (1.0, 1.0) if weights is None else (float(weights[0]), float(weights[1]))
    if w0 < 0 or w1 < 0 or w0 + w1 == 0:
        raise ValueError("weights must be non-negative and not both zero")
    r = math.hypot(w0, w1)
    return np.concatenate([f0 * (w0 / r), f1 * (w1 / r)])


def dirichlet_state(mask: DomainMask, g_values=None, poly: PolySpec | None = None) -> np.ndarray:
    """``ubar`` with prescribed values on fixed nodes and zeros elsewhere.

    ``g_values`` is a scalar or a full-grid array.  With ``poly`` the values
    come from a polynomial transform of the position operators applied to the
    uniform state, followed by the boundary projector.
    """
    fixed = mask.fixed.ravel()
    size = fixed.size
    if poly is not None:
        full = _poly_on_grid(poly, mask.n, mask.d)
    elif g_values is None:
        full = np.zeros(size, dtype=complex)
    else:
        full = np.broadcast_to(np.asarray(g_values, dtype=complex).ravel()
                               if np.ndim(g_values) else complex(g_values), (size,))
    pbd = boundary_projector_be(_fixed_only(mask))
    norm = np.linalg.norm(full)
    if norm == 0:
        return np.zeros(size, dtype=complex)
    return be_apply(pbd, full / norm) * pbd.alpha * norm


def _fixed_only(mask: DomainMask) -> DomainMask:
    """Mask whose constrained set is exactly the fixed nodes."""
    ones = np.ones_like(mask.active)
    return DomainMask(ones, mask.fixed.copy())


def _poly_on_grid(poly: PolySpec, n: int, d: int) -> np.ndarray:
    """Nodal values ``g(x_v)`` from ``g(X) |uniform>``."""
    if poly.nvars != d:
        raise ValueError("polynomial arity does not match the dimension")
    pos = [position_be_dim(i, d, n) for i in range(d)]
    if d == 1:
        be = poly_transform_diagonal(pos[0], poly)
    else:
        be = mqet_transform(pos, poly)
    size = 1 << (n * d)
    uniform = np.full(size, 1 / math.sqrt(size), dtype=complex)
    return be_apply(be, uniform) * be.alpha * math.sqrt(size)


# ---------------------------------------------------------------------------
# Lagrange-multiplier systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BlockSystem:
    """``[[L, I - P], [I - P, P]] (u, lambda) = (f, ubar)`` with ``P`` the interior projector."""

    be: BlockEncoding
    rhs: np.ndarray
    rhs_norm: float
    f: np.ndarray
    ubar: np.ndarray
    pint: np.ndarray

    @property
    def rhs_vector(self) -> np.ndarray:
        return self.rhs * self.rhs_norm


@dataclass(frozen=True)
class BlockSolution:
    u: np.ndarray
    lam: np.ndarray
    u_norm: float
    lam_norm: float


def lagrange_system(be_l: BlockEncoding, mask: DomainMask, ubar: np.ndarray | None = None,
                    f: np.ndarray | None = None) -> BlockSystem:
    """Block system with the multipliers coupled through ``I - P_int``.

    ``ubar`` is zeroed off the constrained nodes; the right-hand side is the
    weighted partitioned state of ``f`` and ``ubar``.
    """
    size = mask.active.size
    if be_l.system_dim != size:
        raise ValueError("operator and mask sizes differ")
    _, pint_be = boundary_oracle(mask)
    pbd_be = boundary_projector_be(mask)
    be = block_encode_partitioned([[be_l, pbd_be], [pbd_be, pint_be]])
    constrained = mask.constrained
    ub = np.zeros(size, dtype=complex) if ubar is None else np.asarray(ubar, dtype=complex).copy()
    ub[~constrained] = 0
    f = np.zeros(size, dtype=complex) if f is None else np.asarray(f, dtype=complex)
    nf, nu = float(np.linalg.norm(f)), float(np.linalg.norm(ub))
    if nf == 0 and nu == 0:
        raise ValueError("both right-hand-side blocks are zero")
    rhs = partitioned_rhs(f / nf if nf else f, ub / nu if nu else ub, (nf, nu))
    return BlockSystem(be, rhs, math.hypot(nf, nu), f, ub, (~constrained).astype(float))


def solve_block_system(matrix, system: BlockSystem) -> BlockSolution:
    """Direct solve of the extracted block matrix."""
    sol = spla.spsolve(sp.csc_array(matrix), system.rhs_vector)
    size = system.f.size
    u, lam = sol[:size], sol[size:]
    return BlockSolution(u, lam, float(np.linalg.norm(u)), float(np.linalg.norm(lam)))


# ---------------------------------------------------------------------------
# Projector method
# ---------------------------------------------------------------------------


def projector_dirichlet(be_l: BlockEncoding, mask: DomainMask, b: np.ndarray,
                        ubar: np.ndarray | None = None) -> tuple[BlockEncoding, np.ndarray]:
    """``P L P + (I - P)`` and ``P b - P L (I - P) ubar + (I - P) ubar``.

    The right-hand side is built from encoding applications; it reduces to
    ``P b`` for homogeneous data.
    """
    _, pint_be = boundary_oracle(mask)
    pbd_be = boundary_projector_be(mask)
    op = be_lcu([be_chain(pint_be, be_l, pint_be), pbd_be], coeffs=[1.0, 1.0])
    b = np.asarray(b, dtype=complex)
    size = b.size
    ub = np.zeros(size, dtype=complex) if ubar is None else np.asarray(ubar, dtype=complex)
    pb = _apply_scaled(pint_be, b)
    boundary = _apply_scaled(pbd_be, ub)
    coupling = _apply_scaled(pint_be, _apply_scaled(be_l, boundary))
    return op, pb - coupling + boundary


def _apply_scaled(be: BlockEncoding, v: np.ndarray) -> np.ndarray:
    """``A v`` through a normalized application of the encoding."""
    norm = float(np.linalg.norm(v))
    if norm == 0:
        return np.zeros_like(v)
    return be_apply(be, v / norm) * be.alpha * norm
