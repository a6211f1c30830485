"""Circuit primitives realized as permutations, with a closed-form Toffoli ledger."""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np

from .qcore import Operator, PermutationOp, ProductOp

# Toffolis per qubit for a constant adder (modular shift by a fixed k).
SHIFT_TOFFOLI_PER_QUBIT = 1
# Toffolis per qubit for an n-bit comparison against a classical constant.
COMPARATOR_TOFFOLI_PER_QUBIT = 1


@dataclass(frozen=True)
class GateCost:
    """Toffoli count and clean workspace qubits (restored to |0>, never post-selected)."""

    toffoli: int = 0
    extra_workspace_qubits: int = 0

    def __add__(self, other: GateCost) -> GateCost:
        return GateCost(self.toffoli + other.toffoli,
                        max(self.extra_workspace_qubits, other.extra_workspace_qubits))

    def __mul__(self, k: int) -> GateCost:
        return GateCost(self.toffoli * k, self.extra_workspace_qubits)

    __rmul__ = __mul__


@dataclass(frozen=True)
class CostedOperator:
    op: Operator
    cost: GateCost

    def __matmul__(self, other: CostedOperator) -> CostedOperator:
        return CostedOperator(ProductOp([self.op, other.op]), self.cost + other.cost)

    @property
    def qubits(self) -> int:
        return self.op.qubits


def compose(*parts: CostedOperator) -> CostedOperator:
    out = parts[0]
    for p in parts[1:]:
        out = out @ p
    return out


# --- closed-form counts ----------------------------------------------------

def multi_control_toffoli(n: int) -> int:
    """Toffolis for an n-controlled NOT with one clean workspace qubit."""
    if n <= 1:
        return 0
    if n == 2:
        return 1
    return 2 * n - 3


def division_toffoli(n: int, m: int) -> int:
    """Toffoli count of the reversible divider (n-bit dividend, m-bit divisor)."""
    return 46 * m * n - 46 * m * m + 48 * m - 2 * n - 2


def shift_toffoli(n: int, k: int) -> int:
    return 0 if k % (1 << n) == 0 else SHIFT_TOFFOLI_PER_QUBIT * n


def controlled_cost(cost: GateCost, n_ctrl: int) -> GateCost:
    """Cost of conditioning a circuit on ``n_ctrl`` extra qubits.

    The condition is computed into one workspace flag and uncomputed; each
    Toffoli then gains one control (three Toffolis with the shared workspace).
    """
    if n_ctrl == 0:
        return cost
    return GateCost(3 * cost.toffoli + 2 * multi_control_toffoli(n_ctrl) + 1,
                    cost.extra_workspace_qubits + 1)


# --- primitives ------------------------------------------------------------

def shift_op(n: int, k: int) -> CostedOperator:
    """Modular shift ``S^k |i> = |(i + k) mod 2^n>``."""
    dim = 1 << n
    perm = (np.arange(dim) + k) % dim
    return CostedOperator(PermutationOp(perm), GateCost(shift_toffoli(n, k)))


def multi_cnot(n: int) -> CostedOperator:
    """``C^n(NOT)`` on ``(target, controls)``, target most significant.

    Flips the target iff every control qubit is 1.
    """
    if n < 1:
        raise ValueError("need at least one control")
    dim = 1 << n
    idx = np.arange(2 * dim)
    target, ctrl = idx // dim, idx % dim
    new_target = target ^ (ctrl == dim - 1)
    perm = new_target * dim + ctrl
    work = 1 if n >= 3 else 0
    return CostedOperator(PermutationOp(perm), GateCost(multi_control_toffoli(n), work))


def or_gate(n: int) -> CostedOperator:
    """X-conjugated multi-control on ``(flag, inputs)``: flag flips iff all inputs are 0."""
    dim = 1 << n
    idx = np.arange(2 * dim)
    flag, inp = idx // dim, idx % dim
    perm = (flag ^ (inp == 0)) * dim + inp
    work = 1 if n >= 3 else 0
    return CostedOperator(PermutationOp(perm), GateCost(multi_control_toffoli(n), work))


def flag_oracle(predicate: np.ndarray, cost: GateCost = GateCost()) -> CostedOperator:
    """``|flag>|i> -> |flag xor predicate[i]>|i>`` on ``(flag, register)``."""
    predicate = np.asarray(predicate, dtype=bool)
    dim = predicate.size
    idx = np.arange(2 * dim)
    flag, reg = idx // dim, idx % dim
    perm = (flag ^ predicate[reg]) * dim + reg
    return CostedOperator(PermutationOp(perm), cost)


def bits_for(p: int) -> int:
    """Output register width ``ceil(log2(p + 1))``."""
    return max(1, math.ceil(math.log2(p + 1)))


def mod_p_unitary(n: int, p: int) -> CostedOperator:
    """``|i>_n |r>_m -> |i>_n |r xor (i mod p)>_m`` on ``(input, output)``.

    Charged as one divider, its inverse, and a CNOT copy of the remainder.
    """
    if p < 1:
        raise ValueError("divisor must be positive")
    m = bits_for(p)
    dim, mdim = 1 << n, 1 << m
    idx = np.arange(dim * mdim)
    i, r = idx // mdim, idx % mdim
    perm = i * mdim + (r ^ (i % p))
    cost = GateCost(2 * division_toffoli(n, m), n + m)
    return CostedOperator(PermutationOp(perm), cost)


def mul_mod_unitary(n: int, p: int) -> CostedOperator:
    """``|e> -> |(e p) mod 2^n>`` for odd ``p`` (a bijection on the register)."""
    dim = 1 << n
    if p % 2 == 0:
        raise ValueError("multiplier must be odd to act as a permutation")
    perm = (np.arange(dim) * p) % dim
    m = bits_for(p)
    toffoli = 0 if p == 1 else n * m
    return CostedOperator(PermutationOp(perm), GateCost(toffoli, n if p != 1 else 0))


def less_than_flag(n: int, bound: int) -> CostedOperator:
    """Comparator on ``(flag, register)``: flag flips iff ``e >= bound``."""
    dim = 1 << n
    pred = np.arange(dim) >= bound
    toffoli = 0 if bound >= dim else COMPARATOR_TOFFOLI_PER_QUBIT * n
    return flag_oracle(pred, GateCost(toffoli, 1 if toffoli else 0))


@dataclass(frozen=True)
class CompressionLedger:
    ancillas: int
    naive_ancillas: int
    cost: GateCost


def compression_ledger(k_terms: int, per_term_ancillas: int) -> CompressionLedger:
    """Post-selected ancilla count when ``k_terms`` encodings share one success flag.

    A ``log2 k``-qubit prepare register, the shared per-term ancillas, and a
    ``log2 k + 1`` qubit counter that the compression gadget increments once
    per term.
    """
    naive = k_terms * per_term_ancillas
    if k_terms <= 1:
        return CompressionLedger(per_term_ancillas, naive, GateCost())
    b = math.ceil(math.log2(k_terms))
    counter = b + 1
    ancillas = b + per_term_ancillas + counter
    cost = GateCost(k_terms * 2 * SHIFT_TOFFOLI_PER_QUBIT * counter, 1)
    return CompressionLedger(ancillas, naive, cost)


# --- cost tables -------------------------------------------------------------

COST_COLUMNS = ("construct", "n", "m", "p", "toffoli", "ancillas")


def cost_table_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COST_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: r[k] for k in COST_COLUMNS})
    return buf.getvalue()
