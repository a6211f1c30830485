"""Lagrange elements on [0, 1]: basis functions, elemental arrays and their prepare oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cache, reduce

import numpy as np

from .qcore import StatePrepPair, make_prep_pair, prep_pair_from_matrices


@dataclass(frozen=True)
class LagrangeElement:
    p: int

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.p + 1) / self.p

    def basis(self, j: int, x):
        return basis_eval(self.p, j, x)

    def grad(self, j: int, x):
        return basis_grad(self.p, j, x)


def basis_eval(p: int, j: int, x):
    """``N_j(x) = prod_{m != j} (x - x_m) / (x_j - x_m)`` with ``x_m = m / p``."""
    if not 0 <= j <= p:
        raise ValueError("local node index out of range")
    x = np.asarray(x, dtype=float)
    xm = np.arange(p + 1) / p
    out = np.ones_like(x)
    for m in range(p + 1):
        if m != j:
            out = out * (x - xm[m]) / (xm[j] - xm[m])
    return out


def basis_grad(p: int, j: int, x):
    """Derivative of :func:`basis_eval` by the product rule."""
    if not 0 <= j <= p:
        raise ValueError("local node index out of range")
    x = np.asarray(x, dtype=float)
    xm = np.arange(p + 1) / p
    others = [m for m in range(p + 1) if m != j]
    denom = math.prod(xm[j] - xm[m] for m in others)
    total = np.zeros_like(x)
    for skip in others:
        term = np.ones_like(x)
        for m in others:
            if m != skip:
                term = term * (x - xm[m])
        total = total + term
    return total / denom


def basis_matrix(p: int, x) -> np.ndarray:
    """Rows ``N_j`` evaluated at the points ``x``; shape ``(p + 1, len(x))``."""
    return np.stack([basis_eval(p, j, x) for j in range(p + 1)])


def grad_matrix(p: int, x) -> np.ndarray:
    return np.stack([basis_grad(p, j, x) for j in range(p + 1)])


@dataclass(frozen=True)
class ElementalArrays:
    p: int
    ke: np.ndarray
    me: np.ndarray

    @property
    def ke_abs_sum(self) -> float:
        return float(np.abs(self.ke).sum())

    @property
    def me_abs_sum(self) -> float:
        return float(np.abs(self.me).sum())


def elemental_arrays(p: int, order_g: int | None = None) -> ElementalArrays:
    """Stiffness ``int N_j' N_k'`` and mass ``int N_j N_k`` on [0, 1] by Gauss-Legendre.

    The default ``G = p + 1`` integrates the degree-``2p`` integrands exactly.
    """
    from .quad import gauss_legendre

    rule = gauss_legendre(order_g or p + 1)
    x = (rule.points + 1) / 2
    w = rule.weights / 2
    n = basis_matrix(p, x)
    dn = grad_matrix(p, x)
    ke = (dn * w) @ dn.T
    me = (n * w) @ n.T
    return ElementalArrays(p, ke, me)


@cache
def _cached_arrays(p: int) -> ElementalArrays:
    return elemental_arrays(p)


def tensor_elemental(p: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """``K^{e,d} = sum_i M (x) ... K (slot i) ... (x) M`` and ``M^{e,d} = M^{(x)d}``."""
    if d < 1:
        raise ValueError("dimension must be positive")
    arr = _cached_arrays(p)
    me_d = reduce(np.kron, [arr.me] * d)
    ke_d = np.zeros_like(me_d)
    for slot in range(d):
        factors = [arr.me] * d
        factors[slot] = arr.ke
        ke_d = ke_d + reduce(np.kron, factors)
    return ke_d, me_d


# --- prepare oracles ---------------------------------------------------------------

_H = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
_Z = np.diag([1.0, -1.0])
_PHASE = np.diag([1.0, 1.0j])
THETA_M = 2 * math.acos(math.sqrt(2 / 3))


def _shift2(k: int) -> np.ndarray:
    """Modular shift by ``k`` on two qubits."""
    return np.roll(np.eye(4), k, axis=0)


def ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]])


def prep_stiffness_p1() -> tuple[np.ndarray, np.ndarray]:
    """Explicit gate forms for ``vec(K^e) = (1, -1, -1, 1)``."""
    prep = _shift2(-1) @ np.kron(_PHASE @ _H @ _Z, _H)
    prep_tilde = np.kron(_Z @ _H @ _PHASE, _H) @ _shift2(1)
    return prep, prep_tilde


def prep_mass_p1() -> tuple[np.ndarray, np.ndarray]:
    """Explicit gate form for ``vec(M^e) = (1/3, 1/6, 1/6, 1/3)``; its adjoint unprepares."""
    prep = _shift2(-1) @ np.kron(ry(THETA_M), _H)
    return prep, prep.conj().T


def elemental_prep_oracles(arrays: ElementalArrays) -> tuple[StatePrepPair, StatePrepPair]:
    """Prepare pairs for ``vec(K^e)`` and ``vec(M^e)`` (row-major ``j * nen + k``)."""
    yk, ym = arrays.ke.ravel(), arrays.me.ravel()
    if arrays.p == 1:
        return (prep_pair_from_matrices(yk, *prep_stiffness_p1()),
                prep_pair_from_matrices(ym, *prep_mass_p1()))
    return make_prep_pair(yk), make_prep_pair(ym)
