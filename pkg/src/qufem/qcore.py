"""Block-encoding algebra on lazily applied qubit operators.

Registers follow one convention throughout: a block-encoding acts on
``ancilla (x) system`` with the ancilla register in the most-significant
qubits, and the success subspace is the all-zeros ancilla state.

Operators are composition trees applied to column batches, never
materialized unless explicitly requested.  Every :class:`BlockEncoding`
also carries an optional *structural* rule that produces its normalized
block from the blocks of its children; extraction simulates the full
unitary whenever the register is small enough and otherwise descends the
tree, simulating the leaves.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

# Largest register (qubits) a unitary may be materialized on.
MAX_DENSE_QUBITS = 12
# Registers at or below this size are extracted by full simulation.
SIM_QUBITS = 14
# Batch budget (complex entries) for column-chunked simulation.
_CHUNK_ENTRIES = 1 << 21
# Entries below this magnitude in a simulated block are floating noise.
_CHOP = 1e-14


def _is_pow2(x: int) -> bool:
    return x >= 1 and (x & (x - 1)) == 0


def _log2(x: int) -> int:
    if not _is_pow2(x):
        raise ValueError(f"dimension {x} is not a power of two")
    return x.bit_length() - 1


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 1:
        return x[:, None], True
    return x, False


class Operator:
    """Matrix-free linear operator on ``log2(dim)`` qubits."""

    dim: int
    is_unitary_hint: bool = False

    def _apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self) -> Operator:
        raise NotImplementedError

    @property
    def qubits(self) -> int:
        return _log2(self.dim)

    @property
    def H(self) -> Operator:
        return self.adjoint()

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Apply to a vector or to the columns of a ``(dim, k)`` array."""
        xb, flat = _as_batch(x)
        if xb.shape[0] != self.dim:
            raise ValueError(f"operator of dim {self.dim} applied to length {xb.shape[0]}")
        y = self._apply(xb.astype(complex, copy=False))
        return y[:, 0] if flat else y

    def __matmul__(self, other: Operator) -> Operator:
        return ProductOp([self, other])

    def entry(self, i: int, j: int) -> complex:
        e = np.zeros(self.dim, dtype=complex)
        e[j] = 1.0
        return complex(self.apply(e)[i])

    def to_array(self) -> np.ndarray:
        """Dense matrix; refused above ``2**MAX_DENSE_QUBITS``."""
        if self.dim > (1 << MAX_DENSE_QUBITS):
            raise MemoryError(f"refusing to materialize a {self.dim}-dim operator")
        return self.apply(np.eye(self.dim, dtype=complex))


class MatrixOp(Operator):
    """Explicit dense or scipy-sparse matrix."""

    def __init__(self, mat, unitary: bool = False):
        if sp.issparse(mat):
            mat = sp.csr_array(mat)
        else:
            mat = np.asarray(mat, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("matrix must be square")
        _log2(mat.shape[0])
        self.mat = mat
        self.dim = mat.shape[0]
        self.is_unitary_hint = unitary

    def _apply(self, x):
        return np.asarray(self.mat @ x)

    def adjoint(self):
        return MatrixOp(self.mat.conj().T, self.is_unitary_hint)

    def to_array(self):
        return self.mat.toarray() if sp.issparse(self.mat) else self.mat.copy()

    def to_sparse(self) -> sp.csr_array:
        return sp.csr_array(self.mat)


class IdentityOp(Operator):
    is_unitary_hint = True

    def __init__(self, dim: int):
        _log2(dim)
        self.dim = dim

    def _apply(self, x):
        return x.copy()

    def adjoint(self):
        return self


class PermutationOp(Operator):
    """``|i> -> phases[i] |perm[i]>``."""

    is_unitary_hint = True

    def __init__(self, perm, phases=None):
        perm = np.asarray(perm, dtype=np.int64)
        _log2(perm.size)
        if not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise ValueError("index map is not a bijection")
        self.perm = perm
        self.phases = None if phases is None else np.asarray(phases, dtype=complex)
        self.dim = perm.size

    def _apply(self, x):
        y = np.empty_like(x)
        y[self.perm] = x if self.phases is None else x * self.phases[:, None]
        return y

    def adjoint(self):
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.dim)
        ph = None if self.phases is None else np.conj(self.phases)[inv]
        return PermutationOp(inv, ph)


class DiagonalOp(Operator):
    def __init__(self, diag):
        self.diag = np.asarray(diag, dtype=complex)
        _log2(self.diag.size)
        self.dim = self.diag.size
        self.is_unitary_hint = bool(np.allclose(np.abs(self.diag), 1.0))

    def _apply(self, x):
        return x * self.diag[:, None]

    def adjoint(self):
        return DiagonalOp(np.conj(self.diag))


class ProductOp(Operator):
    """``ops[0] @ ops[1] @ ...``; the last factor acts first."""

    def __init__(self, ops: Sequence[Operator]):
        ops = [o for o in ops]
        if not ops:
            raise ValueError("empty product")
        dims = {o.dim for o in ops}
        if len(dims) != 1:
            raise ValueError(f"dimension mismatch in product: {sorted(dims)}")
        self.ops = ops
        self.dim = ops[0].dim
        self.is_unitary_hint = all(o.is_unitary_hint for o in ops)

    def _apply(self, x):
        for op in reversed(self.ops):
            x = op._apply(x)
        return x

    def adjoint(self):
        return ProductOp([o.adjoint() for o in reversed(self.ops)])


class EmbedOp(Operator):
    """Apply ``op`` to a subset of registers of a composite register.

    ``dims`` lists register dimensions (most-significant first); ``targets``
    lists the registers ``op`` acts on, in the order ``op`` expects them.
    """

    def __init__(self, op: Operator, dims: Sequence[int], targets: Sequence[int]):
        dims = [int(d) for d in dims]
        targets = [int(t) for t in targets]
        if len(set(targets)) != len(targets):
            raise ValueError("repeated target register")
        tdim = math.prod(dims[t] for t in targets)
        if tdim != op.dim:
            raise ValueError(f"target registers span {tdim}, operator has dim {op.dim}")
        self.op, self.dims, self.targets = op, dims, targets
        self.dim = math.prod(dims)
        _log2(self.dim)
        self.is_unitary_hint = op.is_unitary_hint

    def _apply(self, x):
        k = x.shape[1]
        nt = len(self.targets)
        t = x.reshape(self.dims + [k])
        t = np.moveaxis(t, self.targets, list(range(nt)))
        moved_shape = t.shape
        t = self.op._apply(t.reshape(self.op.dim, -1))
        t = np.moveaxis(t.reshape(moved_shape), list(range(nt)), self.targets)
        return np.ascontiguousarray(t).reshape(self.dim, k)

    def adjoint(self):
        return EmbedOp(self.op.adjoint(), self.dims, self.targets)


def kron_op(*ops: Operator) -> Operator:
    """Tensor product, first factor most significant."""
    dims = [o.dim for o in ops]
    factors = [EmbedOp(o, dims, [i]) for i, o in enumerate(ops) if not isinstance(o, IdentityOp)]
    if not factors:
        return IdentityOp(math.prod(dims))
    return factors[0] if len(factors) == 1 else ProductOp(factors)


class SelectOp(Operator):
    """``sum_j |j><j| (x) ops[j]`` with identity on unlisted control values."""

    def __init__(self, ops: Mapping[int, Operator], ctrl_dim: int, target_dim: int):
        _log2(ctrl_dim)
        for j, o in ops.items():
            if not 0 <= j < ctrl_dim:
                raise ValueError(f"control value {j} out of range")
            if o.dim != target_dim:
                raise ValueError("select branch dimension mismatch")
        self.ops = dict(ops)
        self.ctrl_dim, self.target_dim = ctrl_dim, target_dim
        self.dim = ctrl_dim * target_dim
        self.is_unitary_hint = all(o.is_unitary_hint for o in ops.values())

    def _apply(self, x):
        k = x.shape[1]
        t = x.reshape(self.ctrl_dim, self.target_dim, k)
        y = t.copy()
        for j, op in self.ops.items():
            y[j] = op._apply(np.ascontiguousarray(t[j]))
        return y.reshape(self.dim, k)

    def adjoint(self):
        return SelectOp({j: o.adjoint() for j, o in self.ops.items()},
                        self.ctrl_dim, self.target_dim)


class HermitianDilationOp(Operator):
    """``|0><1| (x) U + |1><0| (x) U^dagger``: Hermitian and unitary."""

    is_unitary_hint = True

    def __init__(self, u: Operator):
        self.u = u
        self.dim = 2 * u.dim

    def _apply(self, x):
        k = x.shape[1]
        t = x.reshape(2, self.u.dim, k)
        y = np.empty_like(t)
        y[0] = self.u._apply(np.ascontiguousarray(t[1]))
        y[1] = self.u.adjoint()._apply(np.ascontiguousarray(t[0]))
        return y.reshape(self.dim, k)

    def adjoint(self):
        return self


def controlled(op: Operator, n_ctrl: int, value: int) -> Operator:
    """Apply ``op`` iff the ``n_ctrl`` leading qubits read ``value``."""
    return SelectOp({value: op}, 1 << n_ctrl, op.dim)


# ---------------------------------------------------------------------------
# Block encodings
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BlockEncoding:
    """An ``(alpha, ancillas, epsilon)`` block-encoding of an operator.

    ``structure`` maps a simulation budget (qubits) to the normalized block
    ``A / alpha`` as a sparse matrix, using the blocks of sub-encodings.
    """

    unitary: Operator
    alpha: float
    ancillas: int
    system_qubits: int
    epsilon: float = 0.0
    hermitian: bool = False
    structure: Callable[[int], sp.csr_array] | None = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.alpha <= 0 or not math.isfinite(self.alpha):
            raise ValueError(f"subnormalization must be positive, got {self.alpha}")
        if self.ancillas < 0 or self.system_qubits < 0:
            raise ValueError("negative register size")
        if self.unitary.dim != 1 << (self.ancillas + self.system_qubits):
            raise ValueError(
                f"unitary dim {self.unitary.dim} != 2^({self.ancillas}+{self.system_qubits})")

    @property
    def total_qubits(self) -> int:
        return self.ancillas + self.system_qubits

    @property
    def system_dim(self) -> int:
        return 1 << self.system_qubits

    def block(self, sim_qubits: int = SIM_QUBITS) -> sp.csr_array:
        """Normalized block ``A / alpha`` as a sparse matrix."""
        key = ("block", sim_qubits)
        if key not in self._cache:
            if self.structure is None or self.total_qubits <= sim_qubits:
                self._cache[key] = _simulate_block(self)
            else:
                self._cache[key] = sp.csr_array(self.structure(sim_qubits))
        return self._cache[key]


def _chop(a: np.ndarray) -> np.ndarray:
    a = np.where(np.abs(a.real) < _CHOP, 0.0, a.real) + 1j * np.where(
        np.abs(a.imag) < _CHOP, 0.0, a.imag)
    return a


def _simulate_block(be: BlockEncoding) -> sp.csr_array:
    """Apply the unitary to every ``|0>|j>`` and keep the ancilla-zero rows."""
    n_sys = be.system_dim
    total = be.unitary.dim
    chunk = max(1, min(n_sys, _CHUNK_ENTRIES // total))
    parts = []
    for start in range(0, n_sys, chunk):
        cols = np.arange(start, min(n_sys, start + chunk))
        x = np.zeros((total, cols.size), dtype=complex)
        x[cols, np.arange(cols.size)] = 1.0
        y = be.unitary.apply(x)[:n_sys]
        parts.append(sp.csr_array(_chop(y)))
    return sp.csr_array(sp.hstack(parts, format="csr"))


def extract_block(be: BlockEncoding, sim_qubits: int = SIM_QUBITS) -> MatrixOp:
    """Return ``alpha * (<0| (x) I) U (|0> (x) I)``."""
    return MatrixOp(be.block(sim_qubits) * be.alpha)


def _target_matrix(target) -> np.ndarray | sp.csr_array:
    if isinstance(target, Operator):
        if isinstance(target, MatrixOp):
            return target.mat
        return target.to_array()
    return target if sp.issparse(target) else np.asarray(target)


def validate_be(be: BlockEncoding, target, slack: float = 1e-9,
                sim_qubits: int = SIM_QUBITS) -> bool:
    """Max-norm check of the encoded block against ``target``."""
    tgt = _target_matrix(target)
    if tgt.shape != (be.system_dim, be.system_dim):
        raise ValueError(f"target shape {tgt.shape} does not match {be.system_dim} system dim")
    diff = extract_block(be, sim_qubits).mat - tgt
    diff = abs(diff).max() if sp.issparse(diff) else np.max(np.abs(diff), initial=0.0)
    return bool(diff <= be.epsilon + slack)


def identity_be(n: int) -> BlockEncoding:
    """Trivial ``(1, 0)`` encoding of the identity on ``n`` qubits."""
    dim = 1 << n
    return BlockEncoding(IdentityOp(dim), 1.0, 0, n, hermitian=True,
                         structure=lambda _: sp.eye_array(dim, format="csr", dtype=complex))


def unitary_be(op: Operator, hermitian: bool = False) -> BlockEncoding:
    """Treat a unitary as a ``(1, 0)`` encoding of itself."""
    return BlockEncoding(op, 1.0, 0, op.qubits, hermitian=hermitian)


def be_scale(be: BlockEncoding, factor: float) -> BlockEncoding:
    """Relabel the subnormalization so the encoded operator is scaled by ``factor > 0``."""
    if factor <= 0:
        raise ValueError("scale factor must be positive")
    return BlockEncoding(be.unitary, be.alpha * factor, be.ancillas, be.system_qubits,
                         be.epsilon * factor, be.hermitian, be.block)


def be_adjoint(be: BlockEncoding) -> BlockEncoding:
    return BlockEncoding(be.unitary.adjoint(), be.alpha, be.ancillas, be.system_qubits,
                         be.epsilon, be.hermitian,
                         lambda s: sp.csr_array(be.block(s).conj().T))


def be_product(u: BlockEncoding, v: BlockEncoding) -> BlockEncoding:
    """Encoding of ``A B`` from encodings of ``A`` and ``B``; ancillas are concatenated."""
    if u.system_qubits != v.system_qubits:
        raise ValueError("product of encodings on different system sizes")
    a, b, n = u.ancillas, v.ancillas, u.system_qubits
    dims = [1 << a, 1 << b, 1 << n]
    unitary = ProductOp([EmbedOp(u.unitary, dims, [0, 2]), EmbedOp(v.unitary, dims, [1, 2])])
    return BlockEncoding(unitary, u.alpha * v.alpha, a + b, n,
                         u.alpha * v.epsilon + v.alpha * u.epsilon,
                         structure=lambda s: sp.csr_array(u.block(s) @ v.block(s)))


def be_chain(*bes: BlockEncoding) -> BlockEncoding:
    """Left-to-right product of several encodings."""
    out = bes[0]
    for b in bes[1:]:
        out = be_product(out, b)
    return out


def be_tensor(u: BlockEncoding, v: BlockEncoding) -> BlockEncoding:
    """Encoding of ``A (x) B`` with both ancilla registers moved to the top."""
    a, b = u.ancillas, v.ancillas
    dims = [1 << a, 1 << b, u.system_dim, v.system_dim]
    unitary = ProductOp([EmbedOp(u.unitary, dims, [0, 2]), EmbedOp(v.unitary, dims, [1, 3])])
    return BlockEncoding(unitary, u.alpha * v.alpha, a + b, u.system_qubits + v.system_qubits,
                         u.alpha * v.epsilon + v.alpha * u.epsilon,
                         hermitian=u.hermitian and v.hermitian,
                         structure=lambda s: sp.csr_array(sp.kron(u.block(s), v.block(s))))


def be_tensor_chain(*bes: BlockEncoding) -> BlockEncoding:
    out = bes[0]
    for b in bes[1:]:
        out = be_tensor(out, b)
    return out


def be_sparse1(perm, amps) -> BlockEncoding:
    """``(1, 1)`` encoding of the 1-sparse matrix with ``A[c(j), j] = amps[j]``.

    The amplitude oracle rotates the ancilla conditioned on ``j``; the index
    oracle then relabels ``j -> c(j)``.
    """
    amps = np.asarray(amps, dtype=complex)
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != amps.shape:
        raise ValueError("index map and amplitudes differ in length")
    if np.any(np.abs(amps) > 1 + 1e-12):
        raise ValueError("amplitudes must satisfy |a| <= 1")
    index_oracle = PermutationOp(perm)
    dim = amps.size
    n = _log2(dim)
    s = np.sqrt(np.clip(1.0 - np.abs(amps) ** 2, 0.0, None))
    idx = np.arange(dim)
    rows = np.concatenate([idx, idx, dim + idx, dim + idx])
    cols = np.concatenate([idx, dim + idx, idx, dim + idx])
    vals = np.concatenate([amps, s, s, -np.conj(amps)])
    amp_oracle = MatrixOp(sp.csr_array((vals, (rows, cols)), shape=(2 * dim, 2 * dim)), True)
    unitary = ProductOp([kron_op(IdentityOp(2), index_oracle), amp_oracle])
    hermitian = bool(np.array_equal(perm, idx) and np.allclose(amps.imag, 0.0))
    target = sp.csr_array((amps, (perm, idx)), shape=(dim, dim))
    return BlockEncoding(unitary, 1.0, 1, n, hermitian=hermitian, structure=lambda _: target)


def diagonal_be(diag) -> BlockEncoding:
    """``(max|d|, 1)`` encoding of a diagonal matrix."""
    diag = np.asarray(diag, dtype=complex)
    scale = float(np.max(np.abs(diag), initial=0.0)) or 1.0
    base = be_sparse1(np.arange(diag.size), diag / scale)
    return be_scale(base, scale)


def be_hermitize(be: BlockEncoding) -> BlockEncoding:
    """Hermitian unitary encoding ``(A + A^dagger) / 2`` with one extra ancilla."""
    if be.hermitian:
        return be
    h = MatrixOp(np.array([[1, 1], [1, -1]]) / math.sqrt(2), True)
    hi = kron_op(h, IdentityOp(be.unitary.dim))
    unitary = ProductOp([hi, HermitianDilationOp(be.unitary), hi])
    return BlockEncoding(unitary, be.alpha, be.ancillas + 1, be.system_qubits, be.epsilon,
                         hermitian=True,
                         structure=lambda s: sp.csr_array(
                             (be.block(s) + be.block(s).conj().T) / 2))


# ---------------------------------------------------------------------------
# State preparation pairs and LCU
# ---------------------------------------------------------------------------


def _complete_unitary(v: np.ndarray) -> np.ndarray:
    """Unitary whose column 0 is ``v``; Gram-Schmidt over the standard basis in order."""
    dim = v.size
    cols = [v / np.linalg.norm(v)]
    for k in range(dim):
        if len(cols) == dim:
            break
        w = np.zeros(dim, dtype=complex)
        w[k] = 1.0
        for _ in range(2):
            for c in cols:
                w = w - c * np.vdot(c, w)
        nw = np.linalg.norm(w)
        if nw > 1e-10:
            cols.append(w / nw)
    return np.stack(cols, axis=1)


@dataclass(frozen=True, eq=False)
class StatePrepPair:
    """Prepare oracles for LCU coefficients ``y``.

    ``prep |0> = sum_j sqrt(y_j)|j> / sqrt(|y|_1)`` and row 0 of ``prep_tilde``
    carries the same amplitudes, using the principal square root.
    """

    coeffs: np.ndarray
    prep: Operator
    prep_tilde: Operator
    beta_norm: float
    pad_qubits: int

    @property
    def weights(self) -> np.ndarray:
        """Products ``c_j d_j`` that weight each term; sum of |.| is 1."""
        c = self.prep.apply(_basis(self.prep.dim, 0))
        d = self.prep_tilde.adjoint().apply(_basis(self.prep.dim, 0)).conj()
        return c * d


def _basis(dim: int, j: int) -> np.ndarray:
    e = np.zeros(dim, dtype=complex)
    e[j] = 1.0
    return e


def principal_sqrt(y) -> np.ndarray:
    """``sqrt(r e^{i t}) = sqrt(r) e^{i t / 2}`` with ``t`` in ``(-pi, pi]``."""
    y = np.asarray(y, dtype=complex)
    return np.sqrt(np.abs(y)) * np.exp(0.5j * np.angle(y))


def make_prep_pair(y) -> StatePrepPair:
    y = np.atleast_1d(np.asarray(y, dtype=complex))
    beta = float(np.sum(np.abs(y)))
    if beta <= 0:
        raise ValueError("LCU coefficients have zero 1-norm")
    b = max(0, math.ceil(math.log2(y.size))) if y.size > 1 else 0
    dim = 1 << b
    amp = np.zeros(dim, dtype=complex)
    amp[: y.size] = principal_sqrt(y) / math.sqrt(beta)
    prep = _complete_unitary(amp)
    nonneg = bool(np.all(np.abs(y.imag) == 0) and np.all(y.real >= 0))
    if nonneg:
        prep_tilde = prep.conj().T
    else:
        prep_tilde = _complete_unitary(amp.conj()).conj().T
    return StatePrepPair(y, MatrixOp(prep, True), MatrixOp(prep_tilde, True), beta, b)


def prep_pair_from_matrices(y, prep: np.ndarray, prep_tilde: np.ndarray) -> StatePrepPair:
    """Wrap explicit prepare unitaries, checking their column/row 0."""
    y = np.atleast_1d(np.asarray(y, dtype=complex))
    beta = float(np.sum(np.abs(y)))
    dim = prep.shape[0]
    amp = np.zeros(dim, dtype=complex)
    amp[: y.size] = principal_sqrt(y) / math.sqrt(beta)
    if not np.allclose(prep[:, 0], amp, atol=1e-12):
        raise ValueError("prep column 0 does not match the coefficients")
    if not np.allclose(prep_tilde[0, :], amp, atol=1e-12):
        raise ValueError("prep_tilde row 0 does not match the coefficients")
    return StatePrepPair(y, MatrixOp(prep, True), MatrixOp(prep_tilde, True), beta, _log2(dim))


def be_lcu(terms: Sequence[BlockEncoding], pair: StatePrepPair | None = None,
           coeffs=None) -> BlockEncoding:
    """Encoding of ``sum_j y_j A_j`` via prepare / select / unprepare.

    Either ``pair`` or raw ``coeffs`` may be given.  Terms with different
    subnormalizations are absorbed into the coefficients as ``y_j alpha_j``.
    Smaller ancilla registers are padded with idle qubits on top.
    """
    terms = list(terms)
    if not terms:
        raise ValueError("empty linear combination")
    if pair is None:
        if coeffs is None:
            raise ValueError("need a prep pair or coefficients")
        pair = make_prep_pair(coeffs)
    if len(pair.coeffs) != len(terms):
        raise ValueError(f"{len(pair.coeffs)} coefficients for {len(terms)} terms")
    n = terms[0].system_qubits
    if any(t.system_qubits != n for t in terms):
        raise ValueError("LCU terms act on different system sizes")
    alphas = np.array([t.alpha for t in terms])
    if not np.allclose(alphas, alphas[0], rtol=1e-14, atol=0):
        pair = make_prep_pair(np.asarray(pair.coeffs) * alphas / alphas.max())
        alpha_unit = float(alphas.max())
    else:
        alpha_unit = float(alphas[0])
    a = max(t.ancillas for t in terms)
    b = pair.pad_qubits
    inner_dim = 1 << (a + n)
    branches = {}
    for j, t in enumerate(terms):
        pad = a - t.ancillas
        branches[j] = t.unitary if pad == 0 else kron_op(IdentityOp(1 << pad), t.unitary)
    select = SelectOp(branches, 1 << b, inner_dim)
    unitary = ProductOp([kron_op(pair.prep_tilde, IdentityOp(inner_dim)), select,
                         kron_op(pair.prep, IdentityOp(inner_dim))])
    weights = pair.weights[: len(terms)]
    hermitian = (all(t.hermitian for t in terms)
                 and np.allclose(pair.prep_tilde.to_array(), pair.prep.to_array().conj().T))
    eps = alpha_unit * max(t.epsilon / t.alpha for t in terms) * pair.beta_norm

    def structure(s):
        acc = None
        for w, t in zip(weights, terms):
            if w == 0:
                continue
            blk = t.block(s) * w
            acc = blk if acc is None else acc + blk
        if acc is None:
            return sp.csr_array((1 << n, 1 << n), dtype=complex)
        return sp.csr_array(acc)

    return BlockEncoding(unitary, alpha_unit * pair.beta_norm, a + b, n, eps,
                         hermitian=bool(hermitian), structure=structure)


# ---------------------------------------------------------------------------
# Post-selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PostselectResult:
    state: np.ndarray
    success_prob: float
    raw_norm: float
    flagged_zero: bool = False


def be_apply(be: BlockEncoding, psi: np.ndarray, sim_qubits: int = SIM_QUBITS + 6) -> np.ndarray:
    """``(A / alpha) |psi>`` for an arbitrary vector, by simulation when feasible."""
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (be.system_dim,):
        raise ValueError("state length does not match the system register")
    if be.total_qubits <= sim_qubits:
        x = np.zeros(be.unitary.dim, dtype=complex)
        x[: be.system_dim] = psi
        return be.unitary.apply(x)[: be.system_dim]
    return np.asarray(be.block() @ psi)


def apply_postselected(be: BlockEncoding, psi: np.ndarray) -> PostselectResult:
    """Run ``U`` on ``|0>|psi>`` and post-select the ancillas on ``|0>``."""
    psi = np.asarray(psi, dtype=complex)
    if abs(np.linalg.norm(psi) - 1.0) > 1e-10:
        raise ValueError("input state is not normalized")
    out = be_apply(be, psi)
    raw = float(np.linalg.norm(out))
    if raw * be.alpha < 1e-14:
        return PostselectResult(np.zeros_like(out), 0.0, raw, True)
    return PostselectResult(out / raw, raw ** 2, raw)
