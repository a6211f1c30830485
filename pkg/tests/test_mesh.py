import numpy as np
import pytest

from qufem.mesh import (
    DomainMask,
    boundary_oracle,
    boundary_projector_be,
    build_mesh,
    element_projector_be,
    interior_be_1d,
    interior_be_box,
    interior_projector,
    load_mask,
    mask_from_rows,
    mask_to_rows,
    mesh_for_qubits,
    o_ix_oracle,
    order_bits,
    position_be,
    position_be_dim,
)
from qufem.qcore import extract_block


def dense(be):
    return extract_block(be).to_array()


def test_build_mesh_examples():
    params, conn = build_mesh(1, 1, 4)
    assert (params.numnp, params.numel) == (16, 15)
    params, conn = build_mesh(1, 3, 2)
    assert (params.numnp, params.numel, params.n, params.m) == (16, 5, 4, 2)
    assert conn.ix[0].tolist() == [0, 3, 6, 9, 12]
    assert params.h == pytest.approx(1 / 5)


def test_build_mesh_rejects_bad_order():
    with pytest.raises(ValueError):
        build_mesh(1, 2, 2)
    with pytest.raises(ValueError):
        order_bits(4)


@pytest.mark.parametrize("p,k", [(1, 1), (1, 5), (3, 1), (3, 3), (7, 2)])
def test_mesh_invariants(p, k):
    params, conn = build_mesh(1, p, k)
    assert params.numnp - 1 == params.numel * p
    assert conn.injective_per_row
    assert np.array_equal(conn.ix, np.arange(params.numel)[None] * p + np.arange(p + 1)[:, None])


def oracle_image(op, index):
    return int(op.perm[index])


def test_o_ix_examples():
    _, conn = build_mesh(1, 1, 3)
    dim = 8
    compact = o_ix_oracle(conn, compact=True)
    assert oracle_image(compact, 1 * dim + 2) == 1 * dim + 3
    assert oracle_image(compact, 0) == 0
    _, conn3 = build_mesh(1, 3, 2)
    full = o_ix_oracle(conn3)
    d = 16
    assert oracle_image(full, (2 * d + 1) * d) == (2 * d + 1) * d + 5


def test_o_ix_inverse_is_identity():
    _, conn = build_mesh(1, 3, 2)
    op = o_ix_oracle(conn, compact=True)
    m = op.to_array()
    assert np.array_equal(m.conj().T @ m, np.eye(m.shape[0]))


def test_position_examples():
    be1 = position_be(1)
    assert be1.alpha == pytest.approx(1)
    assert np.allclose(dense(be1), np.diag([0, 1]), atol=1e-13)
    x = dense(position_be(3))
    assert np.allclose(np.diag(x).real, np.arange(8), atol=1e-12)
    assert np.allclose(x - np.diag(np.diag(x)), 0, atol=1e-12)
    assert np.diag(x).real.sum() == pytest.approx(8 * 7 / 2)


def test_position_dim_eigenvalues_and_commutation():
    x0, x1 = dense(position_be_dim(0, 2, 2)), dense(position_be_dim(1, 2, 2))
    j = np.arange(16)
    assert np.allclose(np.diag(x0).real, j % 4)
    assert np.allclose(np.diag(x1).real, j // 4)
    assert np.abs(x0 @ x1 - x1 @ x0).max() == 0
    with pytest.raises(ValueError):
        position_be_dim(2, 2, 2)


def test_element_projector():
    p1 = dense(element_projector_be(3, 1)).real
    assert np.array_equal(np.diag(p1), [1, 1, 1, 1, 1, 1, 1, 0])
    p3 = dense(element_projector_be(4, 3)).real
    assert np.array_equal(np.diag(p3), [1] * 5 + [0] * 11)
    assert np.allclose(p3 @ p3, p3)


def test_interior_projector_1d():
    be, cost = interior_be_1d(3)
    assert np.array_equal(np.diag(dense(be)).real, [0, 1, 1, 1, 1, 1, 1, 0])
    assert cost.toffoli == 6


def test_boundary_oracle_box_matches_tensor_form():
    mask = DomainMask.box(2, 2)
    _, p_int = boundary_oracle(mask)
    assert np.allclose(dense(p_int), dense(interior_be_box(2, 2)))
    p_bd = dense(boundary_projector_be(mask))
    assert int(np.trace(p_bd).real) == 12
    assert np.allclose(dense(p_int) + p_bd, np.eye(16))
    assert np.allclose(dense(p_int) @ p_bd, 0)


def test_empty_fixed_set_gives_identity():
    mask = DomainMask.unconstrained(3, 1)
    _, p_int = boundary_oracle(mask)
    assert np.array_equal(dense(p_int), np.eye(8))
    assert np.array_equal(interior_projector(mask).toarray(), np.eye(8))


def test_mask_from_rows_and_roundtrip(tmp_path):
    rows = ["0000", "0110", "0110", "0000"]
    mask = mask_from_rows(rows)
    assert mask.active.sum() == 4 and mask.fixed.sum() == 4
    assert mask_to_rows(mask) == rows
    f = tmp_path / "m.txt"
    f.write_text("\n".join(rows) + "\n")
    assert np.array_equal(load_mask(f).active, mask.active)


def test_mask_orientation_top_row_is_largest_y():
    rows = ["1111", "0000", "0000", "0000"]
    mask = mask_from_rows(rows)
    assert mask.active[3].all() and not mask.active[0].any()


@pytest.mark.parametrize("rows", [["010", "111", "010"], ["0120", "0000", "0000", "0000"],
                                  ["00", "000"]])
def test_mask_rejects_bad_bitmaps(rows):
    with pytest.raises(ValueError):
        mask_from_rows(rows)


def test_mask_rejects_fixed_outside_active():
    active = np.zeros((4,), dtype=bool)
    fixed = np.ones((4,), dtype=bool)
    with pytest.raises(ValueError):
        DomainMask(active, fixed)


def test_mesh_for_qubits():
    params, _ = mesh_for_qubits(2, 3, 4)
    assert params.d == 2 and params.numel == 5
    with pytest.raises(ValueError):
        mesh_for_qubits(1, 3, 3)
