"""Command-line entry point ``qufem``."""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import assembly, gates, plotting, solver
from .constraints import lagrange_system, projector_dirichlet, solve_block_system
from .elements import elemental_arrays
from .interaction import uoi_be, uoi_reference
from .mesh import DomainMask, load_mask, mesh_for_qubits
from .qcore import be_scale, diagonal_be, extract_block
from .quad import (
    PolySpec,
    assemble_variable_coeff,
    classical_force_vector,
    classical_variable_assemble,
    gauss_legendre,
    poly_transform_diagonal,
    qsp_apply,
    qsp_phases,
)


def _parse_sweep(text: str) -> range:
    m = re.fullmatch(r"n=(\d+)\.\.(\d+)", text.strip())
    if not m:
        raise argparse.ArgumentTypeError("sweep must look like n=3..10")
    lo, hi = int(m.group(1)), int(m.group(2))
    if lo > hi:
        raise argparse.ArgumentTypeError("empty sweep range")
    return range(lo, hi + 1)


def _report(name: str, ok: bool, detail: str = "") -> bool:
    print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
    return ok


# --- assemble --------------------------------------------------------------------


def cmd_assemble(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kinds = ["stiffness", "mass"] if args.kind == "both" else [args.kind]
    summary, ok = {"d": args.d, "p": args.p, "n": args.n}, True
    if args.coeff:
        poly = PolySpec.from_json(Path(args.coeff).read_text())
        arrays = {k: assemble_variable_coeff(poly, k, args.p, args.n, d=args.d) for k in kinds}
        refs = {k: classical_variable_assemble(poly, k, args.p, args.n, d=args.d) for k in kinds}
        tol = 1e-8
    else:
        k_arr, m_arr = assembly.assemble_global_dd(args.d, args.p, args.n)
        arrays = {"stiffness": k_arr, "mass": m_arr}
        refs = {k: assembly.classical_global(args.d, args.p, args.n, k) for k in kinds}
        tol = 1e-10
    for kind in kinds:
        arr = arrays[kind]
        mat = solver.extract_system(arr)
        diff = float(abs(mat - refs[kind]).max()) if mat.nnz or refs[kind].nnz else 0.0
        assembly.write_triplets(mat, out / f"{kind}.csv")
        good = diff <= tol and arr.be.alpha <= arr.alpha_analytic * (1 + 1e-12)
        ok &= _report(f"{kind} matches classical assembly", good, f"max diff {diff:.2e}")
        summary[kind] = {"alpha": arr.be.alpha, "alpha_bound": arr.alpha_analytic,
                         "ancillas": arr.be.ancillas, "ledger_ancillas": arr.ledger_ancillas,
                         "toffoli": arr.cost.toffoli, "max_diff_vs_classical": diff}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return 0 if ok else 1


# --- demo ------------------------------------------------------------------------


def cmd_demo(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.which == "cal":
        mask = load_mask(args.mask) if args.mask else None
        res = solver.demo_poisson_cal(args.n, mask=mask)
    else:
        res = solver.demo_square_duct(args.n, args.dpdx_over_mu)
    rep = res.report
    fields = {"u": res.u_grid()}
    if args.which == "cal":
        fields["lambda"] = res.lam_grid()
    for name, grid in fields.items():
        plotting.write_field_csv(grid, out / f"{name}.csv")
        plotting.write_heatmap(grid, out / f"{name}.png", f"{args.which}: {name}",
                               res.mask.active if name == "u" else None)
        if args.pgm:
            plotting.write_pgm(grid, out / f"{name}.pgm")
    cost = assembly.cost_sweep("stiffness_1d", [args.n])[0]
    (out / "summary.json").write_text(solver.summary_json(res, {"stiffness_1d_toffoli":
                                                                cost["toffoli"],
                                                                "stiffness_1d_ancillas":
                                                                cost["ancillas"]}))
    checks = [
        _report("quantum path equals classical FEM", res.max_rel_diff <= 1e-8,
                f"{res.max_rel_diff:.2e}"),
        _report("norm recovery", abs(rep.u_norm - rep.u_norm_direct)
                <= 1e-9 * max(rep.u_norm_direct, 1e-300)),
        _report("residual", rep.residual <= 1e-9 * rep.rhs_norm, f"{rep.residual:.2e}"),
        _report("constrained values",
                float(np.max(np.abs(rep.u[res.mask.constrained]), initial=0)) <= 1e-9),
    ]
    if args.which == "duct":
        ex = res.extras
        rel = abs(ex["center_velocity"] - ex["center_series"]) / abs(ex["center_series"])
        checks.append(_report("center velocity vs series", rel <= 0.02, f"{rel:.2%}"))
        checks.append(_report("symmetry", ex["asymmetry"] <= 1e-9))
        if "l2_ratio" in ex:
            checks.append(_report("L2 convergence ratio", 3.2 <= ex["l2_ratio"] <= 4.8,
                                  f"{ex['l2_ratio']:.3f}"))
    else:
        checks.append(_report("interior multipliers vanish",
                              res.extras["lambda_interior_max"] <= 1e-9))
    print(f"wrote {', '.join(sorted(p.name for p in out.iterdir()))} to {out}")
    return 0 if all(checks) else 1


# --- cost ------------------------------------------------------------------------


def cmd_cost(args) -> int:
    rows = assembly.cost_sweep(args.construct, args.sweep, args.p)
    text = gates.cost_table_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# --- verify ----------------------------------------------------------------------


def run_verify() -> bool:
    """Quick oracle-equivalence checks of true invariants."""
    ok = True
    a1 = elemental_arrays(1)
    ok &= _report("linear elemental arrays",
                  np.allclose(a1.ke, [[1, -1], [-1, 1]], atol=1e-13, rtol=0)
                  and np.allclose(a1.me, [[1 / 3, 1 / 6], [1 / 6, 1 / 3]], atol=1e-13, rtol=0))
    worst = 0.0
    for p, n in ((1, 4), (3, 4)):
        _, conn = mesh_for_qubits(1, p, n)
        for j in range(p + 1):
            for k in range(p + 1):
                q = extract_block(uoi_be(n, p, j, k)).to_sparse()
                worst = max(worst, float(abs(q - uoi_reference(conn, j, k)).max()))
    ok &= _report("units of interaction match the reference sum", worst <= 1e-12,
                  f"{worst:.1e}")
    worst = 0.0
    for p, n in ((1, 4), (3, 4)):
        for kind, arr in (("stiffness", assembly.assemble_stiffness_1d(p, n)),
                          ("mass", assembly.assemble_mass_1d(p, n))):
            ref = assembly.classical_global(1, p, n, kind)
            worst = max(worst, float(abs(solver.extract_system(arr) - ref).max()))
    k2, m2 = assembly.assemble_global_dd(2, 1, 3)
    for kind, arr in (("stiffness", k2), ("mass", m2)):
        ref = assembly.classical_global(2, 1, 3, kind)
        worst = max(worst, float(abs(solver.extract_system(arr) - ref).max()))
    ok &= _report("global arrays match classical assembly", worst <= 1e-10, f"{worst:.1e}")
    m1 = assembly.assemble_mass_1d(1, 4)
    m3 = assembly.assemble_mass_1d(3, 4)
    ok &= _report("mass subnormalization equals the elemental absolute sum",
                  abs(m1.be.alpha - 1) <= 1e-12
                  and abs(m3.be.alpha - elemental_arrays(3).me_abs_sum) <= 1e-12)
    ok &= _report("linear stiffness subnormalization is 4",
                  abs(assembly.assemble_stiffness_1d(1, 4).be.alpha - 4) <= 1e-12)
    worst = 0.0
    for g in range(1, 11):
        r = gauss_legendre(g)
        for k in range(2 * g):
            exact = 2 / (k + 1) if k % 2 == 0 else 0.0
            worst = max(worst, abs(float(r.weights @ r.points ** k) - exact)
                        / max(abs(exact), 1.0))
    ok &= _report("Gauss-Legendre exactness", worst <= 1e-12, f"{worst:.1e}")
    x2 = PolySpec.monomial([0, 0, 1])
    va = solver.extract_system(assemble_variable_coeff(x2, "mass", 1, 3))
    vr = classical_variable_assemble(x2, "mass", 1, 3)
    ok &= _report("variable-coefficient assembly", abs(va - vr).max() <= 1e-8)
    lam = np.linspace(-1, 1, 8)
    base = diagonal_be(lam)
    t3 = PolySpec.chebyshev([0, 0, 0, 1], domain=(-1.0, 1.0))
    diff = np.abs(extract_block(qsp_apply(base, qsp_phases(t3))).to_array()
                  - extract_block(poly_transform_diagonal(base, t3)).to_array()).max()
    ok &= _report("QSP matches the exact diagonal transform", diff <= 1e-8, f"{diff:.1e}")
    n = 4
    h = 1 / 15
    kp = be_scale(assembly.assemble_stiffness_1d(1, n).be, 1 / h)
    mask = DomainMask.box(n, 1)
    f = classical_force_vector(PolySpec.constant(1.0), 1, n)
    ubar = np.zeros(16)
    ubar[0], ubar[-1] = 0.5, 1.5
    system = lagrange_system(kp, mask, ubar, f)
    sol = solve_block_system(solver.extract_system(system), system)
    op, rhs = projector_dirichlet(kp, mask, f, ubar)
    u2 = np.linalg.solve(solver.extract_system(op).toarray(), rhs)
    ok &= _report("Lagrange and projector methods agree",
                  np.abs(sol.u - u2).max() <= 1e-8
                  and abs(sol.u[0] - 0.5) <= 1e-9 and abs(sol.u[-1] - 1.5) <= 1e-9)
    duct = solver.demo_square_duct(3, convergence=False)
    rep = duct.report
    ok &= _report("norm recovery on a small duct solve",
                  abs(rep.u_norm - rep.u_norm_direct) <= 1e-9 * rep.u_norm_direct
                  and duct.max_rel_diff <= 1e-8)
    return bool(ok)


def cmd_verify(args) -> int:
    return 0 if run_verify() else 1


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qufem",
                                     description="Block-encoded finite-element assembly and "
                                                 "Poisson demos with classical oracles.")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("assemble", help="assemble global arrays and compare with classical")
    a.add_argument("--d", type=int, default=1)
    a.add_argument("--p", type=int, default=1)
    a.add_argument("--n", type=int, required=True)
    a.add_argument("--coeff", help="JSON polynomial for a variable coefficient")
    a.add_argument("--kind", choices=("stiffness", "mass", "both"), default="both")
    a.add_argument("--out", default="qufem_out")
    a.set_defaults(func=cmd_assemble)

    d = sub.add_parser("demo", help="run a Poisson demo and write fields")
    d.add_argument("which", choices=("cal", "duct"))
    d.add_argument("--n", type=int, default=5)
    d.add_argument("--mask", help="0/1 bitmap file for the cal domain")
    d.add_argument("--dpdx-over-mu", type=float, default=-1.0)
    d.add_argument("--out", default="qufem_out")
    d.add_argument("--pgm", action="store_true", help="also write grayscale PGM images")
    d.set_defaults(func=cmd_demo)

    c = sub.add_parser("cost", help="Toffoli and ancilla ledger sweep as CSV")
    c.add_argument("--construct", choices=assembly.COST_CONSTRUCTS, required=True)
    c.add_argument("--sweep", type=_parse_sweep, default=range(3, 11))
    c.add_argument("--p", type=int, default=1)
    c.add_argument("--out")
    c.set_defaults(func=cmd_cost)

    v = sub.add_parser("verify", help="run the oracle-equivalence checks")
    v.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
