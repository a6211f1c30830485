import json

import numpy as np
import pytest

from qufem.cli import main
from qufem.plotting import FIELD_HEADER, read_field_csv, write_field_csv, write_heatmap, write_pgm


def test_cost_sweep_csv(capsys):
    assert main(["cost", "--construct", "stiffness_1d", "--sweep", "n=3..5"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "construct,n,m,p,toffoli,ancillas"
    assert [ln.split(",")[1] for ln in lines[1:]] == ["3", "4", "5"]


def test_cost_to_file(tmp_path):
    out = tmp_path / "mass.csv"
    assert main(["cost", "--construct", "mass_1d", "--p", "3", "--sweep", "n=4..8",
                 "--out", str(out)]) == 0
    rows = out.read_text().strip().splitlines()[1:]
    assert [r.split(",")[1] for r in rows] == ["4", "6", "8"]


def test_bad_sweep_is_rejected():
    with pytest.raises(SystemExit):
        main(["cost", "--construct", "uoi", "--sweep", "3-10"])


def test_assemble_writes_triplets(tmp_path):
    assert main(["assemble", "--d", "2", "--p", "1", "--n", "2", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["mass"]["alpha"] == pytest.approx(1)
    assert summary["stiffness"]["alpha"] == pytest.approx(8)
    assert (tmp_path / "stiffness.csv").read_text().startswith("row,col,value\n")


def test_assemble_variable_coefficient(tmp_path):
    coeff = tmp_path / "f.json"
    coeff.write_text(json.dumps({"basis": "monomial", "coefficients": [0, 1]}))
    assert main(["assemble", "--p", "1", "--n", "3", "--coeff", str(coeff), "--kind", "mass",
                 "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "mass.csv").exists()


def test_invalid_order_exits_with_usage_error(tmp_path, capsys):
    assert main(["assemble", "--p", "2", "--n", "3", "--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_duct_demo_outputs_are_deterministic(tmp_path):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["demo", "duct", "--n", "4", "--out", str(out), "--pgm"]) == 0
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert runs[0] == runs[1]
    assert set(runs[0]) == {"u.csv", "u.png", "u.pgm", "summary.json"}
    grid = read_field_csv(tmp_path / "a" / "u.csv")
    assert grid.shape == (16, 16) and np.allclose(grid, grid.T, atol=1e-12)


def test_cal_demo_with_custom_mask(tmp_path):
    rows = ["0" * 8] + ["0" + "1" * 6 + "0"] * 6 + ["0" * 8]
    mask = tmp_path / "mask.txt"
    mask.write_text("\n".join(rows) + "\n")
    out = tmp_path / "cal"
    assert main(["demo", "cal", "--n", "3", "--mask", str(mask), "--out", str(out)]) == 0
    assert {"u.csv", "lambda.csv", "u.png", "lambda.png", "summary.json"} <= {
        p.name for p in out.iterdir()}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["max_rel_diff_vs_classical"] <= 1e-8


def test_verify_passes(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 10


def test_field_csv_roundtrip(tmp_path):
    grid = np.arange(12.0).reshape(3, 4)
    path = tmp_path / "g.csv"
    write_field_csv(grid, path)
    assert path.read_text().splitlines()[0] == FIELD_HEADER
    assert path.read_text().splitlines()[2] == "1,0,1"
    assert np.array_equal(read_field_csv(path), grid)


def test_pgm_orientation_and_scaling(tmp_path):
    grid = np.array([[0.0, 1.0], [2.0, 4.0]])
    path = tmp_path / "g.pgm"
    write_pgm(grid, path)
    data = path.read_bytes()
    header = b"P5\n2 2\n255\n"
    assert data.startswith(header)
    assert list(data[len(header):]) == [128, 255, 0, 64]


def test_heatmap_writes_png(tmp_path):
    path = tmp_path / "h.png"
    write_heatmap(np.eye(4), path, "eye", mask=np.eye(4, dtype=bool))
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
