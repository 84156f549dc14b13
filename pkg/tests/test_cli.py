import csv
import json
import os

import pytest

from bsfem.cli import main
from bsfem.verify import SERIES_COLUMNS


def read_results(out_dir):
    with open(os.path.join(out_dir, "results.csv")) as fh:
        return list(csv.DictReader(fh))


def test_malformed_case_flag_exits_nonzero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--method", "proposed", "--global-basis", "bspline:3",
              "--local-order", "1", "--case", "C", "--elems", "6"])
    assert exc.value.code != 0


def test_invalid_method_basis_combo():
    with pytest.raises(SystemExit):
        main(["run", "--method", "proposed", "--global-basis", "lagrange:2",
              "--local-order", "1", "--case", "A", "--elems", "6",
              "--out", "unused"])


def test_malformed_basis_string():
    with pytest.raises(SystemExit):
        main(["run", "--method", "proposed", "--global-basis", "bspline3",
              "--local-order", "1", "--case", "A", "--elems", "6"])


def test_run_single_writes_artifacts(tmp_path):
    out = str(tmp_path / "out")
    code = main(["run", "--method", "proposed", "--global-basis",
                 "bspline:2", "--local-order", "1", "--case", "B",
                 "--elems", "6", "--history", "--out", out])
    assert code == 0
    rows = read_results(out)
    assert len(rows) == 1
    assert list(rows[0].keys()) == SERIES_COLUMNS
    assert rows[0]["cg_converged"] == "True"
    assert os.path.exists(os.path.join(out, "run_bspline2_q1_caseB_6.json"))
    assert os.path.exists(os.path.join(out, "residual_bspline2_q1_caseB_6.csv"))
    assert os.path.exists(os.path.join(out, "manifest.json"))
    with open(os.path.join(out, "manifest.json")) as fh:
        manifest = json.load(fh)
    assert manifest["points"] == 1


def test_scientific_failure_still_exits_zero(tmp_path):
    # Conventional case B non-convergence is a recorded result, not a
    # pipeline error.
    out = str(tmp_path / "out")
    code = main(["run", "--method", "conventional", "--global-basis",
                 "lagrange:1", "--local-order", "1", "--case", "B",
                 "--elems", "6", "--out", out])
    assert code == 0
    rows = read_results(out)
    assert rows[0]["cg_converged"] == "False"


def test_resume_skips_existing(tmp_path):
    out = str(tmp_path / "out")
    args = ["run", "--method", "proposed", "--global-basis", "bspline:2",
            "--local-order", "1", "--case", "B", "--elems", "6",
            "--out", out]
    assert main(args) == 0
    record = os.path.join(out, "run_bspline2_q1_caseB_6.json")
    stamp = os.path.getmtime(record)
    assert main(args + ["--resume"]) == 0
    assert os.path.getmtime(record) == stamp  # no re-solve happened


def test_config_file_supplies_unset_flags(tmp_path):
    cfg = tmp_path / "cfg.json"
    out = str(tmp_path / "from_config")
    cfg.write_text(json.dumps({"out": out}))
    code = main(["--config", str(cfg), "run", "--method", "proposed",
                 "--global-basis", "bspline:2", "--local-order", "1",
                 "--case", "B", "--elems", "6"])
    assert code == 0
    assert os.path.exists(os.path.join(out, "results.csv"))


def test_explicit_flag_beats_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"out": str(tmp_path / "ignored")}))
    out = str(tmp_path / "explicit")
    code = main(["--config", str(cfg), "run", "--method", "proposed",
                 "--global-basis", "bspline:2", "--local-order", "1",
                 "--case", "B", "--elems", "6", "--out", out])
    assert code == 0
    assert os.path.exists(os.path.join(out, "results.csv"))
    assert not os.path.exists(os.path.join(str(tmp_path / "ignored"),
                                           "results.csv"))


def test_matrix_export(tmp_path):
    out = str(tmp_path / "out")
    code = main(["run", "--method", "proposed", "--global-basis",
                 "bspline:2", "--local-order", "1", "--case", "B",
                 "--elems", "6", "--export-matrix", "--out", out])
    assert code == 0
    assert os.path.exists(os.path.join(out,
                                       "matrix_bspline2_q1_caseB_6.mtx"))
