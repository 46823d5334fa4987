import csv
import json
from pathlib import Path

import numpy as np
import pytest

from vesselwall.cli import EXIT_ERROR, EXIT_OK, main
from vesselwall.volume import load_volume

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Phantom bundle plus one pseudo-label run, shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    bundle = root / "bundle"
    assert main(["phantom", "--out", str(bundle)]) == EXIT_OK

    out = root / "pseudo"
    rc = main([
        "pseudolabel",
        "--volume", str(bundle / "volume.rvol"),
        "--centerline", str(bundle / "centerline.json"),
        "--sd", "1.2",
        "--grid", "0.5",
        "--out", str(out),
    ])
    assert rc == EXIT_OK
    return root


class TestPhantomCommand:
    def test_bundle_files(self, workspace):
        bundle = workspace / "bundle"
        for name in ("volume.rvol", "truth.rvol", "centerline.json",
                     "annotations.json", "manifest.json"):
            assert (bundle / name).exists()

    def test_volume_loadable(self, workspace):
        vol = load_volume(workspace / "bundle" / "volume.rvol")
        assert vol.data.ndim == 3


class TestPseudolabelCommand:
    def test_outputs(self, workspace):
        out = workspace / "pseudo"
        mask = load_volume(out / "pseudolabel.rvol")
        assert set(np.unique(mask.data)) <= {0, 1, 2}
        assert np.any(mask.data == 1) and np.any(mask.data == 2)

    def test_provenance_schema(self, workspace):
        prov = json.loads((workspace / "pseudo" / "provenance.json").read_text())
        for key in ("sd", "use_bifurcation_axis", "planes", "failed",
                    "invalid", "solver_residuals", "version", "config"):
            assert key in prov
        assert prov["sd"] == 1.2
        assert prov["failed"] == 0

    def test_missing_volume(self, tmp_path, capsys):
        rc = main([
            "pseudolabel",
            "--volume", str(tmp_path / "nope.rvol"),
            "--centerline", str(tmp_path / "nope.json"),
            "--out", str(tmp_path / "o"),
        ])
        assert rc == EXIT_ERROR
        assert "missing volume" in capsys.readouterr().err

    def test_unknown_segmenter(self, workspace, tmp_path):
        bundle = workspace / "bundle"
        with pytest.raises(SystemExit):
            main([
                "pseudolabel",
                "--volume", str(bundle / "volume.rvol"),
                "--centerline", str(bundle / "centerline.json"),
                "--segmenter", "magic",
                "--out", str(tmp_path / "o"),
            ])


@pytest.fixture(scope="module")
def eval_out(workspace):
    out = workspace / "eval"
    rc = main([
        "evaluate",
        "--mask", str(workspace / "pseudo" / "pseudolabel.rvol"),
        "--annotations", str(workspace / "bundle" / "annotations.json"),
        "--case-id", "phantom/case0",
        "--out", str(out),
    ])
    assert rc == EXIT_OK
    return out


class TestEvaluateCommand:
    def test_cases_csv(self, eval_out):
        with open(eval_out / "cases.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 8
        ok = [r for r in rows if r["failed"] == "0"]
        assert len(ok) >= 6
        for r in ok:
            assert 0.0 < float(r["lumen_dsc"]) <= 1.0
            assert float(r["lumen_acd"]) < 1.0

    def test_per_plane_rows(self, eval_out):
        with open(eval_out / "per_plane.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        keys = [r["group"] for r in rows]
        assert keys == [f"Plane {i}" for i in range(1, 9)] + ["All planes"]
        total = rows[-1]
        assert total["num_slices"] == "8"

    def test_missing_mask(self, workspace, tmp_path, capsys):
        rc = main([
            "evaluate",
            "--mask", str(tmp_path / "nope.rvol"),
            "--annotations", str(workspace / "bundle" / "annotations.json"),
            "--out", str(tmp_path / "o"),
        ])
        assert rc == EXIT_ERROR
        assert "missing mask" in capsys.readouterr().err


class TestReportCommand:
    def test_merges_cases(self, eval_out, tmp_path, capsys):
        out = tmp_path / "report"
        rc = main(["report", "--out", str(out), str(eval_out / "cases.csv")])
        assert rc == EXIT_OK
        assert (out / "per_plane.csv").exists()
        with open(out / "per_dataset.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert rows and rows[0]["group"] == "cases"

    def test_no_inputs(self, tmp_path, capsys):
        rc = main(["report", "--out", str(tmp_path / "r")])
        assert rc == EXIT_ERROR

    def test_missing_case_csv(self, tmp_path, capsys):
        rc = main(["report", "--out", str(tmp_path / "r"),
                   str(tmp_path / "missing.csv")])
        assert rc == EXIT_ERROR


class TestAblateFixture:
    def test_selection_from_reference(self, tmp_path, capsys):
        out = tmp_path / "best.json"
        rc = main(["ablate", "--fixture", str(DATA / "ablation_reference.csv"),
                   "--out", str(out)])
        assert rc == EXIT_OK
        assert "selected: SD 0.6 BA yes" in capsys.readouterr().out
        best = json.loads(out.read_text())
        assert best["failed_slices"] == "22"
        assert best["num_slices"] == "2654"
        assert best["wall_hd"] == "0.845"

    def test_byte_stable_output(self, tmp_path):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        main(["ablate", "--fixture", str(DATA / "ablation_reference.csv"),
              "--out", str(a)])
        main(["ablate", "--fixture", str(DATA / "ablation_reference.csv"),
              "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()


class TestExitCodeContract:
    def test_internal_error_returns_one(self, tmp_path, capsys):
        bad = tmp_path / "bad.rvol"
        bad.write_text("not json")
        rc = main([
            "evaluate", "--mask", str(bad),
            "--annotations", str(bad),
            "--out", str(tmp_path / "o"),
        ])
        assert rc == EXIT_ERROR
        assert "error:" in capsys.readouterr().err
