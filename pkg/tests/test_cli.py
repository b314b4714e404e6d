import json
import subprocess
import sys

import pytest

from surveyseg.cli import main


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--n-rows", "300", "--seed", "4", "--out", str(out)]) == 0
    return out


def _load(path):
    return json.loads(path.read_text())


def test_chi2_fixture(tmp_path, capsys):
    assert main(["chi2", "--counts", "1217,164;109,10", "--out", str(tmp_path)]) == 0
    doc = _load(tmp_path / "chi2.json")
    assert doc["statistic"] == pytest.approx(1.288, abs=5e-3)
    assert doc["expected_rounded"] == [[1221, 160], [105, 14]]
    assert "fail to reject" in capsys.readouterr().out
    manifest = _load(tmp_path / "manifest.json")
    assert "chi2.json" in manifest["outputs"]


def test_twoprop_fixture(tmp_path, capsys):
    assert main(["twoprop", "--counts", "1008,1388,63,112", "--out", str(tmp_path)]) == 0
    doc = _load(tmp_path / "twoprop.json")
    assert doc["z"] == pytest.approx(3.6884, abs=1e-3)
    assert "z=3.6884" in capsys.readouterr().out


def test_strict_condition_failure_exits_2(tmp_path, capsys):
    args = ["chi2", "--counts", "1,2;3,4", "--out", str(tmp_path)]
    assert main(args) == 0
    assert main(args + ["--strict"]) == 2
    assert "condition check" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["cluster", "--algo", "kmodes"],
        ["cluster", "--algo", "kmodes", "--k", "2", "--k-range", "1..3"],
        ["nosuch"],
        ["validate"],
        ["chi2"],
        ["twoprop", "--counts", "1,2,3"],
    ],
)
def test_usage_errors_exit_64(argv, tmp_path):
    try:
        code = main(argv + ["--out", str(tmp_path)])
    except SystemExit as exc:
        code = exc.code
    assert code == 64


def test_kmodes_on_numeric_column_is_error(synth_dir, tmp_path, capsys):
    code = main(["cluster", "--algo", "kmodes", "--k", "2", "--data", str(synth_dir / "data.csv"),
                 "--columns", "EMPWKHRS3_A,EDUCP_A", "--out", str(tmp_path)])
    assert code == 1
    assert "numeric" in capsys.readouterr().err


def test_missing_file_is_error(tmp_path):
    assert main(["cluster", "--algo", "kmodes", "--k", "2", "--data", str(tmp_path / "none.csv"),
                 "--out", str(tmp_path)]) == 1


def test_cluster_elbow_and_fit(synth_dir, tmp_path, capsys):
    data = str(synth_dir / "data.csv")
    cols = "EDUCP_A,NOTCOV_A,CITZNSTP_A,EMPLASTWK_A,EMPHEALINS_A"
    assert main(["cluster", "--algo", "kmodes", "--k-range", "1..8", "--data", data, "--columns", cols,
                 "--restarts", "3", "--out", str(tmp_path / "e")]) == 0
    rows = (tmp_path / "e" / "elbow.csv").read_text().splitlines()
    assert len(rows) == 9
    assert "knee at k=" in capsys.readouterr().out
    assert main(["cluster", "--algo", "kproto", "--k", "3", "--data", data,
                 "--columns", "EMPWKHRS3_A,EMPDYSMSS3_A," + cols, "--out", str(tmp_path / "k")]) == 0
    for name in ("model.json", "assignments.csv", "centroids.txt", "typical_members.txt", "manifest.json"):
        assert (tmp_path / "k" / name).exists()
    assert capsys.readouterr().out.startswith("cluster")


def test_embed_and_validate(synth_dir, tmp_path, capsys):
    data = str(synth_dir / "data.csv")
    labels = str(synth_dir / "labels.csv")
    cols = "EMPWKHRS3_A,EDUCP_A,NOTCOV_A"
    assert main(["embed", "--data", data, "--columns", cols, "--labels", labels, "--perplexity", "60",
                 "--iterations", "50", "--max-points", "200", "--out", str(tmp_path / "t")]) == 0
    assert "warning: perplexity 60" in capsys.readouterr().err
    assert len((tmp_path / "t" / "embedding.csv").read_text().splitlines()) == 201
    assert main(["validate", "--data", data, "--columns", cols, "--labels", labels, "--rounds", "10",
                 "--out", str(tmp_path / "v")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("Order of Importance") and "test accuracy:" in out


def test_out_dir_from_environment(tmp_path, monkeypatch):
    target = tmp_path / "fromenv"
    monkeypatch.setenv("SURVEYSEG_OUT", str(target))
    assert main(["chi2", "--counts", "10,20;30,40"]) == 0
    assert (target / "chi2.json").exists()


def test_manifest_is_path_independent(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    for name in ("a", "b"):
        assert main(["synth", "--n-rows", "50", "--out", str(tmp_path / name)]) == 0
    a = (tmp_path / "a" / "manifest.json").read_bytes()
    b = (tmp_path / "b" / "manifest.json").read_bytes()
    assert a == b
    doc = json.loads(a)
    assert "$OUT" in " ".join(doc["command"])


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "surveyseg", "chi2", "--counts", "1217,164;109,10",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0
    assert "df=1" in res.stdout
