import re
import subprocess
import sys

import pytest

from ltsf import cli, dataio
from test_dataio import write_sparse_container


def run(capsys, *argv):
    code = cli.dispatch([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_generate_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.ltsf", tmp_path / "b.ltsf"
    for path in (a, b):
        code, out, _ = run(capsys, "generate", "--system", "sinewave", "--seed", 7, "--out", path,
                           "--n-train", 20, "--n-test", 5)
        assert code == 0 and "wrote" in out
    assert a.read_bytes() == b.read_bytes()


def test_generate_ignores_worker_count(tmp_path, capsys, monkeypatch):
    a, b = tmp_path / "a.ltsf", tmp_path / "b.ltsf"
    base = ["generate", "--system", "lorenz", "--seed", 3, "--n-train", 6, "--n-test", 2, "--traj-len", 50]
    assert run(capsys, *base, "--out", a, "--workers", 1)[0] == 0
    monkeypatch.setenv("LTSF_WORKERS", "4")
    assert run(capsys, *base, "--out", b)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    monkeypatch.setenv("LTSF_WORKERS", "many")
    assert run(capsys, *base, "--out", b)[0] == 1


def test_inspect_cheetah_shaped_container(tmp_path, capsys):
    path = tmp_path / "cheetah.ltsf"
    write_sparse_container(path, (18000, 1000, 17), (2000, 1000, 17))
    code, out, _ = run(capsys, "inspect", path)
    assert code == 0
    assert "(18000, 1000, 17)" in out
    assert "(2000, 1000, 17)" in out


def test_train_nlinear_on_sinewave(tmp_path, capsys):
    ckpt = tmp_path / "nl.ckpt"
    code, out, _ = run(capsys, "train", "--system", "sinewave", "--seed", 0, "--model", "nlinear",
                       "--lookback", 96, "--lambda", 1e-6, "--out", ckpt)
    assert code == 0
    value = float(re.search(r"test MSE x100: (\S+)", out).group(1))
    assert value < 0.05
    assert "parameters: 184688" in out  # 96 * 1904 + 1904

    code, out, _ = run(capsys, "evaluate", "--checkpoint", ckpt, "--system", "sinewave", "--seed", 0)
    assert code == 0
    assert float(re.search(r"test MSE x100: (\S+)", out).group(1)) < 0.05
    code, out, _ = run(capsys, "inspect", ckpt)
    assert code == 0 and "checkpoint: nlinear" in out


def test_train_linode_and_plot_pipeline(tmp_path, capsys):
    data = tmp_path / "s.ltsf"
    assert run(capsys, "generate", "--system", "sinewave", "--seed", 1, "--out", data, "--n-train", 30,
               "--n-test", 8, "--traj-len", 40)[0] == 0
    code, out, _ = run(capsys, "train", "--data", data, "--model", "linode", "--lookback", 8, "--epochs", 2,
                       "--latent-dim", 4, "--decoder-hidden", "", "--learning-rate", 0.01)
    assert code == 0 and "test MSE:" in out
    config = tmp_path / "b.toml"
    config.write_text(
        'seed = 0\n[datasets.s]\npath = "s.ltsf"\nlookbacks = [8]\n'
        '[models.p]\nmodel = "persistence"\n[models.n]\nmodel = "nlinear"\nlambda = 1e-3\n'
    )
    csv_path, md_path, svg = tmp_path / "r.csv", tmp_path / "r.md", tmp_path / "r.svg"
    code, out, _ = run(capsys, "benchmark", "--config", config, "--out-csv", csv_path, "--out-md", md_path)
    assert code == 0 and "| s | 8 |" in out
    assert md_path.read_text() == out
    assert run(capsys, "plot", "--report", csv_path, "--out", svg, "--group", "all=s")[0] == 0
    assert svg.read_text().count('class="bar"') == 2
    export = tmp_path / "exp"
    assert run(capsys, "export-csv", "--data", data, "--out", export)[0] == 0


def test_import_command(tmp_path, capsys):
    csv_path = tmp_path / "series.csv"
    csv_path.write_text("t,a\n" + "".join(f"{i},{i * 0.5}\n" for i in range(300)))
    out_path = tmp_path / "imp.ltsf"
    code, out, _ = run(capsys, "import", "--csv", csv_path, "--out", out_path, "--traj-len", 50, "--stride", 10,
                       "--split", 0.8, "--time-column", "t")
    assert code == 0
    assert dataio.read_header(out_path).train_shape == (dataio.n_windows(240, 50, 10), 50, 1)


@pytest.mark.parametrize("argv, code", [
    (["train", "--bogus"], 1),
    (["frobnicate"], 1),
    ([], 1),
    (["train", "--system", "sinewave", "--model", "nlinear"], 1),
    (["inspect", "/nonexistent/file.ltsf"], 2),
])
def test_exit_codes(capsys, argv, code):
    got, _, err = run(capsys, *argv)
    assert got == code
    assert err


def test_data_and_numeric_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.ltsf"
    bad.write_bytes(b"NOPE" + bytes(20))
    assert run(capsys, "inspect", bad)[0] == 2
    data = tmp_path / "s.ltsf"
    run(capsys, "generate", "--system", "sinewave", "--out", data, "--n-train", 3, "--n-test", 2, "--traj-len", 40)
    # three trajectories cannot pin down 8 features without a penalty
    code, _, err = run(capsys, "train", "--data", data, "--model", "nlinear-b", "--lookback", 8, "--lambda", 0)
    assert code == 3 and "numerical" in err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ltsf", "inspect", str(tmp_path / "missing")],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    proc = subprocess.run([sys.executable, "-m", "ltsf", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "generate" in proc.stdout
