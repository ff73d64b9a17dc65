import subprocess
import sys

import numpy as np
import pytest

from slipforge.cli import main, samples_from_table
from slipforge.config import SEED_ENV
from slipforge.csvio import read_table, write_rows
from slipforge.errors import ConfigError
from slipforge.model import STATE_NAMES

SHORT = """
[tyre_prior]
B = 6.0
C = 1.5
D = 0.5

[task]
trials = 2
hold_time = 0.5

[course]
target_speed = 20.0
segments = [
  {type = "straight", length = 20.0},
  {type = "arc", radius = 100.0, sweep_deg = 10.0, direction = -1},
  {type = "straight", length = 10.0},
]
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "short.toml"
    p.write_text(SHORT)
    return p


@pytest.fixture(autouse=True)
def no_seed_env(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)


def test_gen_ref(cfg_path, tmp_path, capsys):
    out = tmp_path / "ref.csv"
    assert main(["gen-ref", "--course", str(cfg_path), "--dt", "0.1", "--out", str(out)]) == 0
    t = read_table(out)
    assert list(t) == ["t", "x", "y", "psi", "xdot", "ydot", "psidot"]
    assert t["x"][1] == 2.0
    assert "reference states" in capsys.readouterr().out


def test_gen_ref_bad_dt(cfg_path, tmp_path):
    assert main(["gen-ref", "--course", str(cfg_path), "--dt", "0", "--out",
                 str(tmp_path / "r.csv")]) == 2


def test_missing_file(tmp_path):
    assert main(["gen-ref", "--course", str(tmp_path / "nope.toml"), "--out",
                 str(tmp_path / "r.csv")]) == 2


def test_simulate_and_estimate(cfg_path, tmp_path, capsys):
    rng = np.random.default_rng(0)
    n = 40
    inputs = np.column_stack([0.05 * np.sin(np.arange(n) / 4), rng.uniform(-300, 300, n),
                              rng.uniform(-300, 600, n)])
    write_rows(tmp_path / "u.csv", ["delta", "T_f", "T_r"], inputs)
    traj = tmp_path / "traj.csv"
    assert main(["simulate", "--config", str(cfg_path), "--inputs", str(tmp_path / "u.csv"),
                 "--out", str(traj)]) == 0
    t = read_table(traj)
    assert len(t["x"]) == n + 1
    assert np.isnan(t["delta"][-1])
    assert t["xdot"][0] == 20.0
    capsys.readouterr()
    assert main(["estimate", "--data", str(traj), "--config", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("B = ")
    assert "samples 40 (skipped 0)" in out


def test_simulate_domain_error_exit_3(cfg_path, tmp_path, capsys):
    write_rows(tmp_path / "u.csv", ["delta", "T_f", "T_r"], [[0, 0, -6000.0]] * 30)
    traj = tmp_path / "traj.csv"
    code = main(["simulate", "--config", str(cfg_path), "--inputs", str(tmp_path / "u.csv"),
                 "--out", str(traj)])
    assert code == 3
    assert "partial trajectory" in capsys.readouterr().err
    assert traj.exists()


def test_simulate_bad_inputs(cfg_path, tmp_path):
    write_rows(tmp_path / "u.csv", ["delta", "T_f"], [[0, 0]])
    assert main(["simulate", "--config", str(cfg_path), "--inputs", str(tmp_path / "u.csv"),
                 "--out", str(tmp_path / "t.csv")]) == 2


def test_track_outputs_and_determinism(cfg_path, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["track", "--config", str(cfg_path), "--out-dir", str(a)]) == 0
    out = capsys.readouterr().out
    assert out.count("trial ") >= 2 and "mse trial 1" in out
    assert main(["track", "--config", str(cfg_path), "--out-dir", str(b)]) == 0
    for name in ("metrics.csv", "summary.csv", "samples.csv", "ref.csv", "traj_1.csv",
                 "traj_2.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    m = read_table(a / "metrics.csv")
    assert list(m) == ["trial", "mse", "B", "C", "D"]
    assert list(m["trial"]) == [1.0, 2.0]
    # every float carries 17 significant digits
    line = (a / "metrics.csv").read_text().splitlines()[1]
    mant = line.split(",")[1].split("e")[0].replace(".", "").replace("-", "").lstrip("0")
    assert len(mant) >= 15
    s = read_table(a / "samples.csv")
    assert len(s["trial"]) == sum(len(read_table(a / f"traj_{k}.csv")["t"]) for k in (1, 2))


def test_track_seed_env(cfg_path, tmp_path, monkeypatch):
    noisy = tmp_path / "noisy.toml"
    noisy.write_text(SHORT.replace("hold_time = 0.5", "hold_time = 0.5\nmeasurement_noise = 0.1")
                     .replace("trials = 2", "trials = 1"))
    monkeypatch.setenv(SEED_ENV, "1")
    assert main(["track", "--config", str(noisy), "--out-dir", str(tmp_path / "s1")]) == 0
    monkeypatch.setenv(SEED_ENV, "2")
    assert main(["track", "--config", str(noisy), "--out-dir", str(tmp_path / "s2")]) == 0
    a = (tmp_path / "s1" / "samples.csv").read_bytes()
    b = (tmp_path / "s2" / "samples.csv").read_bytes()
    assert a != b


def test_track_trials_flag(cfg_path, tmp_path):
    assert main(["track", "--config", str(cfg_path), "--trials", "0", "--out-dir",
                 str(tmp_path / "z")]) == 2


def test_stiffness_on_reference(cfg_path, tmp_path, capsys):
    ref = tmp_path / "ref.csv"
    main(["gen-ref", "--course", str(cfg_path), "--out", str(ref)])
    out = tmp_path / "stiff.csv"
    assert main(["stiffness", "--config", str(cfg_path), "--ref", str(ref), "--out",
                 str(out)]) == 0
    t = read_table(out)
    assert list(t) == ["index", "lambda_max_abs", "lambda_min_abs", "ratio"]
    assert len(t["ratio"]) == len(read_table(ref)["t"])
    assert np.all(t["lambda_max_abs"] > 100)


def test_samples_forward_difference():
    X = np.zeros((3, 8))
    X[:, 3] = [20.0, 21.0, 23.0]
    X[:, 6] = X[:, 7] = 60.0
    table = {n: X[:, i] for i, n in enumerate(STATE_NAMES)}
    table.update(t=np.array([0.0, 0.1, 0.2]), delta=np.zeros(3), T_f=np.zeros(3),
                 T_r=np.zeros(3))
    _, _, Y = samples_from_table(table).arrays()
    np.testing.assert_allclose(Y[:, 0], [10.0, 20.0])
    table["t"] = np.array([0.0, 0.1, 0.1])
    with pytest.raises(ConfigError):
        samples_from_table(table)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "slipforge", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0
    for cmd in ("gen-ref", "simulate", "track", "estimate", "stiffness"):
        assert cmd in res.stdout


def test_no_subcommand():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
