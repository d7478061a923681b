import csv
import json
import struct
import subprocess
import sys

import numpy as np
import pytest

from cfel import io
from cfel.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_FAIL, EXIT_OK, main
from cfel.engine import RoundRecord
from cfel.errors import ConfigError, FormatError
from cfel.experiment import PRESETS, load_config, sweep_cells, validate
from cfel.topology import build_graph, metropolis_weights


def write_toml(path, text):
    path.write_text(text)
    return str(path)


QUADRATIC_TOML = """
[run]
algorithm = "ce_fedavg"
tau = 2
q = 2
pi = 1
lr = {lr}
rounds = 3
batch_size = 2

[data]
kind = "quadratic"
n_devices = 8
dim = 4

[topology]
m = 4

[system]
preset = "desk"

[analysis]
probes = 4
sigma_trials = 3
"""


# -- config ------------------------------------------------------------------

def test_missing_required_key_exits_2_naming_it(tmp_path, capsys):
    cfg = write_toml(tmp_path / "c.toml", QUADRATIC_TOML.format(lr=0.05).replace("rounds = 3\n", ""))
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "run.rounds" in capsys.readouterr().err


def test_unknown_key_and_bad_type_rejected(tmp_path):
    with pytest.raises(ConfigError, match="run.colour"):
        load_config(overrides={**PRESETS["desk-quadratic"], "run": {**PRESETS["desk-quadratic"]["run"], "colour": 1}})
    with pytest.raises(ConfigError, match="run.tau"):
        load_config(preset="desk-quadratic", overrides={"run": {"tau": "two"}})
    with pytest.raises(ConfigError):
        validate({"nonsense": {}})
    bad = write_toml(tmp_path / "bad.toml", "[run\n")
    assert main(["run", "--config", bad]) == EXIT_CONFIG


def test_preset_plus_file_override(tmp_path):
    cfg = write_toml(tmp_path / "c.toml", "[run]\nrounds = 2\n")
    merged = load_config(cfg, "desk-logistic")
    assert merged["run"]["rounds"] == 2 and merged["topology"]["m"] == 8


def test_sweep_cells():
    cfg = load_config(preset="desk-logistic")
    assert [c[0] for c in sweep_cells(cfg, "tau_fixed_qtau")] == ["tau2", "tau4", "tau8"]
    assert [c[1]["run"]["q"] for c in sweep_cells(cfg, "tau_fixed_qtau")] == [8, 4, 2]
    assert [c[0] for c in sweep_cells(cfg, "m")] == ["m4", "m8", "m16"]


# -- run ---------------------------------------------------------------------

def test_divergent_learning_rate_exits_3(tmp_path, capsys):
    cfg = write_toml(tmp_path / "c.toml", QUADRATIC_TOML.format(lr=10.0).replace("rounds = 3", "rounds = 20"))
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_DIVERGED
    assert "diverged at l=" in capsys.readouterr().err


def test_run_is_byte_identical_and_one_row_per_round(tmp_path):
    cfg = write_toml(tmp_path / "c.toml", QUADRATIC_TOML.format(lr=0.05))
    for out in ("a", "b"):
        assert main(["run", "--config", cfg, "--out", str(tmp_path / out), "--seeds", "3,4"]) == EXIT_OK
    for seed in (3, 4):
        a = (tmp_path / "a" / f"seed_{seed}" / "metrics.csv").read_bytes()
        b = (tmp_path / "b" / f"seed_{seed}" / "metrics.csv").read_bytes()
        assert a == b
        assert len(a.decode().strip().splitlines()) == 3 + 1


@pytest.mark.slow
def test_femnist_shaped_preset_emits_all_artifacts(tmp_path):
    out = tmp_path / "femnist"
    assert main(["run", "--preset", "femnist-paper", "--out", str(out), "--seeds", "0"]) == EXIT_OK
    run_dir = out / "seed_0"
    for name in ("metrics.csv", "metrics.jsonl", "checkpoint.bin", "divergence.json", "bound.json"):
        assert (run_dir / name).stat().st_size > 0, name
    rows = io.read_csv(run_dir / "metrics.csv")
    assert len(rows) == 10 and list(rows[0]) == list(RoundRecord.FIELDS)
    # simulated time follows the preset's per-round cost
    assert float(rows[0]["wall_sim_seconds"]) == pytest.approx(28.602337518518518, rel=1e-9)
    bound = json.loads((run_dir / "bound.json").read_text())
    assert set(bound["terms"]) == {"optimization", "sgd_noise", "inter_noise", "inter_divergence",
                                   "intra_noise", "intra_divergence"}
    div = json.loads((run_dir / "divergence.json").read_text())
    assert div["max_decomposition_residual"] <= 1e-9
    ckpt = io.read_checkpoint(run_dir / "checkpoint.bin")
    assert ckpt.shape == (20 * 10 + 10,)
    assert len((run_dir / "metrics.jsonl").read_text().splitlines()) == 10


def test_sweep_writes_cells_and_summary(tmp_path):
    cfg = write_toml(tmp_path / "c.toml", QUADRATIC_TOML.format(lr=0.05).replace("q = 2", "q = 4"))
    assert main(["sweep", "--config", cfg, "--axis", "tau_fixed_qtau", "--out", str(tmp_path / "s"),
                 "--seeds", "0,1"]) == EXIT_OK
    with open(tmp_path / "s" / "tau_fixed_qtau" / "summary.csv", newline="") as fh:
        summary = list(csv.DictReader(fh))
    assert [r["cell"] for r in summary] == ["tau2", "tau4", "tau8"]
    # linear gradients: the device average ignores the aggregation schedule
    assert len({r["mean_final_loss"] for r in summary}) == 1
    assert (tmp_path / "s" / "tau_fixed_qtau" / "tau4" / "seed_1" / "metrics.csv").exists()


# -- verify ------------------------------------------------------------------

def test_verify_default_passes(capsys):
    assert main(["verify"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5 and all(line.startswith("PASS") for line in lines)


def test_verify_rejects_tampered_mixing(tmp_path, capsys):
    h = metropolis_weights(build_graph("ring", 8)).entries.copy()
    h[0, 0] += 0.01                                  # row 0 now sums to 1.01
    path = tmp_path / "h.txt"
    np.savetxt(path, h)
    assert main(["verify", "--mixing", str(path)]) == EXIT_FAIL
    assert "FAIL mixing_matrix" in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "cfel", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "verify" in proc.stdout


# -- io ----------------------------------------------------------------------

def test_checkpoint_round_trip_and_header(tmp_path):
    x = np.random.default_rng(0).standard_normal(17)
    path = tmp_path / "ck.bin"
    io.write_checkpoint(x, path)
    raw = path.read_bytes()
    assert len(raw) == 16 + 8 * 17
    assert struct.unpack("<4sIQ", raw[:16]) == (b"CFEL", 1, 17)
    np.testing.assert_array_equal(io.read_checkpoint(path), x)


def test_checkpoint_rejects_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "ck.bin"
    io.write_checkpoint(np.ones(4), path)
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        io.read_checkpoint(path)
    path.write_bytes(raw[:-1])
    with pytest.raises(FormatError):
        io.read_checkpoint(path)


def test_csv_round_trip_keeps_full_precision(tmp_path):
    rec = RoundRecord(1, 8, 0.1 + 0.2, 1 / 3, float("nan"), 2.0 ** -40, 0.0)
    io.write_csv([rec], tmp_path / "m.csv")
    row = io.read_csv(tmp_path / "m.csv")[0]
    assert float(row["wall_sim_seconds"]) == 0.1 + 0.2
    assert float(row["global_loss"]) == 1 / 3
    assert np.isnan(float(row["test_accuracy"]))
