import json

import numpy as np
import pytest

from hotembed.cli import main
from hotembed.errors import ConfigError, CorruptState, VersionMismatch
from hotembed.experiments import (PRESETS, Experiment, load_config, parse_config, resume_experiment,
                                  run_experiment)

# desk-sized versions of every preset
SMALL = {
    "fig12a_recall_vs_c": ["workload.n=5000", "workload.events=40000", "recall.k=50",
                           "recall.memory_slots=64 128", "experiment.seeds=0 1"],
    "fig17cd_drift_recall": ["workload.n=5000", "workload.window_events=5000", "workload.windows=4",
                             "recall.k=50", "sketch.decay_interval=500", "experiment.seeds=0 1"],
    "theory_fig8_grid": ["theory.gamma=0.1 0.3", "theory.z=1.1 1.5", "theory.mc_trials=20", "theory.mc_w=10"],
    "train_compare_1000x": ["workload.n=2000", "trainer.steps=120", "trainer.chunk_steps=50",
                            "experiment.seeds=0", "store.compression_ratio=50",
                            "trainer.maintenance_interval=20"],
    "throughput": ["throughput.ops=2000", "throughput.c_values=4 8 16", "throughput.w_values=16",
                   "throughput.repeats=1"],
}


def test_every_preset_has_small_version():
    assert set(SMALL) == set(PRESETS)


def test_missing_required_field():
    with pytest.raises(ConfigError) as exc:
        parse_config("[experiment]\nname = x\n")
    assert exc.value.field == "experiment.kind"


def test_unknown_field_and_bad_value():
    with pytest.raises(ConfigError) as exc:
        parse_config("[experiment]\nkind = throughput\n[sketch]\nslots = 4\n")
    assert exc.value.field == "sketch.slots"
    with pytest.raises(ConfigError) as exc:
        parse_config("[experiment]\nkind = recall_sweep\n[workload]\nn = many\n")
    assert exc.value.field == "workload.n"
    with pytest.raises(ConfigError) as exc:
        parse_config("[experiment]\nkind = drift_recall\n")
    assert exc.value.field == "workload.window_events"
    with pytest.raises(ConfigError):
        parse_config("[experiment]\nkind = fly\n")
    with pytest.raises(ConfigError):
        load_config("no_such_preset_or_file")


def test_overrides_change_hash():
    a = load_config("throughput")
    b = load_config("throughput", ["throughput.ops=10"])
    assert a.digest != b.digest and b["throughput"]["ops"] == 10
    assert load_config("throughput").digest == a.digest


@pytest.mark.parametrize("name", sorted(SMALL))
def test_checkpoint_replay_every_preset(name, tmp_path):
    cfg = load_config(name, SMALL[name])
    done, s1, full = run_experiment(cfg, out_dir=tmp_path / "a")
    assert done
    ck = tmp_path / "ck.npz"
    done, _, part = run_experiment(cfg, stop_after=2, checkpoint=ck, out_dir=tmp_path / "b")
    assert not done and part.next_unit == 2
    done, s2, resumed = resume_experiment(ck, out_dir=tmp_path / "b")
    assert done
    a = (tmp_path / "a" / "metrics.csv").read_text()
    b = (tmp_path / "b" / "metrics.csv").read_text()
    if name == "throughput":
        # timings are machine noise; the measured grid must still match
        strip = lambda text: [line.split(",")[:3] for line in text.splitlines()]
        assert strip(a) == strip(b)
    else:
        assert a == b
        assert s1 == s2


def test_mid_training_checkpoint(tmp_path):
    cfg = load_config("train_compare_1000x", SMALL["train_compare_1000x"] + ["trainer.chunk_steps=10"])
    _, s1, _ = run_experiment(cfg, out_dir=tmp_path / "a")
    ck = tmp_path / "ck.npz"
    # unit 5 is half way through the CAFE run of seed 0
    run_experiment(cfg, stop_after=5, checkpoint=ck, out_dir=tmp_path / "b")
    _, s2, _ = resume_experiment(ck, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert s1 == s2


def test_same_config_twice_is_byte_identical(tmp_path):
    cfg = load_config("fig12a_recall_vs_c", SMALL["fig12a_recall_vs_c"])
    run_experiment(cfg, out_dir=tmp_path / "a")
    run_experiment(cfg, out_dir=tmp_path / "b")
    for f in ("metrics.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_zero_unit_checkpoint_is_noop(tmp_path):
    cfg = load_config("theory_fig8_grid", SMALL["theory_fig8_grid"])
    ck = tmp_path / "ck.npz"
    done, _, exp = run_experiment(cfg, stop_after=0, checkpoint=ck)
    assert not done and exp.next_unit == 0
    _, s2, _ = resume_experiment(ck, out_dir=tmp_path / "b")
    _, s1, _ = run_experiment(cfg, out_dir=tmp_path / "a")
    assert s1 == s2


def test_resume_rejects_other_config_and_tampering(tmp_path):
    cfg = load_config("theory_fig8_grid", SMALL["theory_fig8_grid"])
    ck = tmp_path / "ck.npz"
    run_experiment(cfg, stop_after=1, checkpoint=ck)
    other = load_config("theory_fig8_grid", SMALL["theory_fig8_grid"] + ["theory.c=8"])
    with pytest.raises(ConfigError):
        Experiment.from_checkpoint(ck, other)

    with np.load(ck) as z:
        arrays = {k: z[k] for k in z.files}
    header = json.loads(bytes(arrays["__meta__"]).decode())
    header["config_hash"] = "0" * 64
    arrays["__meta__"] = np.frombuffer(json.dumps(header).encode(), np.uint8)
    bad = tmp_path / "bad.npz"
    np.savez(bad, **arrays)
    with pytest.raises(ConfigError):
        Experiment.from_checkpoint(bad)

    header["version"] = 99
    arrays["__meta__"] = np.frombuffer(json.dumps(header).encode(), np.uint8)
    np.savez(bad, **arrays)
    with pytest.raises(VersionMismatch):
        Experiment.from_checkpoint(bad)

    junk = tmp_path / "junk.npz"
    junk.write_bytes(b"not a checkpoint")
    with pytest.raises(CorruptState):
        Experiment.from_checkpoint(junk)


def test_summary_fields(tmp_path):
    _, s, _ = run_experiment(load_config("train_compare_1000x", SMALL["train_compare_1000x"]),
                             out_dir=tmp_path)
    for key in ("CAFE_loss", "Hash_loss", "loss_wins", "eps_wins", "per_seed", "budget_bytes", "config_hash"):
        assert key in s
    assert json.loads((tmp_path / "summary.json").read_text()) == json.loads(json.dumps(s))


def test_cli_run_resume(tmp_path, capsys):
    ov = sum((["--set", o] for o in SMALL["fig17cd_drift_recall"]), [])
    ck = tmp_path / "ck.npz"
    assert main(["run", "fig17cd_drift_recall", *ov, "--output", str(tmp_path / "o"),
                 "--checkpoint", str(ck), "--stop-after", "3", "--quiet"]) == 0
    assert "stopped at unit 3" in capsys.readouterr().out
    assert main(["resume", str(ck), "--output", str(tmp_path / "o"), "--quiet"]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["completed_units"] == summary["units"] == 8


def test_cli_config_file_and_env(tmp_path, monkeypatch, capsys):
    path = tmp_path / "t.ini"
    path.write_text("[experiment]\nkind = theory_grid\n[theory]\ngamma = 0.1\nz = 1.1\nw = 100\nc = 4\n")
    monkeypatch.setenv("HOTEMBED_OUTPUT_DIR", str(tmp_path / "env"))
    monkeypatch.setenv("HOTEMBED_THREADS", "1")
    assert main(["run", str(path), "--quiet"]) == 0
    assert (tmp_path / "env" / "metrics.csv").exists()
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\nname = x\n")
    assert main(["run", str(bad), "--quiet"]) == 2
    assert "experiment.kind" in capsys.readouterr().err


def test_cli_theory_and_bench(capsys):
    assert main(["theory", "optimal-c", "--z", "1.05,1.1"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[1].startswith("1.05,21.0") and out[2].startswith("1.1,11.0")
    assert main(["theory", "grid", "--gamma", "0.5", "--z", "1.1", "--w", "100", "--c", "4"]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0].startswith("gamma,z,w,c") and len(rows) == 2
    assert main(["bench", "throughput", "--c", "4,8", "--w", "32", "--ops", "1000", "--repeats", "1"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 3
