import json

import pytest

from uvm_oversub.cli import main, read_kv
from uvm_oversub.memsim import ConfigError


def test_simulate_grid(tmp_path, capsys):
    out = tmp_path / "res"
    rc = main([
        "simulate", "--trace", "synth:RandomReuse:128:1024:1", "--level", "1.25", "--level", "1.5",
        "--policy", "tree+lru", "--policy", "demand+lru", "--policy", "demand+belady", "--out", str(out),
    ])
    assert rc == 0
    assert len(list(out.glob("*_*.json"))) == 6
    assert (out / "summary.json").exists()
    csv = capsys.readouterr().out
    assert csv.splitlines()[0].startswith("trace,policy,pages_thrashed")
    assert len(csv.splitlines()) == 7


def test_simulate_from_config_file(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(
        "traces = synth:LinearReuse:64:512:0\n"
        "levels = 1.25\n"
        "policies = demand+lru  # one cell\n"
        "timing.prediction_overhead_us = 5\n"
        "engine.flush_period = 2\n"
        f"output_dir = {tmp_path / 'o'}\n"
    )
    assert main(["simulate", "--config", str(cfg)]) == 0
    doc = json.loads(next((tmp_path / "o").glob("LinearReuse*.json")).read_text())
    assert doc["timing"]["prediction_overhead_us"] == 5.0


def test_prefetch_evict_flags(tmp_path):
    rc = main(["simulate", "--trace", "synth:Random:64:300:0", "--level", "1.25",
               "--prefetch", "engine", "--evict", "engine", "--predictor", "oracle", "--out", str(tmp_path)])
    assert rc == 0
    assert list(tmp_path.glob("*engine+engine-oracle*.json"))


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "--trace", "synth:Random:64:300:0", "--policy", "belady+tree"],
        ["simulate", "--trace", "synth:Nope:64:300:0"],
        ["simulate", "--trace", "no/such/file.trace"],
        ["simulate", "--trace", "synth:Random:64:300:0", "--level", "0.9"],
        ["synth-trace", "--pattern", "Sideways", "--pages", "4", "--accesses", "4", "--out", "x"],
        ["footprint", "--params-mb", "1"],
        ["report", "no/such/dir"],
    ],
)
def test_configuration_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1


def test_unknown_config_key_exits_1(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert main(["simulate", "--config", str(cfg)]) == 1


def test_runtime_failure_exits_2(tmp_path):
    pc = tmp_path / "p.cfg"
    pc.write_text("d_model = 8\nn_heads = 2\nd_ff = 8\nepochs = 1\n")
    # the trace holds fewer than two training groups
    rc = main(["eval-predictor", "--trace", "synth:Random:32:100:0", "--group-size", "200",
               "--predictor-config", str(pc)])
    assert rc == 2


def test_synth_and_eval_round_trip(tmp_path, capsys):
    path = tmp_path / "t.trace"
    assert main(["synth-trace", "--pattern", "LinearReuse", "--pages", "64", "--accesses", "600",
                 "--seed", "2", "--out", str(path)]) == 0
    pc = tmp_path / "p.cfg"
    pc.write_text("d_model = 8\nn_heads = 2\nd_ff = 8\n")
    capsys.readouterr()
    out = tmp_path / "acc.json"
    assert main(["eval-predictor", "--trace", str(path), "--group-size", "200", "--epochs", "1",
                 "--predictor-config", str(pc), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["mode"] == "online" and len(doc["group_accuracy"]) == 2


def test_footprint_row(capsys):
    assert main(["footprint", "--params-mb", "0.41", "--acti-mb", "1.46", "--patterns", "3"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["total_mb"] == 6.84
    assert doc["frequency_table_bytes"] == 18432


def test_footprint_of_model(capsys):
    assert main(["footprint", "--patterns", "6", "--classes", "64"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["total_bytes"] == (doc["params_bytes"] * 2 + doc["activation_bytes"]) * 6


def test_report_rebuilds_summary(tmp_path, capsys):
    out = tmp_path / "res"
    main(["simulate", "--trace", "synth:RandomReuse:64:512:1", "--level", "1.25",
          "--policy", "tree+lru", "--policy", "demand+lru", "--out", str(out)])
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert text == (out / "summary.csv").read_text()


def test_read_kv_rejects_bare_words(tmp_path):
    p = tmp_path / "x.cfg"
    p.write_text("just words\n")
    with pytest.raises(ConfigError):
        read_kv(p)
