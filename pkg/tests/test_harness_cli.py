import csv
import json

import pytest

from cdfl import cli, dataio
from cdfl.harness import (ConfigError, ExperimentConfig, connected_clients, desk_config, report, rounds_to_target,
                          run_experiment)


def tiny(scheme="cdfl", **kw) -> dict:
    d = {
        "scheme": scheme, "rounds": 2, "master_seed": 1, "batch_size": 8, "local_epochs": 1,
        "server_epochs": 1, "solo_epochs": 2, "m": 2,
        "dataset": {"synthetic": {"num_classes": 4, "samples_per_class": 15, "noise_level": 0.3, "seed": 1}},
        "partition": {"num_clients": 4, "alpha": 0.5, "seed": 1},
        "arch": {"conv_channels": [4], "embed_dim": 8},
    }
    d.update(kw)
    return d


def test_config_round_trip():
    cfg = ExperimentConfig.from_dict(tiny(connected_override={"2": [0, 1]}))
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg and again.connected_override == {2: [0, 1]}


@pytest.mark.parametrize("bad, path", [
    ({"rounds": "ten"}, "rounds"),
    ({"partition": {"alpha": 0}}, "partition.alpha"),
    ({"loss": {"tau": -1}}, "loss.tau"),
    ({"colour": 1}, "colour"),
    ({"dataset": {"path": "x", "synthetic": {}}}, "dataset"),
    ({"connected_override": {"1": [9]}}, "connected_override.1"),
])
def test_config_errors_name_the_field(bad, path):
    with pytest.raises(ConfigError) as ei:
        ExperimentConfig.from_dict(tiny(**bad))
    assert str(ei.value).startswith(path + ":")


def test_desk_config_shape():
    cfg = desk_config("fedavg", 3)
    assert cfg.partition.num_clients == 8 and cfg.partition.alpha == 0.5 and cfg.rounds == 10
    assert cfg.dataset.synthetic.num_classes == 4


def test_connected_clients():
    cfg = ExperimentConfig.from_dict(tiny(participation=0.5, connected_override={"2": [3]}))
    assert len(connected_clients(cfg, 1)) == 2
    assert connected_clients(cfg, 1) == connected_clients(cfg, 1)
    assert connected_clients(cfg, 2) == (3,)


def test_rounds_to_target():
    assert rounds_to_target([0.1, 0.5, 0.9, 0.95], 0.9) == 2
    assert rounds_to_target([0.1, 0.2], 0.9) is None
    with pytest.raises(ValueError):
        rounds_to_target([], 0.5)


@pytest.mark.parametrize("scheme", ["cdfl", "fedavg", "fedprox", "solo"])
def test_every_scheme_runs(scheme, tmp_path):
    res = run_experiment(ExperimentConfig.from_dict(tiny(scheme)), tmp_path)
    want_rounds = 2 if scheme == "solo" else 3
    assert len(res.metrics) == want_rounds and res.metrics[0].round == 0
    assert all(0 <= m.mean_acc <= 1 for m in res.metrics)
    rows = list(csv.DictReader(open(tmp_path / "rounds.csv")))
    assert len(rows) == want_rounds
    assert (tmp_path / "checkpoints" / "global.ckpt").exists()
    if scheme == "cdfl":
        assert (tmp_path / "checkpoints" / "server" / "server_state.json").exists()
        assert res.metrics[1].uplink_images > 0
    if scheme == "solo":
        assert res.ledger.total() == 0


def test_cli_end_to_end(tmp_path, capsys):
    data = tmp_path / "data"
    assert cli.main(["gen-data", str(data), "--samples-per-class", "10", "--noise", "0.3"]) == 0
    assert cli.main(["partition", str(data), "-n", "3", "--alpha", "0.5"]) == 0
    assert len(dataio.read_partition(dataio.load_dataset(data), data / "partition.csv")) == 3
    cfg = tiny("fedavg", rounds=1)
    cfg["dataset"] = {"path": str(data)}
    cfg["partition"] = {"num_clients": 3, "file": str(data / "partition.csv")}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert cli.main(["run", str(tmp_path / "c.json"), "--out", str(tmp_path / "run")]) == 0
    out_csv = tmp_path / "report.csv"
    assert cli.main(["report", str(tmp_path / "run"), str(tmp_path / "missing"), "--out", str(out_csv)]) == 0
    rows = list(csv.DictReader(open(out_csv)))
    assert len(rows) == 1 and rows[0]["scheme"] == "fedavg"


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scheme": "magic"}))
    assert cli.main(["run", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "scheme" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["gradcheck", "--networks", "2"]) == 0


def test_report_in_memory(tmp_path):
    run_experiment(ExperimentConfig.from_dict(tiny("fedavg", rounds=1)), tmp_path / "a")
    rows = report([tmp_path / "a"], target=0.0)
    assert rows[0]["rounds_to_target"] == 0 and rows[0]["total_uplink"] > 0
