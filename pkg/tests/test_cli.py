import csv
import hashlib
import json
from pathlib import Path

import pytest

from rbis_sim import config as configfile
from rbis_sim.cli import main
from rbis_sim.engine import ChannelConfig, NodeConfig, ScenarioConfig

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
RUN_FILES = {"offsets.csv", "skew.csv", "ground_truth.csv", "summary.json", "manifest.json"}


def write_config(tmp_path, text, name="scenario.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def calibrated_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("calibrated")
    assert main(["run", "--config", str(SCENARIOS / "calibrated.toml"), "--out", str(out)]) == 0
    return out


def test_run_writes_all_files(calibrated_run):
    assert {p.name for p in calibrated_run.iterdir()} >= RUN_FILES
    offsets = rows(calibrated_run / "offsets.csv")
    assert offsets[0] == ["k", "t_m_us", "t_s_us", "theta_hat_us", "theta_filtered_us"]
    assert len(offsets) - 1 == 6000
    assert rows(calibrated_run / "skew.csv")[0] == ["k", "gamma_hat"]
    assert rows(calibrated_run / "ground_truth.csv")[0] == ["n", "theta_true_us"]
    # timestamps are plain integers
    assert all(int(x) == int(float(x)) and "." not in x for r in offsets[1:50] for x in r)


def test_manifest_checksums_match(calibrated_run):
    manifest = json.loads((calibrated_run / "manifest.json").read_text())
    assert manifest["seed"] == 42
    for name, entry in manifest["files"].items():
        data = (calibrated_run / entry["path"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == entry["sha256"], name
    # the manifest's config alone reproduces the scenario
    original = configfile.load(SCENARIOS / "calibrated.toml")
    assert configfile.to_flat(configfile.parse_flat(manifest["config"])) == manifest["config"]
    assert manifest["config"] == configfile.to_flat(original)


def test_summary_document(calibrated_run):
    summary = json.loads((calibrated_run / "summary.json").read_text())
    assert summary["counters"]["pairs"] == 6000
    assert set(summary["ground_truth"]["coverage"]) == {"1", "2", "3"}
    assert set(summary["ground_truth"]["within_band"]) == {"15", "22", "30"}
    assert summary["estimate_residual"]["count"] == 6000


def test_seed_override_is_reproducible(tmp_path):
    cfg = write_config(tmp_path, "num_beacons = 200\nchannel.jitter = \"gaussian\"\nchannel.jitter_us = 3.0\n")
    outs = [tmp_path / "a", tmp_path / "b", tmp_path / "c"]
    assert main(["run", "--config", cfg, "--out", str(outs[0]), "--seed", "7"]) == 0
    assert main(["run", "--config", cfg, "--out", str(outs[1]), "--seed", "7"]) == 0
    assert main(["run", "--config", cfg, "--out", str(outs[2]), "--seed", "8"]) == 0
    m = [json.loads((o / "manifest.json").read_text()) for o in outs]
    assert m[0] == m[1]
    assert m[0]["seed"] == 7
    assert m[0]["files"]["offsets.csv"] != m[2]["files"]["offsets.csv"]


@pytest.mark.parametrize(
    "text",
    [
        "num_beacons = [unterminated\n",
        "channel.loss_prob = 0.1\nchannel.los_prob = 0.2\n",
        "beacon_interval_us = 0\n",
        "channel.loss_prob = 1.5\n",
        "estimator.window = \"eight\"\n",
        "slave.skew_ppm = \"fast\"\n",
    ],
)
def test_bad_config_exits_2_without_outputs(tmp_path, capsys, text):
    out = tmp_path / "out"
    assert main(["run", "--config", write_config(tmp_path, text), "--out", str(out)]) == 2
    assert not out.exists()
    assert "config error" in capsys.readouterr().err


def test_missing_config_is_io_error(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path / "o")]) == 3


def test_report_outputs(calibrated_run):
    assert main(["report", "--in", str(calibrated_run), "--bin-width-us", "1"]) == 0
    for name in ("offset_hist.csv", "skew_hist.csv", "truth_hist.csv", "coverage.txt"):
        assert (calibrated_run / name).exists()
    hist = rows(calibrated_run / "truth_hist.csv")
    assert hist[0] == ["lower_edge_us", "count", "density"]
    edges = [float(r[0]) for r in hist[1:]]
    assert -30 <= min(edges) and max(edges) < 30
    assert sum(int(r[1]) for r in hist[1:]) == len(rows(calibrated_run / "ground_truth.csv")) - 1
    offset_edges = [float(r[0]) for r in rows(calibrated_run / "offset_hist.csv")[1:]]
    assert -35 <= min(offset_edges) and max(offset_edges) < 35
    assert "68.27" in (calibrated_run / "coverage.txt").read_text()


def test_report_empty_ground_truth(tmp_path, capsys):
    (tmp_path / "offsets.csv").write_text("k,t_m_us,t_s_us,theta_hat_us,theta_filtered_us\n")
    (tmp_path / "skew.csv").write_text("k,gamma_hat\n")
    (tmp_path / "ground_truth.csv").write_text("n,theta_true_us\n")
    assert main(["report", "--in", str(tmp_path)]) == 3
    assert "insufficient samples" in capsys.readouterr().err


def test_report_missing_or_corrupt_traces(tmp_path):
    assert main(["report", "--in", str(tmp_path)]) == 3
    (tmp_path / "offsets.csv").write_text("wrong,header\n")
    (tmp_path / "skew.csv").write_text("k,gamma_hat\n")
    (tmp_path / "ground_truth.csv").write_text("n,theta_true_us\n1,abc\n2,1\n")
    assert main(["report", "--in", str(tmp_path)]) == 3


def test_report_two_samples(tmp_path):
    (tmp_path / "offsets.csv").write_text("k,t_m_us,t_s_us,theta_hat_us,theta_filtered_us\n")
    (tmp_path / "skew.csv").write_text("k,gamma_hat\n")
    (tmp_path / "ground_truth.csv").write_text("n,theta_true_us\n1,-1\n2,1\n")
    assert main(["report", "--in", str(tmp_path)]) == 0
    text = (tmp_path / "coverage.txt").read_text()
    assert "mean_us=0 " in text
    assert "0.00+/-1.41" in text


def test_config_text_round_trip():
    cfg = ScenarioConfig(
        seed=11,
        num_beacons=123,
        followup_interval_us=204_800,
        master=NodeConfig(skew_ppm=-3.5),
        slaves=(NodeConfig(skew_ppm=2.0, initial_offset_us=40), NodeConfig(skew_ppm=-1.0, granularity_us=2)),
        channel=ChannelConfig(jitter="uniform", jitter_us=5.0, loss_prob=0.02, bias_us={"slave2": 4.0}),
    )
    again = configfile.loads(configfile.dumps(cfg))
    assert configfile.to_flat(again) == configfile.to_flat(cfg)
    assert again.slaves == cfg.slaves and again.channel == cfg.channel


def test_drawn_skew_survives_round_trip():
    # slave2 draws its skew even though the shared slave section fixes one
    cfg = ScenarioConfig(slaves=(NodeConfig(skew_ppm=5.0), NodeConfig()))
    again = configfile.loads(configfile.dumps(cfg))
    assert again.slaves == cfg.slaves
    assert configfile.loads('slave.skew_ppm = "drawn"\n').slaves[0].skew_ppm is None


def test_config_sections():
    cfg = configfile.loads(
        "slaves = 2\nslave.initial_offset_us = 10\nslave2.skew_ppm = 3.0\n"
        "clock.granularity_us = 2\nfollowup.base_delay_us = 250.0\nestimator.filter = \"kalman\"\n"
    )
    assert [s.initial_offset_us for s in cfg.slaves] == [10, 10]
    assert cfg.slaves[1].skew_ppm == 3.0 and cfg.slaves[0].skew_ppm is None
    assert cfg.master.granularity_us == 2
    assert cfg.followup_channel.base_delay_us == 250.0
    assert cfg.estimator.filter == "kalman"
