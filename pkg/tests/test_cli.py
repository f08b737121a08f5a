import csv
import json

import pytest
import yaml

from toolrank.cli import main
from toolrank.config import ConfigError, load_config, stage_hashes
from toolrank.ensemble import load_ensemble

SMALL = {
    "data": {"synthetic": "segment", "synthetic_users": 30},
    "agent": {"epochs": 1, "sample_size": 20},
    "ensemble": {"epochs": 20},
    "eval": {"vdcg_cutoffs": [5]},
}


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return path


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("agent:\n  alpah: 0.1\n")
    with pytest.raises(ConfigError, match="agent.alpah"):
        load_config(path)


def test_unknown_key_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("sede: 3\n")
    code, _, err = run_cli(capsys, "pipeline", "--config", path)
    assert code == 2 and "unknown config key(s): sede" in err


def test_missing_data_is_a_config_error():
    with pytest.raises(ConfigError):
        load_config(None)


def test_inference_flags_keep_upstream_hashes(cfg_path):
    a = stage_hashes(load_config(cfg_path))
    b = stage_hashes(load_config(cfg_path, {"ablation.sc_mode": "exclusive"}))
    for stage in ("ingest", "train-tools", "optimize-agents"):
        assert a[stage] == b[stage]
    assert a["infer"] != b["infer"] and a["evaluate"] != b["evaluate"]


def test_evaluate_before_infer(cfg_path, tmp_path, capsys):
    code, _, err = run_cli(capsys, "evaluate", "--config", cfg_path, "--workdir", tmp_path / "w")
    assert code == 2 and "run infer first" in err


def test_pipeline_end_to_end(cfg_path, tmp_path, capsys):
    w = tmp_path / "w"
    code, out, _ = run_cli(capsys, "pipeline", "--config", cfg_path, "--workdir", w)
    assert code == 0
    report = {(r["metric"], r["cutoff"]) for r in csv.DictReader(open(w / "evaluate" / "report.csv"))}
    assert {("recall", "10"), ("ndcg", "20"), ("vdcg", "5")} <= report
    rows = list(csv.DictReader(open(w / "infer" / "agent.csv")))
    assert rows[0].keys() == {"user_id", "rank", "item_id", "score"}
    comparison = (w / "evaluate" / "comparison.csv").read_text()
    assert "tool_G" in comparison and "aggregate" in comparison

    code, out, _ = run_cli(capsys, "pipeline", "--config", cfg_path, "--workdir", w)
    assert code == 0 and out.count("up to date") == 5

    code, out, _ = run_cli(capsys, "verify", "--config", cfg_path, "--workdir", w)
    assert code == 0 and "verified" in out

    with open(w / "infer" / "agent.csv", "a") as fh:
        fh.write("tampered\n")
    code, out, _ = run_cli(capsys, "verify", "--config", cfg_path, "--workdir", w)
    assert code == 1 and "MISMATCH" in out and "agent.csv" in out

    # an inference flag reruns only infer and evaluate
    code, out, _ = run_cli(capsys, "pipeline", "--config", cfg_path, "--workdir", w, "--sc-mode", "exclusive")
    assert code == 0 and out.count("up to date") == 3
    meta = json.loads((w / "infer" / "manifest.json").read_text())
    assert meta["stage_hash"] == stage_hashes(load_config(cfg_path, {"ablation.sc_mode": "exclusive"}))["infer"]

    out_csv = tmp_path / "mem.csv"
    code, out, _ = run_cli(capsys, "export-memories", "--config", cfg_path, "--workdir", w, "--out", out_csv)
    assert code == 0
    mem = list(csv.DictReader(open(out_csv)))
    # agents exist only for the sampled users
    assert len(mem) == 20
    assert {"user_id", "m_G", "m_S", "m_M"} <= set(mem[0])


def test_single_stages_and_lr_ensemble(tmp_path, capsys):
    cfg = dict(SMALL, ensemble={"variant": "lr", "epochs": 20}, eval={"vdcg": False, "baselines": False})
    path = tmp_path / "lr.yaml"
    path.write_text(yaml.safe_dump(cfg))
    w = tmp_path / "w"
    for stage in ("ingest", "train-tools", "optimize-agents", "infer", "evaluate"):
        code, _, err = run_cli(capsys, stage, "--config", path, "--workdir", w)
        assert code == 0, err
    model = load_ensemble(w / "infer" / "ensemble.ckpt")
    assert model.variant == "lr" and model.params["v"].shape == (3,)
    h = model.loss_history
    assert all(b <= a for a, b in zip(h, h[1:]))
    assert "vdcg" not in (w / "evaluate" / "report.csv").read_text()


def test_replay_cache_reproduces_run(cfg_path, tmp_path, capsys):
    cache = tmp_path / "llm.jsonl"
    w1, w2 = tmp_path / "w1", tmp_path / "w2"
    assert run_cli(capsys, "pipeline", "--config", cfg_path, "--workdir", w1, "--llm-cache", cache)[0] == 0
    assert cache.stat().st_size > 0
    (tmp_path / "replay.yaml").write_text(yaml.safe_dump(dict(SMALL, llm={"backend": "replay"})))
    code, _, err = run_cli(capsys, "pipeline", "--config", tmp_path / "replay.yaml", "--workdir", w2,
                           "--llm-cache", cache, "--replay-only")
    assert code == 0, err
    assert (w1 / "infer" / "agent.csv").read_bytes() == (w2 / "infer" / "agent.csv").read_bytes()


def test_replay_without_cache_fails(tmp_path, capsys):
    path = tmp_path / "r.yaml"
    path.write_text(yaml.safe_dump(dict(SMALL, llm={"backend": "replay"})))
    w = tmp_path / "w"
    code, _, err = run_cli(capsys, "pipeline", "--config", path, "--workdir", w)
    assert code != 0 and "cache" in err


def test_synthesize(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "synthesize", "--kind", "block", "--users", "5", "--out", tmp_path / "b")
    assert code == 0 and "5 users" in out
    code, out, _ = run_cli(capsys, "synthesize", "--users", "12", "--out", tmp_path / "d")
    assert code == 0 and "12 users" in out
    header = (tmp_path / "d" / "interactions.csv").read_text().splitlines()[0]
    assert header.startswith("user_id")
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"data": {"interactions": str(tmp_path / "d" / "interactions.csv"),
                                            "items": str(tmp_path / "d" / "items.csv")}}))
    code, out, _ = run_cli(capsys, "ingest", "--config", cfg, "--workdir", tmp_path / "w")
    assert code == 0 and "12 users" in out


def test_bad_stage_name(cfg_path, tmp_path, capsys):
    code, _, err = run_cli(capsys, "pipeline", "bogus", "--config", cfg_path, "--workdir", tmp_path / "w")
    assert code != 0
