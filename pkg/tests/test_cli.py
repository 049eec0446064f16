from __future__ import annotations

import json
from pathlib import Path

import pytest
import yaml
from click.testing import CliRunner

from graphrag_irl.cli import main
from graphrag_irl.config import ExperimentConfig, from_dict, load_config, parse_override, reference
from graphrag_irl.errors import ConfigError

from conftest import TOY_OVERRIDES, synthetic_movielens

REPO = Path(__file__).resolve().parents[1]


def _args(toy_dir, out, *rest):
    sets = []
    for k, v in TOY_OVERRIDES.items():
        if k == "seeds":
            continue
        sets += ["--set", f"{k}={v}"]
    return [*sets, "--data", str(toy_dir), "--output-dir", str(out), "--seeds", "0", *rest]


def _run(args):
    return CliRunner().invoke(main, args, catch_exceptions=False)


# ---------------------------------------------------------------------------
# config

def test_defaults_round_trip_through_yaml():
    cfg = ExperimentConfig()
    again = from_dict(yaml.safe_load(cfg.dump()))
    assert again == cfg and again.hash() == cfg.hash()


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="trian"):
        from_dict({"trian": {}})
    with pytest.raises(ConfigError, match="lrr"):
        from_dict({"train": {"lrr": 1}})
    with pytest.raises(ConfigError):
        from_dict({"train": {"dtype": "float16"}})


def test_hash_ignores_output_location_only():
    a = load_config(None, {"output_dir": "x", "jobs": 3})
    b = load_config(None, {"output_dir": "y"})
    assert a.hash() == b.hash()
    c = load_config(None, {"rerank.shortlist_n": 10})
    assert c.hash() != a.hash() and c.train_hash() == a.train_hash()
    assert load_config(None, {"train.lr": 0.01}).train_hash() != a.train_hash()


def test_overrides_parse_yaml_values():
    assert parse_override("train.lr=0.01") == ("train.lr", 0.01)
    assert parse_override("seeds=[1, 2]") == ("seeds", [1, 2])
    with pytest.raises(ConfigError):
        parse_override("novalue")


def test_shipped_config_loads():
    cfg = load_config(REPO / "configs" / "movielens.yaml")
    assert cfg.seeds == [0, 1, 2] and cfg.rerank.shortlist_n == 20 and cfg.train.hidden == 64
    assert [p.name for p in cfg.rerank.providers] == ["oracle", "adversary", "openai-compatible"]
    assert cfg.rerank.alpha_grid == [round(0.1 * k, 1) for k in range(11)]


def test_reference_lists_every_section():
    text = reference()
    for key in ("dataset:", "min_concept_freq: 5", "k_recent: 10", "patience: 5", "alpha_grid:", "providers:",
                "seeds:"):
        assert key in text
    assert yaml.safe_load(text)["train"]["lr"] == 0.001


# ---------------------------------------------------------------------------
# commands

def test_show_config_flags_win(tmp_path):
    cfg_file = tmp_path / "c.yaml"
    cfg_file.write_text("train:\n  lr: 0.5\noutput_dir: from_file\n")
    res = _run(["-c", str(cfg_file), "--set", "train.lr=0.25", "--output-dir", "flag", "show-config"])
    assert res.exit_code == 0
    shown = yaml.safe_load(res.output.split("\n", 1)[1])
    assert shown["train"]["lr"] == 0.25 and shown["output_dir"] == "flag"
    assert res.output.startswith("# config hash ")


def test_prepare_is_idempotent(toy_dir, tmp_path):
    out = tmp_path / "out"
    res = _run(_args(toy_dir, out, "prepare"))
    assert res.exit_code == 0 and "users" in res.output
    (d,) = list(out.glob("prepare-*"))
    first = {p.name: p.read_bytes() for p in d.iterdir()}
    assert {"stats.json", "split.tsv", "candidates_val.tsv", "candidates_test.tsv"} <= set(first)
    assert _run(_args(toy_dir, out, "prepare")).exit_code == 0
    assert {p.name: p.read_bytes() for p in d.iterdir()} == first


def test_missing_data_exit_code(tmp_path):
    res = _run(["--data", str(tmp_path / "absent"), "--output-dir", str(tmp_path / "o"), "prepare"])
    assert res.exit_code == 2 and "ratings.csv" in res.output


def test_bad_config_exit_code(tmp_path):
    res = _run(["--set", "train.bogus=1", "show-config"])
    assert res.exit_code == 1 and "bogus" in res.output
    res = _run(["-c", str(tmp_path / "missing.yaml"), "show-config"])
    assert res.exit_code == 1


def test_build_graph_sweep_and_empty_tags(tmp_path):
    root = synthetic_movielens(tmp_path / "ml")
    res = _run(_args(root, tmp_path / "out", "build-graph", "--sweep"))
    assert res.exit_code == 0
    assert res.output.startswith("threshold\tconcepts\n2\t")
    (d,) = list((tmp_path / "out").glob("graph-*"))
    stats = json.loads((d / "graph_stats.json").read_text())
    assert stats["nodes"]["concept"] > 0
    (root / "tags.csv").write_text("userId,movieId,tag,timestamp\n")
    res = _run(_args(root, tmp_path / "out2", "build-graph"))
    assert res.exit_code == 0 and "/ 0 concepts" in res.output


def test_train_evaluate_rerank_pipeline(toy_dir, tmp_path):
    out = tmp_path / "out"
    res = _run(_args(toy_dir, out, "train", "--linear"))
    assert res.exit_code == 0 and "irl_linear+graph" in res.output
    (run_dir,) = list(out.glob("run-*"))
    assert (run_dir / "seed-0" / "model_irl_linear+graph.npz").exists()
    assert (run_dir / "seed-0" / "training_log_irl_linear+graph.csv").exists()

    res = _run(_args(toy_dir, out, "evaluate", "--baselines"))
    assert res.exit_code == 0
    for row in ("random", "popularity", "supervised+graph", "irl_mlp+graph"):
        assert row in res.output
    assert "recall@N" in res.output
    manifest = json.loads((run_dir / "experiment_manifest.json").read_text())
    assert manifest["config_hash"] in (run_dir / "report.txt").read_text()

    res = _run(_args(toy_dir, out, "tune-alpha", "--provider", "oracle"))
    assert res.exit_code == 0
    lines = res.output.strip().splitlines()
    assert len(lines) == 12 and lines[-1].startswith("alpha* = ")

    res = _run(_args(toy_dir, out, "--set", "rerank.providers=[{name: adv, kind: adversary}]", "rerank"))
    assert res.exit_code == 0 and "alpha* = 0.0" in res.output


def test_provider_error_exit_code(toy_dir, tmp_path):
    args = _args(toy_dir, tmp_path / "out", "--set", "rerank.providers=[{name: x, kind: http}]", "rerank")
    res = _run(args)
    assert res.exit_code == 4 and "endpoint" in res.output


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_code(toy_dir, tmp_path):
    args = _args(toy_dir, tmp_path / "out", "--set", "train.lr=1e300", "--set", "train.optimizer=sgd", "train")
    res = _run(args)
    assert res.exit_code == 3 and "non-finite" in res.output


def test_config_reference_command():
    res = _run(["config-reference"])
    assert res.exit_code == 0 and res.output == reference()

