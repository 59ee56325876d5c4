import json

import pytest
import yaml

from ramt.cli import main
from ramt.config import ConfigError, config_from_dict, parse_config


def write_yaml(path, raw):
    path.write_text(yaml.safe_dump(raw))
    return path


def test_defaults():
    cfg = config_from_dict({"condition": "text_only"})
    assert cfg.train.batch_size == 32 and cfg.train.learning_rate == 0.001 and cfg.train.dropout == 0.3
    assert cfg.train.max_epochs == 15 and cfg.train.patience == 3 and cfg.train.seeds == [1, 2, 3, 4, 5]
    assert (cfg.retrieval.m, cfg.retrieval.m_prime, cfg.retrieval.o) == (5, 10, 128)
    assert cfg.dims.embed == 128 and cfg.dims.hidden == 256 and cfg.dims.feature_dim == 1024


@pytest.mark.parametrize("raw, key", [
    ({}, "condition"),
    ({"condition": "nope"}, "condition"),
    ({"condition": "text_only", "train": {"learning_rat": 0.1}}, "train.learning_rat"),
    ({"condition": "text_only", "train": {"batch_size": "big"}}, "train.batch_size"),
    ({"condition": "text_only", "dims": {"hidden": 1.5}}, "dims.hidden"),
    ({"condition": "text_only", "retrieval": {"backend": {"kind": "bing"}}}, "retrieval.backend"),
    ({"condition": "image_filter", "retrieval": {"m": 5, "m_prime": 4}}, "retrieval.m_prime"),
    ({"condition": "supplementary_text"}, "retrieval.text_store"),
    ({"condition": "text_only", "train": {"patience": 0}}, "train"),
])
def test_config_errors_name_the_key(raw, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        config_from_dict(raw)


def test_m_prime_equal_to_m_is_allowed():
    assert config_from_dict({"condition": "image_filter", "retrieval": {"m": 5, "m_prime": 5}}).retrieval.m_prime == 5


def test_parse_config_resolves_paths_and_overrides(tmp_path):
    p = write_yaml(tmp_path / "c.yaml", {"condition": "text_only", "data": {"train_src": "d/train.en"}})
    cfg = parse_config(p, {"train.max_epochs": 2, "condition": "blank_images"})
    assert cfg.data.train_src == str(tmp_path / "d/train.en")
    assert cfg.train.max_epochs == 2 and cfg.condition == "blank_images"
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "missing.yaml")


def test_cli_evaluate(tmp_path, capsys):
    (tmp_path / "h.txt").write_text("a b c d\n")
    (tmp_path / "r.txt").write_text("a b c d e\n")
    assert main(["evaluate", str(tmp_path / "h.txt"), str(tmp_path / "r.txt")]) == 0
    assert "BLEU 77.88" in capsys.readouterr().out


def test_cli_stats(tmp_path, capsys):
    lines = [{"pair_id": 0, "keyword_labels": ["entity", "non-entity"], "image_labels": ["ok", "ok", "noise"]}]
    (tmp_path / "l.jsonl").write_text("".join(json.dumps(r) + "\n" for r in lines))
    assert main(["stats", str(tmp_path / "l.jsonl")]) == 0
    out = capsys.readouterr().out
    assert "half_or_more_nonentity_keywords\t1" in out and "half_or_more_noise_images\t0" in out


def test_cli_gradcheck(capsys):
    assert main(["gradcheck"]) == 0
    assert "ok, tolerance 0.0001" in capsys.readouterr().out


def test_cli_bad_config(tmp_path, capsys):
    p = write_yaml(tmp_path / "c.yaml", {"condition": "text_only", "train": {"epochs": 3}})
    assert main(["train", str(p)]) == 2
    assert "train.epochs: unknown key" in capsys.readouterr().err


def test_cli_train_and_table(tmp_path, toy_config, capsys):
    p = write_yaml(tmp_path / "c.yaml", toy_config("retrieved_images"))
    out_dir = tmp_path / "run"
    assert main(["train", str(p), "--seeds", "1", "--output-dir", str(out_dir), "--set", "train.max_epochs=1"]) == 0
    out = capsys.readouterr().out
    assert "retrieved_images\tseed 1" in out and "MMT with Retrieved Images" in out
    for name in ("manifest.json", "results.tsv", "table.md", "model.seed1.mmtc", "test.seed1.hyp", "train.seed1.tsv"):
        assert (out_dir / name).exists()
    assert main(["table", str(out_dir), str(out_dir / "results.tsv")]) == 0
    assert capsys.readouterr().out.count("MMT with Retrieved Images") == 2


def test_cli_missing_data_reports_stage(tmp_path, toy_config, capsys):
    raw = toy_config("text_only")
    raw["data"]["train_src"] = str(tmp_path / "absent.en")
    assert main(["train", str(write_yaml(tmp_path / "c.yaml", raw)), "--output-dir", str(tmp_path / "o")]) == 2
    assert "[load]" in capsys.readouterr().err
