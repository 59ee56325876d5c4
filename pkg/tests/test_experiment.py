import pytest
import torch

from ramt.config import CONDITIONS, config_from_dict
from ramt.experiment import RunManifest, comparison_table, prepare_data, run_experiment
from ramt.model import TranslationModel
from ramt.training import train_model


@pytest.mark.parametrize("condition", CONDITIONS)
def test_every_condition_runs(condition, toy_config, tmp_path):
    raw = toy_config(condition, max_epochs=1)
    raw["output_dir"] = str(tmp_path / condition)
    manifest, table = run_experiment(config_from_dict(raw), seeds=[1])
    assert len(manifest.seeds) == 1 and 0.0 <= manifest.seeds[0].test_bleu <= 1.0
    assert set(manifest.timings) >= {"load", "querygen", "retrieval", "train", "evaluate"}
    assert "| Condition" in table


def test_parameter_shapes_match_across_conditions(toy_config):
    cfg = config_from_dict(toy_config())
    shapes = {c: {n: p.shape for n, p in TranslationModel(20, 20, cfg.dims, c).named_parameters()} for c in CONDITIONS}
    assert all(s == shapes["text_only"] for s in shapes.values())


def _train(toy_config, condition, seed=1):
    cfg = config_from_dict(toy_config(condition, dropout=0.3))
    d = prepare_data(cfg)
    return train_model(d.train, d.dev, condition, cfg.train, seed, src_vocab=d.src_vocab, tgt_vocab=d.tgt_vocab,
                       dims=cfg.dims, train_visual=d.visual["train"], dev_visual=d.visual["dev"])


def test_blank_images_equal_text_only_bitwise(toy_config):
    blank, text = _train(toy_config, "blank_images"), _train(toy_config, "text_only")
    assert blank.losses == text.losses and blank.best_dev_bleu == text.best_dev_bleu
    for (n, a), b in zip(blank.model.state_dict().items(), text.model.state_dict().values()):
        assert torch.equal(a, b), n


def test_retrieved_images_differ_from_text_only(toy_config):
    assert _train(toy_config, "retrieved_images").losses != _train(toy_config, "text_only").losses


def test_runs_are_reproducible_and_manifest_rerenders(toy_config, tmp_path):
    tables = []
    for name in ("a", "b"):
        raw = toy_config("image_filter")
        raw["output_dir"] = str(tmp_path / name)
        manifest, table = run_experiment(config_from_dict(raw))
        tables.append(table)
    assert tables[0] == tables[1]
    a, b = (RunManifest.load(tmp_path / n / "manifest.json") for n in ("a", "b"))
    assert [s.test_bleu for s in a.seeds] == [s.test_bleu for s in b.seeds]
    assert (tmp_path / "a" / "model.seed1.mmtc").read_bytes() == (tmp_path / "b" / "model.seed1.mmtc").read_bytes()
    assert a.experiment_config.condition == "image_filter"
    assert comparison_table([a]) == tables[0]
    assert (tmp_path / "a" / "queries.train.jsonl").exists() and (tmp_path / "a" / "vocab.src.tsv").exists()
