from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

import pytest

from ramt.synthetic import build_dataset

TINY_DIMS = {"embed": 8, "hidden": 8, "dec_hidden": 8, "feature_dim": 4, "grid_rows": 2, "key_dim": 4, "region_attn_dim": 4}


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    paths = build_dataset(root, n_train=12, n_dev=6, n_test=6, m=2, rows=2, feature_dim=4, n_noise=2)
    (root / "texts.txt").write_text("the big bat moves .\na small crane rests .\nthe old seal waits .\n")
    paths["root"] = str(root)
    return paths


@pytest.fixture
def toy_config(toy_dataset):
    """Raw config dict for a fast run on the toy dataset."""

    def make(condition="retrieved_images", **train):
        root = toy_dataset["root"]
        return {
            "condition": condition,
            "data": {k: toy_dataset[k] for k in ("train_src", "train_tgt", "dev_src", "dev_tgt", "test_src", "test_tgt")},
            "retrieval": {
                "m": 2, "m_prime": 4, "o": 2,
                "backend": {"kind": "fixture", "fixture_dir": f"{root}/fixtures/{{split}}"},
                "scorer": f"{root}/scores.{{split}}.jsonl",
                "text_store": f"{root}/texts.txt",
            },
            "dims": dict(TINY_DIMS),
            "train": {"batch_size": 4, "learning_rate": 0.01, "dropout": 0.0, "max_epochs": 2, "patience": 2, "seeds": [1, 2], **train},
        }

    return make


def pytest_terminal_summary(terminalreporter):
    from tests.test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
