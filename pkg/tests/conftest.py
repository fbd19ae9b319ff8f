import json

import pytest

from flexkin import io as fio
from flexkin import synthstudio as studio

TINY_SCENE = {"T": 12, "K": 3}
TINY_FUSION = {"channels": 8, "heads": 2, "disc_channels": 4}


@pytest.fixture(scope="session")
def standard_records():
    """The standard desk dataset, generated once per session."""
    data = studio.gen_dataset(studio.standard_config(), studio.STANDARD_SPLITS, studio.STANDARD_SEED)
    return {k: [fio.record_from_observation(o) for o in v] for k, v in data.items()}


@pytest.fixture()
def tiny_dataset(tmp_path):
    from flexkin.cli import main

    cfg = tmp_path / "scene.json"
    cfg.write_text(json.dumps({"scene": TINY_SCENE, "splits": {"train": 4, "test": 2}, "seed": 3}))
    out = tmp_path / "data"
    assert main(["synth", "--config", str(cfg), "--out", str(out)]) == 0
    return out


@pytest.fixture()
def tiny_train_config(tmp_path):
    path = tmp_path / "train.json"
    path.write_text(json.dumps({"epochs": 1, "batch_size": 2, "seed": 42, "fusion": TINY_FUSION}))
    return path


_CRITERIA = []


@pytest.fixture()
def criterion():
    """Record one acceptance criterion outcome; printed in the terminal summary."""
    def report(number, title, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _CRITERIA.append((number, line))
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
