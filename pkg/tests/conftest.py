import json
from pathlib import Path

import numpy as np
import pytest

from mospc.cli import main
from mospc.model import Dense, FusionModel, Predictor, save_fusion, save_predictor

TINY_SYNTH = {"n_systems": 6, "utterances_per_system": 20, "feature_dim": 6, "seed": 11}
TINY_TRAIN = {"learning_rate": 0.01, "batch_size": 8, "max_epochs": 4, "patience": 2, "beta": 0.6, "seed": 3,
              "cmixup": {"bandwidth": 1.0, "alpha": 2.0}, "model": {"extractor_sizes": [8], "encoder_sizes": [8, 4]}}


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj), encoding="utf-8")
    return path


def make_synth(root: Path, synth=TINY_SYNTH) -> dict:
    cfg = write_json(root / "synth.json", synth)
    assert run_cli("synth", "--config", cfg, "--out", root / "data.csv", "--split", "0.7,0.15,0.15") == 0
    return {tag: root / f"data.{tag}.csv" for tag in ("train", "valid", "test")} | {"all": root / "data.csv"}


def make_oracle_checkpoint(root: Path, dim: int) -> Path:
    """Head-only predictor that returns feature 0, fused with weight 1 and bias 0."""
    w = np.zeros((1, dim))
    w[0, 0] = 1.0
    save_predictor(Predictor([], [], Dense(w, np.zeros(1))), root / "pairwise" / "predictor_0.json")
    save_fusion(FusionModel([1.0], 0.0), root / "fusion" / "fusion.json", ["../pairwise/predictor_0.json"])
    return root


def write_oracle_data(path: Path, labels, systems) -> Path:
    # feature 0 carries the label exactly
    lines = ["id,system_id,mos,f0,f1"]
    for i, (y, s) in enumerate(zip(labels, systems)):
        lines.append(f"u{i},{s},{y!r},{y!r},{0.5 * i!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def oracle_fixture(tmp_path):
    labels = [1.0, 1.5, 2.0, 2.25, 3.0, 3.5, 4.0, 4.75, 5.0, 2.5]
    systems = ["a", "a", "b", "b", "c", "c", "d", "d", "e", "e"]
    data = write_oracle_data(tmp_path / "oracle.csv", labels, systems)
    return make_oracle_checkpoint(tmp_path / "ckpt", 2), data


# -- acceptance summary -------------------------------------------------------

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or report.failed:
        name = report.nodeid.split("::")[-1]
        detail = dict(report.user_properties).get("detail", "")
        prev = _ACCEPTANCE.get(name)
        _ACCEPTANCE[name] = (report.passed and (prev is None or prev[0]), detail or (prev[1] if prev else ""))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda n: int(n.split("_")[2])):
        passed, detail = _ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
