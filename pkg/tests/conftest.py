import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from evfocal.config import RunConfig, from_dict  # noqa: E402
from evfocal.scenegen import CameraParams  # noqa: E402


def tiny_config(**overrides) -> RunConfig:
    """A 16x16, 8-step, two-level configuration that runs in well under a second."""
    cam = CameraParams.desk(16)
    doc = RunConfig().to_dict()
    doc["camera"] = RunConfig(camera=cam).to_dict()["camera"]
    doc["scene"].update(focus_steps=8, n_layers=2)
    doc["net"].update(image_size=16, depth_levels=2, base_channels=2)
    doc["train"].update(epochs=1, lr=1e-3)
    doc["finetune"].update(epochs=1, lr=1e-3)
    doc["dataset"].update(n_train=2, n_val=1, n_test=1, n_finetune=1)
    doc["seeds"] = [0]
    cfg = from_dict(doc)
    return cfg.replace(**overrides) if overrides else cfg


@pytest.fixture
def tiny():
    return tiny_config()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: long-running end-to-end acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
