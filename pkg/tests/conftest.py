from pathlib import Path

import pytest
from hypothesis import settings

from simdiff.config import RunConfig

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

TINY_RUN = [
    "resolution=8", "channels=1", "num_classes=2", "base_channels=8", "emb_channels=16",
    "channel_multiplier=1,2", "num_res_blocks=1", "num_transformer_blocks=1", "num_heads=2",
    "expansion_factor=2", "dropout_from_resolution=8", "batch_size=4", "learning_rate=1e-3",
    "warmup_steps=5", "ema_decay=0.9", "checkpoint_every=0", "schedule=shifted", "noise_d=4",
    "sample_steps=8",
]


def tiny_run_config(*extra) -> RunConfig:
    return RunConfig().apply_overrides(TINY_RUN + list(extra))


@pytest.fixture
def tiny_cfg():
    return tiny_run_config()


REPO = Path(__file__).resolve().parents[1]
TOY_CFG = REPO / "configs" / "toy.cfg"

# numbers the acceptance suite reports for comparison, printed after the run
REPORT: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if REPORT:
        terminalreporter.section("acceptance measurements")
        for key, value in REPORT.items():
            terminalreporter.write_line(f"{key}: {value}")
