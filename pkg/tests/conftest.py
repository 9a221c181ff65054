from __future__ import annotations

from pathlib import Path

import pytest

from hat.data import SynthConfig, generate_synthetic, split_dataset
from hat.model import HatConfig

ROOT = Path(__file__).resolve().parents[1]
DEFAULT_CONFIG = ROOT / "configs" / "default.yaml"
SMALL_CONFIG = ROOT / "configs" / "small.yaml"

SMALL_SYNTH = dict(
    n_shoppers=6,
    n_style_clusters=2,
    n_categories=4,
    items_per_category=10,
    outfit_size_min=2,
    outfit_size_max=3,
    outfits_per_shopper=6,
    embedding_dim=8,
    style_noise=0.3,
    style_strength=1.0,
    anchor_scale=2.0,
    shared_item_fraction=0.2,
    shared_item_rate=0.3,
    taste_spread=1.0,
    taste_sharpness=4.0,
)

TINY_MODEL = dict(
    d=8, bottom_layers=1, bottom_heads=2, top_layers=1, top_heads=2, ff_mult=2, adapter_hidden=8, image_dim=8, title_dim=8
)


@pytest.fixture(scope="session")
def small_ds():
    return split_dataset(generate_synthetic(SynthConfig(**SMALL_SYNTH), 0), (0.5, 0.25, 0.25), 0)


@pytest.fixture(scope="session")
def tiny_cfg():
    return HatConfig(**TINY_MODEL)


# acceptance criteria report one line each at the end of the run
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split("-")[1])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")
