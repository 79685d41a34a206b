import pathlib
from dataclasses import dataclass

import numpy as np
import pytest

from a2gloc.features import FeatureConfig
from a2gloc.flight import Region, spiral_trajectory
from a2gloc.harness import model_inputs
from a2gloc.localizer import ModelConfig, TrainConfig, TrainResult, build_model, train
from a2gloc.propagation import Model
from a2gloc.scenario import Scenario, generate_dataset

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@dataclass
class FsplBundle:
    scenario: Scenario
    features: FeatureConfig
    train_records: list
    test_records: list
    result: TrainResult


@pytest.fixture(scope="session")
def fspl_bundle() -> FsplBundle:
    """Clustering model trained 50 epochs on 200 noiseless FSPL flights over a 100 m square."""
    region = Region(0, 100, 0, 100)
    sc = Scenario(source_region=region, trajectory=spiral_trajectory(region, 20, 30), duration=30, dt=0.03,
                  model=Model.FSPL, noise_std=0.0)
    cfg = FeatureConfig()
    tr = generate_dataset(sc, 200, seed=1)
    te = generate_dataset(sc, 20, seed=2)
    x = model_inputs("clustering", tr, cfg)
    y = np.array([r.source_xy for r in tr])
    res = train(build_model(ModelConfig.clustering(), 0), x, y, TrainConfig(epochs=50, seed=0),
                target_center=region.centroid)
    return FsplBundle(sc, cfg, tr, te, res)


# --- acceptance summary -------------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
