import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pseudoimu.features import FeatureMode
from pseudoimu.pose import NUM_JOINTS, JointId, PoseFrame
from pseudoimu.synth import SKELETON, SynthGrid, generate_dataset
from pseudoimu.tsf import ForestParams, save_model, train_forest

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def square_torso_positions() -> np.ndarray:
    """Skeleton whose torso is the unit square used in the hand-checked examples."""
    pos = np.array(SKELETON, dtype=np.float64)
    pos[JointId.LEFT_SHOULDER] = (-1, -1, 0)
    pos[JointId.RIGHT_SHOULDER] = (1, -1, 0)
    pos[JointId.LEFT_HIP] = (-1, 1, 0)
    pos[JointId.RIGHT_HIP] = (1, 1, 0)
    return pos


def make_frames(positions: np.ndarray, dt: float = 0.1, t0: float = 0.0) -> tuple[PoseFrame, ...]:
    return tuple(PoseFrame(t0 + i * dt, p) for i, p in enumerate(positions))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def random_skeleton(rng: np.random.Generator) -> np.ndarray:
    """A non-degenerate random pose: canonical skeleton, random rotation, offset and noise."""
    pos = SKELETON @ random_rotation(rng).T + rng.normal(0, 2, 3)
    return pos + rng.normal(0, 0.02, (NUM_JOINTS, 3))


@pytest.fixture(scope="session")
def corpus():
    """Balanced synthetic windows, 200 per class, in combined mode (trans and rot are column slices)."""
    return generate_dataset(SynthGrid(), windows_per_class=200, seed=0, mode=FeatureMode.COMBINED)


@pytest.fixture(scope="session")
def trans_forest():
    data = generate_dataset(SynthGrid(), windows_per_class=200, seed=0, mode=FeatureMode.TRANSLATIONAL)
    return train_forest(data, ForestParams(n_trees=50, seed=7))


@pytest.fixture(scope="session")
def trans_model_path(trans_forest, tmp_path_factory):
    path = tmp_path_factory.mktemp("models") / "trans.pimu"
    save_model(trans_forest, path)
    return path


acceptance_lines = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[acceptance_lines] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(acceptance_lines, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
