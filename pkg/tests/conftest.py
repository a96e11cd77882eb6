import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from robustpose import CadModel
from robustpose import Pose
from robustpose import SceneConfig
from robustpose import CameraIntrinsics
from robustpose import builtin_model
from robustpose import generate_scene

def random_pose(rng: np.random.Generator, translation_scale: float=1.0) -> Pose:
    return Pose(Rotation.random(random_state=rng).as_matrix(),
                rng.normal(0, translation_scale, size=3))

def small_model(rng: np.random.Generator, m: int=50, N: int=6) -> CadModel:
    """A random model small enough for double-loop oracles."""
    dense = rng.uniform(-0.1, 0.1, size=(3, m))
    keypoints = dense[:, rng.choice(m, size=N, replace=False)]
    return CadModel.fromPoints(dense, keypoints, model_id="small")

@pytest.fixture
def rng():
    return np.random.default_rng(1234)

@pytest.fixture(scope="session")
def box_model():
    return builtin_model("box", (0.3, 0.2, 0.1), seed=0, m=2048)

@pytest.fixture(scope="session")
def small_box():
    return builtin_model("box", (0.3, 0.2, 0.1), seed=0, m=512)

@pytest.fixture(scope="session")
def camera():
    return CameraIntrinsics()

@pytest.fixture(scope="session")
def clean_cfg():
    return SceneConfig().clean()

@pytest.fixture(scope="session")
def clean_scene(box_model, clean_cfg):
    return generate_scene(box_model, clean_cfg, seed=3)

@pytest.fixture(scope="session")
def corrupted_scene(box_model):
    return generate_scene(box_model, SceneConfig(gaussian_noise_std=0.002,
                                                 outlier_rate=0.1), seed=5)
