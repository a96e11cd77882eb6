"""Synthetic scenes of a single known object.

A scene is produced like a depth sensor with an instance segmentation would
see it: the model is posed, its silhouette is rendered, self-occluded points
are culled, the detected mask is corrupted (blobs outside the object turn
into outlier points, eroded regions remove object points) and finally point
noise and random outliers are added.

Every generator is a pure function of its inputs and seed.
"""

import os
import enum
import math
import typing
import logging
import pathlib
import dataclasses

import numpy as np
from scipy.ndimage import binary_dilation
from scipy.ndimage import binary_erosion
from scipy.spatial.transform import Rotation

from .errors import EmptyMask
from .errors import EmptyProjection
from .errors import SceneFormatError
from .formats import read_f32
from .formats import write_f32
from .formats import read_json
from .formats import write_json
from .geometry import Pose
from .geometry import CadModel
from .geometry import PointCloud
from .geometry import KeypointSet
from .geometry import as_points
from .geometry import apply_pose
from .geometry import compute_diameter
from .certificates import BinaryMask
from .certificates import CameraIntrinsics
from .certificates import CertificateConfig
from .certificates import render_mask
from .certificates import project_points

__all__ = [
    "ModelKind",
    "SceneConfig",
    "SceneSample",
    "builtin_model",
    "occlude",
    "inject_noise",
    "inject_outliers",
    "corrupt_mask",
    "back_project",
    "perturb_keypoints",
    "sample_pose",
    "generate_scene",
    "generate_scenes",
    "scene_seed",
    "save_scene_dataset",
    "load_scene_dataset",
]

logger = logging.getLogger(__name__)

# the number of poses tried before a scene is given up
MAX_POSE_RETRIES = 20

# the version of the scene dataset layout
DATASET_VERSION = 1

# the per-channel color jitter of object points
COLOR_JITTER = 0.05

class ModelKind(enum.Enum):
    BOX = "box"
    CYLINDER = "cylinder"
    LBRACKET = "lbracket"

_model_colors = {
    ModelKind.BOX: (0.8, 0.3, 0.2),
    ModelKind.CYLINDER: (0.2, 0.5, 0.8),
    ModelKind.LBRACKET: (0.3, 0.7, 0.3),
}

@dataclasses.dataclass
class SceneConfig:
    """The scene generation settings.

    Lengths are in meters except for `keypoint_noise_sigma` and
    `depth_band`, which are fractions of the object diameter, and the mask
    settings, which are in pixels.
    """

    camera: CameraIntrinsics = dataclasses.field(default_factory=CameraIntrinsics)
    translation_low: typing.Tuple[float, float, float] = (-0.25, -0.15, 1.2)
    translation_high: typing.Tuple[float, float, float] = (0.25, 0.15, 3.0)
    gaussian_noise_std: float = 0.0
    outlier_rate: float = 0.0
    outlier_box_scale: float = 2.0
    keypoint_noise_sigma: float = 0.0
    keypoint_noise_prob: float = 0.8
    blob_count: int = 1
    blob_radius: int = 3
    erosion_radius: int = 2
    mask_dilation_radius: int = 1
    max_points: int = 512
    depth_band: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if isinstance(self.camera, dict):
            self.camera = CameraIntrinsics(**self.camera)
        self.translation_low = tuple(float(v) for v in self.translation_low)
        self.translation_high = tuple(float(v) for v in self.translation_high)
        self.validate()

    def validate(self) -> None:
        """Check the values.

        Raises
        ------
        ValueError
            When a value is out of its range
        """
        if len(self.translation_low) != 3 or len(self.translation_high) != 3:
            raise ValueError("The translation bounds must be 3-vectors.")
        if any(lo > hi for lo, hi in zip(self.translation_low, self.translation_high)):
            raise ValueError("The lower translation bound exceeds the upper one.")
        if self.translation_low[2] <= 0:
            raise ValueError("The object must be in front of the camera, got " +
                             "a minimal depth of {}.".format(self.translation_low[2]))
        if self.gaussian_noise_std < 0:
            raise ValueError("The noise std must not be negative.")
        if not 0 <= self.outlier_rate < 1:
            raise ValueError("The outlier rate must be in [0, 1), got {}.".format(
                self.outlier_rate))
        if self.outlier_box_scale < 1:
            raise ValueError("The outlier box scale must be >= 1, got {}.".format(
                self.outlier_box_scale))
        if self.keypoint_noise_sigma < 0:
            raise ValueError("The keypoint noise must not be negative.")
        if not 0 <= self.keypoint_noise_prob <= 1:
            raise ValueError("The keypoint noise probability must be in [0, 1], " +
                             "got {}.".format(self.keypoint_noise_prob))
        for name in ("blob_count", "blob_radius", "erosion_radius",
                     "mask_dilation_radius"):
            if getattr(self, name) < 0:
                raise ValueError("{} must not be negative.".format(name))
        if self.max_points < 1:
            raise ValueError("max_points must be at least 1.")
        if not self.depth_band > 0:
            raise ValueError("The depth band must be positive.")

    def toDict(self) -> dict:
        values = dataclasses.asdict(self)
        values["translation_low"] = list(self.translation_low)
        values["translation_high"] = list(self.translation_high)
        return values

    @classmethod
    def fromDict(cls, values: typing.Mapping[str, typing.Any]) -> "SceneConfig":
        return cls(**dict(values))

    def clean(self) -> "SceneConfig":
        """Get the same setup without noise, outliers or mask corruption."""
        return dataclasses.replace(self, gaussian_noise_std=0.0,
                                   outlier_rate=0.0, blob_count=0,
                                   erosion_radius=0)

@dataclasses.dataclass(frozen=True, eq=False)
class SceneSample:
    """One observation with its ground truth.

    `T_star`, `y_star` and `outlier_flags` are for evaluation only, no
    training or certification path reads them.
    """

    X: PointCloud
    M: BinaryMask
    M_star: BinaryMask
    T_star: typing.Optional[Pose]
    y_star: typing.Optional[KeypointSet]
    model_id: str
    outlier_flags: typing.Optional[np.ndarray] = None
    seed: typing.Optional[int] = None

    def withoutGroundTruth(self) -> "SceneSample":
        return dataclasses.replace(self, T_star=None, y_star=None,
                                   outlier_flags=None)

def _rectangle(origin, u, v) -> typing.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (np.asarray(origin, dtype=float), np.asarray(u, dtype=float),
            np.asarray(v, dtype=float))

def _sample_rectangles(rectangles: typing.Sequence, count: int,
                       rng: np.random.Generator) -> np.ndarray:
    areas = np.array([np.linalg.norm(np.cross(u, v)) for _, u, v in rectangles])
    faces = rng.choice(len(rectangles), size=count, p=areas / areas.sum())
    coefficients = rng.random((2, count))

    origins = np.array([rectangles[i][0] for i in faces]).T
    us = np.array([rectangles[i][1] for i in faces]).T
    vs = np.array([rectangles[i][2] for i in faces]).T
    return origins + us * coefficients[0] + vs * coefficients[1]

def _box_surface(size: np.ndarray) -> typing.Tuple[list, np.ndarray]:
    sx, sy, sz = size
    lo = -size / 2
    rectangles = []
    for axis in range(3):
        u_axis, v_axis = [a for a in range(3) if a != axis]
        u = np.zeros(3)
        u[u_axis] = size[u_axis]
        v = np.zeros(3)
        v[v_axis] = size[v_axis]
        for side in (0, 1):
            origin = lo.copy()
            origin[axis] += side * size[axis]
            rectangles.append(_rectangle(origin, u, v))

    corners = np.array([[x, y, z] for x in (-sx / 2, sx / 2)
                                  for y in (-sy / 2, sy / 2)
                                  for z in (-sz / 2, sz / 2)]).T
    return rectangles, corners

def _lbracket_surface(size: np.ndarray) -> typing.Tuple[list, np.ndarray]:
    sx, sy, sz = size
    t = 0.35 * min(sx, sy)
    x0, y0, z0 = -size / 2
    x1, y1, z1 = size / 2

    profile = [(x0, y0), (x1, y0), (x1, y0 + t), (x0 + t, y0 + t),
               (x0 + t, y1), (x0, y1)]
    rectangles = []
    for z in (z0, z1):
        # the L-profile is the foot (full width) and the upright arm
        rectangles.append(_rectangle((x0, y0, z), (sx, 0, 0), (0, t, 0)))
        rectangles.append(_rectangle((x0, y0 + t, z), (t, 0, 0), (0, sy - t, 0)))
    for (ax, ay), (bx, by) in zip(profile, profile[1:] + profile[:1]):
        rectangles.append(_rectangle((ax, ay, z0), (bx - ax, by - ay, 0), (0, 0, sz)))

    corners = np.array([[x, y, z] for z in (z0, z1) for x, y in profile]).T
    return rectangles, corners

def _cylinder_sample(size: np.ndarray, count: int, rng: np.random.Generator
                     ) -> typing.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    r = min(size[0], size[1]) / 2
    h = size[2]
    side_area = 2 * np.pi * r * h
    cap_area = np.pi * r ** 2
    kind = rng.choice(3, size=count, p=np.array([side_area, cap_area, cap_area]) /
                                      (side_area + 2 * cap_area))
    angles = rng.random(count) * 2 * np.pi
    radii = np.where(kind == 0, r, r * np.sqrt(rng.random(count)))
    heights = np.where(kind == 0, (rng.random(count) - 0.5) * h,
                       np.where(kind == 1, h / 2, -h / 2))
    surface = np.stack([radii * np.cos(angles), radii * np.sin(angles), heights])

    quadrants = [(r, 0), (0, r), (-r, 0), (0, -r)]
    rims = np.array([[x, y, z] for z in (h / 2, -h / 2) for x, y in quadrants]).T
    axis = np.array([[0, 0, h / 2], [0, 0, -h / 2]], dtype=float).T

    keypoints = np.column_stack([rims[:, 0], rims[:, 2], rims[:, 5], rims[:, 7],
                                 axis[:, 0], axis[:, 1]])
    return surface, np.column_stack([rims, axis]), keypoints

def builtin_model(kind: typing.Union[ModelKind, str],
                  size: typing.Sequence[float]=(0.3, 0.2, 0.1),
                  seed: typing.Optional[int]=0,
                  m: typing.Optional[int]=2048) -> CadModel:
    """Create one of the builtin models, centered at the origin.

    Box keypoints are the 8 corners. Cylinder keypoints are the top rim at
    0 and 180 degrees, the bottom rim at 90 and 270 degrees and both axis
    endpoints. LBracket keypoints are the 12 corners of the L-profile prism.
    The dense sample contains the extreme points of the shape, so its
    diameter is the diameter of the solid.

    Raises
    ------
    ValueError
        When a size is not positive or `m` is too small to hold the
        extreme points

    Parameters
    ----------
    kind : ModelKind or str
        The shape, "box", "cylinder" or "lbracket"
    size : sequence of float, optional
        The bounding box size, the cylinder radius is half the smaller of
        the first two entries, default: (0.3, 0.2, 0.1)
    seed : int, optional
        The seed of the surface sample, default: 0
    m : int, optional
        The dense sample size, default: 2048

    Returns
    -------
    CadModel
        The model
    """
    kind = ModelKind(kind)
    size = np.asarray(size, dtype=float).reshape(-1)
    if size.shape != (3, ) or np.any(size <= 0):
        raise ValueError("The model size must be three positive values, got {}.".format(
            size.tolist()))

    rng = np.random.default_rng(seed)
    if kind == ModelKind.CYLINDER:
        extremes_count = 10
        if m <= extremes_count:
            raise ValueError("m must exceed {} for a cylinder.".format(extremes_count))
        surface, extremes, keypoints = _cylinder_sample(size, m - extremes_count, rng)
    else:
        if kind == ModelKind.BOX:
            rectangles, corners = _box_surface(size)
        else:
            rectangles, corners = _lbracket_surface(size)
        if m <= corners.shape[1]:
            raise ValueError("m must exceed {} for a {}.".format(corners.shape[1],
                                                                 kind.value))
        surface = _sample_rectangles(rectangles, m - corners.shape[1], rng)
        extremes = corners
        keypoints = corners

    dense = np.column_stack([extremes, surface])
    return CadModel(dense, KeypointSet(keypoints), compute_diameter(extremes),
                    model_id=kind.value, color=_model_colors[kind],
                    source={"kind": kind.value, "size": size.tolist(),
                            "seed": seed, "m": m})

def occlude(posed_dense: PointCloud, K: CameraIntrinsics,
            depth_band: typing.Optional[float]=None,
            return_indices: typing.Optional[bool]=False
            ) -> typing.Union[PointCloud, typing.Tuple[PointCloud, np.ndarray]]:
    """Keep the points a camera would see.

    Points are binned by pixel. In every pixel only the points within
    `depth_band` of the closest point survive. Points behind the camera or
    outside the image are dropped.

    Raises
    ------
    EmptyProjection
        When no point lands inside the image

    Parameters
    ----------
    posed_dense : PointCloud
        The posed surface sample in the camera frame
    K : CameraIntrinsics
        The camera
    depth_band : float, optional
        The visibility band, 1% of the cloud diameter if not given,
        default: None
    return_indices : bool, optional
        Whether to return the kept column indices, default: False

    Returns
    -------
    PointCloud or tuple
        The visible points, and their indices if `return_indices` is True
    """
    points = as_points(posed_dense)
    if depth_band is None:
        depth_band = 0.01 * compute_diameter(points)

    u, v, valid = project_points(points, K)
    if not np.any(valid):
        raise EmptyProjection("No point of the cloud is inside the image.")

    candidates = np.flatnonzero(valid)
    pixels = v[candidates] * K.width + u[candidates]
    depths = points[2, candidates]

    closest = np.full(K.width * K.height, np.inf)
    np.minimum.at(closest, pixels, depths)
    indices = candidates[depths <= closest[pixels] + depth_band]

    if isinstance(posed_dense, PointCloud):
        visible = posed_dense.select(indices)
    else:
        visible = PointCloud(points[:, indices])
    if return_indices:
        return visible, indices
    return visible

def inject_noise(X: PointCloud, gamma: float, seed: int) -> PointCloud:
    """Add iid zero-mean Gaussian noise of std `gamma` to every coordinate."""
    if gamma < 0:
        raise ValueError("The noise std must not be negative, got {}.".format(gamma))
    if gamma == 0:
        return X
    rng = np.random.default_rng(seed)
    return X.withPoints(X.points + rng.normal(0.0, gamma, size=X.points.shape))

def inject_outliers(X: PointCloud, eta: float, box_scale: float, seed: int
                    ) -> typing.Tuple[PointCloud, np.ndarray]:
    """Replace `floor(eta n)` random points by uniform points in the bounding
    box of the cloud scaled by `box_scale` about the mean.

    Replaced points get uniform random features in [0, 1].

    Returns
    -------
    PointCloud, numpy.ndarray
        The cloud and the boolean flags of the replaced columns
    """
    if not 0 <= eta < 1:
        raise ValueError("The outlier rate must be in [0, 1), got {}.".format(eta))
    if box_scale < 1:
        raise ValueError("The box scale must be >= 1, got {}.".format(box_scale))

    flags = np.zeros(X.n, dtype=bool)
    count = int(math.floor(eta * X.n))
    if count == 0:
        return X, flags

    rng = np.random.default_rng(seed)
    replaced = rng.choice(X.n, size=count, replace=False)
    flags[replaced] = True

    points = np.array(X.points)
    mean = points.mean(axis=1)
    low = mean + box_scale * (points.min(axis=1) - mean)
    high = mean + box_scale * (points.max(axis=1) - mean)
    points[:, replaced] = rng.uniform(low[:, None], high[:, None], size=(3, count))

    features = None
    if X.features is not None:
        features = np.array(X.features)
        features[:, replaced] = rng.random((features.shape[0], count))
    return PointCloud(points, features), flags

def corrupt_mask(M_star: BinaryMask, cfg: SceneConfig, seed: int) -> BinaryMask:
    """Corrupt a ground-truth mask like an imperfect segmentation.

    `cfg.blob_count` discs of radius `cfg.blob_radius` are added, each
    centered on a pixel just outside the mask. Then the mask is eroded by
    `cfg.erosion_radius` in a window around one random boundary pixel. If
    the erosion would empty the mask it is skipped.

    Raises
    ------
    ValueError
        When `M_star` is empty
    """
    grid = np.array(M_star.grid)
    if not np.any(grid):
        raise ValueError("Cannot corrupt an empty mask.")
    rng = np.random.default_rng(seed)
    height, width = grid.shape

    radius = int(cfg.blob_radius)
    rows, cols = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    disc = rows ** 2 + cols ** 2 <= radius ** 2

    for _ in range(int(cfg.blob_count)):
        outside = np.argwhere(binary_dilation(grid) & ~grid)
        if len(outside) == 0:
            break
        cv, cu = outside[rng.integers(len(outside))]
        for dv, du in zip(rows[disc], cols[disc]):
            pv, pu = cv + dv, cu + du
            if 0 <= pv < height and 0 <= pu < width:
                grid[pv, pu] = True

    erosion = int(cfg.erosion_radius)
    if erosion > 0:
        boundary = np.argwhere(grid & ~binary_erosion(grid))
        cv, cu = boundary[rng.integers(len(boundary))]
        window = 4 * erosion
        eroded = binary_erosion(grid, structure=np.ones((2 * erosion + 1, ) * 2,
                                                        dtype=bool))
        v0, v1 = max(cv - window, 0), min(cv + window + 1, height)
        u0, u1 = max(cu - window, 0), min(cu + window + 1, width)
        candidate = grid.copy()
        candidate[v0:v1, u0:u1] = eroded[v0:v1, u0:u1]
        if np.any(candidate):
            grid = candidate

    return BinaryMask(grid)

def _pixel_rays(u: np.ndarray, v: np.ndarray, z: np.ndarray,
                K: CameraIntrinsics) -> np.ndarray:
    return np.stack([(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z])

def back_project(depth: np.ndarray, M: BinaryMask, K: CameraIntrinsics,
                 color: typing.Optional[np.ndarray]=None) -> PointCloud:
    """Turn the masked pixels of a depth image into camera-frame points.

    Masked pixels without a positive finite depth are skipped.

    Raises
    ------
    EmptyMask
        When no masked pixel has a valid depth

    Parameters
    ----------
    depth : numpy.ndarray
        The height x width depth image
    M : BinaryMask
        The mask
    K : CameraIntrinsics
        The camera
    color : numpy.ndarray, optional
        A height x width x d image attached as point features, default: None

    Returns
    -------
    PointCloud
        One point per valid masked pixel, in row-major pixel order
    """
    depth = np.asarray(depth, dtype=float)
    M.checkCamera(K)
    with np.errstate(invalid="ignore"):
        valid = M.grid & np.isfinite(depth) & (depth > 0)
    v, u = np.nonzero(valid)
    if len(v) == 0:
        raise EmptyMask("The mask contains no pixel with a valid depth.")

    points = _pixel_rays(u.astype(float), v.astype(float), depth[v, u], K)
    features = None
    if color is not None:
        color = np.asarray(color, dtype=float)
        if color.ndim == 2:
            color = color[:, :, None]
        features = color[v, u].T
    return PointCloud(points, features)

def perturb_keypoints(y_star: KeypointSet, sigma: float, f: float, D: float,
                      seed: int) -> KeypointSet:
    """Add uniform noise in `[-sigma D / 2, sigma D / 2]` per coordinate to
    every keypoint independently with probability `f`."""
    if sigma < 0:
        raise ValueError("sigma must not be negative, got {}.".format(sigma))
    if not 0 <= f <= 1:
        raise ValueError("f must be in [0, 1], got {}.".format(f))

    points = as_points(y_star)
    rng = np.random.default_rng(seed)
    chosen = rng.random(points.shape[1]) < f
    noise = rng.uniform(-sigma * D / 2, sigma * D / 2, size=points.shape)
    return KeypointSet(points + noise * chosen[None, :])

def sample_pose(cfg: SceneConfig, rng: np.random.Generator) -> Pose:
    """Draw a uniform rotation and a uniform translation in the configured box."""
    rotation = Rotation.random(random_state=rng).as_matrix()
    translation = rng.uniform(cfg.translation_low, cfg.translation_high)
    return Pose(rotation, translation)

def _object_features(model: CadModel, count: int,
                     rng: np.random.Generator) -> np.ndarray:
    base = np.asarray(model.color, dtype=float)[:, None]
    jitter = rng.uniform(-COLOR_JITTER, COLOR_JITTER, size=(3, count))
    return np.clip(base + jitter, 0.0, 1.0)

def _compose_scene(model: CadModel, cfg: SceneConfig, T_star: Pose,
                   rng: np.random.Generator) -> SceneSample:
    K = cfg.camera
    render_cfg = CertificateConfig(dilation_radius=cfg.mask_dilation_radius)
    M_star = render_mask(T_star, model, K, render_cfg)

    posed = apply_pose(T_star, model.dense_points)
    visible = occlude(PointCloud(posed), K, cfg.depth_band * model.diameter)
    M = corrupt_mask(M_star, cfg, int(rng.integers(2 ** 32)))

    u, v, valid = project_points(visible.points, K)
    inside = valid & M.grid[np.maximum(v, 0), np.maximum(u, 0)]
    object_points = visible.points[:, inside]

    blob = M.grid & ~M_star.grid
    blob_v, blob_u = np.nonzero(blob)
    blob_points = np.zeros((3, 0))
    if len(blob_v) > 0 and object_points.shape[1] > 0:
        density = object_points.shape[1] / max(M_star.area, 1)
        count = int(round(density * len(blob_v)))
        if count > 0:
            chosen = rng.integers(len(blob_v), size=count)
            mean_depth = float(np.mean(object_points[2]))
            z = rng.uniform(0.5, 1.5, size=count) * mean_depth
            blob_points = _pixel_rays(blob_u[chosen].astype(float),
                                      blob_v[chosen].astype(float), z, K)

    n_object = object_points.shape[1]
    n_total = n_object + blob_points.shape[1]
    if n_total == 0:
        raise EmptyMask("No visible point lies inside the detected mask.")

    points = np.column_stack([object_points, blob_points])
    features = np.column_stack([_object_features(model, n_object, rng),
                                rng.random((3, blob_points.shape[1]))])
    flags = np.arange(n_total) >= n_object

    if n_total > cfg.max_points:
        keep = np.sort(rng.choice(n_total, size=cfg.max_points, replace=False))
        points, features, flags = points[:, keep], features[:, keep], flags[keep]

    X = inject_noise(PointCloud(points, features), cfg.gaussian_noise_std,
                     int(rng.integers(2 ** 32)))
    X, replaced = inject_outliers(X, cfg.outlier_rate, cfg.outlier_box_scale,
                                  int(rng.integers(2 ** 32)))

    return SceneSample(X, M, M_star, T_star,
                       apply_pose(T_star, model.keypoints), model.model_id,
                       flags | replaced)

def generate_scene(model: CadModel, cfg: SceneConfig, seed: int) -> SceneSample:
    """Generate one labeled scene.

    A pose that does not project into the image or leaves no point inside
    the detected mask is redrawn, up to `MAX_POSE_RETRIES` times.

    Raises
    ------
    EmptyProjection
        When no usable pose was found

    Parameters
    ----------
    model : CadModel
        The object
    cfg : SceneConfig
        The generation settings
    seed : int
        The scene seed

    Returns
    -------
    SceneSample
        The scene
    """
    rng = np.random.default_rng(seed)
    for attempt in range(MAX_POSE_RETRIES):
        T_star = sample_pose(cfg, rng)
        try:
            scene = _compose_scene(model, cfg, T_star, rng)
        except (EmptyProjection, EmptyMask) as e:
            logger.debug("Redrawing the pose of scene {} ({})".format(seed, e))
            continue
        return dataclasses.replace(scene, seed=seed)

    raise EmptyProjection(("No pose with a visible object was found for scene " +
                           "seed {} after {} attempts.").format(seed, MAX_POSE_RETRIES))

def scene_seed(seed: int, index: int) -> int:
    """The seed of the `index`-th scene of a dataset with the base `seed`."""
    return int(np.random.SeedSequence((seed, index)).generate_state(1)[0])

def generate_scenes(model: CadModel, cfg: SceneConfig, count: int,
                    seed: typing.Optional[int]=None) -> typing.List[SceneSample]:
    """Generate `count` scenes with seeds derived from `seed` (the config
    seed if not given)."""
    if seed is None:
        seed = cfg.seed
    return [generate_scene(model, cfg, scene_seed(seed, i)) for i in range(count)]

def save_scene_dataset(directory: typing.Union[str, os.PathLike],
                       scenes: typing.Sequence[SceneSample], model: CadModel,
                       cfg: SceneConfig) -> pathlib.Path:
    """Write the scenes to `directory`.

    The directory gets a `manifest.json` with the model source, the scene
    config and per-scene ground truth, and per scene the points and features
    as little-endian float32 triples and both masks as PGM files.

    Returns
    -------
    pathlib.Path
        The manifest path
    """
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    entries = []
    for index, scene in enumerate(scenes):
        stem = "scene_{:05d}".format(index)
        write_f32(directory / (stem + "_points.f32"), scene.X.points.T)
        entry = {
            "index": index,
            "seed": scene.seed,
            "model_id": scene.model_id,
            "n": scene.X.n,
            "points": stem + "_points.f32",
            "mask": stem + "_mask.pgm",
            "mask_star": stem + "_mask_star.pgm",
        }
        if scene.X.features is not None:
            write_f32(directory / (stem + "_features.f32"), scene.X.features.T)
            entry["features"] = stem + "_features.f32"
            entry["feature_size"] = scene.X.features.shape[0]
        scene.M.save(directory / entry["mask"])
        scene.M_star.save(directory / entry["mask_star"])
        if scene.T_star is not None:
            entry["T_star"] = scene.T_star.asMatrix().tolist()
        if scene.y_star is not None:
            entry["y_star"] = scene.y_star.points.tolist()
        if scene.outlier_flags is not None:
            entry["outliers"] = np.flatnonzero(scene.outlier_flags).tolist()
        entries.append(entry)

    manifest = {
        "version": DATASET_VERSION,
        "model": {"model_id": model.model_id, "diameter": model.diameter,
                  "source": model.source},
        "config": cfg.toDict(),
        "scenes": entries,
    }
    path = directory / "manifest.json"
    write_json(path, manifest)
    logger.info("Wrote {} scenes to {}".format(len(entries), directory))
    return path

def load_scene_dataset(directory: typing.Union[str, os.PathLike]
                       ) -> typing.Tuple[typing.List[SceneSample], dict]:
    """Read a directory written by `save_scene_dataset()`.

    Raises
    ------
    SceneFormatError
        When the manifest or a referenced file is missing or malformed

    Returns
    -------
    list of SceneSample, dict
        The scenes and the manifest
    """
    directory = pathlib.Path(directory)
    path = directory / "manifest.json"
    if not path.is_file():
        raise SceneFormatError(path, "the manifest does not exist")
    manifest = read_json(path)

    scenes = []
    try:
        for entry in manifest["scenes"]:
            n = int(entry["n"])
            points = read_f32(directory / entry["points"], (n, 3)).T
            features = None
            if "features" in entry:
                features = read_f32(directory / entry["features"],
                                    (n, int(entry["feature_size"]))).T
            flags = None
            if "outliers" in entry:
                flags = np.zeros(n, dtype=bool)
                flags[np.asarray(entry["outliers"], dtype=int)] = True
            T_star = (Pose.fromMatrix(entry["T_star"]) if "T_star" in entry
                      else None)
            y_star = (KeypointSet(entry["y_star"]) if "y_star" in entry
                      else None)
            scenes.append(SceneSample(PointCloud(points, features),
                                      BinaryMask.fromFile(directory / entry["mask"]),
                                      BinaryMask.fromFile(directory / entry["mask_star"]),
                                      T_star, y_star, entry["model_id"], flags,
                                      entry.get("seed")))
    except (KeyError, TypeError, ValueError, OSError) as e:
        if isinstance(e, SceneFormatError):
            raise
        raise SceneFormatError(path, "invalid scene entry ({})".format(e)) from e

    return scenes, manifest
