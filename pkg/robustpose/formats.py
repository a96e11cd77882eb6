"""Reading and writing the on-disk artifacts: CAD models with keypoint
sidecars, binary point files, PGM masks, JSON documents and CSV tables."""

import os
import csv
import json
import typing
import logging
import pathlib

import cv2
import numpy as np

from .errors import SceneFormatError
from .geometry import CadModel
from .geometry import KeypointSet

__all__ = [
    "load_keypoint_json",
    "read_mesh_vertices",
    "load_cad_model",
    "write_f32",
    "read_f32",
    "write_pgm",
    "read_pgm",
    "write_json",
    "read_json",
    "write_csv",
    "read_csv",
]

logger = logging.getLogger(__name__)

PathLike = typing.Union[str, os.PathLike]

# the dense sample size of CAD models loaded from disk
DEFAULT_SAMPLE_SIZE = 2048

def load_keypoint_json(path: PathLike) -> typing.Tuple[np.ndarray, typing.Optional[float]]:
    """Read a keypoint sidecar `{"keypoints": [[x, y, z], ...], "diameter": d}`.

    Raises
    ------
    SceneFormatError
        When the file has no valid `keypoints` list

    Parameters
    ----------
    path : str or os.PathLike
        The JSON file

    Returns
    -------
    numpy.ndarray, float or None
        The 3xN keypoints and the diameter if the file defines it
    """
    document = read_json(path)
    try:
        keypoints = np.asarray(document["keypoints"], dtype=float)
    except (KeyError, TypeError, ValueError) as e:
        raise SceneFormatError(path, "no valid 'keypoints' list ({})".format(e)) from e

    if keypoints.ndim != 2 or keypoints.shape[1] != 3:
        raise SceneFormatError(path, ("keypoints must be a list of [x, y, z] " +
                                      "triples, got shape {}").format(keypoints.shape))

    diameter = document.get("diameter", None)
    if diameter is not None:
        diameter = float(diameter)
    return keypoints.T, diameter

def read_mesh_vertices(path: PathLike) -> np.ndarray:
    """Read the vertex list of a PLY (ASCII or binary) or OBJ file.

    Open3D is imported on first use, install the `io` extra to use this.

    Raises
    ------
    SceneFormatError
        When the file contains no vertices

    Returns
    -------
    numpy.ndarray
        The 3xv vertices
    """
    import open3d as o3d

    path = pathlib.Path(path)
    if path.suffix.lower() == ".obj":
        vertices = np.asarray(o3d.io.read_triangle_mesh(str(path)).vertices)
    else:
        vertices = np.asarray(o3d.io.read_point_cloud(str(path)).points)

    if vertices.size == 0:
        raise SceneFormatError(path, "the file contains no vertices")
    logger.debug("Read {} vertices from {}".format(len(vertices), path))
    return vertices.T.astype(float)

def load_cad_model(mesh_path: PathLike, keypoints_path: PathLike,
                   m: typing.Optional[int]=DEFAULT_SAMPLE_SIZE,
                   seed: typing.Optional[int]=0,
                   model_id: typing.Optional[str]=None) -> CadModel:
    """Load a CAD model from a vertex file and a keypoint sidecar.

    Models with more than `m` vertices are subsampled without replacement,
    deterministically for a fixed `seed`. The diameter is taken from the
    sidecar when present, otherwise it is computed from the sample.

    Parameters
    ----------
    mesh_path : str or os.PathLike
        The PLY or OBJ file
    keypoints_path : str or os.PathLike
        The keypoint JSON sidecar
    m : int, optional
        The maximum dense sample size, default: 2048
    seed : int, optional
        The subsampling seed, default: 0
    model_id : str, optional
        The model name, the mesh file stem if not given, default: None

    Returns
    -------
    CadModel
        The model
    """
    vertices = read_mesh_vertices(mesh_path)
    keypoints, diameter = load_keypoint_json(keypoints_path)

    if vertices.shape[1] > m:
        rng = np.random.default_rng(seed)
        indices = np.sort(rng.choice(vertices.shape[1], size=m, replace=False))
        vertices = vertices[:, indices]

    if model_id is None:
        model_id = pathlib.Path(mesh_path).stem

    return CadModel.fromPoints(vertices, KeypointSet(keypoints), diameter,
                               model_id=model_id,
                               source={"mesh": str(mesh_path),
                                       "keypoints": str(keypoints_path),
                                       "m": m, "seed": seed})

def write_f32(path: PathLike, array: np.ndarray) -> None:
    """Write the array as raw little-endian float32 values in C order."""
    np.ascontiguousarray(array, dtype="<f4").tofile(str(path))

def read_f32(path: PathLike, shape: typing.Optional[typing.Tuple[int, ...]]=None) -> np.ndarray:
    """Read raw little-endian float32 values.

    Raises
    ------
    SceneFormatError
        When the value count does not match `shape`

    Parameters
    ----------
    path : str or os.PathLike
        The binary file
    shape : tuple of int, optional
        The shape to reshape to, one entry may be -1, default: None

    Returns
    -------
    numpy.ndarray
        The values as float64
    """
    values = np.fromfile(str(path), dtype="<f4")
    if shape is not None:
        try:
            values = values.reshape(shape)
        except ValueError as e:
            raise SceneFormatError(path, "{} values do not fit shape {}".format(
                values.size, shape)) from e
    return values.astype(float)

def write_pgm(path: PathLike, mask: np.ndarray) -> None:
    """Write a boolean mask as a binary (P5) PGM with values 0 and 255.

    Raises
    ------
    OSError
        When OpenCV cannot write the file
    """
    raster = np.asarray(mask, dtype=bool).astype(np.uint8) * 255
    if not cv2.imwrite(str(path), raster, [cv2.IMWRITE_PXM_BINARY, 1]):
        raise OSError("Could not write the mask to '{}'.".format(path))

def read_pgm(path: PathLike) -> np.ndarray:
    """Read a PGM as a boolean mask (nonzero is set).

    Raises
    ------
    SceneFormatError
        When the file cannot be decoded as a single channel image
    """
    raster = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raster is None:
        raise SceneFormatError(path, "not a readable PGM file")
    if raster.ndim != 2:
        raise SceneFormatError(path, "the mask must have a single channel, " +
                               "got shape {}".format(raster.shape))
    return raster > 0

def _strict(value: typing.Any) -> typing.Any:
    if isinstance(value, dict):
        return {key: _strict(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_strict(item) for item in value]
    if isinstance(value, (float, np.floating)):
        return float(value) if np.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value

def write_json(path: PathLike, document: typing.Any) -> None:
    """Write a strict JSON document, NaN and infinite values become `null`."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_strict(document), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")

def read_json(path: PathLike) -> typing.Any:
    """Read a JSON document.

    Raises
    ------
    SceneFormatError
        When the file is not valid JSON
    """
    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise SceneFormatError(path, "invalid JSON ({})".format(e)) from e

def write_csv(path: PathLike, header: typing.Sequence[str],
              rows: typing.Iterable[typing.Sequence[typing.Any]]) -> None:
    """Write a UTF-8 CSV table with a header row.

    Floats are written with `repr()` so that identical values always give
    identical files.
    """
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating))
                             else v for v in row])

def read_csv(path: PathLike) -> typing.List[typing.Dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))
