"""The experiment harness behind the command line interface.

Every experiment is configured by a JSON tree. Component sections
(`corrector`, `certificate`, `gnc`, `scene`, `sim_scene`, `real_scene`,
`train`, `detector`) override the component defaults, the `experiment`
section holds the sweep. The resolved tree, defaults included, is written
to `manifest.json` next to the outputs.

Trials run on a process pool. Each trial gets its own seed derived from
the experiment seed and its grid and trial index, and records are sorted by
that key, so the outputs do not depend on the number of workers.
"""

import os
import copy
import math
import typing
import logging
import pathlib
import functools
import dataclasses
import concurrent.futures

import numpy as np

from .errors import ConfigError
from .formats import write_csv
from .formats import write_json
from .formats import load_cad_model
from .geometry import CadModel
from .geometry import PointCloud
from .geometry import adds_metric
from .corrector import LossVariant
from .corrector import CorrectorConfig
from .corrector import no_correction
from .corrector import solve_correction
from .certificates import CertificateConfig
from .certificates import observable_correctness
from .robust_points import GncConfig
from .robust_points import fps
from .robust_points import robust_pool
from .robust_points import random_sample
from .robust_points import outlier_fraction
from .robust_points import robust_centroid
from .robust_points import color_distance_pooling_params
from .synth import SceneConfig
from .synth import builtin_model
from .synth import generate_scene
from .synth import generate_scenes
from .synth import perturb_keypoints
from .synth import save_scene_dataset
from .ensemble import TrainConfig
from .ensemble import DetectorConfig
from .ensemble import KeypointDetector
from .ensemble import self_train
from .ensemble import save_detector
from .ensemble import evaluate_detectors
from .ensemble import pretrain_supervised

__all__ = [
    "ExperimentConfig",
    "CheckResult",
    "COMMANDS",
    "default_tree",
    "merge_tree",
    "build_model",
    "trial_seed",
    "run_trials",
    "corrector_analysis_trial",
    "corrector_robustness_trial",
    "centroid_robustness_trial",
    "summarize_corrector",
    "summarize_centroid",
    "run_corrector_analysis",
    "run_corrector_robustness",
    "run_centroid_robustness",
    "run_selftrain",
    "run_gen_scenes",
]

logger = logging.getLogger(__name__)

COMMANDS = ("corrector-analysis", "corrector-robustness", "centroid-robustness",
            "selftrain", "gen-scenes")

_component_sections = ("corrector", "certificate", "gnc", "scene", "sim_scene",
                       "real_scene", "train", "detector")

_experiment_defaults = {
    "corrector-analysis": {"sweep": "sigma", "grid": [0.0, 0.2, 0.4, 0.6],
                           "trials": 100, "f": 0.8},
    "corrector-robustness": {"sweep": "eta", "grid": [0.0, 0.2, 0.4, 0.6],
                             "trials": 100, "sigma": 0.4, "f": 0.8},
    "centroid-robustness": {"sweep": "eta", "grid": None, "trials": 100,
                            "n": 1024, "n_prime": 64, "inlier_radius": 0.02,
                            "outlier_half_width": 1.0, "c_bar": 0.1,
                            "eta": 0.3, "gamma": 0.0},
    "selftrain": {"detector_seeds": [1, 2], "sim_scenes": 500,
                  "real_scenes": 400, "eval_scenes": 100, "threshold": 0.05},
    "gen-scenes": {"count": 10},
}

_centroid_grids = {
    "eta": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
    "gamma": [0.0, 0.005, 0.01, 0.02],
}

_sweep_names = {
    "corrector-analysis": ("sigma", ),
    "corrector-robustness": ("eta", ),
    "centroid-robustness": ("eta", "gamma"),
}

# trial counts and iterations of the reduced --check runs
CHECK_TRIALS = 50
CHECK_ITERATIONS = 300

def default_tree(command: str) -> dict:
    """Get the configuration tree of `command` with all defaults.

    Component sections are empty, their defaults depend on the model and
    are filled in when the components are built.
    """
    if command not in COMMANDS:
        raise ConfigError("command", "unknown command '{}'".format(command))

    tree = {
        "seed": 0,
        "model": {"kind": "box", "size": [0.3, 0.2, 0.1], "seed": 0, "m": 2048,
                  "mesh": None, "keypoints": None},
        "experiment": copy.deepcopy(_experiment_defaults[command]),
    }
    for section in _component_sections:
        tree[section] = {}

    if command == "selftrain":
        tree["sim_scene"] = {"blob_count": 0, "erosion_radius": 0}
        tree["real_scene"] = {"gaussian_noise_std": 0.005, "outlier_rate": 0.2}
        tree["train"] = {"iterations": 3000}
    return tree

def merge_tree(base: dict, overrides: typing.Mapping[str, typing.Any],
               path: typing.Optional[str]="") -> dict:
    """Deep-merge `overrides` into a copy of `base`.

    Raises
    ------
    ConfigError
        When `overrides` contains a key unknown at the top two levels
    """
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        dotted = "{}.{}".format(path, key) if path else key
        if path == "" and key not in merged:
            raise ConfigError(dotted, "unknown configuration section")
        if (path in ("model", "experiment") and key not in merged):
            raise ConfigError(dotted, "unknown configuration key")
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_tree(merged[key], value, dotted)
        else:
            merged[key] = copy.deepcopy(value)
    return merged

def _build(section: str, factory: typing.Callable, *args, **kwargs):
    try:
        return factory(*args, **kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(section, str(e)) from e

def build_model(spec: typing.Mapping[str, typing.Any]) -> CadModel:
    """Create the model of a `model` section, a CAD file pair or a builtin."""
    if spec.get("mesh"):
        if not spec.get("keypoints"):
            raise ConfigError("model.keypoints", "a CAD model needs a keypoint file")
        return load_cad_model(spec["mesh"], spec["keypoints"], m=spec.get("m", 2048),
                              seed=spec.get("seed", 0))
    return _build("model", builtin_model, spec.get("kind", "box"),
                  spec.get("size", (0.3, 0.2, 0.1)), seed=spec.get("seed", 0),
                  m=spec.get("m", 2048))

@dataclasses.dataclass
class ExperimentConfig:
    """A resolved experiment: the command, its configuration tree and the
    output directory."""

    command: str
    tree: dict
    out: typing.Optional[pathlib.Path] = None
    workers: typing.Optional[int] = None
    check: bool = False

    @classmethod
    def resolve(cls, command: str, file_tree: typing.Optional[dict]=None,
                seed: typing.Optional[int]=None,
                trials: typing.Optional[int]=None,
                out: typing.Optional[typing.Union[str, os.PathLike]]=None,
                workers: typing.Optional[int]=None,
                check: typing.Optional[bool]=False) -> "ExperimentConfig":
        """Merge the defaults, the configuration file and the flags, in
        increasing priority.

        Raises
        ------
        ConfigError
            When a value is unknown or invalid
        """
        tree = default_tree(command)
        if file_tree:
            if not isinstance(file_tree, dict):
                raise ConfigError("<root>", "the configuration must be a JSON object")
            tree = merge_tree(tree, file_tree)
        if seed is not None:
            tree["seed"] = int(seed)
        if trials is not None:
            tree["experiment"]["trials"] = int(trials)

        experiment = tree["experiment"]
        if check:
            if "trials" in experiment:
                experiment["trials"] = min(experiment["trials"], CHECK_TRIALS)
            if command == "selftrain":
                tree["train"]["iterations"] = min(tree["train"].get("iterations", 0),
                                                  CHECK_ITERATIONS)
        if command == "centroid-robustness" and experiment.get("grid") is None:
            experiment["grid"] = list(_centroid_grids.get(experiment["sweep"], []))

        config = cls(command, tree, pathlib.Path(out) if out is not None else None,
                     workers, check)
        config.validate()
        return config

    def validate(self) -> None:
        experiment = self.tree["experiment"]
        if self.command in _sweep_names:
            if experiment["sweep"] not in _sweep_names[self.command]:
                raise ConfigError("experiment.sweep", "must be one of {}".format(
                    ", ".join(_sweep_names[self.command])))
            grid = experiment["grid"]
            if not isinstance(grid, list) or len(grid) == 0:
                raise ConfigError("experiment.grid", "the grid must be a non-empty list")
            if any(not isinstance(v, (int, float)) or v < 0 for v in grid):
                raise ConfigError("experiment.grid", "grid values must be nonnegative numbers")
            if not (isinstance(experiment["trials"], int) and experiment["trials"] >= 1):
                raise ConfigError("experiment.trials", "must be an integer >= 1")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers", "must be at least 1")

    @property
    def seed(self) -> int:
        return int(self.tree["seed"])

    @property
    def experiment(self) -> dict:
        return self.tree["experiment"]

    def model(self) -> CadModel:
        return build_model(self.tree["model"])

    def corrector(self, model: CadModel) -> CorrectorConfig:
        return _build("corrector", CorrectorConfig.forModel, model, **self.tree["corrector"])

    def certificate(self, model: CadModel) -> CertificateConfig:
        return _build("certificate", CertificateConfig.forModel, model,
                      **self.tree["certificate"])

    def gnc(self, model: typing.Optional[CadModel]=None) -> GncConfig:
        values = dict(self.tree["gnc"])
        if model is None:
            values.setdefault("c_bar_centroid", self.experiment.get("c_bar", 0.1))
            return _build("gnc", GncConfig, **values)
        return _build("gnc", GncConfig.forModel, model, **values)

    def scene(self, section: typing.Optional[str]="scene") -> SceneConfig:
        values = dict(self.tree["scene"])
        if section != "scene":
            values.update(self.tree[section])
        values.setdefault("seed", self.seed)
        return _build(section, SceneConfig.fromDict, values)

    def train(self) -> TrainConfig:
        values = dict(self.tree["train"])
        values.setdefault("seed", self.seed)
        return _build("train", TrainConfig, **values)

    def detector(self) -> DetectorConfig:
        return _build("detector", DetectorConfig, **self.tree["detector"])

    def manifest(self, resolved: typing.Mapping[str, typing.Any]) -> dict:
        """The manifest document, the tree with the built component values."""
        tree = copy.deepcopy(self.tree)
        tree.update(copy.deepcopy(dict(resolved)))
        return {"command": self.command, "check": self.check, "config": tree}

@dataclasses.dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

def trial_seed(seed: int, grid_index: int, trial: int) -> int:
    """The seed of one trial, independent of the execution order."""
    sequence = np.random.SeedSequence(seed, spawn_key=(grid_index, trial))
    return int(sequence.generate_state(1)[0])

def _run_task(trial: typing.Callable, context: typing.Any,
              task: typing.Tuple[int, int, float, int]) -> typing.List[dict]:
    grid_index, index, value, seed = task
    records = trial(context, value, seed)
    for record in records:
        record.update({"grid_index": grid_index, "trial": index, "value": value})
    return records

def run_trials(trial: typing.Callable, context: typing.Any,
               grid: typing.Sequence[float], trials: int, seed: int,
               workers: typing.Optional[int]=None) -> typing.List[dict]:
    """Run `trial(context, value, seed)` for every grid value and trial index.

    With `workers = 1` the trials run in this process, otherwise on a
    process pool with `workers` processes (all available cores if None).

    Returns
    -------
    list of dict
        The records of all trials, sorted by grid index, trial and the
        record order inside the trial
    """
    tasks = [(gi, ti, float(value), trial_seed(seed, gi, ti))
             for gi, value in enumerate(grid) for ti in range(trials)]
    task = functools.partial(_run_task, trial, context)

    if workers == 1:
        results = [task(t) for t in tasks]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, tasks, chunksize=max(1, len(tasks) // 64)))

    records = []
    for result in results:
        for order, record in enumerate(result):
            record["order"] = order
            records.append(record)
    records.sort(key=lambda r: (r["grid_index"], r["trial"], r["order"]))
    for record in records:
        del record["order"]
    return records

@dataclasses.dataclass(frozen=True)
class CorrectorContext:
    model: CadModel
    scene: SceneConfig
    corrector: CorrectorConfig
    certificate: CertificateConfig
    f: float
    sigma: float = 0.0

def _evaluate_method(method: str, result, scene, context: CorrectorContext) -> dict:
    model = context.model
    certificate = observable_correctness(scene.X, scene.M, result.corrected_pose,
                                         model, context.scene.camera,
                                         context.certificate)
    return {
        "method": method,
        "adds": adds_metric(result.corrected_pose, scene.T_star, model) / model.diameter,
        "oc": certificate.oc,
        "oc3d": certificate.oc_3d,
        "oc2d": certificate.oc_2d,
        "score3d": certificate.score_3d,
        "score2d": certificate.score_2d,
        "iterations": result.iterations,
    }

def corrector_analysis_trial(context: CorrectorContext, sigma: float,
                             seed: int) -> typing.List[dict]:
    """One clean scene with perturbed keypoints, evaluated without and with
    the robust corrector."""
    rng = np.random.default_rng(seed)
    scene = generate_scene(context.model, context.scene.clean(),
                           int(rng.integers(2 ** 32)))
    y_tilde = perturb_keypoints(scene.y_star, sigma, context.f,
                                context.model.diameter, int(rng.integers(2 ** 32)))

    robust = dataclasses.replace(context.corrector, loss_variant=LossVariant.ROBUST)
    return [
        _evaluate_method("none", no_correction(y_tilde, context.model, scene.X,
                                               robust), scene, context),
        _evaluate_method("robust", solve_correction(y_tilde, context.model, scene.X,
                                                    robust), scene, context),
    ]

def corrector_robustness_trial(context: CorrectorContext, eta: float,
                               seed: int) -> typing.List[dict]:
    """One scene with an outlier rate `eta` and perturbed keypoints, evaluated
    without correction and with the robust and the non-robust corrector."""
    rng = np.random.default_rng(seed)
    scene_cfg = dataclasses.replace(context.scene.clean(), outlier_rate=eta)
    scene = generate_scene(context.model, scene_cfg, int(rng.integers(2 ** 32)))
    y_tilde = perturb_keypoints(scene.y_star, context.sigma, context.f,
                                context.model.diameter, int(rng.integers(2 ** 32)))

    robust = dataclasses.replace(context.corrector, loss_variant=LossVariant.ROBUST)
    non_robust = dataclasses.replace(context.corrector,
                                     loss_variant=LossVariant.NON_ROBUST)
    return [
        _evaluate_method("none", no_correction(y_tilde, context.model, scene.X,
                                               robust), scene, context),
        _evaluate_method("robust", solve_correction(y_tilde, context.model, scene.X,
                                                    robust), scene, context),
        _evaluate_method("non_robust", solve_correction(y_tilde, context.model,
                                                        scene.X, non_robust),
                         scene, context),
    ]

@dataclasses.dataclass(frozen=True)
class CentroidContext:
    gnc: GncConfig
    sweep: str
    n: int
    n_prime: int
    inlier_radius: float
    outlier_half_width: float
    eta: float
    gamma: float
    color: typing.Tuple[float, float, float] = (0.8, 0.3, 0.2)

def centroid_cloud(context: CentroidContext, eta: float, gamma: float,
                   rng: np.random.Generator
                   ) -> typing.Tuple[PointCloud, np.ndarray, np.ndarray]:
    """Build the inlier-ball-plus-uniform-outliers cloud.

    Inliers are uniform in a ball around the corner `(w, w, w)` of the
    outlier cube `[-w, w]^3` with Gaussian noise `gamma`, their colors
    jitter around a base color while outliers have random colors.

    Returns
    -------
    PointCloud, numpy.ndarray, numpy.ndarray
        The shuffled cloud, its outlier flags and the true center
    """
    w = context.outlier_half_width
    center = np.full(3, w)
    n_out = int(math.floor(eta * context.n))
    n_in = context.n - n_out

    directions = rng.normal(size=(3, n_in))
    directions /= np.linalg.norm(directions, axis=0)
    radii = context.inlier_radius * rng.random(n_in) ** (1 / 3)
    inliers = center[:, None] + directions * radii
    if gamma > 0:
        inliers = inliers + rng.normal(0, gamma, size=inliers.shape)
    outliers = rng.uniform(-w, w, size=(3, n_out))

    colors = np.column_stack([
        np.clip(np.asarray(context.color)[:, None] +
                rng.uniform(-0.05, 0.05, size=(3, n_in)), 0, 1),
        rng.random((3, n_out))])
    flags = np.arange(context.n) >= n_in

    order = rng.permutation(context.n)
    cloud = PointCloud(np.column_stack([inliers, outliers])[:, order],
                       colors[:, order])
    return cloud, flags[order], center

def centroid_robustness_trial(context: CentroidContext, value: float,
                              seed: int) -> typing.List[dict]:
    """Compare the robust centroid with the mean and the inlier mean, and
    the outlier fractions of farthest point, random and pooled samples."""
    rng = np.random.default_rng(seed)
    eta = value if context.sweep == "eta" else context.eta
    gamma = value if context.sweep == "gamma" else context.gamma
    cloud, flags, center = centroid_cloud(context, eta, gamma, rng)

    robust, weights = robust_centroid(cloud, context.gnc)
    mean = cloud.points.mean(axis=1)
    oracle = cloud.points[:, ~flags].mean(axis=1)

    sample_seed = int(rng.integers(2 ** 32))
    _, fps_indices = fps(cloud, context.n_prime, sample_seed, return_indices=True)
    _, random_indices = random_sample(cloud, context.n_prime, sample_seed,
                                      return_indices=True)
    params = color_distance_pooling_params(context.color, context.n, context.n_prime)
    _, pool_indices = robust_pool(cloud, params, return_indices=True)

    return [{
        "eta": eta,
        "gamma": gamma,
        "robust_error": float(np.linalg.norm(robust - center)),
        "mean_error": float(np.linalg.norm(mean - center)),
        "oracle_error": float(np.linalg.norm(oracle - center)),
        "robust_vs_oracle": float(np.linalg.norm(robust - oracle)),
        "inliers_kept": int(np.sum(weights[~flags] > 0.5)),
        "fps_outliers": outlier_fraction(fps_indices, flags),
        "random_outliers": outlier_fraction(random_indices, flags),
        "pool_outliers": outlier_fraction(pool_indices, flags),
    }]

def _stats(values: typing.Sequence[float]) -> typing.Tuple[float, float]:
    if len(values) == 0:
        return float("nan"), float("nan")
    values = np.asarray(values, dtype=float)
    return float(np.mean(values)), float(np.std(values))

def summarize_corrector(records: typing.Sequence[dict],
                        grid: typing.Sequence[float]) -> typing.List[dict]:
    """Per grid value and method: ADD-S mean and std, oc fraction and the
    mean ADD-S of the certified instances."""
    methods = []
    for record in records:
        if record["method"] not in methods:
            methods.append(record["method"])

    rows = []
    for gi, value in enumerate(grid):
        for method in methods:
            selected = [r for r in records
                        if r["grid_index"] == gi and r["method"] == method]
            adds = [r["adds"] for r in selected]
            mean, std = _stats(adds)
            certified, _ = _stats([r["adds"] for r in selected if r["oc"]])
            rows.append({"value": float(value), "method": method,
                         "count": len(selected), "adds_mean": mean,
                         "adds_std": std,
                         "oc_fraction": float(np.mean([r["oc"] for r in selected]))
                                        if selected else float("nan"),
                         "certified_adds_mean": certified})
    return rows

_centroid_metrics = ("robust_error", "mean_error", "oracle_error",
                     "robust_vs_oracle", "fps_outliers", "random_outliers",
                     "pool_outliers")

def summarize_centroid(records: typing.Sequence[dict],
                       grid: typing.Sequence[float]) -> typing.List[dict]:
    rows = []
    for gi, value in enumerate(grid):
        selected = [r for r in records if r["grid_index"] == gi]
        row = {"value": float(value), "count": len(selected)}
        for metric in _centroid_metrics:
            row[metric + "_mean"], row[metric + "_std"] = _stats(
                [r[metric] for r in selected])
        rows.append(row)
    return rows

def _write_records(out: pathlib.Path, name: str, header: typing.Sequence[str],
                   records: typing.Sequence[dict]) -> None:
    write_csv(out / name, header, ([r[key] for key in header] for r in records))

def _row(rows: typing.Sequence[dict], value: float,
         method: typing.Optional[str]=None) -> typing.Optional[dict]:
    for row in rows:
        if math.isclose(row["value"], value) and (method is None or
                                                  row["method"] == method):
            return row
    return None

def _prepare_out(config: ExperimentConfig) -> pathlib.Path:
    out = config.out if config.out is not None else pathlib.Path("results") / config.command
    out.mkdir(parents=True, exist_ok=True)
    return out

_corrector_header = ("value", "trial", "method", "adds", "oc", "oc3d", "oc2d",
                     "score3d", "score2d", "iterations")

def _corrector_context(config: ExperimentConfig) -> typing.Tuple[CorrectorContext, dict]:
    model = config.model()
    context = CorrectorContext(model, config.scene(), config.corrector(model),
                               config.certificate(model),
                               float(config.experiment["f"]),
                               float(config.experiment.get("sigma", 0.0)))
    resolved = {"corrector": context.corrector.toDict(),
                "certificate": context.certificate.toDict(),
                "scene": context.scene.toDict(),
                "model": dict(config.tree["model"], diameter=model.diameter)}
    return context, resolved

def _run_corrector_experiment(config: ExperimentConfig, trial: typing.Callable
                              ) -> typing.Tuple[pathlib.Path, dict]:
    context, resolved = _corrector_context(config)
    out = _prepare_out(config)
    write_json(out / "manifest.json", config.manifest(resolved))

    grid = config.experiment["grid"]
    logger.info("Running {}: {} grid values x {} trials".format(
        config.command, len(grid), config.experiment["trials"]))
    records = run_trials(trial, context, grid, config.experiment["trials"],
                         config.seed, config.workers)
    _write_records(out, "records.csv", _corrector_header, records)

    summary = {"sweep": config.experiment["sweep"], "grid": grid,
               "rows": summarize_corrector(records, grid)}
    write_json(out / "summary.json", summary)
    return out, summary

def run_corrector_analysis(config: ExperimentConfig
                           ) -> typing.Tuple[pathlib.Path, dict, typing.List[CheckResult]]:
    """Sweep the keypoint noise and compare no correction with the robust
    corrector.

    Returns
    -------
    pathlib.Path, dict, list of CheckResult
        The output directory, the summary and the acceptance checks
    """
    out, summary = _run_corrector_experiment(config, corrector_analysis_trial)

    checks = []
    robust = _row(summary["rows"], 0.6, "robust")
    none = _row(summary["rows"], 0.6, "none")
    if robust is not None and none is not None:
        checks.append(CheckResult("corrector oc fraction at sigma 0.6",
                                  robust["oc_fraction"] >= 0.9,
                                  "{:.3f} >= 0.9".format(robust["oc_fraction"])))
        checks.append(CheckResult("certified ADD-S at sigma 0.6",
                                  robust["certified_adds_mean"] <= 0.05,
                                  "{:.4f} <= 0.05".format(robust["certified_adds_mean"])))
        checks.append(CheckResult("baseline oc fraction at sigma 0.6",
                                  none["oc_fraction"] <= 0.05,
                                  "{:.3f} <= 0.05".format(none["oc_fraction"])))
    return out, summary, checks

def run_corrector_robustness(config: ExperimentConfig
                             ) -> typing.Tuple[pathlib.Path, dict, typing.List[CheckResult]]:
    """Sweep the outlier rate and compare no correction with the robust and
    the non-robust corrector."""
    out, summary = _run_corrector_experiment(config, corrector_robustness_trial)

    checks = []
    clean = _row(summary["rows"], 0.0, "robust")
    for value in config.experiment["grid"]:
        if value < 0.4:
            continue
        robust = _row(summary["rows"], value, "robust")
        none = _row(summary["rows"], value, "none")
        non_robust = _row(summary["rows"], value, "non_robust")
        checks.append(CheckResult(
            "ordering at eta {}".format(value),
            robust["adds_mean"] < none["adds_mean"] < non_robust["adds_mean"],
            "robust {:.4f} < none {:.4f} < non-robust {:.4f}".format(
                robust["adds_mean"], none["adds_mean"], non_robust["adds_mean"])))
        if clean is not None:
            checks.append(CheckResult(
                "robust degradation at eta {}".format(value),
                robust["adds_mean"] <= 2 * clean["adds_mean"],
                "{:.4f} <= 2 x {:.4f}".format(robust["adds_mean"], clean["adds_mean"])))
    return out, summary, checks

_centroid_header = ("value", "trial", "eta", "gamma") + _centroid_metrics + ("inliers_kept", )

def run_centroid_robustness(config: ExperimentConfig
                            ) -> typing.Tuple[pathlib.Path, dict, typing.List[CheckResult]]:
    """Sweep the outlier rate (or the inlier noise) of the ball-and-cube
    construction."""
    experiment = config.experiment
    gnc = config.gnc()
    context = _build("experiment", CentroidContext, gnc, experiment["sweep"],
                     int(experiment["n"]), int(experiment["n_prime"]),
                     float(experiment["inlier_radius"]),
                     float(experiment["outlier_half_width"]),
                     float(experiment["eta"]), float(experiment["gamma"]))
    if not 1 <= context.n_prime < context.n:
        raise ConfigError("experiment.n_prime", "must be in [1, n)")

    out = _prepare_out(config)
    write_json(out / "manifest.json", config.manifest({"gnc": gnc.toDict()}))

    grid = experiment["grid"]
    logger.info("Running centroid-robustness: {} grid values x {} trials".format(
        len(grid), experiment["trials"]))
    records = run_trials(centroid_robustness_trial, context, grid,
                         experiment["trials"], config.seed, config.workers)
    _write_records(out, "records.csv", _centroid_header, records)

    summary = {"sweep": experiment["sweep"], "grid": grid,
               "rows": summarize_centroid(records, grid)}
    write_json(out / "summary.json", summary)

    checks = []
    row = _row(summary["rows"], 0.3) if experiment["sweep"] == "eta" else None
    if row is not None:
        checks.append(CheckResult("robust centroid at eta 0.3",
                                  row["robust_error_mean"] < 0.2 * row["mean_error_mean"],
                                  "{:.4f} < 0.2 x {:.4f}".format(
                                      row["robust_error_mean"], row["mean_error_mean"])))
        checks.append(CheckResult("farthest point sampling outliers at eta 0.3",
                                  row["fps_outliers_mean"] > 0.3,
                                  "{:.3f} > 0.3".format(row["fps_outliers_mean"])))
        checks.append(CheckResult("robust pooling outliers at eta 0.3",
                                  row["pool_outliers_mean"] < 0.05,
                                  "{:.3f} < 0.05".format(row["pool_outliers_mean"])))
    return out, summary, checks

def run_selftrain(config: ExperimentConfig
                  ) -> typing.Tuple[pathlib.Path, dict, typing.List[CheckResult]]:
    """Pre-train detectors on the simulated domain and self-train them on the
    shifted domain.

    Writes the training log, a before/after comparison table, the detector
    checkpoints and a summary.
    """
    experiment = config.experiment
    model = config.model()
    corrector_cfg = config.corrector(model)
    cert_cfg = config.certificate(model)
    sim_cfg = config.scene("sim_scene")
    real_cfg = config.scene("real_scene")
    train_cfg = config.train()
    detector_cfg = config.detector()
    seeds = [int(s) for s in experiment["detector_seeds"]]
    if len(seeds) == 0:
        raise ConfigError("experiment.detector_seeds", "at least one detector is needed")

    out = _prepare_out(config)
    train_values = train_cfg.toDict()
    del train_values["workers"]
    write_json(out / "manifest.json", config.manifest({
        "corrector": corrector_cfg.toDict(), "certificate": cert_cfg.toDict(),
        "sim_scene": sim_cfg.toDict(), "real_scene": real_cfg.toDict(),
        "train": train_values, "detector": detector_cfg.toDict()}))
    if config.workers is not None:
        train_cfg = dataclasses.replace(train_cfg, workers=config.workers)

    logger.info("Generating {} simulated and {} shifted scenes".format(
        experiment["sim_scenes"], experiment["real_scenes"] + experiment["eval_scenes"]))
    sim_scenes = generate_scenes(model, sim_cfg, int(experiment["sim_scenes"]),
                                 seed=config.seed)
    real_scenes = [scene.withoutGroundTruth() for scene in generate_scenes(
        model, real_cfg, int(experiment["real_scenes"]), seed=config.seed + 1)]
    eval_scenes = generate_scenes(model, real_cfg, int(experiment["eval_scenes"]),
                                  seed=config.seed + 2)

    detectors = []
    for index, seed in enumerate(seeds):
        logger.info("Pre-training detector {} (seed {})".format(index + 1, seed))
        detectors.append(pretrain_supervised(
            KeypointDetector(model, detector_cfg, seed=seed), sim_scenes,
            dataclasses.replace(train_cfg, seed=train_cfg.seed + index)))

    threshold = float(experiment["threshold"]) * model.diameter
    before = evaluate_detectors(detectors, eval_scenes, model, corrector_cfg,
                                cert_cfg, sim_cfg.camera, threshold)
    trained, log = self_train(detectors, real_scenes, model, corrector_cfg,
                              cert_cfg, train_cfg, real_cfg.camera,
                              eval_scenes=eval_scenes)
    after = evaluate_detectors(trained, eval_scenes, model, corrector_cfg,
                               cert_cfg, real_cfg.camera, threshold)

    log.save(out / "train_log.csv")
    checkpoints = out / "checkpoints"
    checkpoints.mkdir(exist_ok=True)
    for index, detector in enumerate(trained):
        save_detector(detector, checkpoints / "detector_{}".format(index + 1))

    comparison = []
    for row_before, row_after in zip(before, after):
        comparison.append([row_before["name"], row_before["detector"],
                           row_before["corrected"], row_after["corrected"],
                           row_before["oc_fraction"], row_after["oc_fraction"]])
    write_csv(out / "comparison.csv",
              ("name", "sim_only", "sim_corrector", "self_trained",
               "oc_before", "oc_after"), comparison)

    initial = float(np.mean([r["oc_fraction"] for r in before[:-1]]))
    final = float(np.mean([r["oc_fraction"] for r in after[:-1]]))
    summary = {"initial_oc": initial, "final_oc": final, "before": before,
               "after": after, "iterations": train_cfg.iterations,
               "log_initial_oc": log.meanOc(0), "log_final_oc": log.meanOc(-1)}
    write_json(out / "summary.json", summary)

    required = 0.1 if config.check else 0.3
    checks = [
        CheckResult("oc fraction improvement", final - initial >= required,
                    "{:.3f} - {:.3f} >= {}".format(final, initial, required)),
        CheckResult("corrector bridges the domain gap",
                    all(r["corrected"] > r["detector"] for r in before[:-1]),
                    ", ".join("{:.3f} > {:.3f}".format(r["corrected"], r["detector"])
                              for r in before[:-1])),
    ]
    return out, summary, checks

def run_gen_scenes(config: ExperimentConfig
                   ) -> typing.Tuple[pathlib.Path, dict, typing.List[CheckResult]]:
    """Generate a scene dataset directory."""
    model = config.model()
    scene_cfg = config.scene()
    count = int(config.experiment["count"])
    if count < 1:
        raise ConfigError("experiment.count", "must be at least 1")

    out = _prepare_out(config)
    scenes = generate_scenes(model, scene_cfg, count, seed=config.seed)
    save_scene_dataset(out, scenes, model, scene_cfg)
    return out, {"count": count}, []
