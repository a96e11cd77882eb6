"""The `robustpose` command line interface.

Usage:
```
robustpose corrector-analysis --out results/analysis --workers 4
robustpose corrector-robustness --config robustness.json --check
robustpose centroid-robustness --plot
robustpose selftrain --seed 7 -v
robustpose gen-scenes --out scenes
robustpose certify --scene scenes --index 3
```

Exit codes are 0 on success, 1 when a `--check` threshold fails and 2 on
invalid input or configuration.
"""

import sys
import json
import typing
import logging
import pathlib
import argparse

import numpy as np

from .errors import ConfigError
from .errors import RobustPoseError
from .formats import read_json
from .formats import write_json
from .geometry import Pose
from .synth import SceneConfig
from .synth import load_scene_dataset
from .certificates import CertificateConfig
from .certificates import observable_correctness
from .experiments import COMMANDS
from .experiments import ExperimentConfig
from .experiments import build_model
from .experiments import run_selftrain
from .experiments import run_gen_scenes
from .experiments import run_corrector_analysis
from .experiments import run_centroid_robustness
from .experiments import run_corrector_robustness
from .plotting import plot_train_log
from .plotting import plot_centroid_summary
from .plotting import plot_corrector_summary

__all__ = ["build_parser", "main"]

logger = logging.getLogger(__name__)

_descriptions = {
    "corrector-analysis": "Sweep the keypoint noise and compare no correction " +
                          "with the robust corrector.",
    "corrector-robustness": "Sweep the outlier rate and compare the robust, the " +
                            "non-robust and no corrector.",
    "centroid-robustness": "Sweep outliers or noise of the ball-and-cube cloud " +
                           "and compare centroids and samplers.",
    "selftrain": "Pre-train detectors on simulated scenes and self-train them " +
                 "on the shifted domain.",
    "gen-scenes": "Write a synthetic scene dataset.",
    "certify": "Certify one pose on one scene of a dataset.",
}

_runners = {
    "corrector-analysis": run_corrector_analysis,
    "corrector-robustness": run_corrector_robustness,
    "centroid-robustness": run_centroid_robustness,
    "selftrain": run_selftrain,
    "gen-scenes": run_gen_scenes,
}

def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError("must be at least 1, got {}".format(value))
    return number

def _seed(value: str) -> int:
    number = int(value)
    if not 0 <= number < 2 ** 64:
        raise argparse.ArgumentTypeError("must be an unsigned 64 bit integer")
    return number

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=pathlib.Path, metavar="PATH",
                        help="JSON configuration tree, flags win over its values")
    common.add_argument("--seed", type=_seed, help="the experiment seed")
    common.add_argument("--out", type=pathlib.Path, metavar="DIR",
                        help="the output directory")
    common.add_argument("-v", "--verbose", action="count", default=0,
                        help="more output, repeat for debug messages")

    parser = argparse.ArgumentParser(
        prog="robustpose",
        description="Outlier-robust pose estimation experiments.")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True

    for command in COMMANDS:
        sub = subparsers.add_parser(command, parents=[common],
                                    help=_descriptions[command],
                                    description=_descriptions[command])
        sub.add_argument("--workers", type=_positive_int, metavar="N",
                         help="worker processes, all cores if not given")
        sub.add_argument("--trials", type=_positive_int, metavar="N",
                         help="trials per grid value")
        sub.add_argument("--check", action="store_true",
                         help="run at reduced scale and assert the acceptance " +
                              "thresholds")
        sub.add_argument("--plot", action="store_true",
                         help="write SVG charts (needs matplotlib)")

    certify = subparsers.add_parser("certify", parents=[common],
                                    help=_descriptions["certify"],
                                    description=_descriptions["certify"])
    certify.add_argument("--scene", type=pathlib.Path, required=True, metavar="DIR",
                         help="a dataset written by gen-scenes")
    certify.add_argument("--index", type=int, default=0,
                         help="the scene index, default: 0")
    certify.add_argument("--pose", type=pathlib.Path, metavar="PATH",
                         help="JSON file with a 4x4 pose matrix, the ground " +
                              "truth if not given")
    certify.add_argument("--offset", type=float, default=0.0,
                         help="shift the pose along x by this many diameters")
    certify.add_argument("--mesh", type=pathlib.Path,
                         help="CAD vertex file, the dataset model if not given")
    certify.add_argument("--keypoints", type=pathlib.Path,
                         help="keypoint JSON of the CAD file")
    return parser

def _configure_logging(verbosity: int) -> None:
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(verbosity, 2)]
    logging.basicConfig(format="%(name)s: %(message)s", level=level)

def _read_config(path: typing.Optional[pathlib.Path]) -> typing.Optional[dict]:
    if path is None:
        return None
    return read_json(path)

def _plot(command: str, out: pathlib.Path, summary: dict) -> None:
    if command in ("corrector-analysis", "corrector-robustness"):
        plot_corrector_summary(out, summary)
    elif command == "centroid-robustness":
        plot_centroid_summary(out, summary)
    elif command == "selftrain":
        plot_train_log(out / "train_log", out / "train_log.csv")

def _run_experiment(args: argparse.Namespace) -> int:
    config = ExperimentConfig.resolve(args.command, _read_config(args.config),
                                      seed=args.seed, trials=args.trials,
                                      out=args.out, workers=args.workers,
                                      check=args.check)
    out, summary, checks = _runners[args.command](config)
    print("Wrote {}".format(out))

    if args.plot:
        _plot(args.command, out, summary)

    if not args.check:
        return 0

    failed = 0
    for check in checks:
        status = "PASS" if check.passed else "FAIL"
        print("{} {}: {}".format(status, check.name, check.detail))
        failed += not check.passed
    if len(checks) == 0:
        logger.warning("The configured grid covers none of the checked values")
    return 1 if failed else 0

def _load_pose(path: pathlib.Path) -> Pose:
    document = read_json(path)
    if isinstance(document, dict):
        document = document.get("T", document.get("pose"))
    try:
        return Pose.fromMatrix(np.asarray(document, dtype=float), project=True)
    except (TypeError, ValueError) as e:
        raise ConfigError("pose", "{} does not hold a 4x4 pose ({})".format(path, e)) from e

def _certify(args: argparse.Namespace) -> int:
    scenes, manifest = load_scene_dataset(args.scene)
    if not 0 <= args.index < len(scenes):
        raise ConfigError("index", "the dataset has {} scenes".format(len(scenes)))
    scene = scenes[args.index]

    if args.mesh is not None:
        model = build_model({"mesh": args.mesh, "keypoints": args.keypoints})
    else:
        model = build_model(manifest["model"]["source"])
    camera = SceneConfig.fromDict(manifest["config"]).camera

    if args.pose is not None:
        pose = _load_pose(args.pose)
    elif scene.T_star is not None:
        pose = scene.T_star
    else:
        raise ConfigError("pose", "the scene has no ground truth, pass --pose")
    if args.offset != 0:
        pose = Pose(pose.rotation, pose.translation +
                    np.array([args.offset * model.diameter, 0, 0]))

    tree = _read_config(args.config) or {}
    try:
        cert_cfg = CertificateConfig.forModel(model, **tree.get("certificate", {}))
    except TypeError as e:
        raise ConfigError("certificate", str(e)) from e
    result = observable_correctness(scene.X, scene.M, pose, model, camera, cert_cfg)

    document = result.toJson()
    print(json.dumps(document, sort_keys=True))
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_json(args.out / "certificate.json", document)
    return 0

def main(argv: typing.Optional[typing.Sequence[str]]=None) -> int:
    """Run the command line interface and return the exit code."""
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)

    try:
        if args.command == "certify":
            return _certify(args)
        return _run_experiment(args)
    except (RobustPoseError, ValueError, OSError, KeyError) as e:
        logger.debug("Command failed", exc_info=True)
        print("robustpose: error: {}".format(e), file=sys.stderr)
        return 2

if __name__ == "__main__":
    sys.exit(main())
