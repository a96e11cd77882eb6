"""SVG line charts of experiment summaries.

matplotlib is optional (the `plot` extra). Without it every function logs a
warning and returns None, the CSV and JSON outputs are unaffected.
"""

import os
import typing
import logging
import pathlib

from .formats import read_csv

__all__ = [
    "have_matplotlib",
    "plot_lines",
    "plot_corrector_summary",
    "plot_centroid_summary",
    "plot_train_log",
]

logger = logging.getLogger(__name__)

def _pyplot():
    try:
        import matplotlib
        matplotlib.use("Agg")
        matplotlib.rcParams["svg.hashsalt"] = "robustpose"
        import matplotlib.pyplot as plt
    except ImportError:
        return None
    return plt

def have_matplotlib() -> bool:
    return _pyplot() is not None

def plot_lines(path: typing.Union[str, os.PathLike],
               series: typing.Mapping[str, typing.Tuple[typing.Sequence[float],
                                                         typing.Sequence[float]]],
               xlabel: str, ylabel: str,
               title: typing.Optional[str]=None) -> typing.Optional[pathlib.Path]:
    """Draw one line per entry of `series` (label -> (x, y)) and save it as
    SVG.

    Returns
    -------
    pathlib.Path or None
        The written file, None if matplotlib is not installed
    """
    plt = _pyplot()
    if plt is None:
        logger.warning("matplotlib is not installed, skipping the plot {}".format(path))
        return None

    path = pathlib.Path(path).with_suffix(".svg")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, (x, y) in series.items():
        ax.plot(x, y, marker="o", markersize=3, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title is not None:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(frameon=False)
    fig.tight_layout()
    # no date and a fixed id salt keep reruns identical
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info("Wrote plot {}".format(path))
    return path

def plot_corrector_summary(directory: typing.Union[str, os.PathLike],
                           summary: typing.Mapping[str, typing.Any]
                           ) -> typing.List[pathlib.Path]:
    """Plot the mean normalized ADD-S and the oc fraction per method over the
    sweep variable."""
    directory = pathlib.Path(directory)
    methods = []
    for row in summary["rows"]:
        if row["method"] not in methods:
            methods.append(row["method"])

    written = []
    for metric, ylabel in (("adds_mean", "normalized ADD-S"),
                           ("oc_fraction", "oc fraction")):
        series = {}
        for method in methods:
            rows = [r for r in summary["rows"] if r["method"] == method]
            series[method] = ([r["value"] for r in rows], [r[metric] for r in rows])
        path = plot_lines(directory / metric, series, summary["sweep"], ylabel)
        if path is not None:
            written.append(path)
    return written

def plot_centroid_summary(directory: typing.Union[str, os.PathLike],
                          summary: typing.Mapping[str, typing.Any]
                          ) -> typing.List[pathlib.Path]:
    directory = pathlib.Path(directory)
    x = [r["value"] for r in summary["rows"]]
    written = []
    for name, labels, ylabel in (
            ("centroid_error", ("robust_error", "mean_error", "oracle_error"),
             "centroid error [m]"),
            ("sample_outliers", ("fps_outliers", "random_outliers", "pool_outliers"),
             "outlier fraction")):
        series = {label: (x, [r[label + "_mean"] for r in summary["rows"]])
                  for label in labels}
        path = plot_lines(directory / name, series, summary["sweep"], ylabel)
        if path is not None:
            written.append(path)
    return written

def plot_train_log(path: typing.Union[str, os.PathLike],
                   log_csv: typing.Union[str, os.PathLike]
                   ) -> typing.Optional[pathlib.Path]:
    """Plot the oc fraction of every detector over the self-training
    iterations of a saved training log."""
    rows = read_csv(log_csv)
    iterations = [int(row["iteration"]) for row in rows]
    series = {}
    for name in (rows[0].keys() if rows else ()):
        if name.startswith("oc_frac_"):
            series[name[len("oc_frac_"):]] = (iterations,
                                               [float(row[name]) for row in rows])
    return plot_lines(path, series, "iteration", "oc fraction")
