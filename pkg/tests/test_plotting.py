import pytest

from robustpose import TrainLog
from robustpose.plotting import plot_train_log
from robustpose.plotting import plot_corrector_summary
from robustpose.plotting import plot_centroid_summary

pytest.importorskip("matplotlib")

def corrector_summary() -> dict:
    rows = []
    for value in (0.0, 0.2):
        for method in ("none", "robust"):
            rows.append({"value": value, "method": method, "adds_mean": value / 2,
                         "oc_fraction": 1 - value})
    return {"sweep": "sigma", "rows": rows}

def test_corrector_plots(tmp_path):
    written = plot_corrector_summary(tmp_path, corrector_summary())
    assert [p.name for p in written] == ["adds_mean.svg", "oc_fraction.svg"]
    assert all(p.read_text().lstrip().startswith("<?xml") for p in written)

def test_plots_are_reproducible(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    first = plot_corrector_summary(tmp_path / "a", corrector_summary())
    second = plot_corrector_summary(tmp_path / "b", corrector_summary())
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes()

def test_centroid_plots(tmp_path):
    rows = [{"value": v, "robust_error_mean": 0.01, "mean_error_mean": v,
             "oracle_error_mean": 0.001, "fps_outliers_mean": v,
             "random_outliers_mean": v / 2, "pool_outliers_mean": 0.0}
            for v in (0.0, 0.3)]
    written = plot_centroid_summary(tmp_path, {"sweep": "eta", "rows": rows})
    assert [p.name for p in written] == ["centroid_error.svg", "sample_outliers.svg"]

def test_train_log_plot(tmp_path):
    log = TrainLog(2)
    log.append(0, [0.1, 0.2], 0.0, 0.0, 0.5)
    log.append(1, [0.3, 0.4], 0.0, 0.0, 0.4)
    log.save(tmp_path / "train_log.csv")
    path = plot_train_log(tmp_path / "train_log", tmp_path / "train_log.csv")
    assert path == tmp_path / "train_log.svg"
    assert path.is_file()
