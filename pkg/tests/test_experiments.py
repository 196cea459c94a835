import math

import numpy as np
import pytest

from gpvtf.errors import ParameterError
from gpvtf.experiments import (RESULT_FIELDS, DataSource, ExperimentSpec, read_rows, run_one, summarize, sweep,
                               write_rows)

TINY = {"max_iter": 1, "latent_dim": 8, "encoder_hidden": 16, "generator_hidden": 16, "discriminator_hidden": 8,
        "mb_kernels": 4, "mb_kernel_dims": 3, "noise_dim": 4, "kmeans_restarts": 2}
SOURCE = DataSource.synthetic(per_cluster=12, d1=6, d2=5)


def test_spec_validation():
    with pytest.raises(ParameterError):
        ExperimentSpec(SOURCE, (0.1,), ())
    with pytest.raises(ParameterError):
        ExperimentSpec(SOURCE, (0.7,), (0,))
    with pytest.raises(ParameterError):
        ExperimentSpec(SOURCE, (0.1,), (0,), conditions=("full", "bogus"))
    with pytest.raises(ParameterError):
        ExperimentSpec(SOURCE, (0.1,), (0,), overrides={"nope": 1})
    with pytest.raises(ParameterError):
        DataSource("files", {"visual": "v.csv"})


def test_grid_order_and_row_count():
    spec = ExperimentSpec(SOURCE, (0.1, 0.3, 0.5), tuple(range(10)), TINY)
    runs = list(spec.runs())
    assert len(runs) == 30
    assert [r[0] for r in runs] == list(range(30))


def test_synthetic_source_varies_with_run_seed_unless_pinned():
    a, b = SOURCE.load(0), SOURCE.load(1)
    assert not np.array_equal(a.visual, b.visual)
    pinned = DataSource.synthetic(per_cluster=12, d1=6, d2=5, seed=4)
    assert np.array_equal(pinned.load(0).visual, pinned.load(1).visual)


def test_sweep_rows_summary_and_csv(tmp_path):
    spec = ExperimentSpec(SOURCE, (0.1, 0.4), (0, 1), TINY, ("full", "no-gan", "kmeans-visual"))
    rows = sweep(spec)
    assert len(rows) == 12 and all(r["status"] == "ok" for r in rows)
    write_rows(tmp_path / "r.csv", rows, RESULT_FIELDS)
    back = read_rows(tmp_path / "r.csv")
    assert list(back[0]) == list(RESULT_FIELDS)
    summary = summarize(rows)
    assert len(summary) == 6
    for entry in summary:
        vals = [float(r["acc"]) for r in back if float(r["mr"]) == entry["mr"] and r["condition"] == entry["condition"]]
        assert entry["acc_mean"] == pytest.approx(sum(vals) / len(vals), abs=1e-15)


def test_failed_run_is_recorded_not_raised(tmp_path):
    bad = DataSource("files", {"visual": str(tmp_path / "missing.csv"), "tactile": "x", "labels": "y"})
    with pytest.raises(OSError):
        run_one(bad, 0.1, 0, "full", TINY)
    (tmp_path / "v.csv").write_text("1,2\n3,4\n")
    (tmp_path / "l.csv").write_text("0\n5\n")
    bad = DataSource("files", {"visual": str(tmp_path / "v.csv"), "tactile": str(tmp_path / "v.csv"),
                               "labels": str(tmp_path / "l.csv"), "k": 2})
    row = run_one(bad, 0.1, 0, "full", TINY)
    assert row["status"].startswith("error") and math.isnan(row["acc"])


def test_summary_ignores_failed_runs():
    rows = [
        {"mr": 0.1, "condition": "full", "acc": 0.5, "nmi": 0.4, "status": "ok"},
        {"mr": 0.1, "condition": "full", "acc": math.nan, "nmi": math.nan, "status": "diverged: x"},
    ]
    (entry,) = summarize(rows)
    assert entry["n_runs"] == 2 and entry["n_ok"] == 1 and entry["acc_mean"] == 0.5
