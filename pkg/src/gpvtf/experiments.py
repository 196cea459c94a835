"""Experiment plumbing: dataset sources, single runs and missing-rate sweeps."""
from __future__ import annotations

import csv
import hashlib
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import BASELINES, evaluate_baseline
from .data import MissingMask, PairedDataset, load_dataset, make_mask, synth_dataset
from .errors import DivergenceError, GPVTFError, ParameterError
from .trainer import TrainConfig, TrainReport, Trainer

# k=5, n=500, d1=32, d2=24; cluster means 8 units apart in a 4-d code; the
# visual view sees a random 3-d slice of it and the tactile view a 2-d one
SYNTH_DEFAULTS = {
    "k": 5,
    "per_cluster": 100,
    "d1": 32,
    "d2": 24,
    "separation": 8.0,
    "modality_noise": 0.5,
    "latent_dim": 4,
    "view_rank": (3, 2),
}

MODEL_CONDITIONS = {
    "full": {},
    "no-gan": {"disable_gan": True},
    "no-fusion-kl": {"disable_fusion_kl": True},
}
ABLATIONS = {"gan": "no-gan", "fusion-kl": "no-fusion-kl"}
CONDITIONS = tuple(MODEL_CONDITIONS) + BASELINES

RESULT_FIELDS = ("run_id", "mr", "seed", "condition", "acc", "nmi", "epochs_run", "wall_clock_s", "status")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class DataSource:
    """Where a run's dataset comes from.

    ``kind`` is ``"synthetic"`` (``params`` holds the generator arguments) or
    ``"files"`` (``params`` holds ``visual``, ``tactile``, ``labels`` paths and
    optionally ``k``). A synthetic source without a ``seed`` draws a fresh
    dataset per run seed.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "synthetic":
            unknown = set(self.params) - set(SYNTH_DEFAULTS) - {"seed"}
            if unknown:
                raise ParameterError(f"unknown synthetic parameters: {sorted(unknown)}")
        elif self.kind == "files":
            missing = {"visual", "tactile", "labels"} - set(self.params)
            if missing:
                raise ParameterError(f"file source needs paths for {sorted(missing)}")
        else:
            raise ParameterError(f"unknown data source kind {self.kind!r}")

    @classmethod
    def synthetic(cls, **params) -> "DataSource":
        return cls("synthetic", {**SYNTH_DEFAULTS, **params})

    def load(self, run_seed: int) -> PairedDataset:
        if self.kind == "synthetic":
            p = dict(self.params)
            seed = p.pop("seed", None)
            return synth_dataset(seed=run_seed if seed is None else seed, **p)
        p = self.params
        return load_dataset(p["visual"], p["tactile"], p["labels"], p.get("k"))

    def describe(self) -> dict:
        out = {"kind": self.kind, **self.params}
        if self.kind == "files":
            out["sha256"] = {m: sha256_file(self.params[m]) for m in ("visual", "tactile", "labels")}
        return out


@dataclass(frozen=True)
class ExperimentSpec:
    source: DataSource
    missing_rates: tuple[float, ...]
    seeds: tuple[int, ...]
    overrides: dict = field(default_factory=dict)
    conditions: tuple[str, ...] = ("full",)
    out: Path | None = None

    def __post_init__(self):
        if not self.seeds:
            raise ParameterError("an experiment needs at least one seed")
        if not self.missing_rates:
            raise ParameterError("an experiment needs at least one missing rate")
        for mr in self.missing_rates:
            if not 0.0 <= mr <= 0.5:
                raise ParameterError(f"missing rate {mr} outside [0, 0.5]")
        for c in self.conditions:
            if c not in CONDITIONS:
                raise ParameterError(f"unknown condition {c!r}; expected one of {CONDITIONS}")
        TrainConfig.from_dict(self.overrides)  # fail early on bad keys

    def runs(self):
        """(run_id, mr, seed, condition) in a fixed order."""
        run_id = 0
        for mr in self.missing_rates:
            for seed in self.seeds:
                for cond in self.conditions:
                    yield run_id, mr, seed, cond
                    run_id += 1


def config_for(condition: str, seed: int, overrides: dict) -> TrainConfig:
    return TrainConfig.from_dict({**overrides, **MODEL_CONDITIONS[condition], "seed": seed})


def train_once(dataset: PairedDataset, mask: MissingMask, config: TrainConfig, checkpoint=None,
               resume=None) -> TrainReport:
    trainer = Trainer.resume(dataset, mask, resume) if resume else Trainer(dataset, mask, config)
    return trainer.fit(checkpoint)


def run_one(source: DataSource, mr: float, seed: int, condition: str, overrides: dict) -> dict:
    """One cell of a sweep; failures come back as a row with a status instead of raising."""
    start = time.perf_counter()
    row = {"mr": mr, "seed": seed, "condition": condition}
    try:
        dataset = source.load(seed)
        mask = make_mask(dataset.n, mr, seed)
        if condition in BASELINES:
            acc, nmi_score = evaluate_baseline(condition, dataset, mask, seed)
            epochs = 0
        else:
            report = train_once(dataset, mask, config_for(condition, seed, overrides))
            acc, nmi_score, epochs = report.acc, report.nmi, report.epochs_run
        row.update(acc=acc, nmi=nmi_score, epochs_run=epochs, status="ok")
    except DivergenceError as exc:
        row.update(acc=math.nan, nmi=math.nan, epochs_run=exc.epoch, status=f"diverged: {exc}")
    except GPVTFError as exc:
        row.update(acc=math.nan, nmi=math.nan, epochs_run=0, status=f"error: {exc}")
    row["wall_clock_s"] = time.perf_counter() - start
    return row


def _run_cell(args):
    return run_one(*args)


def sweep(spec: ExperimentSpec, workers: int = 1, progress=None) -> list[dict]:
    """Run the whole grid. Rows come back in ``run_id`` order whatever ``workers`` is."""
    cells = list(spec.runs())
    jobs = [(spec.source, mr, seed, cond, spec.overrides) for _, mr, seed, cond in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_cell(job))
            if progress:
                progress(len(results), len(jobs), results[-1])
    return [{"run_id": run_id, **row} for (run_id, *_), row in zip(cells, results)]


def summarize(rows: list[dict]) -> list[dict]:
    """Mean and population std of ACC/NMI per (mr, condition) over successful runs."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["mr"], r["condition"]), []).append(r)
    out = []
    for (mr, cond), members in sorted(groups.items(), key=lambda kv: (kv[0][0], CONDITIONS.index(kv[0][1]))):
        ok = [r for r in members if r["status"] == "ok"]
        entry = {"mr": mr, "condition": cond, "n_runs": len(members), "n_ok": len(ok)}
        for metric in ("acc", "nmi"):
            vals = np.array([r[metric] for r in ok], dtype=np.float64)
            entry[f"{metric}_mean"] = float(vals.mean()) if vals.size else math.nan
            entry[f"{metric}_std"] = float(vals.std()) if vals.size else math.nan
        out.append(entry)
    return out


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(path, rows: list[dict], fields) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r[f]) for f in fields])


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


SUMMARY_FIELDS = ("mr", "condition", "n_runs", "n_ok", "acc_mean", "acc_std", "nmi_mean", "nmi_std")
