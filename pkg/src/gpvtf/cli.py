"""Command-line entry point: ``gpvtf {synth,train,sweep,eval}``."""
from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import make_mask, read_labels, read_mask, save_dataset, synth_dataset, write_mask
from .errors import DataError, DegenerateClusterError, DimensionError, DivergenceError, ParameterError
from .experiments import (ABLATIONS, RESULT_FIELDS, SUMMARY_FIELDS, SYNTH_DEFAULTS, DataSource, ExperimentSpec,
                          sha256_file, summarize, sweep, train_once, write_rows)
from .metrics import accuracy, nmi
from .trainer import LOSS_NAMES, REFERENCE_DEFAULTS, TrainConfig, checkpoint_every

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4

SYNTH_MANIFEST = "gpvtf-synth/1"
METRICS_FORMAT = "gpvtf-metrics/1"
DATA_FILES = {"visual": "visual.csv", "tactile": "tactile.csv", "labels": "labels.csv"}


def _dump_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_json(path) -> dict:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise ParameterError(f"{path}: expected a JSON object")
    return obj


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _rank(text: str):
    """``2`` for both views or ``3,2`` for visual and tactile separately."""
    parts = _ints(text)
    if len(parts) == 1:
        return parts[0]
    if len(parts) == 2:
        return parts
    raise argparse.ArgumentTypeError(f"expected one or two ranks, got {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        m = re.fullmatch(r"(\d+)-(\d+)", part)
        if m:
            out.extend(range(int(m[1]), int(m[2]) + 1))
        elif re.fullmatch(r"\d+", part):
            out.append(int(part))
        else:
            raise argparse.ArgumentTypeError(f"expected integers or ranges like 0-9, got {text!r}")
    return tuple(out)


# ---------------------------------------------------------------------------
# parser


# (flag, TrainConfig field, type)
_TRAIN_FLAGS = [
    ("--max-iter", "max_iter", int),
    ("--batch-size", "batch_size", int),
    ("--lr-encoders", "lr_encoders", float),
    ("--lr-g1", "lr_g1", float),
    ("--lr-g2", "lr_g2", float),
    ("--lr-d", "lr_d", float),
    ("--g-updates-per-d", "g_updates_per_d", int),
    ("--alpha", "alpha", float),
    ("--beta", "beta", float),
    ("--lambda", "lam", float),
    ("--phi1", "phi1", float),
    ("--phi2", "phi2", float),
    ("--gamma", "gamma", float),
    ("--sigma", "sigma", float),
    ("--generator-loss", "generator_loss", str),
    ("--conditioning", "conditioning", str),
    ("--center-update", "center_update", str),
    ("--early-stop-tol", "early_stop_tol", float),
    ("--kmeans-restarts", "kmeans_restarts", int),
]


def _global_flags(parser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="master seed (default 0)")
    parser.add_argument("--config", type=Path, default=default, help="JSON file of TrainConfig fields")
    parser.add_argument("--out", type=Path, default=default, help="output directory")


def _data_flags(p):
    g = p.add_argument_group("dataset (default: synthetic, regenerated from the run seed)")
    g.add_argument("--data", type=Path, help="synth manifest.json or the directory holding it")
    g.add_argument("--visual", type=Path)
    g.add_argument("--tactile", type=Path)
    g.add_argument("--labels", type=Path)
    g.add_argument("--k", type=int, help="number of clusters (default: max label + 1)")


def _train_flags(p):
    g = p.add_argument_group("training (override config file and defaults)")
    for flag, dest, typ in _TRAIN_FLAGS:
        g.add_argument(flag, dest=f"cfg_{dest}", type=typ, default=None)
    g.add_argument("--disable-gan", dest="cfg_disable_gan", action="store_true", default=None)
    g.add_argument("--disable-fusion-kl", dest="cfg_disable_fusion_kl", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpvtf", description="Partial visual-tactile clustering with cross-modal GANs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    shared = argparse.ArgumentParser(add_help=False)
    _global_flags(shared, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[shared], help="write a synthetic paired dataset")
    for name, default in SYNTH_DEFAULTS.items():
        typ = float if isinstance(default, float) else _rank if name == "view_rank" else int
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None,
                       help=f"default {default}")
    p.add_argument("--manifest", type=Path, help="regenerate exactly the dataset described by this manifest")

    p = sub.add_parser("train", parents=[shared], help="train once and write predictions, losses, metrics")
    p.add_argument("--mr", type=float, default=None, help="missing rate in [0, 0.5] (default 0.1)")
    p.add_argument("--mask", type=Path, help="mask CSV instead of drawing one from the seed")
    p.add_argument("--replay", type=Path, help="metrics.json of an earlier run to reproduce")
    p.add_argument("--checkpoint-every", type=int, default=0, help="write a checkpoint every N epochs")
    p.add_argument("--resume", type=Path, help="continue from a checkpoint file")
    _data_flags(p)
    _train_flags(p)

    p = sub.add_parser("sweep", parents=[shared], help="missing-rate x seed grid with optional ablations")
    p.add_argument("--mrs", type=_floats, default=(0.1, 0.2, 0.3, 0.4, 0.5))
    p.add_argument("--n-seeds", type=int, default=10, help="seeds seed..seed+N-1 (default 10)")
    p.add_argument("--seeds", type=_ints, help="explicit seed list, e.g. 0-4,9")
    p.add_argument("--ablate", default="", help="comma list from: " + ",".join(ABLATIONS))
    p.add_argument("--baselines", action="store_true", help="add k-means baselines on raw features")
    p.add_argument("--workers", type=int, default=1)
    _data_flags(p)
    _train_flags(p)

    p = sub.add_parser("eval", parents=[shared], help="score predictions against labels")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    return parser


# ---------------------------------------------------------------------------
# shared resolution


def resolve_config(args, seed: int) -> TrainConfig:
    """Defaults < config file < flags."""
    values = {}
    if args.config is not None:
        values.update(_load_json(args.config))
    for key, val in vars(args).items():
        if key.startswith("cfg_") and val is not None:
            values[key[4:]] = val
    values["seed"] = seed
    return TrainConfig.from_dict(values)


def resolve_source(args) -> DataSource:
    if args.data is not None:
        path = args.data / "manifest.json" if args.data.is_dir() else args.data
        manifest = _load_json(path)
        if manifest.get("format") != SYNTH_MANIFEST:
            raise ParameterError(f"{path}: not a synth manifest")
        base = path.parent
        params = {m: str(base / f) for m, f in manifest["files"].items()}
        params["k"] = manifest["params"]["k"]
        return DataSource("files", params)
    explicit = [args.visual, args.tactile, args.labels]
    if any(x is not None for x in explicit):
        if not all(x is not None for x in explicit):
            raise ParameterError("--visual, --tactile and --labels must be given together")
        params = {"visual": str(args.visual), "tactile": str(args.tactile), "labels": str(args.labels)}
        if args.k is not None:
            params["k"] = args.k
        return DataSource("files", params)
    return DataSource.synthetic()


def _out_dir(args) -> Path:
    out = args.out if args.out is not None else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, seed: int) -> int:
    if args.manifest is not None:
        manifest = _load_json(args.manifest)
        if manifest.get("format") != SYNTH_MANIFEST:
            raise ParameterError(f"{args.manifest}: not a synth manifest")
        params, seed = dict(manifest["params"]), int(manifest["seed"])
    else:
        params = {name: (getattr(args, name) if getattr(args, name) is not None else default)
                  for name, default in SYNTH_DEFAULTS.items()}
        if isinstance(params["view_rank"], tuple):
            params["view_rank"] = list(params["view_rank"])
    dataset = synth_dataset(seed=seed, **params)
    out = _out_dir(args)
    paths = {m: out / f for m, f in DATA_FILES.items()}
    save_dataset(dataset, paths["visual"], paths["tactile"], paths["labels"])
    _dump_json(out / "manifest.json", {
        "format": SYNTH_MANIFEST,
        "params": params,
        "seed": seed,
        "files": DATA_FILES,
        "sha256": {m: sha256_file(p) for m, p in paths.items()},
        "n": dataset.n,
    })
    print(f"wrote {dataset.n} samples to {out}")
    return EXIT_OK


def _write_train_outputs(out: Path, report, meta: dict) -> None:
    with open(out / "predictions.csv", "w") as fh:
        fh.write("sample_index,label\n")
        for i, lab in enumerate(report.labels):
            fh.write(f"{i},{int(lab)}\n")
    names = list(LOSS_NAMES) + ["KL_fused"]
    with open(out / "losses.csv", "w") as fh:
        fh.write("epoch," + ",".join(names) + "\n")
        for e in range(report.epochs_run):
            fh.write(f"{e}," + ",".join(repr(float(report.losses[n][e])) for n in names) + "\n")
    _dump_json(out / "metrics.json", meta)
    # wall-clock numbers live apart so metrics.json stays byte-reproducible
    _dump_json(out / "timing.json", {"epoch_seconds": report.epoch_seconds,
                                     "total_seconds": float(sum(report.epoch_seconds))})


def cmd_train(args, seed: int) -> int:
    if args.replay is not None:
        prior = _load_json(args.replay)
        if prior.get("format") != METRICS_FORMAT:
            raise ParameterError(f"{args.replay}: not a metrics file")
        config = TrainConfig.from_dict(prior["config"])
        seed, mr = int(prior["seed"]), float(prior["mr"])
        d = dict(prior["data"])
        d.pop("sha256", None)
        source = DataSource(d.pop("kind"), d)
    else:
        config = resolve_config(args, seed)
        mr = 0.1 if args.mr is None else args.mr
        source = resolve_source(args)
    dataset = source.load(seed)
    if args.mask is not None:
        mask = read_mask(args.mask)
        if mask.n != dataset.n:
            raise ParameterError(f"mask has {mask.n} rows, dataset has {dataset.n}")
        mr = mask.missing_rate
    else:
        mask = make_mask(dataset.n, mr, seed)
    out = _out_dir(args)
    write_mask(out / "mask.csv", mask)
    ckpt = checkpoint_every(args.checkpoint_every, out / "checkpoints") if args.checkpoint_every else None
    try:
        report = train_once(dataset, mask, config, ckpt, args.resume)
    except DivergenceError as exc:
        print(f"diverged: loss {exc.loss_name} = {exc.value} at epoch {exc.epoch}", file=sys.stderr)
        return EXIT_DIVERGENCE
    meta = {
        "format": METRICS_FORMAT,
        "acc": report.acc,
        "nmi": report.nmi,
        "seed": seed,
        "mr": mr,
        "n_masked_slots": mask.n_masked,
        "epochs_run": report.epochs_run,
        "counters": report.counters,
        "config": report.config.to_dict(),
        "reference_defaults": REFERENCE_DEFAULTS,
        "data": source.describe(),
    }
    _write_train_outputs(out, report, meta)
    from .plotting import plot_losses

    plot_losses({n: report.losses[n] for n in LOSS_NAMES}, out / "losses.svg")
    print(json.dumps({"acc": report.acc, "nmi": report.nmi, "epochs_run": report.epochs_run}))
    return EXIT_OK


def cmd_sweep(args, seed: int) -> int:
    conditions = ["full"]
    for name in filter(None, (a.strip() for a in args.ablate.split(","))):
        if name not in ABLATIONS:
            raise ParameterError(f"unknown ablation {name!r}; expected some of {sorted(ABLATIONS)}")
        conditions.append(ABLATIONS[name])
    if args.baselines:
        conditions += ["kmeans-visual", "kmeans-tactile", "kmeans-concat"]
    seeds = args.seeds if args.seeds else tuple(range(seed, seed + args.n_seeds))
    overrides = resolve_config(args, 0).to_dict()
    overrides.pop("seed")
    spec = ExperimentSpec(resolve_source(args), tuple(args.mrs), tuple(seeds), overrides, tuple(conditions))
    out = _out_dir(args)

    def progress(done, total, row):
        print(f"[{done}/{total}] mr={row['mr']} seed={row['seed']} {row['condition']}: "
              f"acc={row['acc']:.4f} ({row['status']})", file=sys.stderr, flush=True)

    rows = sweep(spec, workers=args.workers, progress=progress)
    summary = summarize(rows)
    write_rows(out / "results.csv", rows, RESULT_FIELDS)
    write_rows(out / "summary.csv", summary, SUMMARY_FIELDS)
    _dump_json(out / "sweep.json", {
        "missing_rates": list(spec.missing_rates),
        "seeds": list(spec.seeds),
        "conditions": list(spec.conditions),
        "config": overrides,
        "reference_defaults": REFERENCE_DEFAULTS,
        "data": spec.source.describe(),
    })
    from .plotting import plot_metric_vs_mr

    plot_metric_vs_mr(summary, "acc", out / "acc_vs_mr.svg")
    plot_metric_vs_mr(summary, "nmi", out / "nmi_vs_mr.svg")
    for r in summary:
        print(f"mr={r['mr']:.2f} {r['condition']:>14}: ACC {r['acc_mean']:.4f} ± {r['acc_std']:.4f}  "
              f"NMI {r['nmi_mean']:.4f} ± {r['nmi_std']:.4f}  ({r['n_ok']}/{r['n_runs']} ok)")
    return EXIT_OK


def read_predictions(path) -> np.ndarray:
    """``sample_index,label`` CSV (as written by ``train``) or one label per line."""
    with open(path) as fh:
        first = fh.readline().strip()
    if first.replace(" ", "") == "sample_index,label":
        with open(path) as fh:
            next(fh)
            rows = [line.strip().split(",") for line in fh if line.strip()]
        try:
            return np.array([int(r[1]) for r in rows], dtype=np.int64)
        except (ValueError, IndexError):
            raise DataError(f"{path}: malformed prediction row") from None
    return read_labels(path)


def cmd_eval(args, seed: int) -> int:
    pred = read_predictions(args.pred)
    truth = read_labels(args.labels)
    if pred.size == 0 or truth.size == 0:
        raise ParameterError("predictions and labels must be non-empty")
    result = {"acc": accuracy(truth, pred), "nmi": nmi(truth, pred), "n": int(truth.size)}
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        _dump_json(args.out / "eval.json", result)
    print(json.dumps(result))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "sweep": cmd_sweep, "eval": cmd_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        seed = args.seed
        if seed is None and args.config is not None:
            seed = _load_json(args.config).get("seed")
        return COMMANDS[args.command](args, 0 if seed is None else int(seed))
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except DegenerateClusterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ParameterError, DimensionError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
