import csv
import json

import numpy as np
import pytest

from gpvtf.cli import EXIT_DIVERGENCE, EXIT_IO, EXIT_VALIDATION, main

FAST = {"max_iter": 2, "latent_dim": 8, "encoder_hidden": 16, "generator_hidden": 16, "discriminator_hidden": 8,
        "mb_kernels": 4, "mb_kernel_dims": 3, "noise_dim": 4, "kmeans_restarts": 2}


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "fast.json"
    path.write_text(json.dumps(FAST))
    return path


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--k", "5", "--per-cluster", "100", "--d1", "32", "--d2", "24", "--seed", "7",
                 "--out", str(out)]) == 0
    return out


def test_synth_writes_three_files_and_manifest(synth_dir):
    for name in ("visual.csv", "tactile.csv", "labels.csv"):
        assert len((synth_dir / name).read_text().splitlines()) == 500
    manifest = json.loads((synth_dir / "manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["params"]["k"] == 5


def test_synth_manifest_replay_is_bit_identical(synth_dir, tmp_path):
    again = tmp_path / "again"
    assert main(["synth", "--manifest", str(synth_dir / "manifest.json"), "--out", str(again)]) == 0
    for name in ("visual.csv", "tactile.csv", "labels.csv", "manifest.json"):
        assert (again / name).read_bytes() == (synth_dir / name).read_bytes()


def test_synth_rejects_zero_clusters(tmp_path, capsys):
    assert main(["synth", "--k", "0", "--out", str(tmp_path / "x")]) == EXIT_VALIDATION
    assert "k must be" in capsys.readouterr().err


def test_train_on_manifest(synth_dir, tmp_path, fast_config):
    out = tmp_path / "run"
    code = main(["train", "--data", str(synth_dir), "--mr", "0.1", "--seed", "1", "--config", str(fast_config),
                 "--out", str(out)])
    assert code == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert 0 <= metrics["acc"] <= 1 and 0 <= metrics["nmi"] <= 1
    assert metrics["seed"] == 1 and metrics["mr"] == 0.1
    assert metrics["config"]["max_iter"] == 2
    assert metrics["data"]["sha256"]["visual"]
    preds = list(csv.DictReader((out / "predictions.csv").open()))
    assert len(preds) == 500
    assert (out / "losses.svg").read_text().lstrip().startswith("<?xml")


def test_disable_gan_flag_zeroes_columns(synth_dir, tmp_path, fast_config):
    out = tmp_path / "nogan"
    assert main(["train", "--data", str(synth_dir), "--disable-gan", "--config", str(fast_config),
                 "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "losses.csv").open()))
    assert len(rows) == 2
    for r in rows:
        for col in ("L_G1", "L_G2", "L_D1", "L_D2"):
            assert float(r[col]) == 0.0


def test_reference_values_as_flags_echo_defaults(tmp_path, fast_config):
    out = tmp_path / "echo"
    assert main(["train", "--alpha", "0.2", "--beta", "1", "--phi1", "0.01", "--phi2", "0.01",
                 "--config", str(fast_config), "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    for key, value in metrics["reference_defaults"].items():
        assert metrics["config"][key] == value


def test_precedence_defaults_config_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({**FAST, "alpha": 0.4, "beta": 2.0, "seed": 9}))
    out = tmp_path / "p"
    assert main(["train", "--config", str(cfg), "--beta", "0.5", "--out", str(out)]) == 0
    m = json.loads((out / "metrics.json").read_text())
    assert m["config"]["alpha"] == 0.4      # config file beats default
    assert m["config"]["beta"] == 0.5       # flag beats config file
    assert m["config"]["lr_g1"] == 3e-6     # default survives
    assert m["seed"] == 9


def test_train_replay_is_byte_identical(tmp_path, fast_config):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--seed", "3", "--mr", "0.3", "--config", str(fast_config), "--out", str(first)]) == 0
    assert main(["train", "--replay", str(first / "metrics.json"), "--out", str(second)]) == 0
    for name in ("metrics.json", "predictions.csv", "losses.csv", "mask.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_train_with_mask_file(synth_dir, tmp_path, fast_config):
    out = tmp_path / "m1"
    assert main(["train", "--data", str(synth_dir), "--mr", "0.2", "--config", str(fast_config),
                 "--out", str(out)]) == 0
    out2 = tmp_path / "m2"
    assert main(["train", "--data", str(synth_dir), "--mask", str(out / "mask.csv"), "--config", str(fast_config),
                 "--out", str(out2)]) == 0
    assert (out / "predictions.csv").read_bytes() == (out2 / "predictions.csv").read_bytes()


def test_checkpoint_and_resume_via_cli(tmp_path, fast_config):
    out = tmp_path / "ck"
    assert main(["train", "--checkpoint-every", "1", "--config", str(fast_config), "--out", str(out)]) == 0
    assert (out / "checkpoints" / "epoch_0001.npz").exists()
    out2 = tmp_path / "resumed"
    assert main(["train", "--resume", str(out / "checkpoints" / "epoch_0001.npz"), "--config", str(fast_config),
                 "--out", str(out2)]) == 0
    assert (out / "predictions.csv").read_bytes() == (out2 / "predictions.csv").read_bytes()


def test_sweep_outputs(tmp_path, fast_config):
    out = tmp_path / "sweep"
    code = main(["sweep", "--mrs", "0.1,0.3,0.5", "--n-seeds", "2", "--ablate", "gan,fusion-kl",
                 "--config", str(fast_config), "--max-iter", "1", "--out", str(out)])
    assert code == 0
    rows = list(csv.DictReader((out / "results.csv").open()))
    assert len(rows) == 3 * 2 * 3
    assert {r["condition"] for r in rows} == {"full", "no-gan", "no-fusion-kl"}
    summary = list(csv.DictReader((out / "summary.csv").open()))
    for s in summary:
        vals = [float(r["acc"]) for r in rows if r["mr"] == s["mr"] and r["condition"] == s["condition"]]
        assert float(s["acc_mean"]) == pytest.approx(np.mean(vals), abs=1e-12)
    for name in ("acc_vs_mr.svg", "nmi_vs_mr.svg"):
        assert (out / name).read_text().count("<svg") == 1


def test_sweep_rejects_unknown_ablation(tmp_path):
    assert main(["sweep", "--ablate", "encoders", "--out", str(tmp_path)]) == EXIT_VALIDATION


def test_eval_identity_permutation_and_errors(tmp_path, capsys):
    labels = tmp_path / "labels.csv"
    labels.write_text("0\n0\n1\n2\n2\n")
    assert main(["eval", "--pred", str(labels), "--labels", str(labels)]) == 0
    assert json.loads(capsys.readouterr().out) == {"acc": 1.0, "nmi": 1.0, "n": 5}
    perm = tmp_path / "perm.csv"
    perm.write_text("sample_index,label\n0,2\n1,2\n2,0\n3,1\n4,1\n")
    assert main(["eval", "--pred", str(perm), "--labels", str(labels), "--out", str(tmp_path / "e")]) == 0
    assert json.loads((tmp_path / "e" / "eval.json").read_text())["acc"] == 1.0
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["eval", "--pred", str(empty), "--labels", str(labels)]) == EXIT_VALIDATION
    short = tmp_path / "short.csv"
    short.write_text("0\n1\n")
    assert main(["eval", "--pred", str(short), "--labels", str(labels)]) == EXIT_VALIDATION
    assert main(["eval", "--pred", str(tmp_path / "nope.csv"), "--labels", str(labels)]) == EXIT_IO


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(tmp_path):
    cfg = tmp_path / "boom.json"
    cfg.write_text(json.dumps({**FAST, "lr_encoders": 1e300, "max_iter": 3}))
    code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "d")])
    assert code == EXIT_DIVERGENCE


def test_bad_config_file(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "x")]) == EXIT_VALIDATION
    cfg.write_text(json.dumps({"unknown_key": 1}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "x")]) == EXIT_VALIDATION


def test_global_flags_before_or_after_subcommand(tmp_path, fast_config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--seed", "4", "--config", str(fast_config), "--out", str(a), "train"]) == 0
    assert main(["train", "--seed", "4", "--config", str(fast_config), "--out", str(b)]) == 0
    assert (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()
