"""Training loop: encoder self-training on fused KL losses, alternating
generator/discriminator updates, per-epoch fusion and center refresh."""
from __future__ import annotations

import hashlib
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import clustering as cl
from .data import Batch, MissingMask, PairedDataset, batches, standardize
from .errors import DivergenceError, ParameterError
from .metrics import accuracy, nmi
from .networks import (GENERATOR_LOSSES, Model, NetworkSizes, discriminator_loss, generator_loss, load_archive,
                       sample_noise, save_archive)
from .numeric import AdamState, Optimizer
from .rng import make_rng

LOSS_NAMES = ("L_E1", "L_E2", "L_G1", "L_G2", "L_D1", "L_D2")
CENTER_UPDATES = ("gradient+reestimate", "gradient", "reestimate")

# values stated for the method; echoed into every metrics file
REFERENCE_DEFAULTS = {
    "batch_size": 64,
    "lr_encoders": 1e-4,
    "lr_g1": 3e-6,
    "lr_g2": 4e-6,
    "lr_d": 1e-6,
    "g_updates_per_d": 5,
    "alpha": 0.2,
    "beta": 1.0,
    "lam": 0.1,
    "phi1": 0.01,
    "phi2": 0.01,
    "gamma": 1.0,
    "sigma": 0.1,
}


@dataclass
class TrainConfig:
    max_iter: int = 100
    batch_size: int = 64
    lr_encoders: float = 1e-4
    lr_g1: float = 3e-6
    lr_g2: float = 4e-6
    lr_d: float = 1e-6
    g_updates_per_d: int = 5
    alpha: float = 0.2
    beta: float = 1.0
    lam: float = 0.1
    phi1: float = 0.01
    phi2: float = 0.01
    gamma: float = 1.0
    sigma: float = 0.1
    seed: int = 0
    disable_gan: bool = False
    disable_fusion_kl: bool = False
    generator_loss: str = "non_saturating"
    conditioning: str = "cross"
    center_update: str = "gradient+reestimate"
    center_weights: str = "hard"
    fused_centers_from: str = "complete"
    early_stop_tol: float = 0.0  # 0 disables; 0.001 is the classic DEC rule
    kmeans_restarts: int = 10
    latent_dim: int = 64
    encoder_hidden: int = 256
    generator_hidden: int = 128
    discriminator_hidden: int = 64
    mb_kernels: int = 16
    mb_kernel_dims: int = 5
    noise_dim: int = 32

    def __post_init__(self):
        for name in ("lr_encoders", "lr_g1", "lr_g2", "lr_d"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.batch_size < 1 or self.g_updates_per_d < 1 or self.max_iter < 0:
            raise ParameterError("batch_size and g_updates_per_d must be >= 1 and max_iter >= 0")
        if self.generator_loss not in GENERATOR_LOSSES:
            raise ParameterError(f"generator_loss must be one of {GENERATOR_LOSSES}")
        if self.conditioning not in ("cross", "same"):
            raise ParameterError("conditioning must be 'cross' or 'same'")
        if self.center_update not in CENTER_UPDATES:
            raise ParameterError(f"center_update must be one of {CENTER_UPDATES}")
        if self.center_weights not in ("hard", "soft"):
            raise ParameterError("center_weights must be 'hard' or 'soft'")
        if self.fused_centers_from not in ("complete", "all"):
            raise ParameterError("fused_centers_from must be 'complete' or 'all'")
        if self.gamma <= 0 or self.sigma <= 0:
            raise ParameterError("gamma and sigma must be > 0")
        self.weights  # validates alpha/beta/phi ranges

    @property
    def weights(self) -> cl.FusionWeights:
        return cl.FusionWeights(self.alpha, self.phi1, self.phi2, self.beta)

    @property
    def sizes(self) -> NetworkSizes:
        return NetworkSizes(self.latent_dim, self.encoder_hidden, self.generator_hidden,
                            self.discriminator_hidden, self.mb_kernels, self.mb_kernel_dims, self.noise_dim)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        values = dict(values)
        if "lambda" in values:
            values["lam"] = values.pop("lambda")
        unknown = set(values) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)


@dataclass
class TrainReport:
    losses: dict[str, list[float]]
    labels: np.ndarray
    acc: float | None
    nmi: float | None
    epoch_seconds: list[float]
    epochs_run: int
    counters: dict[str, int]
    config: TrainConfig

    def loss_rows(self):
        for e in range(self.epochs_run):
            yield [e] + [self.losses[name][e] for name in self.losses]


class Trainer:
    """Holds all training state for one (dataset, mask, config) triple."""

    def __init__(self, dataset: PairedDataset, mask: MissingMask, config: TrainConfig):
        if mask.n != dataset.n:
            raise ParameterError(f"mask covers {mask.n} samples, dataset has {dataset.n}")
        if dataset.n < dataset.k:
            raise ParameterError(f"n={dataset.n} is smaller than k={dataset.k}")
        self.dataset = dataset
        self.mask = mask
        self.config = config
        self.k = dataset.k
        self.vis = mask.visual_present
        self.tac = mask.tactile_present
        self.x1 = standardize(dataset.visual, self.vis)
        self.x2 = standardize(dataset.tactile, self.tac)
        # rows whose fused latent is built from real latents only
        self.anchor = self.vis & self.tac
        if config.fused_centers_from == "all" or self.anchor.sum() < dataset.k:
            self.anchor = np.ones(dataset.n, bool)
        self.epoch = 0
        self.counters = {"encoder_steps": 0, "generator_steps": 0, "discriminator_steps": 0, "batches": 0}
        self.losses = {name: [] for name in LOSS_NAMES + ("KL_fused",)}
        self.epoch_seconds: list[float] = []
        self.labels = None
        self._initialize()

    # ------------------------------------------------------------------
    # latents

    def _noise(self, rng, n):
        return sample_noise(self.model.prior, n, rng)

    def complete(self, z1, z2, vis, tac, rng):
        """Fill missing latents and generate fakes for every row.

        Returns ``(z1c, z2c, f1, f2)``; ``f1``/``f2`` are ``None`` with the GAN
        disabled, where missing rows get the mean of the present latents.
        """
        cfg = self.config
        if cfg.disable_gan:
            z1c, z2c = z1.copy(), z2.copy()
            z1c[~vis] = self.mean1
            z2c[~tac] = self.mean2
            return z1c, z2c, None, None
        n = z1.shape[0]
        n1, n2 = self._noise(rng, n), self._noise(rng, n)
        g1, g2 = self.model.g1, self.model.g2
        z2c = z2.copy()
        tm = ~tac
        if tm.any():
            z2c[tm] = g2.generate(n2[tm], z1[tm])[0]
        if cfg.conditioning == "cross":
            f1 = g1.generate(n1, z2c)[0]
        else:
            f1 = g1.generate(n1, np.where(vis[:, None], z1, z2c))[0]
        z1c = z1.copy()
        z1c[~vis] = f1[~vis]
        if cfg.conditioning == "cross":
            f2 = g2.generate(n2, z1c)[0]
        else:
            f2 = g2.generate(n2, np.where(tac[:, None], z2, z1c))[0]
        z2c[tm] = f2[tm]
        return z1c, z2c, f1, f2

    def fuse(self, z1c, z2c, f1, f2):
        fakes = None if f1 is None else (f1, f2)
        return cl.fuse(z1c, z2c, fakes, self.config.weights)

    def encode_all(self):
        z1 = np.zeros((self.dataset.n, self.config.latent_dim))
        z2 = np.zeros_like(z1)
        z1[self.vis] = self.model.e1(self.x1[self.vis])
        z2[self.tac] = self.model.e2(self.x2[self.tac])
        return z1, z2

    def full_latents(self, rng, with_fakes: bool = True):
        """Encode everything, complete missing latents, fuse.

        ``with_fakes=False`` leaves the generated terms out of the fusion (the
        missing latents themselves still come from the generators).
        """
        z1, z2 = self.encode_all()
        self.mean1 = z1[self.vis].mean(0) if self.vis.any() else np.zeros(z1.shape[1])
        self.mean2 = z2[self.tac].mean(0) if self.tac.any() else np.zeros(z2.shape[1])
        z1c, z2c, f1, f2 = self.complete(z1, z2, self.vis, self.tac, rng)
        if not with_fakes:
            f1 = f2 = None
        return z1, z2, self.fuse(z1c, z2c, f1, f2)

    # ------------------------------------------------------------------
    # initialization

    def _initialize(self):
        cfg = self.config
        self.model = Model(self.x1.shape[1], self.x2.shape[1], self.k, cfg.sizes, cfg.sigma, cfg.seed)
        self.opt = {
            "e1": Optimizer(cfg.lr_encoders), "e2": Optimizer(cfg.lr_encoders),
            "mu1": Optimizer(cfg.lr_encoders), "mu2": Optimizer(cfg.lr_encoders),
            "g1": Optimizer(cfg.lr_g1), "g2": Optimizer(cfg.lr_g2),
            "d1": Optimizer(cfg.lr_d), "d2": Optimizer(cfg.lr_d),
        }
        z1, z2, z3 = self.full_latents(make_rng(cfg.seed, "init-fakes"), with_fakes=False)
        self.z3 = z3
        self.centers = {}
        for name, z in (("mu1", z1[self.vis]), ("mu2", z2[self.tac]), ("mu3", z3[self.anchor])):
            if z.shape[0] < self.k:
                raise ParameterError(f"only {z.shape[0]} samples available for {name}, need k={self.k}")
            self.centers[name] = cl.kmeans(z, self.k, seed=cfg.seed, n_init=cfg.kmeans_restarts).centers
        self.labels = self.predict()

    # ------------------------------------------------------------------
    # targets

    def _targets(self, z1, z2, z3):
        g = self.config.gamma
        n, k = self.dataset.n, self.k
        p1, p2 = np.zeros((n, k)), np.zeros((n, k))
        if self.vis.any():
            p1[self.vis] = cl.target_distribution(cl.soft_assign(z1[self.vis], self.centers["mu1"], g))
        if self.tac.any():
            p2[self.tac] = cl.target_distribution(cl.soft_assign(z2[self.tac], self.centers["mu2"], g))
        q3 = cl.soft_assign(z3, self.centers["mu3"], g)
        p3 = cl.target_distribution(q3)
        return p1, p2, p3, q3

    # ------------------------------------------------------------------
    # update steps

    def encoder_step(self, b: Batch, rng):
        """One Adam step of both encoders (and their centers) on the fused KL losses."""
        cfg, m = self.config, self.model
        g = cfg.gamma
        vis, tac = b.visual_present, b.tactile_present
        x1, x2 = self.x1[b.indices], self.x2[b.indices]
        z1 = np.zeros((len(b), cfg.latent_dim))
        z2 = np.zeros_like(z1)
        z1v, c1 = m.e1.forward(x1[vis]) if vis.any() else (z1[:0], None)
        z2t, c2 = m.e2.forward(x2[tac]) if tac.any() else (z2[:0], None)
        z1[vis], z2[tac] = z1v, z2t

        losses = {}
        gz1 = np.zeros_like(z1v)
        gz2 = np.zeros_like(z2t)
        own = {}
        for key, zp, p, mu in (("1", z1v, self.p1[b.indices][vis], "mu1"), ("2", z2t, self.p2[b.indices][tac], "mu2")):
            if zp.shape[0]:
                loss, gz, gc = cl.kl_latent_grad(zp, self.centers[mu], p, g)
            else:
                loss, gz, gc = 0.0, zp, np.zeros_like(self.centers[mu])
            own[key] = (loss, gz, gc)
        gz1 += own["1"][1]
        gz2 += own["2"][1]

        fused = 0.0
        if not cfg.disable_fusion_kl and cfg.beta > 0:
            # generated latents are constants for the encoder update
            z1c, z2c, f1, f2 = self.complete(z1, z2, vis, tac, rng)
            z3 = self.fuse(z1c, z2c, f1, f2)
            fused, gz3, _ = cl.kl_latent_grad(z3, self.centers["mu3"], self.p3[b.indices], g)
            gz1 += cfg.beta * (1.0 - cfg.alpha) * gz3[vis]
            gz2 += cfg.beta * cfg.alpha * gz3[tac]
        beta = 0.0 if cfg.disable_fusion_kl else cfg.beta
        losses["L_E1"] = own["1"][0] + beta * fused
        losses["L_E2"] = own["2"][0] + beta * fused

        if c1 is not None:
            grads, _ = m.e1.backward(c1, gz1, input_grad=False)
            self.opt["e1"].step(m.e1.params, grads)
        if c2 is not None:
            grads, _ = m.e2.backward(c2, gz2, input_grad=False)
            self.opt["e2"].step(m.e2.params, grads)
        if "gradient" in cfg.center_update:
            self.opt["mu1"].step(self.centers, {"mu1": own["1"][2]})
            self.opt["mu2"].step(self.centers, {"mu2": own["2"][2]})
        self.counters["encoder_steps"] += 1
        return losses

    def _batch_latents(self, b: Batch, rng):
        """Current real latents and generator conditions for a batch (all constants)."""
        z1 = np.zeros((len(b), self.config.latent_dim))
        z2 = np.zeros_like(z1)
        vis, tac = b.visual_present, b.tactile_present
        if vis.any():
            z1[vis] = self.model.e1(self.x1[b.indices][vis])
        if tac.any():
            z2[tac] = self.model.e2(self.x2[b.indices][tac])
        z1c, z2c, _, _ = self.complete(z1, z2, vis, tac, rng)
        if self.config.conditioning == "cross":
            cond1, cond2 = z2c, z1c
        else:
            cond1 = np.where(vis[:, None], z1, z2c)
            cond2 = np.where(tac[:, None], z2, z1c)
        return z1, z2, cond1, cond2

    def generator_step(self, b: Batch, latents, rng):
        """One Adam step of each generator; returns their losses."""
        cfg, m = self.config, self.model
        z1, z2, cond1, cond2 = latents
        out = {}
        for key, gen, disc, cond, target, rows in (
            ("1", m.g1, m.d1, cond1, z1, b.visual_present),
            ("2", m.g2, m.d2, cond2, z2, b.tactile_present),
        ):
            noise = self._noise(rng, len(b))
            fake, g_cache = gen.generate(noise, cond)
            d_out, d_cache = disc.forward(fake)
            loss, g_d, g_fake = generator_loss(d_out, fake, target, cfg.lam, cfg.generator_loss, rows)
            _, g_through_d = disc.backward(d_cache, g_d, param_grads=False)
            grads, _ = gen.backward(g_cache, g_fake + g_through_d, input_grad=False)
            self.opt["g" + key].step(gen.params, grads)
            out["L_G" + key] = loss
            self.counters["generator_steps"] += 1
        return out

    def discriminator_step(self, b: Batch, latents, rng):
        """One Adam step of each discriminator; batch rows missing a modality are not real examples."""
        m = self.model
        z1, z2, cond1, cond2 = latents
        out = {}
        for key, gen, disc, cond, real in (
            ("1", m.g1, m.d1, cond1, z1[b.visual_present]),
            ("2", m.g2, m.d2, cond2, z2[b.tactile_present]),
        ):
            fake = gen.generate(self._noise(rng, len(b)), cond)[0]
            d_fake, fc = disc.forward(fake)
            if real.shape[0]:
                d_real, rc = disc.forward(real)
            else:
                d_real, rc = np.zeros(0), None
            loss, g_r, g_f = discriminator_loss(d_real, d_fake)
            grads, _ = disc.backward(fc, g_f, input_grad=False)
            if rc is not None:
                grads_r, _ = disc.backward(rc, g_r, input_grad=False)
                grads = {name: grads[name] + grads_r[name] for name in grads}
            self.opt["d" + key].step(disc.params, grads)
            out["L_D" + key] = loss
            self.counters["discriminator_steps"] += 1
        return out

    # ------------------------------------------------------------------
    # epochs

    def _check(self, name, value):
        if not np.isfinite(value):
            raise DivergenceError(name, self.epoch, value)

    def train_epoch(self) -> dict[str, float]:
        cfg = self.config
        start = time.perf_counter()
        rng = make_rng(cfg.seed, "epoch", self.epoch)
        z1, z2, z3 = self.full_latents(rng)
        self.p1, self.p2, self.p3, _ = self._targets(z1, z2, z3)

        sums = {name: 0.0 for name in LOSS_NAMES}
        n_batches = 0
        for b in batches(self.dataset, self.mask, cfg.batch_size, (cfg.seed, self.epoch)):
            batch_losses = self.encoder_step(b, rng)
            if not cfg.disable_gan:
                latents = self._batch_latents(b, rng)
                g_sums = {"L_G1": 0.0, "L_G2": 0.0}
                for _ in range(cfg.g_updates_per_d):
                    for name, v in self.generator_step(b, latents, rng).items():
                        g_sums[name] += v
                batch_losses.update({name: v / cfg.g_updates_per_d for name, v in g_sums.items()})
                batch_losses.update(self.discriminator_step(b, latents, rng))
            for name, v in batch_losses.items():
                self._check(name, v)
                sums[name] += v
            n_batches += 1
            self.counters["batches"] += 1

        # refresh fused latents with fresh fakes, then all centers
        z1, z2, z3 = self.full_latents(rng)
        g = cfg.gamma
        updates = [("mu3", z3[self.anchor])]
        if "reestimate" in cfg.center_update:
            updates += [("mu1", z1[self.vis]), ("mu2", z2[self.tac])]
        for name, z in updates:
            if z.shape[0]:
                self.centers[name] = cl.reestimate_centers(
                    z, cl.soft_assign(z, self.centers[name], g),
                    hard=cfg.center_weights == "hard", previous=self.centers[name])
        self.z3 = z3
        q3 = cl.soft_assign(z3, self.centers["mu3"], g)
        kl3, _ = cl.kl_divergence(cl.target_distribution(q3), q3)
        self._check("KL_fused", kl3)

        epoch_losses = {name: sums[name] / max(n_batches, 1) for name in LOSS_NAMES}
        epoch_losses["KL_fused"] = kl3
        for name, v in epoch_losses.items():
            self.losses[name].append(float(v))
        self.epoch_seconds.append(time.perf_counter() - start)
        self.epoch += 1
        return epoch_losses

    def predict(self) -> np.ndarray:
        """Index of the largest fused soft assignment; ties go to the lowest index."""
        q3 = cl.soft_assign(self.z3, self.centers["mu3"], self.config.gamma)
        return q3.argmax(1)

    def fit(self, checkpoint=None) -> TrainReport:
        cfg = self.config
        while self.epoch < cfg.max_iter:
            self.train_epoch()
            labels = self.predict()
            changed = float(np.mean(labels != self.labels))
            self.labels = labels
            if checkpoint is not None:
                checkpoint(self)
            if cfg.early_stop_tol > 0 and changed < cfg.early_stop_tol:
                break
        acc = accuracy(self.dataset.labels, self.labels)
        nmi_score = nmi(self.dataset.labels, self.labels)
        return TrainReport(
            losses={name: list(v) for name, v in self.losses.items()},
            labels=self.labels.copy(),
            acc=acc,
            nmi=nmi_score,
            epoch_seconds=list(self.epoch_seconds),
            epochs_run=self.epoch,
            counters=dict(self.counters),
            config=cfg,
        )

    # ------------------------------------------------------------------
    # checkpoints

    def save_checkpoint(self, path) -> None:
        """Everything needed to continue bit-exactly from the current epoch boundary."""
        arrays = dict(self.model.named_params())
        for name, c in self.centers.items():
            arrays[f"centers.{name}"] = c
        arrays["state.z3"] = self.z3
        arrays["state.labels"] = self.labels
        steps = {}
        for oname, opt in self.opt.items():
            for pname, st in opt.states.items():
                arrays[f"adam.{oname}.{pname}.m"] = st.m
                arrays[f"adam.{oname}.{pname}.v"] = st.v
                steps[f"{oname}.{pname}"] = st.step
        meta = {
            "epoch": self.epoch,
            "config": self.config.to_dict(),
            "counters": self.counters,
            "losses": self.losses,
            "epoch_seconds": self.epoch_seconds,
            "adam_steps": steps,
        }
        save_archive(path, arrays, meta)

    def load_checkpoint(self, path) -> None:
        arrays, meta = load_archive(path)
        if TrainConfig.from_dict(meta["config"]) != self.config:
            raise ParameterError(f"{path}: checkpoint was written with a different config")
        self.model.load_params({k: v for k, v in arrays.items() if k.split(".", 1)[0] in Model.NETS})
        for name in self.centers:
            self.centers[name] = np.array(arrays[f"centers.{name}"], dtype=np.float64)
        self.z3 = np.array(arrays["state.z3"], dtype=np.float64)
        self.labels = np.array(arrays["state.labels"], dtype=np.int64)
        for key, step in meta["adam_steps"].items():
            oname, pname = key.split(".", 1)
            opt = self.opt[oname]
            m = np.array(arrays[f"adam.{key}.m"], dtype=np.float64)
            opt.states[pname] = AdamState(m, np.array(arrays[f"adam.{key}.v"], dtype=np.float64), opt.lr, step=step)
        self.epoch = int(meta["epoch"])
        self.counters = {k: int(v) for k, v in meta["counters"].items()}
        self.losses = {k: [float(x) for x in v] for k, v in meta["losses"].items()}
        self.epoch_seconds = [float(x) for x in meta["epoch_seconds"]]

    @classmethod
    def resume(cls, dataset: PairedDataset, mask: MissingMask, path) -> "Trainer":
        _, meta = load_archive(path)
        trainer = cls(dataset, mask, TrainConfig.from_dict(meta["config"]))
        trainer.load_checkpoint(path)
        return trainer

    # ------------------------------------------------------------------
    # introspection

    def param_digest(self, nets) -> str:
        h = hashlib.sha256()
        for net in nets:
            for name, arr in sorted(getattr(self.model, net).params.items()):
                h.update(name.encode())
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def initialize(dataset: PairedDataset, mask: MissingMask, config: TrainConfig) -> Trainer:
    return Trainer(dataset, mask, config)


def checkpoint_every(n: int, directory):
    """Callback for ``fit`` that writes ``epoch_XXXX.npz`` every ``n`` epochs."""
    if n < 1:
        raise ParameterError(f"checkpoint interval must be >= 1, got {n}")
    from pathlib import Path

    directory = Path(directory)

    def save(trainer: Trainer):
        if trainer.epoch % n == 0:
            directory.mkdir(parents=True, exist_ok=True)
            trainer.save_checkpoint(directory / f"epoch_{trainer.epoch:04d}.npz")

    return save


def run(dataset: PairedDataset, mask: MissingMask, config: TrainConfig, checkpoint=None) -> TrainReport:
    return Trainer(dataset, mask, config).fit(checkpoint)
