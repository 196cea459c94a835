"""Encoders, conditional generators with the cluster-structured noise prior,
mini-batch-discriminating discriminators, and the adversarial losses."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DimensionError, ParameterError
from .numeric import _backward_raw, _forward_raw, as_matrix, xavier_init
from .rng import make_rng

CHECKPOINT_FORMAT = "gpvtf-checkpoint/1"
GENERATOR_LOSSES = ("non_saturating", "printed", "saturating")

# keeps log() finite when D saturates at the logit clip
_PROB_EPS = 1e-12


class MLP:
    """Stack of dense layers holding its parameters in ``params`` (W0, b0, W1, b1, ...)."""

    def __init__(self, sizes, activations, rng: np.random.Generator):
        if len(activations) != len(sizes) - 1:
            raise ParameterError("need one activation per layer")
        self.activations = list(activations)
        self.params: dict[str, np.ndarray] = {}
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.params[f"W{i}"] = xavier_init(fan_in, fan_out, rng)
            self.params[f"b{i}"] = np.zeros(fan_out)

    @property
    def n_layers(self) -> int:
        return len(self.activations)

    def forward(self, x):
        x = as_matrix(x)
        if x.shape[1] != self.params["W0"].shape[0]:
            raise DimensionError(f"input {x.shape} does not match first layer {self.params['W0'].shape}")
        cache = []
        for i, act in enumerate(self.activations):
            pre, out = _forward_raw(x, self.params[f"W{i}"], self.params[f"b{i}"], act)
            cache.append((x, pre, out))
            x = out
        return x, cache

    def backward(self, cache, upstream, input_grad: bool = True):
        """Parameter gradients and dL/d(input); the latter is None when ``input_grad`` is False."""
        grads = {}
        g = as_matrix(upstream)
        for i in reversed(range(self.n_layers)):
            x, pre, out = cache[i]
            grads[f"W{i}"], grads[f"b{i}"], g = _backward_raw(x, self.params[f"W{i}"], pre, out, self.activations[i], g,
                                                              input_grad or i > 0)
        return grads, g

    def __call__(self, x):
        return self.forward(x)[0]


class Encoder(MLP):
    def __init__(self, in_dim: int, hidden: int, latent: int, rng):
        super().__init__([in_dim, hidden, latent], ["relu", "linear"], rng)


@dataclass(frozen=True)
class NoisePrior:
    """Gaussian block of ``dn`` dims with std ``sigma`` followed by a one-hot block of ``k`` dims."""

    dn: int = 32
    sigma: float = 0.1
    k: int = 2

    def __post_init__(self):
        if self.sigma <= 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if self.dn < 0 or self.k < 1:
            raise ParameterError(f"invalid noise sizes dn={self.dn}, k={self.k}")

    @property
    def dim(self) -> int:
        return self.dn + self.k


def sample_noise(prior: NoisePrior, batch: int, seed) -> np.ndarray:
    if batch < 1:
        raise ParameterError(f"batch must be >= 1, got {batch}")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed, "noise")
    out = np.zeros((batch, prior.dim))
    out[:, :prior.dn] = rng.standard_normal((batch, prior.dn))
    out[:, :prior.dn] *= prior.sigma
    out[np.arange(batch), prior.dn + rng.integers(prior.k, size=batch)] = 1.0
    return out


class Generator(MLP):
    """Three dense layers mapping [noise, condition latent] to a latent of the target modality."""

    def __init__(self, prior: NoisePrior, latent: int, hidden: int, rng):
        self.prior = prior
        self.latent = latent
        super().__init__([prior.dim + latent, hidden, hidden, latent], ["relu", "relu", "linear"], rng)

    def generate(self, noise, condition):
        condition = as_matrix(condition)
        if condition.shape[1] != self.latent:
            raise DimensionError(f"condition latents have dimension {condition.shape[1]}, expected {self.latent}")
        return self.forward(np.hstack([noise, condition]))

    def backward(self, cache, upstream, input_grad: bool = True):
        grads, g_in = super().backward(cache, upstream, input_grad)
        return grads, None if g_in is None else g_in[:, self.prior.dim:]


def cross_generate(generator: Generator, condition_latents, prior: NoisePrior, seed) -> np.ndarray:
    """Fake latents of one modality conditioned on latents of the other."""
    condition_latents = as_matrix(condition_latents)
    noise = sample_noise(prior, condition_latents.shape[0], seed)
    return generator.generate(noise, condition_latents)[0]


# ---------------------------------------------------------------------------
# mini-batch discrimination


def minibatch_features(activations, tensor, n_kernels: int) -> np.ndarray:
    """o[i, b] = sum_{j != i} exp(-||M[i, b] - M[j, b]||_1) with M = reshape(h T)."""
    return _minibatch(as_matrix(activations), as_matrix(tensor), n_kernels)[0]


def _minibatch(h, tensor, n_kernels):
    if tensor.shape[0] != h.shape[1] or tensor.shape[1] % n_kernels:
        raise DimensionError(f"tensor {tensor.shape} incompatible with activations {h.shape} and {n_kernels} kernels")
    # kernels x kernel dims x samples, so the pairwise loops walk contiguous memory
    m = (tensor.T @ h.T).reshape(n_kernels, -1, h.shape[0])
    o, e = _kernels.minibatch_forward(m)
    return o, (h, m, e)


def _minibatch_backward(tensor, cache, upstream, param_grad: bool = True):
    """Returns (dL/dT or None, dL/dh)."""
    h, m, e = cache
    g_m = _kernels.minibatch_backward(m, e, np.ascontiguousarray(upstream)).reshape(tensor.shape[1], -1)
    g_t = (g_m @ h).T if param_grad else None
    return g_t, (tensor @ g_m).T


class Discriminator:
    """Dense+relu, mini-batch discrimination features appended, dense+sigmoid."""

    def __init__(self, latent: int, hidden: int, n_kernels: int, kernel_dims: int, rng):
        self.n_kernels = n_kernels
        self.params = {
            "W0": xavier_init(latent, hidden, rng),
            "b0": np.zeros(hidden),
            "T": xavier_init(hidden, n_kernels * kernel_dims, rng),
            "W1": xavier_init(hidden + n_kernels, 1, rng),
            "b1": np.zeros(1),
        }

    def forward(self, z):
        z = as_matrix(z)
        p = self.params
        if z.shape[1] != p["W0"].shape[0]:
            raise DimensionError(f"latents {z.shape} do not match discriminator input {p['W0'].shape[0]}")
        pre0, h = _forward_raw(z, p["W0"], p["b0"], "relu")
        o, mb_cache = _minibatch(h, p["T"], self.n_kernels)
        # the raw sums grow with the batch and would pin the sigmoid at 1
        scale = 1.0 / max(z.shape[0] - 1, 1)
        feats = np.hstack([h, o * scale])
        pre1, out = _forward_raw(feats, p["W1"], p["b1"], "sigmoid")
        return out[:, 0], (z, pre0, h, feats, pre1, out, mb_cache, scale)

    def backward(self, cache, upstream, param_grads: bool = True, input_grad: bool = True):
        """``upstream`` is dL/d(output probabilities), one entry per sample.

        Returns ``(grads, dL/dz)``; either part is None when switched off.
        """
        z, pre0, h, feats, pre1, out, mb_cache, scale = cache
        p = self.params
        up = np.asarray(upstream, dtype=np.float64).reshape(-1, 1)
        g_w1, g_b1, g_feats = _backward_raw(feats, p["W1"], pre1, out, "sigmoid", up)
        hidden = h.shape[1]
        g_t, g_h_mb = _minibatch_backward(p["T"], mb_cache, g_feats[:, hidden:] * scale, param_grads)
        g_h = g_feats[:, :hidden] + g_h_mb
        if param_grads:
            g_w0, g_b0, g_z = _backward_raw(z, p["W0"], pre0, h, "relu", g_h, input_grad)
            grads = {"W0": g_w0, "b0": g_b0, "T": g_t, "W1": g_w1, "b1": g_b1}
        else:
            grads, g_z = None, (g_h * (pre0 > 0)) @ p["W0"].T
        return grads, g_z

    def __call__(self, z):
        return self.forward(z)[0]


# ---------------------------------------------------------------------------
# losses


def _log(x):
    return np.log(np.maximum(x, _PROB_EPS))


def generator_loss(d_out_fake, fake, target, lam: float = 0.1, mode: str = "non_saturating",
                   target_rows=None):
    """Adversarial term plus ``lam`` times the mean squared distance to real latents.

    Modes for the adversarial term: ``non_saturating`` minimizes -log D(fake),
    ``saturating`` minimizes log(1 - D(fake)), ``printed`` minimizes
    -log(1 - D(fake)). ``target_rows`` selects the rows that have a real
    latent to compare against (default: all).

    Returns ``(loss, dL/dD(fake), dL/dfake)`` where the last term covers only
    the similarity regularizer.
    """
    d = np.asarray(d_out_fake, dtype=np.float64).reshape(-1)
    fake, target = as_matrix(fake), as_matrix(target)
    if fake.shape != target.shape or fake.shape[0] != d.shape[0]:
        raise DimensionError(f"D outputs {d.shape}, fake {fake.shape} and target {target.shape} disagree")
    b = d.shape[0]
    if mode == "non_saturating":
        adv, g_d = -_log(d).mean(), -1.0 / (np.maximum(d, _PROB_EPS) * b)
    elif mode == "printed":
        adv, g_d = -_log(1.0 - d).mean(), 1.0 / (np.maximum(1.0 - d, _PROB_EPS) * b)
    elif mode == "saturating":
        adv, g_d = _log(1.0 - d).mean(), -1.0 / (np.maximum(1.0 - d, _PROB_EPS) * b)
    else:
        raise ParameterError(f"unknown generator loss {mode!r}; expected one of {GENERATOR_LOSSES}")
    rows = np.ones(b, bool) if target_rows is None else np.asarray(target_rows, bool)
    g_fake = np.zeros_like(fake)
    reg = 0.0
    if rows.any():
        diff = fake[rows] - target[rows]
        reg = float((diff**2).sum(1).mean())
        g_fake[rows] = lam * 2.0 * diff / rows.sum()
    return float(adv + lam * reg), g_d, g_fake


def discriminator_loss(d_out_real, d_out_fake):
    """Negated objective: -(mean log D(real) + mean log(1 - D(fake))).

    An empty real batch contributes nothing. Returns ``(loss, dL/dD(real), dL/dD(fake))``.
    """
    r = np.asarray(d_out_real, dtype=np.float64).reshape(-1)
    f = np.asarray(d_out_fake, dtype=np.float64).reshape(-1)
    loss = 0.0
    g_r = np.zeros_like(r)
    g_f = np.zeros_like(f)
    if r.size:
        loss -= _log(r).mean()
        g_r = -1.0 / (np.maximum(r, _PROB_EPS) * r.size)
    if f.size:
        loss -= _log(1.0 - f).mean()
        g_f = 1.0 / (np.maximum(1.0 - f, _PROB_EPS) * f.size)
    return float(loss), g_r, g_f


# ---------------------------------------------------------------------------
# the full model


@dataclass(frozen=True)
class NetworkSizes:
    latent: int = 64
    encoder_hidden: int = 256
    generator_hidden: int = 128
    discriminator_hidden: int = 64
    mb_kernels: int = 16
    mb_kernel_dims: int = 5
    noise_dim: int = 32


class Model:
    """The two encoders, two generators and two discriminators.

    ``g1`` produces visual latents from tactile ones and ``g2`` the reverse.
    """

    def __init__(self, d1: int, d2: int, k: int, sizes: NetworkSizes, sigma: float, seed):
        self.sizes = sizes
        self.prior = NoisePrior(sizes.noise_dim, sigma, k)
        rng = make_rng(seed, "init")
        self.e1 = Encoder(d1, sizes.encoder_hidden, sizes.latent, rng)
        self.e2 = Encoder(d2, sizes.encoder_hidden, sizes.latent, rng)
        self.g1 = Generator(self.prior, sizes.latent, sizes.generator_hidden, rng)
        self.g2 = Generator(self.prior, sizes.latent, sizes.generator_hidden, rng)
        self.d1 = Discriminator(sizes.latent, sizes.discriminator_hidden, sizes.mb_kernels, sizes.mb_kernel_dims, rng)
        self.d2 = Discriminator(sizes.latent, sizes.discriminator_hidden, sizes.mb_kernels, sizes.mb_kernel_dims, rng)

    NETS = ("e1", "e2", "g1", "g2", "d1", "d2")

    def named_params(self):
        for net in self.NETS:
            for name, arr in getattr(self, net).params.items():
                yield f"{net}.{name}", arr

    def load_params(self, arrays: dict[str, np.ndarray]) -> None:
        for key, arr in arrays.items():
            net, name = key.split(".", 1)
            target = getattr(self, net).params
            if target[name].shape != arr.shape:
                raise DimensionError(f"{key}: checkpoint shape {arr.shape} != model shape {target[name].shape}")
            target[name] = np.array(arr, dtype=np.float64)


def save_archive(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write named arrays plus a JSON metadata block tagged with the format version.

    Layout: one ``.npz`` archive; each array keeps its own shape header; the
    key ``__meta__`` holds UTF-8 JSON with at least ``format``.
    """
    meta = {"format": CHECKPOINT_FORMAT, **meta}
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path) as z:
        meta = json.loads(z["__meta__"].tobytes().decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ParameterError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    return arrays, meta
