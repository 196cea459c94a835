"""Shared test machinery: central finite differences and the gradient-check cases."""
from __future__ import annotations

import numpy as np

from gpvtf import clustering as cl
from gpvtf.networks import (Discriminator, Encoder, Generator, NoisePrior, _minibatch, _minibatch_backward,
                            discriminator_loss, generator_loss)
from gpvtf.numeric import dense_backward, dense_forward

H = 1e-4
TOL = 1e-5
# random points closer than this to a ReLU / L1 kink are redrawn: central
# differences straddling a kink measure the jump, not the derivative
KINK_MARGIN = 1e-2


def numeric_grad(f, x: np.ndarray, h: float = H) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


# denominators never drop below this fraction of the array's largest entry;
# without it the O(h^2) truncation error dominates entries ~1e-5 times smaller
SCALE_FLOOR = 1e-3


def rel_error(analytic, numeric, scale_floor: float = SCALE_FLOOR) -> float:
    """Largest entrywise |a - n| / max(|a|, |n|, scale_floor * max|n|).

    Entries that are both exactly 0 count as 0.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    floor = scale_floor * float(np.abs(n).max()) if n.size else 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    err = np.where(denom > 0, np.abs(a - n) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(err.max()) if err.size else 0.0


def _near_kink(values, margin=KINK_MARGIN) -> bool:
    return bool(np.any(np.abs(values) < margin))


# each case draws one random instance and returns [(analytic, numeric), ...]


def case_dense(rng, activation):
    while True:
        x = rng.standard_normal((4, 6))
        w = rng.standard_normal((6, 5)) * 0.5
        b = rng.standard_normal(5) * 0.1
        pre = x @ w + b
        if activation != "relu" or not _near_kink(pre):
            break
    up = rng.standard_normal((4, 5))

    def loss():
        return float(np.sum(up * dense_forward(x, w, b, activation)))

    grads, gx = dense_backward(x, w, b, activation, up)
    return [(grads.weights, numeric_grad(loss, w)), (grads.bias, numeric_grad(loss, b)), (gx, numeric_grad(loss, x))]


def _mb_pairs_near_kink(h, t, n_kernels):
    m = (h @ t).reshape(h.shape[0], n_kernels, -1)
    d = m[:, None] - m[None, :]
    off = ~np.eye(h.shape[0], dtype=bool)
    return _near_kink(d[off])


def case_minibatch(rng):
    n_kernels = 3
    while True:
        h = rng.standard_normal((5, 4))
        t = rng.standard_normal((4, n_kernels * 2)) * 0.5
        if not _mb_pairs_near_kink(h, t, n_kernels):
            break
    up = rng.standard_normal((5, n_kernels))

    def loss():
        return float(np.sum(up * _minibatch(h, t, n_kernels)[0]))

    _, cache = _minibatch(h, t, n_kernels)
    gt, gh = _minibatch_backward(t, cache, up)
    return [(gt, numeric_grad(loss, t)), (gh, numeric_grad(loss, h))]


def _small_discriminator(rng, latent=3):
    return Discriminator(latent, hidden=4, n_kernels=2, kernel_dims=2, rng=rng)


def _disc_safe(disc, z):
    p = disc.params
    pre = z @ p["W0"] + p["b0"]
    h = np.maximum(pre, 0)
    return not _near_kink(pre) and not _mb_pairs_near_kink(h, p["T"], disc.n_kernels)


def case_discriminator(rng):
    while True:
        disc = _small_discriminator(rng)
        z = rng.standard_normal((5, 3))
        if _disc_safe(disc, z):
            break
    up = rng.standard_normal(5)

    def loss():
        return float(np.sum(up * disc.forward(z)[0]))

    _, cache = disc.forward(z)
    grads, gz = disc.backward(cache, up)
    pairs = [(gz, numeric_grad(loss, z))]
    for name in ("W0", "b0", "T", "W1", "b1"):
        pairs.append((grads[name], numeric_grad(loss, disc.params[name])))
    return pairs


def case_soft_assign(rng):
    z = rng.standard_normal((6, 3))
    mu = rng.standard_normal((2, 3))
    gamma = float(rng.uniform(0.5, 3.0))
    up = rng.standard_normal((6, 2))

    def loss():
        return float(np.sum(up * cl.soft_assign(z, mu, gamma)))

    q = cl.soft_assign(z, mu, gamma)
    gz, gmu = cl.soft_assign_backward(z, mu, q, gamma, up)
    return [(gz, numeric_grad(loss, z)), (gmu, numeric_grad(loss, mu))]


def _random_simplex(rng, n, k):
    x = rng.uniform(0.05, 1.0, size=(n, k))
    return x / x.sum(1, keepdims=True)


def case_kl(rng):
    """Fused KL loss w.r.t. Q and Q3, and through the soft assignment to Z and centers."""
    p, p3 = _random_simplex(rng, 6, 2), _random_simplex(rng, 6, 2)
    q, q3 = _random_simplex(rng, 6, 2), _random_simplex(rng, 6, 2)
    beta = float(rng.uniform(0.1, 2.0))
    _, gq, gq3 = cl.kl_loss(p, q, p3, q3, beta)
    pairs = [
        (gq, numeric_grad(lambda: cl.kl_loss(p, q, p3, q3, beta)[0], q)),
        (gq3, numeric_grad(lambda: cl.kl_loss(p, q, p3, q3, beta)[0], q3)),
    ]
    z = rng.standard_normal((6, 3))
    mu = rng.standard_normal((2, 3))
    _, gz, gmu = cl.kl_latent_grad(z, mu, p, 1.0)
    f = lambda: cl.kl_latent_grad(z, mu, p, 1.0)[0]  # noqa: E731
    pairs += [(gz, numeric_grad(f, z)), (gmu, numeric_grad(f, mu))]
    return pairs


def case_generator_loss(rng, mode):
    """Generator objective composed with a fixed discriminator, w.r.t. the fake latents."""
    while True:
        disc = _small_discriminator(rng)
        fake = rng.standard_normal((5, 3))
        if _disc_safe(disc, fake):
            break
    target = rng.standard_normal((5, 3))
    rows = rng.random(5) < 0.7
    lam = float(rng.uniform(0.05, 1.0))

    def loss():
        return generator_loss(disc.forward(fake)[0], fake, target, lam, mode, rows)[0]

    d_out, cache = disc.forward(fake)
    _, g_d, g_fake = generator_loss(d_out, fake, target, lam, mode, rows)
    _, g_through = disc.backward(cache, g_d)
    d = rng.uniform(0.05, 0.95, size=5)
    pairs = [(g_through + g_fake, numeric_grad(loss, fake))]
    pairs.append((generator_loss(d, fake, target, lam, mode, rows)[1],
                  numeric_grad(lambda: generator_loss(d, fake, target, lam, mode, rows)[0], d)))
    return pairs


def case_discriminator_loss(rng):
    r = rng.uniform(0.05, 0.95, size=int(rng.integers(1, 7)))
    f = rng.uniform(0.05, 0.95, size=int(rng.integers(1, 7)))
    _, gr, gf = discriminator_loss(r, f)
    return [(gr, numeric_grad(lambda: discriminator_loss(r, f)[0], r)),
            (gf, numeric_grad(lambda: discriminator_loss(r, f)[0], f))]


def case_encoder(rng):
    while True:
        enc = Encoder(5, 6, 3, rng)
        x = rng.standard_normal((4, 5))
        if not _near_kink(x @ enc.params["W0"] + enc.params["b0"]):
            break
    up = rng.standard_normal((4, 3))

    def loss():
        return float(np.sum(up * enc(x)))

    _, cache = enc.forward(x)
    grads, gx = enc.backward(cache, up)
    return [(gx, numeric_grad(loss, x))] + [(grads[n], numeric_grad(loss, enc.params[n])) for n in enc.params]


def case_generator(rng):
    prior = NoisePrior(dn=2, sigma=0.1, k=2)
    while True:
        gen = Generator(prior, latent=3, hidden=5, rng=rng)
        noise = np.hstack([0.1 * rng.standard_normal((4, 2)), np.eye(2)[rng.integers(2, size=4)]])
        cond = rng.standard_normal((4, 3))
        _, cache = gen.generate(noise, cond)
        if not any(_near_kink(pre) for _, pre, _ in cache[:2]):
            break
    up = rng.standard_normal((4, 3))

    def loss():
        return float(np.sum(up * gen.generate(noise, cond)[0]))

    grads, gcond = gen.backward(cache, up)
    return [(gcond, numeric_grad(loss, cond))] + [(grads[n], numeric_grad(loss, gen.params[n])) for n in gen.params]


GRADIENT_CASES = {
    "dense-relu": lambda rng: case_dense(rng, "relu"),
    "dense-sigmoid": lambda rng: case_dense(rng, "sigmoid"),
    "dense-linear": lambda rng: case_dense(rng, "linear"),
    "encoder": case_encoder,
    "generator-network": case_generator,
    "minibatch-discrimination": case_minibatch,
    "discriminator": case_discriminator,
    "soft-assignment": case_soft_assign,
    "kl-loss": case_kl,
    "generator-loss-non-saturating": lambda rng: case_generator_loss(rng, "non_saturating"),
    "generator-loss-printed": lambda rng: case_generator_loss(rng, "printed"),
    "generator-loss-saturating": lambda rng: case_generator_loss(rng, "saturating"),
    "discriminator-loss": case_discriminator_loss,
}


def worst_error(case, rng) -> float:
    return max(rel_error(a, n) for a, n in case(rng))


def brute_force_accuracy(true, pred) -> float:
    """Best one-to-one relabeling of ``pred`` by trying every permutation."""
    from itertools import permutations

    true, pred = np.asarray(true), np.asarray(pred)
    k = int(max(true.max(), pred.max())) + 1
    best = 0
    for perm in permutations(range(k)):
        best = max(best, int(np.sum(np.asarray(perm)[pred] == true)))
    return best / true.size


def brute_force_min_cost(cost) -> float:
    from itertools import permutations

    n = cost.shape[0]
    return min(sum(cost[i, p[i]] for i in range(n)) for p in permutations(range(n)))


# one line per acceptance criterion, printed again in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)


def spearman(x, y) -> float:
    """Rank correlation with average ranks for ties."""
    def ranks(v):
        v = np.asarray(v, dtype=np.float64)
        order = np.argsort(v, kind="stable")
        r = np.empty(v.size)
        r[order] = np.arange(v.size, dtype=np.float64)
        for value in np.unique(v):
            tied = v == value
            r[tied] = r[tied].mean()
        return r

    rx, ry = ranks(x), ranks(y)
    rx, ry = rx - rx.mean(), ry - ry.mean()
    denom = np.sqrt((rx @ rx) * (ry @ ry))
    return float(rx @ ry / denom) if denom > 0 else 0.0
