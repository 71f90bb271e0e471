"""A small MMD GAN on 2D point clouds whose base kernel is learned implicitly.

The critic ``f`` embeds points into ``emb_dim`` dimensions and the kernel on
embeddings is either sampled (``ikl``: a ``SpectralSampler``; ``sm``: a
``SpectralMixture``) or fixed in closed form (``gaussian``, ``rq``). Critic and
sampler ascend

    L = MMD(f(x_real), f(g(z))) - gradient penalty - variance penalty

for ``n_c`` steps, then the generator takes one descent step on the MMD.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import gen_ring_mixture, ring_centers
from .features import sqdist
from .mmd import _feature_mmd, gradient_penalty, mmd_rff_with_grads, mmd_unbiased, variance_penalty
from .numerics import AdamState, Mlp, NumericError, Prng, adam_step
from .spectral import (GaussianMixture, RQMixture, SpectralMixture, SpectralSampler, kernel_from_sqdist,
                       kernel_sqdist_derivative, sample_base, spec_from_dict, stratified_counts)

log = logging.getLogger(__name__)

KERNELS = ("ikl", "sm", "gaussian", "rq")


class GanDivergence(NumericError):
    """Training produced a non-finite loss; ``log`` holds the rows so far."""

    def __init__(self, msg, log=None):
        super().__init__(msg)
        self.log = log


@dataclass
class GanConfig:
    kernel: str = "ikl"
    lr: float = 5e-4  # generator and critic
    lr_h: float = 1e-4  # sampler
    batch_size: int = 64
    n_critic: int = 5
    m: int = 1024
    lambda_gp: float = 10.0
    lambda_h: float = 10.0
    u: float = 1.0
    u_list: list | None = None  # one sampler per entry; overrides u
    iters: int = 5000
    latent_dim: int = 8
    gen_hidden: list = field(default_factory=lambda: [64, 64])
    critic_hidden: list = field(default_factory=lambda: [64, 64])
    emb_dim: int = 16
    sampler_hidden: list = field(default_factory=lambda: [32, 32])
    sm_components: int = 4
    gaussian_bandwidths: list = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0, 16.0])
    rq_alphas: list = field(default_factory=lambda: [0.2, 0.5, 1.0, 2.0, 5.0])
    unbiased_train: bool = False
    eval_every: int = 250
    eval_n: int = 1000
    modes: int = 8
    radius: float = 2.0
    sigma: float = 0.05
    coverage_radius: float = 0.15
    ref_bandwidths: list = field(default_factory=lambda: [0.1, 0.5, 1.0, 2.0])
    seed: int = 0

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}; choose from {', '.join(KERNELS)}")
        for name in ("batch_size", "n_critic", "m", "latent_dim", "emb_dim", "eval_every", "eval_n", "modes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.iters < 0:
            raise ValueError("iters must be >= 0")
        if self.lambda_gp < 0 or self.lambda_h < 0:
            raise ValueError("penalty weights must be non-negative")
        if not (self.lr > 0 and self.lr_h > 0):
            raise ValueError("learning rates must be positive")
        if not all(u > 0 for u in self.targets):
            raise ValueError("variance targets must be positive")
        if self.u_list is not None and len(self.u_list) > self.m:
            raise ValueError("more samplers than random features")
        if self.coverage_radius <= 0 or self.sigma < 0:
            raise ValueError("need coverage_radius > 0 and sigma >= 0")

    @property
    def targets(self) -> list:
        return [self.u] if self.u_list is None else list(self.u_list)


def gaussian_targets(dim: int, bandwidths) -> list:
    """Per-member targets ``dim / sigma_q^2``: the second moment of N(0, I / sigma_q^2),
    which an identity sampler scaled by ``1 / sigma_q`` reproduces exactly. Pass as ``u_list``."""
    return [dim / float(s) ** 2 for s in bandwidths]


@dataclass(eq=False)
class GanState:
    generator: Mlp
    critic: Mlp
    samplers: list  # trainable spectral sources; empty for closed-form kernels
    kernel: object = None  # closed-form spec when samplers is empty
    opt_g: AdamState | None = None
    opt_f: AdamState | None = None
    opt_h: AdamState | None = None
    iteration: int = 0
    log: list = field(default_factory=list)

    def __post_init__(self):
        for s in self.samplers:
            if s.dim != self.critic.output_dim:
                raise ValueError(f"sampler dimension {s.dim} != critic output {self.critic.output_dim}")

    @property
    def h_params(self) -> np.ndarray:
        if not self.samplers:
            return np.zeros(0)
        return np.concatenate([s.params for s in self.samplers])

    def with_h_params(self, vec) -> list:
        out, k = [], 0
        for s in self.samplers:
            n = s.params.size
            out.append(s.with_params(vec[k:k + n]))
            k += n
        return out

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "generator": self.generator.to_dict(),
            "critic": self.critic.to_dict(),
            "samplers": [s.to_dict() for s in self.samplers],
            "kernel": None if self.kernel is None else self.kernel.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GanState":
        return cls(Mlp.from_dict(doc["generator"]), Mlp.from_dict(doc["critic"]),
                   [spec_from_dict(s) for s in doc["samplers"]],
                   None if doc.get("kernel") is None else spec_from_dict(doc["kernel"]),
                   iteration=doc.get("iteration", 0))


def init_state(cfg: GanConfig, prng: Prng) -> GanState:
    gen = Mlp.init([cfg.latent_dim, *cfg.gen_hidden, 2], prng.child("generator"))
    critic = Mlp.init([2, *cfg.critic_hidden, cfg.emb_dim], prng.child("critic"))
    samplers, kernel = [], None
    if cfg.kernel == "ikl":
        samplers = [SpectralSampler.init(cfg.emb_dim, prng.child(f"sampler{q}"), tuple(cfg.sampler_hidden))
                    for q in range(len(cfg.targets))]
    elif cfg.kernel == "sm":
        samplers = [SpectralMixture.init(cfg.sm_components, cfg.emb_dim, prng.child("sm"))]
    elif cfg.kernel == "gaussian":
        kernel = GaussianMixture(tuple(cfg.gaussian_bandwidths))
    else:
        kernel = RQMixture(tuple(cfg.rq_alphas))
    return GanState(gen, critic, samplers, kernel, AdamState(cfg.lr), AdamState(cfg.lr),
                    AdamState(cfg.lr_h))


# kernels on critic embeddings

def _blocks(m, q):
    counts = stratified_counts(m, np.ones(q))
    return np.concatenate([[0], np.cumsum(counts)])


def frequencies(samplers, nu) -> np.ndarray:
    """Rows of ``nu`` split into contiguous equal blocks, one per sampler."""
    edges = _blocks(nu.shape[0], len(samplers))
    return np.vstack([s.map(nu[a:b]) for s, a, b in zip(samplers, edges[:-1], edges[1:])])


def _frequencies_vjp(samplers, nu, upstream) -> np.ndarray:
    edges = _blocks(nu.shape[0], len(samplers))
    return np.concatenate([s.vjp(nu[a:b], upstream[a:b])
                           for s, a, b in zip(samplers, edges[:-1], edges[1:])])


def _gram_mmd(spec, ex, ey, unbiased):
    """MMD^2 under a closed-form kernel plus gradients w.r.t. both embeddings."""
    n, n2 = ex.shape[0], ey.shape[0]
    blocks = [(ex, ex), (ex, ey), (ey, ey)]
    if unbiased:
        weights = [1 / (n * (n - 1)), -2 / (n * n2), 1 / (n2 * (n2 - 1))]
    else:
        weights = [1 / n ** 2, -2 / (n * n2), 1 / n2 ** 2]
    value, dex, dey = 0.0, np.zeros_like(ex), np.zeros_like(ey)
    for (a, b), w, (da, db) in zip(blocks, weights, [(dex, dex), (dex, dey), (dey, dey)]):
        sq = sqdist(a, b)
        k = kernel_from_sqdist(spec, sq)
        dk = kernel_sqdist_derivative(spec, sq)
        if unbiased and a is b:
            np.fill_diagonal(k, 0.0)
            np.fill_diagonal(dk, 0.0)
        value += w * k.sum()
        c = 2 * w * dk  # d/da_i of k(|a_i - b_j|^2) = 2 k' (a_i - b_j)
        da += c.sum(axis=1, keepdims=True) * a - c @ b
        db += c.sum(axis=0)[:, None] * b - c.T @ a
    return float(value), dex, dey


def kernel_mmd(state: GanState, ex, ey, nu, unbiased=False):
    """MMD^2 between embeddings and gradients ``(d ex, d ey, d h_params)``."""
    if state.samplers:
        omegas = frequencies(state.samplers, nu)
        value, dex, dey, dom = mmd_rff_with_grads(ex, ey, omegas, unbiased)
        return value, dex, dey, _frequencies_vjp(state.samplers, nu, dom)
    value, dex, dey = _gram_mmd(state.kernel, ex, ey, unbiased)
    return value, dex, dey, np.zeros(0)


def second_moment(state: GanState, nu) -> float:
    """``E |w|^2`` of the current kernel's spectral measure (closed form when
    there is no sampler: ``-2 dim k'(0)``)."""
    if state.samplers:
        om = frequencies(state.samplers, nu)
        return float(np.mean(np.sum(om * om, axis=1)))
    return float(-2 * state.critic.output_dim * kernel_sqdist_derivative(state.kernel, 0.0))


# objectives

def _check_shapes(state, x_real, z):
    x_real, z = np.asarray(x_real, dtype=np.float64), np.asarray(z, dtype=np.float64)
    if x_real.ndim != 2 or x_real.shape[1] != state.critic.input_dim:
        raise ValueError(f"real batch must be n x {state.critic.input_dim}, got {x_real.shape}")
    if z.ndim != 2 or z.shape[1] != state.generator.input_dim:
        raise ValueError(f"latent batch must be n x {state.generator.input_dim}, got {z.shape}")
    if z.shape[0] != x_real.shape[0]:
        raise ValueError("real and latent batches differ in size")
    return x_real, z


def critic_objective(state: GanState, x_real, z, nu, cfg: GanConfig, prng: Prng | None = None, eps=None):
    """``L(psi, phi)`` and its gradients ``(grad_h, grad_f)`` as flat vectors."""
    x_real, z = _check_shapes(state, x_real, z)
    f = state.critic
    x_fake = state.generator(z)
    value, dex, dey, grad_h = kernel_mmd(state, f(x_real), f(x_fake), nu, cfg.unbiased_train)
    gr, _ = f.backprop(x_real, dex)
    gf, _ = f.backprop(x_fake, dey)
    grad_f = f.flatten_grads(gr) + f.flatten_grads(gf)
    if cfg.lambda_gp > 0:
        gp, gp_grad = gradient_penalty(f, x_real, x_fake, prng, cfg.lambda_gp, eps)
        value -= gp
        grad_f = grad_f - gp_grad
    if state.samplers and cfg.lambda_h > 0:
        edges = _blocks(nu.shape[0], len(state.samplers))
        parts = []
        for s, u, a, b in zip(state.samplers, cfg.targets, edges[:-1], edges[1:]):
            vp, g, _ = variance_penalty(s, nu[a:b], cfg.lambda_h, u)
            value -= vp
            parts.append(g)
        grad_h = grad_h - np.concatenate(parts)
    return float(value), grad_h, grad_f


def generator_objective(state: GanState, z, nu, x_real, cfg: GanConfig | None = None):
    """Embedding MMD seen by the generator and its gradient w.r.t. the generator parameters."""
    x_real, z = _check_shapes(state, x_real, z)
    unbiased = cfg.unbiased_train if cfg is not None else False
    f, g = state.critic, state.generator
    x_fake = g(z)
    value, _, dey, _ = kernel_mmd(state, f(x_real), f(x_fake), nu, unbiased)
    _, d_fake = f.backprop(x_fake, dey)
    grads, _ = g.backprop(z, d_fake)
    return float(value), g.flatten_grads(grads)


# evaluation

def eval_mode_coverage(samples, centers, radius: float) -> int:
    """Number of centers with at least one sample within ``radius``."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, centers.shape[1])
    if centers.shape[0] == 0:
        raise ValueError("need at least one center")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if samples.shape[0] == 0:
        return 0
    return int(np.sum(np.any(sqdist(centers, samples) <= radius * radius, axis=1)))


def reference_mmd(x, y, bandwidths) -> float:
    ref = GaussianMixture(tuple(bandwidths))
    return mmd_unbiased(kernel_from_sqdist(ref, sqdist(x, x)), kernel_from_sqdist(ref, sqdist(x, y)),
                        kernel_from_sqdist(ref, sqdist(y, y))).value


def param_hash(net: Mlp) -> str:
    return hashlib.sha256(net.flatten().tobytes()).hexdigest()


@dataclass
class GanLog:
    rows: list = field(default_factory=list)  # (iter, ref_mmd, variance_hat, modes_covered)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "ref_mmd", "variance_hat", "modes_covered"])
            for it, ref, var, modes in self.rows:
                w.writerow([it, repr(ref), repr(var), modes])


def ring_source(cfg: GanConfig):
    def draw(n, prng):
        return gen_ring_mixture(n, cfg.modes, cfg.radius, cfg.sigma, prng)
    return draw


def train_gan(cfg: GanConfig, data_source=None, prng: Prng | None = None, state: GanState | None = None):
    """Alternate ``n_c`` critic/sampler ascent steps with one generator step.

    Returns ``(state, log)``. A non-finite loss raises ``GanDivergence`` carrying
    the log so far.
    """
    prng = Prng(cfg.seed) if prng is None else prng
    data_source = ring_source(cfg) if data_source is None else data_source
    state = init_state(cfg, prng.child("init")) if state is None else state
    out = GanLog()

    held_out = data_source(cfg.eval_n, prng.child("heldout"))
    eval_z = prng.child("eval-z").normal((cfg.eval_n, cfg.latent_dim))
    probe_nu = sample_base(prng.child("probe-nu"), cfg.m, cfg.emb_dim)
    centers = ring_centers(cfg.modes, cfg.radius)

    def evaluate(it):
        fake = state.generator(eval_z)
        row = (it, reference_mmd(fake, held_out, cfg.ref_bandwidths), second_moment(state, probe_nu),
               eval_mode_coverage(fake, centers, cfg.coverage_radius))
        out.rows.append(row)
        log.info("iter %d ref_mmd %.5f variance %.4f modes %d", *row)
        if not np.isfinite(row[1]) or not np.isfinite(row[2]):
            raise GanDivergence(f"non-finite evaluation at iteration {it}", out)

    streams = {k: prng.child(k) for k in ("real", "z", "nu", "gp")}
    evaluate(state.iteration)
    start = state.iteration
    for it in range(start + 1, start + cfg.iters + 1):
        for _ in range(cfg.n_critic):
            x = data_source(cfg.batch_size, streams["real"].child(f"{it}"))
            z = streams["z"].normal((cfg.batch_size, cfg.latent_dim))
            nu = sample_base(streams["nu"], cfg.m, cfg.emb_dim)
            value, grad_h, grad_f = critic_objective(state, x, z, nu, cfg, streams["gp"])
            if not np.isfinite(value):
                raise GanDivergence(f"non-finite critic loss at iteration {it}", out)
            try:
                f_new, state.opt_f = adam_step(state.opt_f, state.critic.flatten(), -grad_f)
                if state.samplers:
                    h_new, state.opt_h = adam_step(state.opt_h, state.h_params, -grad_h)
                    state.samplers = state.with_h_params(h_new)
            except NumericError as exc:
                raise GanDivergence(f"iteration {it}: {exc}", out) from exc
            state.critic = state.critic.unflatten(f_new)
        x = data_source(cfg.batch_size, streams["real"].child(f"{it}-g"))
        z = streams["z"].normal((cfg.batch_size, cfg.latent_dim))
        nu = sample_base(streams["nu"], cfg.m, cfg.emb_dim)
        value, grad_g = generator_objective(state, z, nu, x, cfg)
        if not np.isfinite(value):
            raise GanDivergence(f"non-finite generator loss at iteration {it}", out)
        try:
            g_new, state.opt_g = adam_step(state.opt_g, state.generator.flatten(), grad_g)
        except NumericError as exc:
            raise GanDivergence(f"iteration {it}: {exc}", out) from exc
        state.generator = state.generator.unflatten(g_new)
        state.iteration = it
        if it % cfg.eval_every == 0 or it == start + cfg.iters:
            evaluate(it)
    state.log = out.rows
    return state, out


def config_to_dict(cfg: GanConfig) -> dict:
    return asdict(cfg)
