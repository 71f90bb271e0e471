"""Spectral distributions of shift-invariant kernels and samplers for them.

A kernel ``k(x - x') = E_w[cos(w.(x - x'))]`` is described either in closed form
(Gaussian / rational-quadratic mixtures), by an explicit Gaussian-mixture
spectral density (spectral mixture), or implicitly through a network that maps
standard-normal noise to frequencies.

Every samplable source turns base noise ``nu`` (``m x d`` standard normals)
into frequencies with ``map(nu)``. Trainable sources (``SpectralSampler``,
``SpectralMixture``) also expose ``params``/``with_params`` and ``vjp``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numerics import Mlp, Prng


class NoClosedForm(ValueError):
    pass


class NotSamplable(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FrequencyBatch:
    omegas: np.ndarray
    source: str
    seed: int | None = None

    def __post_init__(self):
        om = np.asarray(self.omegas, dtype=np.float64)
        if om.ndim != 2:
            raise ValueError("frequencies must form an m x d matrix")
        if not np.all(np.isfinite(om)):
            raise ValueError("frequencies must be finite")
        object.__setattr__(self, "omegas", om)

    @property
    def m(self) -> int:
        return self.omegas.shape[0]

    @property
    def dim(self) -> int:
        return self.omegas.shape[1]


def sample_base(prng: Prng, m: int, d: int) -> np.ndarray:
    """Standard-normal base noise, ``m x d``."""
    if m < 1 or d < 1:
        raise ValueError(f"need m, d >= 1, got m={m}, d={d}")
    return prng.normal((m, d))


def stratified_counts(m: int, weights) -> np.ndarray:
    """Split ``m`` rows across components proportionally to ``weights``
    (largest remainder, ties to the lower index)."""
    w = np.asarray(weights, dtype=np.float64)
    raw = m * w / w.sum()
    counts = np.floor(raw).astype(int)
    short = m - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _component_index(m: int, weights) -> np.ndarray:
    return np.repeat(np.arange(len(weights)), stratified_counts(m, weights))


def _check_positive(name, values):
    values = tuple(float(v) for v in values)
    if not values or any(not v > 0 for v in values):
        raise ValueError(f"{name} must be a non-empty list of positive numbers")
    return values


@dataclass(frozen=True)
class GaussianMixture:
    """Equal-weight mixture of Gaussian kernels ``exp(-|delta|^2 / (2 sigma_q^2))``."""

    bandwidths: tuple

    variant = "gaussian"

    def __post_init__(self):
        object.__setattr__(self, "bandwidths", _check_positive("bandwidths", self.bandwidths))

    def map(self, nu):
        nu = np.asarray(nu, dtype=np.float64)
        sig = np.asarray(self.bandwidths)[_component_index(nu.shape[0], np.ones(len(self.bandwidths)))]
        return nu / sig[:, None]

    def to_dict(self):
        return {"variant": self.variant, "bandwidths": list(self.bandwidths)}


@dataclass(frozen=True)
class RQMixture:
    """Equal-weight mixture of rational-quadratic kernels
    ``(1 + |delta|^2 / (2 alpha_q))^(-alpha_q)``. Closed form only."""

    alphas: tuple

    variant = "rq"

    def __post_init__(self):
        object.__setattr__(self, "alphas", _check_positive("alphas", self.alphas))

    def map(self, nu):
        raise NotSamplable("rational-quadratic mixture is closed-form only")

    def to_dict(self):
        return {"variant": self.variant, "alphas": list(self.alphas)}


@dataclass(frozen=True, eq=False)
class SpectralMixture:
    """Spectral density ``sum_q w_q N(mu_q, diag(s_q^2))``.

    Frequencies are drawn by reparametrization ``w = mu_q + s_q * nu`` with
    component ``q`` assigned to a deterministic block of rows, block sizes
    proportional to the weights. Trainable parameters are the means and the
    log standard deviations; weights stay fixed.
    """

    means: np.ndarray
    stddevs: np.ndarray
    weights: np.ndarray

    variant = "sm"

    def __post_init__(self):
        mu = np.array(self.means, dtype=np.float64, ndmin=2)
        s = np.array(self.stddevs, dtype=np.float64, ndmin=2)
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        if mu.shape != s.shape or mu.shape[0] != w.shape[0]:
            raise ValueError("means, stddevs must be Q x d and weights length Q")
        if np.any(s <= 0) or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("stddevs must be positive and weights a probability vector")
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stddevs", s)
        object.__setattr__(self, "weights", w)

    @classmethod
    def init(cls, n_components: int, dim: int, prng: Prng, scales=None, mean_scale=0.1):
        scales = np.ones(n_components) if scales is None else np.asarray(scales, dtype=np.float64)
        means = mean_scale * prng.child("means").normal((n_components, dim))
        stddevs = np.repeat(scales[:, None], dim, axis=1)
        return cls(means, stddevs, np.full(n_components, 1.0 / n_components))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def map(self, nu):
        nu = np.asarray(nu, dtype=np.float64)
        if nu.shape[1] != self.dim:
            raise ValueError(f"noise has {nu.shape[1]} columns, mixture dimension is {self.dim}")
        q = _component_index(nu.shape[0], self.weights)
        return self.means[q] + self.stddevs[q] * nu

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.means.ravel(), np.log(self.stddevs).ravel()])

    def with_params(self, vec) -> "SpectralMixture":
        vec = np.asarray(vec, dtype=np.float64)
        k = self.means.size
        return SpectralMixture(vec[:k].reshape(self.means.shape),
                               np.exp(vec[k:]).reshape(self.stddevs.shape), self.weights)

    def vjp(self, nu, upstream) -> np.ndarray:
        nu = np.asarray(nu, dtype=np.float64)
        g = np.asarray(upstream, dtype=np.float64)
        if g.shape != nu.shape:
            raise ValueError("upstream must match the noise shape")
        q = _component_index(nu.shape[0], self.weights)
        d_mu = np.zeros_like(self.means)
        d_logs = np.zeros_like(self.stddevs)
        np.add.at(d_mu, q, g)
        np.add.at(d_logs, q, g * nu * self.stddevs[q])
        return np.concatenate([d_mu.ravel(), d_logs.ravel()])

    def to_dict(self):
        return {"variant": self.variant, "means": self.means.tolist(),
                "stddevs": self.stddevs.tolist(), "weights": self.weights.tolist()}

    def __eq__(self, other):
        return (isinstance(other, SpectralMixture) and np.array_equal(self.means, other.means)
                and np.array_equal(self.stddevs, other.stddevs)
                and np.array_equal(self.weights, other.weights))


@dataclass(frozen=True, eq=False)
class SpectralSampler:
    """Implicit spectral distribution ``w = sign(nu) * net(|nu|)`` with standard-normal ``nu``.

    The sign/abs wrapper makes the map odd, so the induced distribution is
    symmetric and the kernel is real. ``sign(0)`` is taken as ``+1``.
    """

    net: Mlp
    base: str = "normal"

    variant = "implicit"

    def __post_init__(self):
        if self.net.input_dim != self.net.output_dim:
            raise ValueError("sampler network must map base_dim -> base_dim")
        if self.base != "normal":
            raise ValueError(f"unknown base distribution {self.base!r}")

    @classmethod
    def init(cls, dim: int, prng: Prng, hidden=(32, 32), identity=False) -> "SpectralSampler":
        sizes = [dim, *hidden, dim]
        return cls(Mlp.identity(sizes) if identity else Mlp.init(sizes, prng))

    @property
    def base_dim(self) -> int:
        return self.net.input_dim

    dim = base_dim

    def map(self, nu):
        nu = np.asarray(nu, dtype=np.float64)
        if nu.ndim != 2 or nu.shape[1] != self.base_dim:
            raise ValueError(f"noise must be m x {self.base_dim}, got {nu.shape}")
        return _sign(nu) * self.net.forward(np.abs(nu))

    @property
    def params(self) -> np.ndarray:
        return self.net.flatten()

    def with_params(self, vec) -> "SpectralSampler":
        return SpectralSampler(self.net.unflatten(vec), self.base)

    def vjp(self, nu, upstream) -> np.ndarray:
        nu = np.asarray(nu, dtype=np.float64)
        g = np.asarray(upstream, dtype=np.float64)
        if g.shape != nu.shape:
            raise ValueError("upstream must match the noise shape")
        grads, _ = self.net.backprop(np.abs(nu), _sign(nu) * g)
        return self.net.flatten_grads(grads)

    def to_dict(self):
        return {"variant": self.variant, "base": self.base, "net": self.net.to_dict()}

    def __eq__(self, other):
        return isinstance(other, SpectralSampler) and self.base == other.base and self.net == other.net


def _sign(x):
    return np.where(x < 0, -1.0, 1.0)


KernelSpec = GaussianMixture | RQMixture | SpectralMixture | SpectralSampler


def sampler_map(s: SpectralSampler, nu) -> FrequencyBatch:
    return FrequencyBatch(s.map(nu), "implicit")


def sampler_vjp(s, nu, upstream) -> np.ndarray:
    return s.vjp(nu, upstream)


def sample_frequencies(spec, prng: Prng, m: int, d: int | None = None) -> FrequencyBatch:
    """Draw ``m`` frequencies from ``spec``'s spectral density.

    ``d`` is needed only for the Gaussian mixture, whose dimension is free.
    """
    if isinstance(spec, RQMixture):
        raise NotSamplable("rational-quadratic mixture is closed-form only")
    dim = getattr(spec, "dim", None) if d is None else d
    if dim is None:
        raise ValueError("frequency dimension d is required for this kernel")
    nu = sample_base(prng, m, dim)
    return FrequencyBatch(spec.map(nu), spec.variant, prng.seed)


def kernel_closed_form(spec, delta) -> float | np.ndarray:
    """Kernel value as a function of the difference ``delta``.

    ``delta`` may be a vector or a stack of vectors (last axis is the dimension).
    """
    sq = np.sum(np.square(np.asarray(delta, dtype=np.float64)), axis=-1)
    return kernel_from_sqdist(spec, sq)


def kernel_from_sqdist(spec, sq):
    sq = np.asarray(sq, dtype=np.float64)
    if isinstance(spec, GaussianMixture):
        return np.mean([np.exp(-sq / (2 * s * s)) for s in spec.bandwidths], axis=0)
    if isinstance(spec, RQMixture):
        return np.mean([(1 + sq / (2 * a)) ** (-a) for a in spec.alphas], axis=0)
    raise NoClosedForm(f"{getattr(spec, 'variant', type(spec).__name__)} kernel has no closed form")


def kernel_sqdist_derivative(spec, sq):
    """``d k / d |delta|^2`` for the closed-form mixtures."""
    sq = np.asarray(sq, dtype=np.float64)
    if isinstance(spec, GaussianMixture):
        return np.mean([-np.exp(-sq / (2 * s * s)) / (2 * s * s) for s in spec.bandwidths], axis=0)
    if isinstance(spec, RQMixture):
        return np.mean([-0.5 * (1 + sq / (2 * a)) ** (-a - 1) for a in spec.alphas], axis=0)
    raise NoClosedForm(f"{getattr(spec, 'variant', type(spec).__name__)} kernel has no closed form")


def spec_to_dict(spec) -> dict:
    return spec.to_dict()


def spec_from_dict(doc: dict):
    variant = doc.get("variant")
    if variant == "gaussian":
        return GaussianMixture(tuple(doc["bandwidths"]))
    if variant == "rq":
        return RQMixture(tuple(doc["alphas"]))
    if variant == "sm":
        return SpectralMixture(doc["means"], doc["stddevs"], doc["weights"])
    if variant == "implicit":
        return SpectralSampler(Mlp.from_dict(doc["net"]), doc.get("base", "normal"))
    raise ValueError(f"unknown kernel variant {variant!r}")


def spec_to_json(spec) -> str:
    return json.dumps(spec.to_dict())


def spec_from_json(text: str):
    return spec_from_dict(json.loads(text))
