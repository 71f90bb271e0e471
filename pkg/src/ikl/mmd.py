"""Maximum mean discrepancy estimators and the two penalties used when training
a learned kernel adversarially."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureMap, _same_batch, phases
from .numerics import Mlp, Prng
from .spectral import FrequencyBatch


class SampleSizeError(ValueError):
    pass


@dataclass(frozen=True)
class MmdEstimate:
    value: float
    n: int
    n_prime: int
    estimator: str  # "unbiased" or "biased"

    def __float__(self):
        return self.value


def mmd_unbiased(kxx, kxy, kyy) -> MmdEstimate:
    """U-statistic MMD^2 from precomputed Gram blocks (diagonals of the
    within-sample blocks are excluded)."""
    kxx, kxy, kyy = (np.asarray(k, dtype=np.float64) for k in (kxx, kxy, kyy))
    n, n2 = kxx.shape[0], kyy.shape[0]
    if kxx.shape != (n, n) or kyy.shape != (n2, n2) or kxy.shape != (n, n2):
        raise ValueError(f"inconsistent Gram shapes {kxx.shape}, {kxy.shape}, {kyy.shape}")
    if n < 2 or n2 < 2:
        raise SampleSizeError("unbiased MMD needs at least two samples on each side")
    xx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    yy = (kyy.sum() - np.trace(kyy)) / (n2 * (n2 - 1))
    xy = kxy.sum() / (n * n2)
    return MmdEstimate(float(xx - 2 * xy + yy), n, n2, "unbiased")


def mmd_from_features(phi_x: FeatureMap, phi_y: FeatureMap, unbiased: bool = True) -> MmdEstimate:
    _same_batch(phi_x, phi_y)
    value, _, _ = _feature_mmd(phi_x.features, phi_y.features, unbiased)
    return MmdEstimate(value, phi_x.n, phi_y.n, "unbiased" if unbiased else "biased")


def _feature_mmd(fx, fy, unbiased):
    """MMD^2 from explicit feature rows plus its gradients w.r.t. both rows sets."""
    n, n2 = fx.shape[0], fy.shape[0]
    sx, sy = fx.sum(axis=0), fy.sum(axis=0)
    if not unbiased:
        diff = sx / n - sy / n2
        return float(diff @ diff), np.broadcast_to(2 * diff / n, fx.shape), np.broadcast_to(-2 * diff / n2, fy.shape)
    if n < 2 or n2 < 2:
        raise SampleSizeError("unbiased MMD needs at least two samples on each side")
    cxx, cyy = n * (n - 1), n2 * (n2 - 1)
    value = ((sx @ sx - np.sum(fx * fx)) / cxx - 2 * (sx @ sy) / (n * n2)
             + (sy @ sy - np.sum(fy * fy)) / cyy)
    gx = 2 * (sx - fx) / cxx - 2 * sy / (n * n2)
    gy = 2 * (sy - fy) / cyy - 2 * sx / (n * n2)
    return float(value), gx, gy


def mmd_rff_with_grads(ex, ey, omegas, unbiased=False):
    """MMD^2 between embeddings ``ex`` and ``ey`` under the random-feature kernel
    at ``omegas``, with gradients ``(d ex, d ey, d omegas)``."""
    omegas = FrequencyBatch(omegas, "given").omegas
    m = omegas.shape[0]
    scale = 1.0 / np.sqrt(m)
    # cos/sin dominate the cost, so compute them once per side and reuse them
    # for the backward pass (same formula as features_vjp)
    cs = []
    for e in (ex, ey):
        p = phases(e, omegas)
        cs.append((np.cos(p), np.sin(p)))
    fx, fy = (np.hstack([c, s]) * scale for c, s in cs)
    value, gx, gy = _feature_mmd(fx, fy, unbiased)
    grads = []
    for e, (c, s), g in zip((ex, ey), cs, (gx, gy)):
        d_p = (c * g[:, m:] - s * g[:, :m]) * scale
        grads.append((d_p @ omegas, d_p.T @ np.asarray(e, dtype=np.float64)))
    return value, grads[0][0], grads[1][0], grads[0][1] + grads[1][1]


def variance_penalty(s, nu, lam: float, u: float):
    """``lam * (mean_j |h(nu_j)|^2 - u)^2`` and its gradient w.r.t. the sampler parameters.

    Returns ``(value, grad, second_moment)``.
    """
    nu = np.asarray(nu, dtype=np.float64)
    if nu.ndim != 2 or nu.shape[0] == 0:
        raise ValueError("variance penalty needs a non-empty batch of base noise")
    if lam < 0 or not u > 0:
        raise ValueError("need lam >= 0 and u > 0")
    omegas = s.map(nu)
    second = float(np.mean(np.sum(omegas * omegas, axis=1)))
    gap = second - u
    value = lam * gap * gap
    upstream = (4.0 * lam * gap / nu.shape[0]) * omegas
    return value, s.vjp(nu, upstream), second


def interpolate(x_real, x_fake, prng: Prng | None = None, eps=None):
    x_real = np.asarray(x_real, dtype=np.float64)
    x_fake = np.asarray(x_fake, dtype=np.float64)
    if x_real.shape != x_fake.shape:
        raise ValueError(f"real {x_real.shape} and fake {x_fake.shape} batches differ in shape")
    if eps is None:
        eps = prng.uniform(0.0, 1.0, (x_real.shape[0], 1))
    eps = np.asarray(eps, dtype=np.float64).reshape(-1, 1)
    return eps * x_real + (1 - eps) * x_fake


def gradient_penalty(critic: Mlp, x_real, x_fake, prng: Prng | None, lam: float, eps=None):
    """``lam * mean_i (|J_f(x_hat_i)|_F - 1)^2`` at random interpolates ``x_hat``.

    For a scalar critic the Frobenius norm is the usual gradient norm.
    Returns ``(value, flat parameter gradient)``.
    """
    if lam < 0:
        raise ValueError("gradient penalty weight must be non-negative")
    x_hat = interpolate(x_real, x_fake, prng, eps)
    jac = critic.input_jacobian(x_hat)
    norms = np.sqrt(np.einsum("nio,nio->n", jac, jac))
    gap = norms - 1.0
    n = x_hat.shape[0]
    value = lam * float(np.mean(gap * gap))
    safe = np.where(norms > 0, norms, 1.0)
    upstream = (2.0 * lam / n) * (gap / safe)[:, None, None] * jac
    grads = critic.jacobian_vjp(x_hat, upstream)
    return value, critic.flatten_grads(grads)
