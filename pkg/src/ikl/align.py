"""Kernel alignment training of a spectral sampler (stage 1 of random kitchen
sinks with a learned kernel).

The empirical alignment of a batch ``(x_i, y_i)`` under frequencies
``w_j = h(nu_j)`` is

    T = 1/(B(B-1)) sum_{i != i'} y_i y_i' (1/m) sum_j cos(w_j.(x_i - x_i'))

which is computed in O(B m) from the label-weighted cosine/sine sums.
"""

from __future__ import annotations

import csv
import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .features import phases
from .numerics import AdamState, Prng, adam_step
from .spectral import sample_base

log = logging.getLogger(__name__)


@dataclass
class AlignmentBatch:
    X: np.ndarray
    y: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        self.nu = np.asarray(self.nu, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be B x d with one label per row")
        if self.X.shape[0] < 2:
            raise ValueError("alignment needs a batch of at least two examples")
        if np.any(np.abs(self.y) != 1):
            raise ValueError("labels must be -1 or +1")


@dataclass
class AlignTrainConfig:
    batch_size: int = 128
    m: int = 64
    lr: float = 1e-6
    max_iters: int = 3000
    eval_every: int = 100
    patience: int = 5
    probe_size: int = 256
    probe_m: int = 1024
    seed: int = 0
    record_time: bool = False

    def __post_init__(self):
        for name in ("batch_size", "m", "eval_every", "patience", "probe_size", "probe_m"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.max_iters < 0 or not self.lr > 0:
            raise ValueError("max_iters must be >= 0 and lr > 0")


def _alignment_terms(X, y, omegas):
    p = phases(X, omegas)
    c, s = np.cos(p), np.sin(p)
    return c, s, y @ c, y @ s


def alignment_from_omegas(X, y, omegas) -> float:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    B, m = X.shape[0], omegas.shape[0]
    _, _, a, b = _alignment_terms(X, y, omegas)
    return float(((a @ a + b @ b) / m - y @ y) / (B * (B - 1)))


def alignment_omega_grad(X, y, omegas):
    """Alignment value and its gradient w.r.t. the frequencies."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    B, m = X.shape[0], omegas.shape[0]
    c, s, a, b = _alignment_terms(X, y, omegas)
    value = ((a @ a + b @ b) / m - y @ y) / (B * (B - 1))
    d_p = (2.0 / (m * B * (B - 1))) * y[:, None] * (b[None, :] * c - a[None, :] * s)
    return float(value), d_p.T @ X


def alignment_value(batch: AlignmentBatch, s) -> float:
    return alignment_from_omegas(batch.X, batch.y, s.map(batch.nu))


def alignment_grad(batch: AlignmentBatch, s) -> np.ndarray:
    _, g_omega = alignment_omega_grad(batch.X, batch.y, s.map(batch.nu))
    return s.vjp(batch.nu, g_omega)


@dataclass
class AlignLog:
    rows: list = field(default_factory=list)  # (iter, probe_alignment, wall_ms or None)
    val: list = field(default_factory=list)  # (iter, val_alignment)
    best_iter: int | None = None
    iters_run: int = 0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "probe_alignment", "wall_ms"])
            for it, value, ms in self.rows:
                w.writerow([it, repr(value), "" if ms is None else f"{ms:.3f}"])


def train_alignment(X, y, sampler, cfg: AlignTrainConfig, X_val=None, y_val=None,
                    prng: Prng | None = None, val_score=None):
    """Ascend the alignment with Adam, drawing a fresh data batch and fresh
    noise every iteration.

    Progress is logged on a fixed probe batch of training data under fixed
    probe noise. With validation data, training stops once the validation
    score fails to improve for ``cfg.patience`` evaluations and the best
    parameters seen are returned. The score defaults to validation alignment;
    ``val_score(sampler) -> float`` (higher is better) replaces it.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if np.any(np.abs(y) != 1):
        raise ValueError("labels must be -1 or +1")
    if np.unique(y).size < 2:
        warnings.warn("training data has a single class; alignment is constant in the kernel "
                      "only up to its diagonal", RuntimeWarning, stacklevel=2)
    prng = Prng(cfg.seed) if prng is None else prng
    n, d = X.shape
    B = min(cfg.batch_size, n)
    if B < 2:
        raise ValueError("need at least two training examples")

    order = prng.child("probe").permutation(n)[:min(cfg.probe_size, n)]
    probe_X, probe_y = X[order], y[order]
    probe_nu = sample_base(prng.child("probe-nu"), cfg.probe_m, sampler.dim)
    batch_gen = prng.child("batch").gen
    nu_prng = prng.child("nu")

    use_val = val_score is not None or (X_val is not None and len(X_val) >= 2)
    if use_val and val_score is None:
        X_val = np.asarray(X_val, dtype=np.float64)
        y_val = np.asarray(y_val, dtype=np.float64).reshape(-1)

        def val_score(smp):
            return alignment_from_omegas(X_val, y_val, smp.map(probe_nu))

    def evaluate(it, smp, t0):
        value = alignment_from_omegas(probe_X, probe_y, smp.map(probe_nu))
        ms = (time.perf_counter() - t0) * 1e3 if cfg.record_time else None
        out.rows.append((it, value, ms))
        if use_val:
            v = float(val_score(smp))
            out.val.append((it, v))
            return v
        return value

    out = AlignLog()
    t0 = time.perf_counter()
    params = sampler.params
    state = AdamState(cfg.lr)
    best_score = evaluate(0, sampler, t0)
    best_params, out.best_iter, stale = params, 0, 0

    for it in range(1, cfg.max_iters + 1):
        idx = batch_gen.choice(n, size=B, replace=False)
        nu = sample_base(nu_prng, cfg.m, sampler.dim)
        current = sampler.with_params(params)
        _, g_omega = alignment_omega_grad(X[idx], y[idx], current.map(nu))
        params, state = adam_step(state, params, -current.vjp(nu, g_omega))
        out.iters_run = it
        if it % cfg.eval_every == 0 or it == cfg.max_iters:
            score = evaluate(it, sampler.with_params(params), t0)
            if not use_val or score > best_score:
                best_score, best_params, out.best_iter, stale = score, params, it, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("early stop at iter %d (best %d)", it, out.best_iter)
                    break
    if out.best_iter == 0:
        return sampler, out
    return sampler.with_params(best_params), out


def consistency_bound(m, delta: float) -> np.ndarray:
    """Deviation envelope ``sqrt(2 log(4/delta) / m)`` for ``m`` random features."""
    return np.sqrt(2 * np.log(4 / delta) / np.asarray(m, dtype=np.float64))


def consistency_study(X, y, sampler, m_list, repeats: int, prng: Prng, m_ref: int = 65536, chunk: int = 4096):
    """Gaps ``|T_m - T_ref|`` for fresh noise draws at each ``m``, with the
    reference alignment computed once from ``m_ref`` features.

    Returns a ``len(m_list) x repeats`` array.
    """
    m_list = list(m_list)
    if not m_list or any(b <= a for a, b in zip(m_list, m_list[1:])):
        raise ValueError("m_list must be non-empty and strictly ascending")
    if repeats < 1:
        raise ValueError("need at least one repeat")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    # the reference is linear in the per-frequency terms, so accumulate it in chunks
    ref_prng = prng.child("reference")
    total, done = 0.0, 0
    while done < m_ref:
        k = min(chunk, m_ref - done)
        total += k * alignment_from_omegas(X, y, sampler.map(sample_base(ref_prng, k, sampler.dim)))
        done += k
    ref = total / m_ref
    gaps = np.empty((len(m_list), repeats))
    for i, m in enumerate(m_list):
        p = prng.child(f"m{m}")
        for r in range(repeats):
            gaps[i, r] = abs(alignment_from_omegas(X, y, sampler.map(sample_base(p, m, sampler.dim))) - ref)
    return gaps
