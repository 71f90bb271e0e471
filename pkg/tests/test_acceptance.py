"""Acceptance criteria 1-10. Each test records one PASS/FAIL line."""

import csv
import time

import numpy as np

from conftest import SMALL, record, run_cli, tree_bytes
from ikl.align import AlignmentBatch, alignment_grad, alignment_value
from ikl.data import gen_norm_sphere
from ikl.features import fourier_features, kernel_matrix_approx, kernel_matrix_exact
from ikl.gantoy import GanConfig, GanState, critic_objective, generator_objective, init_state
from ikl.mmd import gradient_penalty, mmd_unbiased, variance_penalty
from ikl.numerics import Mlp, Prng, check_gradient
from ikl.rks import fit_logistic, transform_dataset
from ikl.spectral import GaussianMixture, SpectralSampler, kernel_closed_form, sample_base, sampler_vjp
from ikl.spectral import sample_frequencies


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# 1. gradients

def test_criterion_01_gradients():
    t0 = time.time()
    p = Prng(101)
    errs = {k: [] for k in ("sampler_vjp", "alignment_grad", "variance_penalty", "gradient_penalty",
                            "critic_objective", "generator_objective")}
    cfg = GanConfig(gen_hidden=[8], critic_hidden=[8], emb_dim=4, sampler_hidden=[6], latent_dim=3, m=32,
                    batch_size=8)
    for i in range(10):
        q = p.child(str(i))
        s = SpectralSampler.init(3, q.child("s"), (7, 6))
        s = s.with_params(s.params + 0.2 * q.normal(s.params.size))
        nu, up = sample_base(q.child("nu"), 15, 3), q.normal((15, 3))
        errs["sampler_vjp"].append(check_gradient(lambda v: np.sum(s.with_params(v).map(nu) * up),
                                                  sampler_vjp(s, nu, up), s.params))
        X, y = q.normal((12, 3)), np.where(q.uniform(0, 1, 12) < 0.5, -1.0, 1.0)
        batch = AlignmentBatch(X, y, nu)
        errs["alignment_grad"].append(check_gradient(lambda v: alignment_value(batch, s.with_params(v)),
                                                     alignment_grad(batch, s), s.params))
        _, g, _ = variance_penalty(s, nu, 10.0, 1.0)
        errs["variance_penalty"].append(check_gradient(lambda v: variance_penalty(s.with_params(v), nu, 10.0, 1.0)[0],
                                                       g, s.params))
        critic = Mlp.init([2, 7, 5, 3], q.child("critic"))
        critic = critic.unflatten(critic.flatten() + 0.1 * q.normal(critic.n_params))
        xr, xf, eps = q.normal((9, 2)), q.normal((9, 2)), q.uniform(0, 1, (9, 1))
        _, g = gradient_penalty(critic, xr, xf, None, 10.0, eps=eps)
        errs["gradient_penalty"].append(check_gradient(
            lambda v: gradient_penalty(critic.unflatten(v), xr, xf, None, 10.0, eps=eps)[0], g, critic.flatten()))

        state = init_state(cfg, q.child("gan"))
        x, z = q.normal((cfg.batch_size, 2)), q.normal((cfg.batch_size, cfg.latent_dim))
        gnu, geps = sample_base(q.child("gnu"), cfg.m, cfg.emb_dim), q.uniform(0, 1, (cfg.batch_size, 1))

        def with_(**kw):
            parts = dict(generator=state.generator, critic=state.critic, samplers=state.samplers)
            parts.update(kw)
            return GanState(**parts)

        _, gh, gf = critic_objective(state, x, z, gnu, cfg, eps=geps)
        ef = check_gradient(lambda v: critic_objective(with_(critic=state.critic.unflatten(v)), x, z, gnu, cfg,
                                                       eps=geps)[0], gf, state.critic.flatten())
        eh = check_gradient(lambda v: critic_objective(with_(samplers=state.with_h_params(v)), x, z, gnu, cfg,
                                                       eps=geps)[0], gh, state.h_params)
        errs["critic_objective"].append(max(ef, eh))
        _, gg = generator_objective(state, z, gnu, x, cfg)
        errs["generator_objective"].append(check_gradient(
            lambda v: generator_objective(with_(generator=state.generator.unflatten(v)), z, gnu, x, cfg)[0],
            gg, state.generator.flatten()))
    elapsed = time.time() - t0
    # the gradient penalty (alone or inside the critic objective) differentiates through an input Jacobian
    tol = {k: 1e-3 if k in ("gradient_penalty", "critic_objective") else 1e-4 for k in errs}
    ok = all(max(v) <= tol[k] for k, v in errs.items()) and elapsed < 60
    detail = ", ".join(f"{k} {max(v):.1e}" for k, v in errs.items())
    record(1, ok, f"max rel err: {detail}; {elapsed:.1f}s")


# 2. random-feature fidelity for the Gaussian mixture

def test_criterion_02_rff_fidelity(tmp_path):
    code = run_cli(["kernel-check", "--bandwidths", "1", "2", "4", "8", "16", "--d", "16", "--m", "4096",
                    "--pairs", "100"], tmp_path)
    rows = read_rows(tmp_path / "kernel_check.csv")
    worst = max(float(r["abs_err"]) for r in rows)
    record(2, code == 0 and len(rows) == 100 and worst <= 0.05, f"max |k_hat - k| = {worst:.4f} over {len(rows)} pairs")


# 3. an identity sampler recovers the unit-bandwidth Gaussian

def test_criterion_03_identity_recovery():
    d, m = 16, 4096
    p = Prng(303)
    s = SpectralSampler.init(d, p.child("s"), identity=True)
    freqs = sample_frequencies(s, p.child("freqs"), m)
    direction = p.normal((100, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    X = p.normal((100, d))
    Y = X + direction * p.uniform(0, 3.0, (100, 1))
    fx, fy = fourier_features(X, freqs), fourier_features(Y, freqs)
    k_hat = np.sum(fx.features * fy.features, axis=1)
    k = kernel_closed_form(GaussianMixture((1.0,)), X - Y)
    worst = float(np.max(np.abs(k_hat - k)))
    record(3, worst <= 0.05, f"max |k_hat - k| = {worst:.4f} over 100 pairs")


# 4. odd symmetry of the sampler

def test_criterion_04_symmetry():
    p = Prng(404)
    s = SpectralSampler.init(5, p.child("s"))
    s = s.with_params(s.params + p.normal(s.params.size))
    nu = p.normal((1000, 5))
    odd = bool(np.array_equal(s.map(-nu), -s.map(nu)))
    X = p.normal((20, 5))
    fmap = fourier_features(X, sample_frequencies(s, p.child("f"), 256))
    K = kernel_matrix_approx(fmap, fmap)
    real = K.dtype == np.float64 and np.array_equal(K, K.T)
    record(4, odd and real, f"h(-nu) == -h(nu) bitwise: {odd}; real symmetric k_hat: {real}")


# 5. unbiasedness of the U-statistic

def test_criterion_05_mmd_unbiased():
    p = Prng(505)
    spec = GaussianMixture((1.0,))
    vals = []
    for t in range(1000):
        q = p.child(str(t))
        X, Y = q.normal((32, 2)), q.normal((32, 2))
        vals.append(mmd_unbiased(kernel_matrix_exact(spec, X, X), kernel_matrix_exact(spec, X, Y),
                                 kernel_matrix_exact(spec, Y, Y)).value)
    vals = np.array(vals)
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    record(5, abs(vals.mean()) <= 3 * se, f"mean {vals.mean():.2e}, 3 SE = {3 * se:.2e}")


# 6. consistency in the number of random features

def test_criterion_06_consistency(tmp_path):
    code = run_cli(["consistency"], tmp_path)
    summary = read_rows(tmp_path / "consistency.csv")
    reps = read_rows(tmp_path / "consistency_repeats.csv")
    means = [float(r["mean_gap"]) for r in summary]
    bound = {int(r["m"]): float(r["bound"]) for r in summary}
    frac = {m: np.mean([float(r["gap"]) <= bound[m] for r in reps if int(r["m"]) == m]) for m in bound}
    monotone = all(b <= a for a, b in zip(means, means[1:]))
    ok = code == 0 and monotone and all(f >= 0.95 for f in frac.values()) and sorted(bound) == [16, 64, 256, 1024]
    detail = ", ".join(f"m={m}: gap {g:.4f} in-bound {frac[m]:.2f}" for m, g in zip(bound, means))
    record(6, ok, detail)


# 7. synthetic benchmark

def test_criterion_07_synthetic_benchmark(tmp_path):
    t0 = time.time()
    code = run_cli(["synth-benchmark", "--d-list", "2", "4", "8", "12", "16", "20", "--methods", "rff", "ikl",
                    "--n-seeds", "5", "--n-train", "2000", "--n-test", "1000", "--M", "256"], tmp_path)
    elapsed = time.time() - t0
    rows = read_rows(tmp_path / "summary.csv")
    err = {(r["method"], int(r["d"])): float(r["mean_test_error"]) for r in rows}
    a = err["rff", 2] <= 0.10 and err["ikl", 2] <= 0.10
    b = all(err["ikl", d] <= err["rff", d] - 0.05 for d in (12, 16, 20))
    rff = [err["rff", d] for d in (4, 8, 12, 16, 20)]
    c = all(y >= x for x, y in zip(rff, rff[1:]))
    table = " ".join(f"d={d}:{err['rff', d]:.3f}/{err['ikl', d]:.3f}" for d in (2, 4, 8, 12, 16, 20))
    record(7, code == 0 and a and b and c and elapsed < 900,
           f"(a) {a} (b) {b} (c) {c}; rff/ikl {table}; {elapsed:.0f}s")


# 8. the stage-2 objective is convex

def test_criterion_08_stage2_convexity():
    data = gen_norm_sphere(500, 8, Prng(808))
    fmap = transform_dataset(data.X, GaussianMixture((1.0,)), 256, Prng(809))
    gaps = []
    for lam in (1e-4, 1e-2):
        a = fit_logistic(fmap, data.y, lam)
        b = fit_logistic(fmap, data.y, lam, init=Prng(810).normal(fmap.features.shape[1] + 1))
        gaps.append(abs(a.objective - b.objective))
    record(8, max(gaps) <= 1e-8, f"max objective gap between starts {max(gaps):.1e}")


# 9. toy MMD GAN with and without the variance constraint

def test_criterion_09_gan_toy(tmp_path):
    t0 = time.time()
    code = run_cli(["gan-toy", "--seed", "0"], tmp_path / "main")
    elapsed = time.time() - t0
    rows = read_rows(tmp_path / "main" / "gan_log.csv")
    it = [int(r["iter"]) for r in rows]
    ref = [float(r["ref_mmd"]) for r in rows]
    var = [float(r["variance_hat"]) for r in rows if int(r["iter"]) >= 2500]
    modes = int(rows[-1]["modes_covered"])
    ok = (code == 0 and it[-1] == 5000 and ref[-1] < 0.05 and ref[-1] < ref[0] and modes >= 7
          and all(0.5 <= v <= 2.0 for v in var) and elapsed < 600)

    abl = run_cli(["gan-toy", "--seed", "0", "--no-variance-constraint"], tmp_path / "ablation")
    arows = read_rows(tmp_path / "ablation" / "gan_log.csv")
    ablated = abl == 0 and int(arows[-1]["iter"]) == 5000 and all(r["variance_hat"] for r in arows)
    peak = max(float(r["variance_hat"]) for r in arows)
    record(9, ok and ablated,
           f"ref MMD {ref[0]:.4f} -> {ref[-1]:.4f}, modes {modes}, variance in [{min(var):.3f}, {max(var):.3f}] "
           f"over the second half, {elapsed:.0f}s; ablation peak variance {peak:.1f}")


# 10. determinism of every subcommand

def test_criterion_10_determinism(tmp_path):
    data = tmp_path / "data"
    assert run_cli(["gen-data", "--d", "2", "--n-train", "80", "--n-val", "40", "--n-test", "40"], data) == 0
    train, val, test = (str(data / f"{s}.csv") for s in ("train", "val", "test"))
    commands = {name: args for name, args in SMALL.items()}
    commands["align-train"] = ["--train", train, "--val", val, "--max-iters", "30", "--eval-every", "10",
                               "--hidden", "6", "--probe-size", "40", "--probe-m", "64"]
    commands["rks-eval"] = ["--train", train, "--val", val, "--test", test, "--M-list", "16", "--max-iters", "40",
                            "--eval-every", "20", "--hidden", "6"]
    same = {}
    for name, args in sorted(commands.items()):
        runs = []
        for k in range(2):
            out = tmp_path / f"{name}-{k}"
            code = run_cli([name, *args, "--seed", "11"], out)
            runs.append((code, tree_bytes(out)))
        same[name] = runs[0][0] == 0 and runs[0] == runs[1] and len(runs[0][1]) > 1
    bad = [k for k, v in same.items() if not v]
    record(10, not bad and len(same) == 7, f"{len(same) - len(bad)}/7 subcommands byte-identical" +
           (f"; differing: {', '.join(bad)}" if bad else ""))
