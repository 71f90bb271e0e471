"""Command-line driver.

Every subcommand takes ``--seed``, ``--out`` and ``--config`` (a flat JSON
object) plus one flag per configuration key. Flags override the config file,
which overrides the built-in defaults. The resolved configuration is written
to ``<out>/config.json`` next to the outputs. Failures exit nonzero and print
a JSON error object on stderr (also saved as ``<out>/error.json``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import gantoy
from .align import AlignTrainConfig, consistency_bound, consistency_study, train_alignment
from .data import gen_norm_sphere, gen_ring_mixture, load_csv, load_spec, save_csv, save_json, save_points_csv
from .numerics import Prng
from .rks import LAMBDA_GRID, PipelineConfig, run_pipeline
from .spectral import GaussianMixture, SpectralSampler, kernel_closed_form, sample_frequencies

log = logging.getLogger("ikl")


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = 1):
        super().__init__(message)
        self.kind = kind
        self.code = code


ALIGN_KEYS = {"lr": 1e-3, "max_iters": 3000, "eval_every": 50, "patience": 10, "batch_size": 128, "m": 64,
              "sampler_init": "best", "stop_metric": "error", "rff_bandwidth": 1.0, "sm_components": 4,
              "hidden": [32, 32]}

DEFAULTS = {
    "kernel-check": {"spec": None, "bandwidths": [1.0], "d": 16, "m": 4096, "pairs": 100, "max_dist": None,
                     "zero_pairs": 0},
    "synth-benchmark": {"d_list": [2, 4, 8, 12, 16, 20], "methods": ["rff", "ikl"], "n_seeds": 5,
                        "n_train": 2000, "n_val": 1000, "n_test": 1000, "M": 256, **ALIGN_KEYS},
    "gan-toy": {k: v for k, v in gantoy.config_to_dict(gantoy.GanConfig()).items() if k != "seed"},
    "consistency": {"d": 4, "n": 256, "m_list": [16, 64, 256, 1024], "repeats": 50, "delta": 0.05,
                    "m_ref": 65536, "hidden": [32, 32], "data": None, "header": False},
    "align-train": {"train": None, "val": None, "header": False, "sampler_init": "identity",
                    "hidden": [32, 32], "batch_size": 128, "m": 64, "lr": 1e-6, "max_iters": 3000,
                    "eval_every": 100, "patience": 5, "probe_size": 256, "probe_m": 1024},
    "rks-eval": {"train": None, "val": None, "test": None, "header": False, "method": "ikl", "M_list": [256],
                 "sampler": None, "lambda_grid": list(LAMBDA_GRID), "cv_folds": 3, "standardize": False,
                 **ALIGN_KEYS},
    "gen-data": {"kind": "sphere", "d": 2, "n_train": 2000, "n_val": 1000, "n_test": 1000, "n": 1000,
                 "modes": 8, "radius": 2.0, "sigma": 0.05},
}

# keys whose value may be a string path or null
PATH_KEYS = {"spec", "data", "train", "val", "test", "sampler"}
# keys whose value may be a list of numbers or null
OPTIONAL_LISTS = {"u_list"}
# keys with a fixed set of values
CHOICES = {"kind": ("sphere", "ring"), "method": ("rff", "ikl", "sm"), "kernel": gantoy.KERNELS,
           "sampler_init": ("identity", "glorot", "best"), "stop_metric": ("error", "alignment")}

HELP = {
    "kernel-check": "random-feature vs closed-form kernel values on random pairs",
    "synth-benchmark": "two-stage kitchen sinks on the sphere-norm task across dimensions",
    "gan-toy": "MMD GAN with a learned kernel on a ring of Gaussians",
    "consistency": "alignment gap vs number of random features",
    "align-train": "train a spectral sampler by kernel alignment on a CSV dataset",
    "rks-eval": "two-stage kitchen sinks on CSV train/val/test files",
    "gen-data": "write synthetic datasets as CSV",
}


# configuration

def _flag_type(key, default):
    if isinstance(default, bool):
        return None
    if isinstance(default, list):
        return type(default[0]) if default else str
    if default is None:
        return float if key == "max_dist" or key in OPTIONAL_LISTS else str
    return type(default)


def _check_value(key, value, default):
    """Validate one config value against the type of its default."""
    if key in PATH_KEYS:
        if value is not None and not isinstance(value, str):
            raise CliError("config", f"{key} must be a path string or null")
        return value
    if key in OPTIONAL_LISTS:
        if value is None:
            return None
        if not isinstance(value, list):
            raise CliError("config", f"{key} must be a list of numbers or null")
        return [_check_value(key + "[]", v, 0.0) for v in value]
    if default is None:  # optional number
        if value is not None and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise CliError("config", f"{key} must be a number or null")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise CliError("config", f"{key} must be true or false")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise CliError("config", f"{key} must be a list")
        inner = type(default[0]) if default else None
        return [_check_value(key + "[]", v, inner(0) if inner in (int, float) else v) for v in value]
    if isinstance(default, int):
        if isinstance(value, bool) or not (isinstance(value, int) or (isinstance(value, float) and value.is_integer())):
            raise CliError("config", f"{key} must be an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise CliError("config", f"{key} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise CliError("config", f"{key} must be a string")
        if key in CHOICES and value not in CHOICES[key]:
            raise CliError("config", f"{key} must be one of {', '.join(CHOICES[key])}, got {value!r}")
        return value
    return value


def resolve_config(command: str, config_path, flags: dict, seed) -> dict:
    defaults = DEFAULTS[command]
    cfg = {k: (list(v) if isinstance(v, list) else v) for k, v in defaults.items()}
    cfg["seed"] = 0
    layers = []
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError("config", f"cannot read config {config_path}: {exc}") from None
        if not isinstance(doc, dict):
            raise CliError("config", "config file must hold a flat JSON object")
        unknown = sorted(set(doc) - set(cfg))
        if unknown:
            raise CliError("config", f"unknown config keys for {command}: {', '.join(unknown)}")
        layers.append(doc)
    layers.append(flags)
    if seed is not None:
        layers.append({"seed": seed})
    for layer in layers:
        for key, value in layer.items():
            cfg[key] = _check_value(key, value, 0 if key == "seed" else defaults[key])
    return cfg


# subcommands

def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def cmd_kernel_check(cfg, out: Path):
    spec = load_spec(cfg["spec"]) if cfg["spec"] else GaussianMixture(tuple(cfg["bandwidths"]))
    d = cfg["d"]
    if cfg["pairs"] < 0 or cfg["zero_pairs"] < 0 or cfg["pairs"] + cfg["zero_pairs"] < 1:
        raise CliError("config", "need at least one pair")
    prng = Prng(cfg["seed"], ("kernel-check",))
    try:
        kernel_closed_form(spec, np.zeros(d))
        freqs = sample_frequencies(spec, prng.child("freqs"), cfg["m"], d)
    except ValueError as exc:
        raise CliError("spec", f"kernel-check needs a closed-form, samplable kernel: {exc}") from None
    max_dist = cfg["max_dist"]
    if max_dist is None:
        max_dist = 3.0 * max(getattr(spec, "bandwidths", (1.0,)))
    direction = prng.child("direction").normal((cfg["pairs"], d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = prng.child("radius").uniform(0.0, max_dist, (cfg["pairs"], 1))
    delta = np.vstack([np.zeros((cfg["zero_pairs"], d)), direction * radius])
    exact = kernel_closed_form(spec, delta)
    # phi(x).phi(x') = mean_j cos(w_j.(x - x')), evaluated on the difference
    approx = np.mean(np.cos(delta @ freqs.omegas.T), axis=1)
    rows = [(float(n), float(e), float(a), float(abs(a - e)))
            for n, e, a in zip(np.linalg.norm(delta, axis=1), exact, approx)]
    _write_csv(out / "kernel_check.csv", ["delta_norm", "k_exact", "k_hat", "abs_err"], rows)
    return {"max_abs_err": max(r[3] for r in rows)}


def _pipeline_config(cfg, method, seed, M_list):
    align = AlignTrainConfig(lr=cfg["lr"], max_iters=cfg["max_iters"], eval_every=cfg["eval_every"],
                             patience=cfg["patience"], batch_size=cfg["batch_size"], m=cfg["m"], seed=seed)
    extra = {k: cfg[k] for k in ("lambda_grid", "cv_folds", "standardize") if k in cfg}
    return PipelineConfig(method=method, M_list=M_list, rff_bandwidth=cfg["rff_bandwidth"],
                          sampler_init=cfg["sampler_init"], hidden=cfg["hidden"],
                          sm_components=cfg["sm_components"], stop_metric=cfg["stop_metric"],
                          align=align, seed=seed, **extra)


def cmd_synth_benchmark(cfg, out: Path):
    if not cfg["methods"]:
        raise CliError("usage", "methods must not be empty", 2)
    for m in cfg["methods"]:
        if m not in CHOICES["method"]:
            raise CliError("config", f"unknown method {m!r}")
    if cfg["n_seeds"] < 1:
        raise CliError("config", "n_seeds must be positive")
    records = []
    for d in cfg["d_list"]:
        for i in range(cfg["n_seeds"]):
            seed = cfg["seed"] + i
            p = Prng(seed, ("synth", str(d)))
            train = gen_norm_sphere(cfg["n_train"], d, p.child("train"), "train")
            val = gen_norm_sphere(cfg["n_val"], d, p.child("val"), "val")
            test = gen_norm_sphere(cfg["n_test"], d, p.child("test"), "test")
            for method in cfg["methods"]:
                recs, _ = run_pipeline(train, val, test, _pipeline_config(cfg, method, seed, [cfg["M"]]))
                records.extend(recs)
                log.info("d=%d seed=%d %s test_error=%.4f", d, seed, method, recs[0]["test_error"])
    save_json(out / "reports.json", records)
    summary = []
    for method in cfg["methods"]:
        for d in cfg["d_list"]:
            errs = [r["test_error"] for r in records if r["method"] == method and r["d"] == d]
            summary.append((method, d, float(np.mean(errs)), float(np.std(errs)), len(errs)))
    _write_csv(out / "summary.csv", ["method", "d", "mean_test_error", "std_test_error", "seeds"], summary)
    return {"cells": len(records)}


def cmd_gan_toy(cfg, out: Path):
    try:
        gcfg = gantoy.GanConfig(**cfg)
    except (TypeError, ValueError) as exc:
        raise CliError("config", str(exc)) from None
    try:
        state, glog = gantoy.train_gan(gcfg, prng=Prng(gcfg.seed, ("gan-toy",)))
    except gantoy.GanDivergence as exc:
        if exc.log is not None:
            exc.log.write_csv(out / "gan_log.csv")
        raise
    glog.write_csv(out / "gan_log.csv")
    samples = state.generator(Prng(gcfg.seed, ("gan-toy", "samples")).normal((gcfg.eval_n, gcfg.latent_dim)))
    save_points_csv(out / "samples.csv", samples)
    save_json(out / "checkpoint.json", state)
    last = glog.rows[-1]
    return {"ref_mmd": last[1], "variance_hat": last[2], "modes_covered": last[3]}


def _load(path, header, what):
    if not path:
        raise CliError("usage", f"{what} dataset path is required", 2)
    return load_csv(path, header=header)


def cmd_consistency(cfg, out: Path):
    prng = Prng(cfg["seed"], ("consistency",))
    if cfg["data"]:
        data = load_csv(cfg["data"], header=cfg["header"])
    else:
        data = gen_norm_sphere(cfg["n"], cfg["d"], prng.child("data"))
    if not 0 < cfg["delta"] < 1:
        raise CliError("config", "delta must lie in (0, 1)")
    sampler = SpectralSampler.init(data.dim, prng.child("sampler"), tuple(cfg["hidden"]))
    try:
        gaps = consistency_study(data.X, data.y, sampler, cfg["m_list"], cfg["repeats"], prng.child("draws"),
                                 cfg["m_ref"])
    except ValueError as exc:
        raise CliError("config", str(exc)) from None
    bounds = consistency_bound(cfg["m_list"], cfg["delta"])
    _write_csv(out / "consistency.csv", ["m", "mean_gap", "bound"],
               [(m, float(g.mean()), float(b)) for m, g, b in zip(cfg["m_list"], gaps, bounds)])
    _write_csv(out / "consistency_repeats.csv", ["m", "repeat", "gap"],
               [(m, r, float(g)) for m, row in zip(cfg["m_list"], gaps) for r, g in enumerate(row)])
    return {"within_bound": float(np.mean(gaps <= bounds[:, None]))}


def cmd_align_train(cfg, out: Path):
    train = _load(cfg["train"], cfg["header"], "train")
    val = load_csv(cfg["val"], header=cfg["header"]) if cfg["val"] else None
    keys = ("batch_size", "m", "lr", "max_iters", "eval_every", "patience", "probe_size", "probe_m")
    acfg = AlignTrainConfig(seed=cfg["seed"], **{k: cfg[k] for k in keys})
    prng = Prng(cfg["seed"], ("align-train",))
    if cfg["sampler_init"] == "best":
        raise CliError("config", "align-train needs sampler_init identity or glorot")
    sampler = SpectralSampler.init(train.dim, prng.child("init"), tuple(cfg["hidden"]),
                                   identity=cfg["sampler_init"] == "identity")
    trained, alog = train_alignment(train.X, train.y, sampler, acfg,
                                    None if val is None else val.X, None if val is None else val.y,
                                    prng.child("train"))
    alog.write_csv(out / "align_log.csv")
    save_json(out / "sampler.json", trained)
    return {"iters": alog.iters_run, "best_iter": alog.best_iter}


def cmd_rks_eval(cfg, out: Path):
    train = _load(cfg["train"], cfg["header"], "train")
    val = _load(cfg["val"], cfg["header"], "validation")
    test = _load(cfg["test"], cfg["header"], "test")
    source = load_spec(cfg["sampler"]) if cfg["sampler"] else None
    pcfg = _pipeline_config(cfg, cfg["method"], cfg["seed"], cfg["M_list"])
    records, source = run_pipeline(train, val, test, pcfg, source)
    save_json(out / "report.json", records)
    save_json(out / "kernel.json", source)
    return {"test_error": [r["test_error"] for r in records]}


def cmd_gen_data(cfg, out: Path):
    prng = Prng(cfg["seed"], ("gen-data",))
    if cfg["kind"] == "ring":
        pts = gen_ring_mixture(cfg["n"], cfg["modes"], cfg["radius"], cfg["sigma"], prng.child("ring"))
        save_points_csv(out / "ring.csv", pts)
        return {"files": ["ring.csv"]}
    for split in ("train", "val", "test"):
        save_csv(out / f"{split}.csv", gen_norm_sphere(cfg[f"n_{split}"], cfg["d"], prng.child(split), split))
    return {"files": ["train.csv", "val.csv", "test.csv"]}


COMMANDS = {
    "kernel-check": cmd_kernel_check,
    "synth-benchmark": cmd_synth_benchmark,
    "gan-toy": cmd_gan_toy,
    "consistency": cmd_consistency,
    "align-train": cmd_align_train,
    "rks-eval": cmd_rks_eval,
    "gen-data": cmd_gen_data,
}


# argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message, 2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ikl", description="Implicit kernel learning experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name, defaults in DEFAULTS.items():
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--seed", type=int, default=None, help="global seed (default 0)")
        p.add_argument("--out", default=None, help="output directory (required)")
        p.add_argument("--config", default=None, help="flat JSON config file")
        for key, default in defaults.items():
            flag = "--" + key.replace("_", "-")
            kw = {"dest": f"cfg_{key}", "default": argparse.SUPPRESS}
            if isinstance(default, bool):
                p.add_argument(flag, action=argparse.BooleanOptionalAction, **kw)
                continue
            kw["type"] = _flag_type(key, default)
            if key not in CHOICES:
                kw["metavar"] = key.upper()
            if isinstance(default, list) or key in OPTIONAL_LISTS:
                kw["nargs"] = "*" if key == "methods" else "+"
            if key in CHOICES:
                kw["choices"] = CHOICES[key]
            kw["help"] = f"default {json.dumps(default)}"
            p.add_argument(flag, **kw)
        if name == "gan-toy":
            p.add_argument("--no-variance-constraint", action="store_true",
                           help="set lambda_h to 0 (ablation)")
    return parser


def _emit_error(kind, message, out):
    doc = {"error": kind, "message": message}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    if out is not None:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            save_json(Path(out) / "error.json", doc)
        except OSError:
            pass


def main(argv=None) -> int:
    out = None
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise CliError("usage", "a subcommand is required", 2)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.out is None:
            raise CliError("usage", "--out is required", 2)
        out = Path(args.out)
        flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")}
        if getattr(args, "no_variance_constraint", False):
            flags["lambda_h"] = 0.0
        cfg = resolve_config(args.command, args.config, flags, args.seed)
        out.mkdir(parents=True, exist_ok=True)
        stale = out / "error.json"
        if stale.exists():
            stale.unlink()
        save_json(out / "config.json", {"command": args.command, **cfg})
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            result = COMMANDS[args.command](cfg, out)
        print(json.dumps({"command": args.command, "out": str(out), **result}, sort_keys=True))
        return 0
    except CliError as exc:
        _emit_error(exc.kind, str(exc), out)
        return exc.code
    except Exception as exc:  # report anything else as a runtime failure
        _emit_error(type(exc).__name__, str(exc), out)
        return 1


if __name__ == "__main__":
    sys.exit(main())
