"""Experiment runner: ``discop generate | spectrum | construct | train | evaluate | report``.

A run is described by one JSON config file.  Command-line flags override
config entries, the resolved config is written to ``<output>/config.json``
and its hash is embedded in every artifact.  Timestamps go only to the
sidecar log ``<output>/run.log``, so artifacts are byte-identical across
reruns of the same config.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .constructions import (
    ConstructionError, build_adv_fno, build_adv_sdon, build_burg_fno, build_burg_sdon,
    scaling_report,
)
from .exact_pde import PositivityLost
from .io import FormatError, load_dataset, save_dataset
from .measures import (
    BoxWaveMeasure, Dataset, PeriodicGRFMeasure, SampleError, ShiftedSineMeasure,
    ShockTubeMeasure, generate_dataset, measure_from_dict, measure_to_dict,
)
from .operator_nets import CheckpointError, load_model, save_model
from .spectra import (
    box_measure_fourier_eigs, empirical_covariance_eigs, fit_tail_exponent,
    fourier_projection_error,
)
from .train import (
    Divergence, TrainConfig, evaluate, init_deeponet, init_fno, init_shift_deeponet,
    train_model,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

BENCHMARKS = {
    "advection": BoxWaveMeasure,
    "burgers-sine": ShiftedSineMeasure,
    "burgers-grf": PeriodicGRFMeasure,
    "shocktube": ShockTubeMeasure,
}
MODEL_KINDS = ("don", "sdon", "fno")
TARGETS = ("adv-sdon", "adv-fno", "burg-sdon", "burg-fno")
SPLITS = ("train", "val", "test")
CHUNK = 64

DEFAULT_CONFIG = {
    "benchmarks": ["advection"],
    "measures": {},
    "grid": 128,
    "n_train": 256,
    "n_val": 128,
    "n_test": 128,
    "data_seed": 0,
    "seeds": [0],
    "models": {
        "don": {"m": 64, "p": 32, "branch_hidden": [64, 64], "trunk_hidden": [64, 64],
                "activation": "relu"},
        "sdon": {"m": 64, "p": 6, "branch_hidden": [64, 64], "trunk_hidden": [24, 24],
                 "shift_hidden": [64, 64], "activation": "relu"},
        "fno": {"d_v": 12, "k_max": 8, "n_layers": 2, "activation": "gelu"},
    },
    "train": {"lr": 2e-3, "batch_size": 32, "epochs": 2000, "scheduler": "exponential",
              "gamma": 0.999, "step_interval": 100, "weight_decay": 1e-6, "val_every": 10},
    "spectrum": {"field": "outputs", "ps": [4, 8, 16, 32, 64], "p_max": 64,
                 "fourier_k_max": 32, "projection_k_max": 1},
    "construct": {"target": "adv-fno", "N": None, "m": None, "eps": None, "t": 1.5,
                  "n_mc": 512, "mc_seed": 0, "n_eval": None},
    "output": "runs/default",
    "threads": 1,
}

# per-target ladders used when the config leaves them unset
CONSTRUCT_DEFAULTS = {
    "adv-sdon": {"m": [128, 256, 512, 1024, 2048], "eps": [1e-4]},
    "adv-fno": {"N": [64, 128, 256, 512, 1024]},
    "burg-sdon": {"eps": [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]},
    "burg-fno": {"eps": [1e-1, 3e-2, 1e-2, 3e-3, 1e-3], "N": [256]},
}

MODEL_KEYS = {
    "don": {"m", "p", "branch_hidden", "trunk_hidden", "activation"},
    "sdon": {"m", "p", "branch_hidden", "trunk_hidden", "shift_hidden", "activation"},
    "fno": {"d_v", "k_max", "n_layers", "activation"},
}
TRAIN_KEYS = {"lr", "batch_size", "epochs", "scheduler", "gamma", "step_interval",
              "weight_decay", "val_every"}
# entries that do not change any artifact and are left out of the hash
UNHASHED = ("output", "threads")

log = logging.getLogger("discop")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration

def _check_keys(section: dict, allowed, where: str):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _merge(base: dict, over: dict, where: str = "config") -> dict:
    """Recursive merge of ``over`` into ``base``; keys must exist in ``base``."""
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out:
            raise ConfigError(f"unknown key {where}.{k}")
        if isinstance(out[k], dict) and k not in ("measures",):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}.{k} must be an object")
            out[k] = _merge(out[k], v, f"{where}.{k}")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _positive_int(v, name: str, allow_zero: bool = False) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < (0 if allow_zero else 1):
        raise ConfigError(f"{name} must be a {'nonnegative' if allow_zero else 'positive'} integer")
    return v


def validate_config(cfg: dict) -> dict:
    """Schema check; raises :class:`ConfigError`.  Returns ``cfg``."""
    _check_keys(cfg, DEFAULT_CONFIG, "config")
    if not isinstance(cfg["benchmarks"], list) or not cfg["benchmarks"]:
        raise ConfigError("benchmarks must be a nonempty list")
    for b in cfg["benchmarks"]:
        if b not in BENCHMARKS:
            raise ConfigError(f"unknown benchmark {b!r}; choose from {sorted(BENCHMARKS)}")
    if not isinstance(cfg["measures"], dict):
        raise ConfigError("measures must be an object")
    for b, over in cfg["measures"].items():
        if b not in BENCHMARKS:
            raise ConfigError(f"measures: unknown benchmark {b!r}")
        try:
            benchmark_measure(cfg, b)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"measures.{b}: {exc}") from exc
    _positive_int(cfg["grid"], "grid")
    for k in ("n_train", "n_val", "n_test", "data_seed"):
        _positive_int(cfg[k], k, allow_zero=True)
    if not isinstance(cfg["seeds"], list) or not cfg["seeds"]:
        raise ConfigError("seeds must be a nonempty list")
    for s in cfg["seeds"]:
        _positive_int(s, "seeds", allow_zero=True)
    if not isinstance(cfg["models"], dict) or not cfg["models"]:
        raise ConfigError("models must be a nonempty object")
    for kind, spec in cfg["models"].items():
        if kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model {kind!r}; choose from {list(MODEL_KINDS)}")
        _check_keys(spec, MODEL_KEYS[kind], f"models.{kind}")
    _check_keys(cfg["train"], TRAIN_KEYS, "train")
    try:
        TrainConfig(**cfg["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from exc
    sp = cfg["spectrum"]
    if sp["field"] not in ("inputs", "outputs"):
        raise ConfigError("spectrum.field must be 'inputs' or 'outputs'")
    if not sp["ps"] or any(not isinstance(p, int) or p < 1 for p in sp["ps"]):
        raise ConfigError("spectrum.ps must be positive integers")
    co = cfg["construct"]
    if co["target"] not in TARGETS:
        raise ConfigError(f"unknown construction {co['target']!r}; choose from {list(TARGETS)}")
    for k in ("N", "m", "eps"):
        if co[k] is not None and (not isinstance(co[k], list) or not co[k]):
            raise ConfigError(f"construct.{k} must be a nonempty list")
    _positive_int(cfg["threads"], "threads")
    return cfg


def canonical(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2) + "\n"


def config_hash(cfg: dict) -> str:
    """First 16 hex digits of the SHA-256 of the canonical config, output paths excluded."""
    body = {k: v for k, v in cfg.items() if k not in UNHASHED}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def benchmark_measure(cfg: dict, bench: str):
    over = dict(cfg["measures"].get(bench, {}))
    base = measure_to_dict(BENCHMARKS[bench]())
    unknown = set(over) - set(base)
    if unknown:
        raise ConfigError(f"unknown keys for {bench} measure: {sorted(unknown)}")
    base.update(over)
    return measure_from_dict(base)


def _parse_list(text: str, kind=float) -> list:
    try:
        return [kind(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad list {text!r}: {exc}") from exc


def resolve(args) -> dict:
    """Defaults, then the config file, then flags."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        cfg = _merge(cfg, load_config(args.config))
    flags = {
        "benchmarks": [args.benchmark] if getattr(args, "benchmark", None) else None,
        "grid": getattr(args, "grid", None),
        "n_train": getattr(args, "n_train", None),
        "n_val": getattr(args, "n_val", None),
        "n_test": getattr(args, "n_test", None),
        "data_seed": getattr(args, "seed", None) if args.command == "generate" else None,
        "seeds": _parse_list(args.seeds, int) if getattr(args, "seeds", None) else None,
        "output": args.output,
        "threads": args.threads,
    }
    for k, v in flags.items():
        if v is not None:
            cfg[k] = v
    if getattr(args, "epochs", None) is not None:
        cfg["train"]["epochs"] = args.epochs
    if getattr(args, "models", None):
        names = _parse_list(args.models, str)
        missing = [n for n in names if n not in cfg["models"]]
        if missing:
            raise ConfigError(f"models not configured: {missing}")
        cfg["models"] = {n: cfg["models"][n] for n in names}
    if args.command == "construct":
        co = cfg["construct"]
        if args.target:
            co["target"] = args.target
        for k, kind in (("N", int), ("m", int), ("eps", float)):
            text = getattr(args, k)
            if text is not None:
                co[k] = _parse_list(text, kind)
        for k in ("t", "n_mc", "n_eval"):
            if getattr(args, k) is not None:
                co[k] = getattr(args, k)
        if args.mc_seed is not None:
            co["mc_seed"] = args.mc_seed
    return validate_config(cfg)


# ---------------------------------------------------------------------------
# artifacts

def _write(path: Path, data, binary: bool = False):
    path.parent.mkdir(parents=True, exist_ok=True)
    if binary:
        path.write_bytes(data)
    else:
        path.write_text(data)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _csv(header, rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return out.getvalue()


def _csv_with_hash(text: str, chash: str) -> str:
    """Append a ``config_hash`` column to every row of a CSV document."""
    rows = list(csv.reader(io.StringIO(text)))
    return _csv(rows[0] + ["config_hash"], [r + [chash] for r in rows[1:]])


def dataset_path(out: Path, bench: str, split: str) -> Path:
    return out / "data" / bench / f"{split}.dpl"


def checkpoint_path(out: Path, bench: str, kind: str, seed: int) -> Path:
    return out / "checkpoints" / bench / f"{kind}_s{seed}.ckpt"


def eval_path(out: Path, bench: str, kind: str, seed: int, split: str) -> Path:
    return out / "eval" / bench / f"{kind}_s{seed}_{split}.json"


def _split_ranges(cfg: dict):
    """``(split, start, count)``: disjoint sample-index ranges of one seed."""
    a, b, c = cfg["n_train"], cfg["n_val"], cfg["n_test"]
    return [("train", 0, a), ("val", a, b), ("test", a + b, c)]


def _merge_chunks(parts: list, start: int, total: int) -> Dataset:
    first = parts[0]
    man = copy.deepcopy(first.manifest)
    man["start"], man["n_samples"] = start, total
    for key in ("parameters",):
        if key in man:
            man[key] = {k: sum((p.manifest[key][k] for p in parts), []) for k in man[key]}
    if "boundary_reached" in man:
        man["boundary_reached"] = sum((p.manifest["boundary_reached"] for p in parts), [])
    return Dataset(np.concatenate([p.inputs for p in parts]),
                   np.concatenate([p.outputs for p in parts]), first.grid, man)


def generate_split(measure, count: int, n: int, seed: int, start: int, threads: int) -> Dataset:
    """Sample-level parallel generation in fixed chunks; independent of ``threads``."""
    if count <= CHUNK:
        return generate_dataset(measure, count, n, seed, start)
    starts = list(range(start, start + count, CHUNK))
    sizes = [min(CHUNK, start + count - s) for s in starts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda a: generate_dataset(measure, a[1], n, seed, a[0]),
                              zip(starts, sizes)))
    return _merge_chunks(parts, start, count)


def _load(path: Path) -> Dataset:
    if not path.exists():
        raise FileNotFoundError(f"missing dataset {path}; run `discop generate` first")
    return load_dataset(path)


def _check_dataset(ds: Dataset, cfg: dict, bench: str, path: Path):
    want = measure_to_dict(benchmark_measure(cfg, bench))
    if ds.manifest.get("measure") != want or ds.grid.n != cfg["grid"] \
            or ds.manifest.get("seed") != cfg["data_seed"]:
        raise ConfigError(f"dataset {path} was generated with a different benchmark config")


# ---------------------------------------------------------------------------
# commands

def cmd_generate(cfg: dict, out: Path) -> dict:
    chash = config_hash(cfg)
    sums = {}
    for bench in cfg["benchmarks"]:
        measure = benchmark_measure(cfg, bench)
        for split, start, count in _split_ranges(cfg):
            ds = generate_split(measure, count, cfg["grid"], cfg["data_seed"], start,
                                cfg["threads"])
            ds.manifest.update(benchmark=bench, split=split, config_hash=chash)
            path = dataset_path(out, bench, split)
            path.parent.mkdir(parents=True, exist_ok=True)
            save_dataset(ds, path)
            sums[str(path.relative_to(out))] = _sha256(path)
            print(f"{_sha256(path)}  {path}")
            log.info("generated %s (%d samples)", path, count)
    return sums


def cmd_spectrum(cfg: dict, out: Path) -> dict:
    chash = config_hash(cfg)
    sp = cfg["spectrum"]
    ps = tuple(sp["ps"])
    results = {}
    for bench in cfg["benchmarks"]:
        path = dataset_path(out, bench, "train")
        ds = _load(path)
        _check_dataset(ds, cfg, bench, path)
        data = ds.outputs if sp["field"] == "outputs" else ds.inputs[:, 0, :]
        if max(ps) >= min(data.shape):
            raise ConfigError(f"spectrum.ps needs more than {max(ps)} samples and grid points")
        rep = empirical_covariance_eigs(data, ds.grid.dx, p_max=sp["p_max"], ps=ps)
        if min(rep.tail_sums.values()) > 1e-14 * rep.meta["trace"]:
            alpha, const = fit_tail_exponent(rep, ps)
        else:
            alpha, const = None, None
            rep.meta["fit_skipped"] = "zero tail"
        rep.meta.update(tail_exponent=alpha, tail_constant=const, benchmark=bench,
                        field=sp["field"], config_hash=chash,
                        projection_k_max=sp["projection_k_max"],
                        projection_median_rel_l1=fourier_projection_error(
                            data, sp["projection_k_max"]))
        measure = benchmark_measure(cfg, bench)
        if isinstance(measure, BoxWaveMeasure):
            four = box_measure_fourier_eigs(measure, sp["fourier_k_max"], as_operator=True, ps=())
            k = min(len(four.eigenvalues), len(rep.eigenvalues))
            ratio = rep.eigenvalues[:k] / np.maximum(four.eigenvalues[:k], 1e-300)
            full = measure.xi_range[1] - measure.xi_range[0] >= measure.period
            rep.meta["fourier_check"] = {
                "k": int(k), "ratios": ratio.tolist(),
                "max_rel_dev": float(np.max(np.abs(ratio - 1))),
                "translation_invariant": bool(full),
            }
        base = out / "spectrum" / bench
        _write(base.with_suffix(".csv"), _csv_with_hash(rep.to_csv(), chash))
        _write(base.with_suffix(".json"), _json(json.loads(rep.to_json())))
        results[bench] = alpha
        print(f"{bench}: tail exponent " + ("n/a" if alpha is None else f"{alpha:.4f}"))
    return results


def _construct_builder(co: dict):
    tgt = co["target"]
    ladder = {k: co[k] if co[k] is not None else CONSTRUCT_DEFAULTS[tgt].get(k)
              for k in ("N", "m", "eps")}
    t = co["t"]
    if tgt == "adv-fno":
        axes = {"N": ladder["N"]}
        fixed = {}
    elif tgt == "adv-sdon":
        axes = {"m": ladder["m"], "eps": ladder["eps"]}
        fixed = {}
    elif tgt == "burg-sdon":
        axes = {"eps": ladder["eps"]}
        fixed = {"t": t}
    else:
        axes = {"eps": ladder["eps"], "N": ladder["N"] or [256]}
        fixed = {"t": t}
    varying = [k for k, v in axes.items() if len(v) > 1]
    if len(varying) > 1:
        raise ConfigError(f"{tgt}: only one of {sorted(axes)} may list several values")
    axis = varying[0] if varying else next(iter(axes))
    const = {k: v[0] for k, v in axes.items() if k != axis}

    def build(b):
        kw = dict(const, **{axis: b})
        if tgt == "adv-fno":
            return build_adv_fno(int(kw["N"]))
        if tgt == "adv-sdon":
            return build_adv_sdon(float(kw["eps"]), int(kw["m"]))
        if tgt == "burg-sdon":
            return build_burg_sdon(float(kw["eps"]), fixed["t"])
        return build_burg_fno(float(kw["eps"]), fixed["t"], int(kw["N"]))

    return build, axis, axes[axis], dict(const, **fixed)


def cmd_construct(cfg: dict, out: Path):
    chash = config_hash(cfg)
    co = cfg["construct"]
    tgt = co["target"]
    build, axis, budgets, fixed = _construct_builder(co)
    if tgt.startswith("burg") and co["t"] <= math.pi:
        log.warning("%s: t = %g; the error guarantees assume t > pi, results for "
                    "pi >= t > 1 are empirical", tgt, co["t"])
    eps_axis = axis == "eps"
    try:
        rep = scaling_report(build, budgets, n_mc=co["n_mc"], seed=co["mc_seed"],
                             fit="loglog", n_eval=co["n_eval"])
    except ConstructionError as exc:
        raise ConstructionError(f"{tgt}: {exc}") from exc
    if eps_axis and len(budgets) > 1:
        e = rep.mean_err
        rep.meta["monotone"] = all(b < a for a, b in zip(e, e[1:])) if \
            all(x > y for x, y in zip(budgets, budgets[1:])) else None
    rep.meta.update(target=tgt, axis=axis, fixed=fixed, config_hash=chash,
                    t_caveat=tgt.startswith("burg") and co["t"] <= math.pi)
    base = out / "construct" / tgt
    _write(base.with_suffix(".csv"), _csv_with_hash(rep.to_csv(), chash))
    _write(base.with_suffix(".json"), _json(json.loads(rep.to_json())))
    if rep.fit:
        print(f"{tgt}: error slope {rep.fit['slope']:.4f} vs log {axis}, "
              f"size exponent {rep.size_fit['slope']:.4f}")
    return rep


def init_model(kind: str, spec: dict, ds: Dataset, seed: int):
    spec = {k: tuple(v) if isinstance(v, list) else v for k, v in spec.items()}
    channels = ds.inputs.shape[1]
    if kind == "fno":
        return init_fno(seed=seed, d_u=channels, **spec)
    init = init_deeponet if kind == "don" else init_shift_deeponet
    return init(ds.grid, seed=seed, channels=channels, **spec)


def _jobs(cfg):
    return [(b, k, s) for b in cfg["benchmarks"] for k in cfg["models"] for s in cfg["seeds"]]


def _run_jobs(fn, jobs, threads):
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


def cmd_train(cfg: dict, out: Path):
    import torch

    torch.set_num_threads(1)
    chash = config_hash(cfg)
    data = {}
    for bench in cfg["benchmarks"]:
        pair = []
        for split in ("train", "val"):
            path = dataset_path(out, bench, split)
            ds = _load(path)
            _check_dataset(ds, cfg, bench, path)
            pair.append(ds)
        data[bench] = tuple(pair)

    def job(spec):
        bench, kind, seed = spec
        model = init_model(kind, cfg["models"][kind], data[bench][0], seed)
        tc = TrainConfig(seed=seed, **cfg["train"])
        hist_path = out / "checkpoints" / bench / f"{kind}_s{seed}_history.csv"
        try:
            best, hist = train_model(model, data[bench], tc)
        except Divergence as exc:
            _write(hist_path, _csv_with_hash(exc.history.to_csv(), chash))
            return spec, exc
        best.meta = dict(best.meta, config_hash=chash, benchmark=bench, model=kind,
                         seed=seed, best_epoch=hist.best_epoch)
        path = checkpoint_path(out, bench, kind, seed)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_model(best, path)
        _write(hist_path, _csv_with_hash(hist.to_csv(), chash))
        log.info("trained %s/%s seed %d: best validation %.4g at epoch %d",
                 bench, kind, seed, hist.best_val, hist.best_epoch)
        return spec, None

    failures = [(s, e) for s, e in _run_jobs(job, _jobs(cfg), cfg["threads"]) if e is not None]
    if failures:
        (bench, kind, seed), exc = failures[0]
        raise Divergence(f"{bench}/{kind} seed {seed}: {exc}", exc.batch, exc.history)
    return cmd_evaluate(cfg, out, "test")


TABLE_HEADER = ["benchmark", "model", "seed", "split", "median", "q25", "q75", "n",
                "config_hash"]


def cmd_evaluate(cfg: dict, out: Path, split: str = "test"):
    chash = config_hash(cfg)
    sets = {}
    for bench in cfg["benchmarks"]:
        path = dataset_path(out, bench, split)
        sets[bench] = _load(path)
        _check_dataset(sets[bench], cfg, bench, path)

    def job(spec):
        bench, kind, seed = spec
        path = checkpoint_path(out, bench, kind, seed)
        if not path.exists():
            raise FileNotFoundError(f"missing checkpoint {path}; run `discop train` first")
        model = load_model(path)
        if model.meta.get("config_hash") != chash:
            raise ConfigError(f"checkpoint {path} was trained under another config")
        res = evaluate(model, sets[bench])
        row = {"benchmark": bench, "model": kind, "seed": seed, "split": split,
               **res, "config_hash": chash}
        _write(eval_path(out, bench, kind, seed, split), _json(row))
        return row

    rows = _run_jobs(job, _jobs(cfg), cfg["threads"])
    _write(out / f"table_{split}.csv", _csv(TABLE_HEADER, [[r[k] for k in TABLE_HEADER]
                                                           for r in rows]))
    for r in rows:
        print(f"{r['benchmark']:>12} {r['model']:>5} seed {r['seed']}: "
              f"median {r['median']:.4g} [{r['q25']:.4g}, {r['q75']:.4g}]")
    return rows


REPORT_HEADER = ["benchmark", "model", "n_seeds", "median", "q25", "q75", "config_hash"]
ORDER = ("fno", "sdon", "don")


def ordering(rows: list, gap: float = 1.2) -> dict:
    """Per benchmark and seed: does FNO < sDON < DON hold with ratios >= ``gap``."""
    table: dict = {}
    for r in rows:
        table.setdefault(r["benchmark"], {}).setdefault(r["seed"], {})[r["model"]] = r["median"]
    res = {}
    for bench, seeds in sorted(table.items()):
        per = {}
        for seed, med in sorted(seeds.items()):
            if all(k in med for k in ORDER):
                ratios = [med["sdon"] / med["fno"], med["don"] / med["sdon"]]
                per[str(seed)] = {"holds": bool(min(ratios) >= gap),
                                  "sdon_over_fno": ratios[0], "don_over_sdon": ratios[1]}
        res[bench] = {"seeds": per, "n_holds": sum(v["holds"] for v in per.values())}
    return res


def cmd_report(paths: list, out: Path, split: str = "test") -> dict:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files += sorted((p / "eval").glob(f"*/*_{split}.json"))
        elif p.exists():
            files.append(p)
        else:
            raise FileNotFoundError(f"no such file or directory: {p}")
    if not files:
        raise FileNotFoundError("no evaluation results found")
    rows = [json.loads(f.read_text()) for f in files]
    hashes = sorted({r.get("config_hash") for r in rows}, key=str)
    if len(hashes) != 1 or hashes[0] is None:
        raise ConfigError(f"refusing to aggregate results with different config hashes: {hashes}")
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["benchmark"], r["model"]), []).append(r)
    table = []
    for (bench, kind), rs in sorted(groups.items()):
        table.append([bench, kind, len(rs)] +
                     [float(np.median([r[q] for r in rs])) for q in ("median", "q25", "q75")] +
                     [hashes[0]])
    doc = {"config_hash": hashes[0], "rows": [dict(zip(REPORT_HEADER, t)) for t in table],
           "per_seed": sorted(rows, key=lambda r: (r["benchmark"], r["model"], r["seed"])),
           "ordering": ordering(rows)}
    _write(out / "report.csv", _csv(REPORT_HEADER, table))
    _write(out / "report.json", _json(doc))
    for t in table:
        print(f"{t[0]:>12} {t[1]:>5}: median {t[3]:.4g} [{t[4]:.4g}, {t[5]:.4g}] over {t[2]} seed(s)")
    return doc


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="discop", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"discop {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--output", "-o", help="output directory")
        sp.add_argument("--threads", type=int, help="maximum number of worker threads")

    def data_flags(sp, seed=False):
        sp.add_argument("--benchmark", choices=sorted(BENCHMARKS))
        sp.add_argument("--grid", type=int, help="grid points n")
        if seed:
            sp.add_argument("--n-train", type=int)
            sp.add_argument("--n-val", type=int)
            sp.add_argument("--n-test", type=int)
            sp.add_argument("--seed", type=int, help="data seed")

    g = sub.add_parser("generate", help="sample datasets")
    common(g)
    data_flags(g, seed=True)

    s = sub.add_parser("spectrum", help="PCA spectrum of a generated dataset")
    common(s)
    data_flags(s)

    c = sub.add_parser("construct", help="error ladders of the explicit constructions")
    common(c)
    c.add_argument("target", nargs="?", choices=TARGETS)
    c.add_argument("--N", help="comma-separated grid sizes")
    c.add_argument("--m", help="comma-separated sensor counts")
    c.add_argument("--eps", help="comma-separated accuracy targets")
    c.add_argument("--t", type=float, help="Burgers final time")
    c.add_argument("--n-mc", type=int, help="Monte-Carlo draws per budget")
    c.add_argument("--n-eval", type=int, help="evaluation grid for DeepONet-type models")
    c.add_argument("--mc-seed", type=int)

    for name, helptext in (("train", "train models and evaluate on the test split"),
                           ("evaluate", "evaluate trained checkpoints")):
        t = sub.add_parser(name, help=helptext)
        common(t)
        data_flags(t)
        t.add_argument("--models", help="comma-separated subset of configured models")
        t.add_argument("--seeds", help="comma-separated training seeds")
        if name == "train":
            t.add_argument("--epochs", type=int)
        else:
            t.add_argument("--split", choices=SPLITS, default="test")

    r = sub.add_parser("report", help="aggregate evaluation results into a table")
    r.add_argument("inputs", nargs="+", help="run directories or evaluation JSON files")
    r.add_argument("--output", "-o", default=".", help="where report.csv/json go")
    r.add_argument("--split", choices=SPLITS, default="test")
    return p


def _setup_logging(out: Path | None):
    log.handlers.clear()
    log.setLevel(logging.INFO)
    log.propagate = False
    err = logging.StreamHandler(sys.stderr)
    err.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    log.addHandler(err)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = logging.FileHandler(out / "run.log")
        fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        log.addHandler(fh)


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            out = Path(args.output)
            _setup_logging(None)
            cmd_report(args.inputs, out, args.split)
            return EXIT_OK
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be positive")
        cfg = resolve(args)
        out = Path(cfg["output"])
        _setup_logging(out)
        log.info("%s: config hash %s", args.command, config_hash(cfg))
        _write(out / "config.json", canonical(cfg))
        if args.command == "generate":
            cmd_generate(cfg, out)
        elif args.command == "spectrum":
            cmd_spectrum(cfg, out)
        elif args.command == "construct":
            cmd_construct(cfg, out)
        elif args.command == "train":
            cmd_train(cfg, out)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, out, args.split)
        return EXIT_OK
    except (ConfigError, ConstructionError) as exc:
        log.error("%s", exc) if log.handlers else print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (Divergence, PositivityLost, SampleError, FloatingPointError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (OSError, FormatError, CheckpointError) as exc:
        log.error("I/O error: %s", exc) if log.handlers else print(f"I/O error: {exc}",
                                                                    file=sys.stderr)
        return EXIT_IO


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
