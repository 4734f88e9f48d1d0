"""Experiment drivers: fit/predict loops, metric emission, reproducibility.

A config document (JSON schema "nkn-exp/1") names a dataset, one or more
models, a split protocol, and a training budget.  Runs write into an output
directory:

    config.json     the exact config that ran
    summary.json    metrics + seed + config hash + git describe (bit-stable
                    across reruns with the same seed; no wall-clock values)
    *.csv           per-repeat metrics, loss traces, extrapolation curves,
                    BO traces (wall-clock lives here)

Metrics are computed in original target units: RMSE and the mean per-point
Gaussian predictive log density.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import bayesopt, datasets, gridgp
from .gp import GpModel, model_to_dict
from .graph import spec_from_dict
from .presets import plain_kernel_spec, preset
from .train import TrainConfig, fit
from .util import SpecError

EXP_SCHEMA = "nkn-exp/1"


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=10,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def rmse(pred_mean: np.ndarray, y: np.ndarray) -> float:
    return float(np.sqrt(np.mean((pred_mean - y) ** 2)))


def mean_log_density(pred_mean: np.ndarray, pred_var: np.ndarray, y: np.ndarray) -> float:
    v = np.maximum(pred_var, 1e-12)
    return float(np.mean(-0.5 * np.log(2.0 * np.pi * v) - (y - pred_mean) ** 2 / (2.0 * v)))


def build_spec(model_cfg: dict, d: int, X: np.ndarray | None, rng: np.random.Generator):
    if "spec" in model_cfg:
        return spec_from_dict(model_cfg["spec"])
    if "preset" in model_cfg:
        return preset(model_cfg["preset"], d, rng, X=X, q=model_cfg.get("q"))
    if "kernel" in model_cfg:
        return plain_kernel_spec(
            model_cfg["kernel"],
            d,
            rng,
            X=X,
            shared_lengthscale=bool(model_cfg.get("shared_lengthscale", False)),
        )
    raise SpecError("model config needs one of: preset, kernel, spec")


def _train_cfg(config: dict) -> TrainConfig:
    return TrainConfig.from_dict(config.get("train", {}))


def _load_dataset(config: dict) -> datasets.Dataset:
    ds_cfg = config.get("dataset", {})
    if "generator" in ds_cfg:
        return datasets.synth_generate(ds_cfg["generator"], seed=ds_cfg.get("seed", 0))
    return datasets.load_named(ds_cfg.get("name", ""), path=ds_cfg.get("path"))


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def _fit_one(spec, train_x, train_y, noise_var, cfg: TrainConfig):
    model = GpModel.create(spec, train_x, train_y, noise_var=noise_var)
    return fit(model, cfg)


def _summary_stats(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
        "values": [float(v) for v in arr],
    }


# ---------------------------------------------------------------------------
# experiment kinds


def _run_regression(config: dict, out: Path, artifacts: dict) -> dict:
    ds = _load_dataset(config)
    split_cfg = config.get("split", {})
    kind = split_cfg.get("kind", "random")
    cfg = _train_cfg(config)
    noise_var = config.get("noise_var", 0.1)
    seed = config.get("seed", 0)

    if kind == "random":
        repeats = int(split_cfg.get("repeats", 10))
        splits = datasets.random_splits(
            ds, repeats=repeats, train_frac=float(split_cfg.get("train_frac", 0.9)), seed=seed
        )
    elif kind == "pca":
        splits = [datasets.pca_split(ds, tail_frac=float(split_cfg.get("tail_frac", 1.0 / 15.0)))]
    else:
        raise SpecError(f"unknown split kind {kind!r}")

    results: dict = {}
    rows = []
    for model_name, model_cfg in config["models"].items():
        per_rmse, per_ll = [], []
        for r, (tr, te) in enumerate(splits):
            rng = np.random.default_rng([seed, r, _stable_tag(model_name)])
            train_x, train_y = ds.X[tr], ds.y[tr]
            spec = build_spec(model_cfg, ds.d, train_x, rng)
            res = _fit_one(spec, train_x, train_y, model_cfg.get("noise_var", noise_var), cfg)
            post = res.model.predict(ds.X[te])
            m_rmse = rmse(post.mean, ds.y[te])
            m_ll = mean_log_density(post.mean, post.variance, ds.y[te])
            per_rmse.append(m_rmse)
            per_ll.append(m_ll)
            rows.append([model_name, r, m_rmse, m_ll, res.wall_time])
            artifacts.setdefault("fits", []).append((model_name, r, res))
        results[model_name] = {
            "rmse": _summary_stats(per_rmse),
            "log_likelihood": _summary_stats(per_ll),
        }
    _write_csv(out / "metrics.csv", ["model", "repeat", "rmse", "log_likelihood", "seconds"], rows)
    return {"results": results, "splits": len(splits)}


def _stable_tag(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "big")


def _run_extrapolate(config: dict, out: Path, artifacts: dict) -> dict:
    ds = _load_dataset(config)
    order = np.argsort(ds.X[:, 0], kind="stable")
    cutoff_frac = float(config.get("cutoff_frac", 2.0 / 3.0))
    n_train = int(round(cutoff_frac * ds.n))
    tr, te = order[:n_train], order[n_train:]
    cfg = _train_cfg(config)
    seeds = config.get("seeds", [config.get("seed", 0)])
    noise_var = config.get("noise_var", 0.1)

    results: dict = {}
    for model_name, model_cfg in config["models"].items():
        per_ll, per_rmse = [], []
        for s in seeds:
            rng = np.random.default_rng([s, _stable_tag(model_name)])
            spec = build_spec(model_cfg, ds.d, ds.X[tr], rng)
            res = _fit_one(spec, ds.X[tr], ds.y[tr], model_cfg.get("noise_var", noise_var), cfg)
            post = res.model.predict(ds.X[order])
            test_post = res.model.predict(ds.X[te])
            per_ll.append(mean_log_density(test_post.mean, test_post.variance, ds.y[te]))
            per_rmse.append(rmse(test_post.mean, ds.y[te]))
            artifacts.setdefault("fits", []).append((model_name, s, res))
            curve_rows = [
                [
                    float(ds.X[order[i], 0]),
                    float(post.mean[i]),
                    float(np.sqrt(post.variance[i])),
                    float(ds.y[order[i]]),
                    int(i < n_train),
                ]
                for i in range(ds.n)
            ]
            _write_csv(
                out / f"curve_{model_name}_seed{s}.csv",
                ["x", "mean", "std", "truth", "is_train"],
                curve_rows,
            )
            _write_csv(
                out / f"trace_{model_name}_seed{s}.csv",
                ["iter", "log_marginal", "seconds"],
                [[it, lml, sec] for it, lml, sec in res.trace],
            )
        results[model_name] = {
            "test_log_likelihood": _summary_stats(per_ll),
            "test_rmse": _summary_stats(per_rmse),
        }
    return {"results": results, "n_train": int(n_train), "n_test": int(ds.n - n_train)}


def _run_bo(config: dict, out: Path, artifacts: dict) -> dict:
    name = config.get("benchmark", "stybtang")
    d = int(config.get("dims", 10))
    iters = int(config.get("iters", 100))
    seeds = config.get("seeds", [0])
    bo_cfg = config.get("bo", {})
    bench = bayesopt.make_benchmark(name, d, m=int(config.get("m", 10)), seed=config.get("seed", 0))

    rows = []
    results: dict = {}
    for surrogate in config.get("surrogates", ["nkn"]):
        finals = []
        for s in seeds:
            res = bayesopt.run_bo(
                bench,
                surrogate=surrogate,
                iters=iters,
                seed=int(s),
                pool_size=int(bo_cfg.get("pool_size", 2000)),
                refit_iters=int(bo_cfg.get("refit_iters", 500)),
                refit_lr=float(bo_cfg.get("refit_lr", 0.01)),
            )
            finals.append(float(res.best_trace[-1]))
            for it, best in enumerate(res.best_trace):
                rows.append([surrogate, s, it, float(best), res.wall_time])
            artifacts.setdefault("bo_runs", []).append((surrogate, s, res))
        results[surrogate] = {"final_best": _summary_stats(finals)}
    _write_csv(out / "bo_trace.csv", ["surrogate", "seed", "iter", "best", "wallclock"], rows)
    summary = {"results": results, "benchmark": name, "dims": d, "iters": iters}
    if bench.rotation is not None:
        summary["transform"] = {
            "partition": [list(p) for p in bench.partition],
            "rotation": bench.rotation.tolist(),
        }
    return summary


def _run_texture(config: dict, out: Path, artifacts: dict) -> dict:
    image = gridgp.read_pgm(config["image"])
    mask = gridgp.read_pgm(config["mask"]) > 0
    cfg = TrainConfig.from_dict({"iters": 60, "lr": 0.08, "log_every": 10, **config.get("train", {})})
    result = gridgp.texture_extrapolate(
        image,
        mask,
        axis_kind=config.get("axis_kind", "per"),
        train=cfg,
        seed=config.get("seed", 0),
    )
    gridgp.write_pgm(out / "completed.pgm", result.mean)
    rows = []
    for r in range(image.shape[0]):
        for c in range(image.shape[1]):
            rows.append(
                [
                    r,
                    c,
                    float(result.mean[r, c]),
                    float(result.std[r, c]) if result.std is not None else float("nan"),
                    float(image[r, c]),
                    int(not mask[r, c]),
                ]
            )
    _write_csv(out / "pixels.csv", ["row", "col", "mean", "std", "truth", "observed_flag"], rows)
    artifacts["texture"] = result
    return {
        "results": {
            "heldout_rmse": result.heldout_rmse,
            "noise_var": result.noise_var,
            "axis_kind": config.get("axis_kind", "per"),
        }
    }


def _run_gradcheck(config: dict, out: Path, artifacts: dict) -> dict:
    from .gp import log_marginal_likelihood

    n_models = int(config.get("models", 20))
    n = int(config.get("n", 20))
    d = int(config.get("d", 2))
    seed = config.get("seed", 0)
    worst = 0.0
    for k in range(n_models):
        rng = np.random.default_rng([seed, k])
        X = rng.normal(size=(n, d))
        y = rng.normal(size=n)
        spec = preset(config.get("preset", "default6"), d, rng, X=X)
        model = GpModel.create(spec, X, y, noise_var=float(rng.uniform(0.05, 0.5)))
        _, grad = model.lml_and_grad()
        for i in range(model.store.param_count):
            h = 1e-5
            up = model.with_flat(model.store.flat.copy())
            up.store.flat[i] += h
            dn = model.with_flat(model.store.flat.copy())
            dn.store.flat[i] -= h
            fd = (log_marginal_likelihood(up) - log_marginal_likelihood(dn)) / (2 * h)
            err = abs(fd - grad[i]) / max(1.0, abs(fd), abs(grad[i]))
            worst = max(worst, err)
    return {"results": {"worst_relative_error": worst, "models": n_models}}


def _run_synth(config: dict, out: Path, artifacts: dict) -> dict:
    ds = _load_dataset(config)
    rows = [[*map(float, ds.X[i]), float(ds.y[i])] for i in range(ds.n)]
    _write_csv(out / f"{ds.name}.csv", [*ds.feature_names, "y"], rows)
    artifacts["dataset"] = ds
    return {"results": {"n": ds.n, "d": ds.d, "name": ds.name}}


_KINDS = {
    "regression": _run_regression,
    "extrapolate": _run_extrapolate,
    "bo": _run_bo,
    "texture": _run_texture,
    "gradcheck": _run_gradcheck,
    "synth": _run_synth,
}


def run_experiment(config: dict, out_dir=None) -> tuple[dict, dict]:
    """Run one experiment config; returns (summary, artifacts).

    summary is exactly what lands in summary.json - deterministic per seed.
    artifacts holds in-memory objects (fit results, traces) for callers.
    """
    if config.get("schema", EXP_SCHEMA) != EXP_SCHEMA:
        raise SpecError(f"expected config schema {EXP_SCHEMA!r}")
    kind = config.get("kind")
    if kind not in _KINDS:
        raise SpecError(f"unknown experiment kind {kind!r}; expected one of {sorted(_KINDS)}")

    if out_dir is None:
        stamp = time.strftime("%Y%m%d-%H%M%S") + f"-{int(time.time() * 1e6) % 1000000:06d}"
        out_dir = Path(config.get("out", "results")) / str(kind) / stamp
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    limiter = nullcontext()
    if config.get("threads") == 1:
        try:
            from threadpoolctl import threadpool_limits

            limiter = threadpool_limits(limits=1)
        except ImportError:
            pass

    artifacts: dict = {"out_dir": out}
    with limiter:
        body = _KINDS[kind](config, out, artifacts)

    summary = {
        "schema": EXP_SCHEMA,
        "kind": kind,
        "seed": config.get("seed", 0),
        "config_sha256": config_hash(config),
        "git_describe": git_describe(),
        **body,
    }
    (out / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True))
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary, artifacts


def save_checkpoint(model: GpModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), sort_keys=True))
