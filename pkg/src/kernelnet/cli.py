"""Command-line entry points.

Every subcommand is a thin wrapper that assembles an experiment config (or
loads one from --config) and hands it to run_experiment; `fit`, `predict`,
and `compile-pwp` act directly on checkpoint/spec files.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import datasets
from .experiment import EXP_SCHEMA, run_experiment, save_checkpoint
from .gp import GpModel, model_from_dict
from .graph import spec_from_dict, spec_to_dict
from .presets import preset
from .pwp import PwpExpr, PwpTerm, compile_pwp
from .graph import PrimitiveSlot
from .primitives import Primitive
from .train import TrainConfig, fit as train_fit


def _load_config(args, overrides: dict) -> dict:
    config: dict = {"schema": EXP_SCHEMA}
    if args.config:
        config.update(json.loads(Path(args.config).read_text()))
    for key, value in overrides.items():
        if value is not None:
            config[key] = value
    if args.seed is not None:
        config["seed"] = args.seed
    if args.threads is not None:
        config["threads"] = args.threads
    if args.out is not None:
        config["out"] = args.out
    return config


def _parse_models(spec_str: str) -> dict:
    """name=preset[,name=preset...]; 'kernel:' prefix selects a bare kernel."""
    models = {}
    for part in spec_str.split(","):
        name, _, value = part.partition("=")
        value = value or name
        if value.startswith("kernel:"):
            models[name] = {"kernel": value.split(":", 1)[1]}
        elif value.startswith("sm"):
            models[name] = {"preset": "sm", "q": int(value[2:] or 4)}
        else:
            models[name] = {"preset": value}
    return models


def _dataset_cfg(args) -> dict:
    cfg: dict = {}
    if getattr(args, "dataset", None):
        cfg["name"] = args.dataset
    if getattr(args, "data", None):
        cfg["path"] = args.data
    return cfg


def _train_overrides(args) -> dict:
    train = {}
    if getattr(args, "iters", None) is not None:
        train["iters"] = args.iters
    if getattr(args, "lr", None) is not None:
        train["lr"] = args.lr
    return train


def cmd_fit(args) -> int:
    ds = datasets.load_named(args.dataset, path=args.data) if args.dataset else datasets.load_csv(args.data)
    rng = np.random.default_rng(args.seed or 0)
    spec = preset(args.preset, ds.d, rng, X=ds.X, q=args.q)
    model = GpModel.create(spec, ds.X, ds.y, noise_var=args.noise_var)
    cfg = TrainConfig(iters=args.iters or 20000, lr=args.lr or 0.001)
    res = train_fit(model, cfg)
    out = Path(args.out or "model.json")
    save_checkpoint(res.model, out)
    trace_path = out.with_suffix(".trace.csv")
    with open(trace_path, "w") as fh:
        fh.write("iter,log_marginal,seconds\n")
        for it, lml, sec in res.trace:
            fh.write(f"{it},{lml!r},{sec!r}\n")
    print(f"final log marginal likelihood: {res.final_lml:.4f}")
    print(f"checkpoint: {out}  trace: {trace_path}")
    return 0


def cmd_predict(args) -> int:
    model = model_from_dict(json.loads(Path(args.model).read_text()))
    with open(args.data, newline="") as fh:
        rows = list(csv.reader(fh))
    X = np.asarray([[float(v) for v in row] for row in rows[1:]], dtype=np.float64)
    if X.shape[1] == model.d + 1:
        X = X[:, :-1]  # allow files that still carry a target column
    post = model.predict(X)
    out = Path(args.out or "predictions.csv")
    with open(out, "w") as fh:
        fh.write("mean,std\n")
        for m, v in zip(post.mean, post.variance):
            fh.write(f"{float(m)!r},{float(np.sqrt(v))!r}\n")
    print(f"wrote {out}")
    return 0


def cmd_extrapolate(args) -> int:
    config = _load_config(
        args,
        {
            "kind": "extrapolate",
            "dataset": _dataset_cfg(args) or None,
            "models": _parse_models(args.models) if args.models else None,
            "cutoff_frac": args.cutoff,
            "seeds": [int(s) for s in args.seeds.split(",")] if args.seeds else None,
        },
    )
    config.setdefault("models", {"nkn": {"preset": "default6"}})
    if _train_overrides(args):
        config["train"] = {**config.get("train", {}), **_train_overrides(args)}
    summary, artifacts = run_experiment(config)
    print(json.dumps(summary["results"], indent=2, sort_keys=True))
    print(f"artifacts: {artifacts['out_dir']}")
    return 0


def cmd_bo(args) -> int:
    config = _load_config(
        args,
        {
            "kind": "bo",
            "benchmark": args.benchmark,
            "dims": args.dims,
            "surrogates": args.surrogate.split(",") if args.surrogate else None,
            "iters": args.iters,
            "seeds": [int(s) for s in args.seeds.split(",")] if args.seeds else None,
        },
    )
    summary, artifacts = run_experiment(config)
    print(json.dumps(summary["results"], indent=2, sort_keys=True))
    print(f"artifacts: {artifacts['out_dir']}")
    return 0


def cmd_texture(args) -> int:
    config = _load_config(
        args,
        {
            "kind": "texture",
            "image": args.image,
            "mask": args.mask,
            "axis_kind": args.axes,
        },
    )
    if _train_overrides(args):
        config["train"] = {**config.get("train", {}), **_train_overrides(args)}
    summary, artifacts = run_experiment(config)
    print(json.dumps(summary["results"], indent=2, sort_keys=True))
    print(f"artifacts: {artifacts['out_dir']}")
    return 0


def cmd_gradcheck(args) -> int:
    config = _load_config(
        args,
        {"kind": "gradcheck", "models": args.models, "n": args.n, "d": args.d},
    )
    summary, artifacts = run_experiment(config)
    print(json.dumps(summary["results"], indent=2, sort_keys=True))
    return 0 if summary["results"]["worst_relative_error"] < 1e-5 else 1


def cmd_synth(args) -> int:
    config = _load_config(
        args,
        {"kind": "synth", "dataset": {"generator": args.kind, "seed": args.seed or 0}},
    )
    summary, artifacts = run_experiment(config)
    print(f"wrote {artifacts['out_dir']}")
    return 0


def cmd_compile_pwp(args) -> int:
    doc = json.loads(Path(args.pwp).read_text())
    terms = tuple(PwpTerm(float(t["weight"]), tuple(t["exponents"])) for t in doc["terms"])
    slots = tuple(
        PrimitiveSlot(
            Primitive(
                p["kind"],
                dims=None if p.get("dims") is None else tuple(p["dims"]),
                shared_lengthscale=bool(p.get("shared_lengthscale", False)),
            ),
            np.asarray(p["raw_init"], dtype=np.float64),
        )
        for p in doc["primitives"]
    )
    spec = compile_pwp(PwpExpr(terms), slots)
    out = Path(args.out or "compiled_spec.json")
    out.write_text(json.dumps(spec_to_dict(spec), indent=2, sort_keys=True))
    print(f"wrote {out} (max width {spec.max_width()})")
    return 0


def cmd_run(args) -> int:
    config = _load_config(args, {})
    summary, artifacts = run_experiment(config)
    print(json.dumps(summary.get("results", {}), indent=2, sort_keys=True))
    print(f"artifacts: {artifacts['out_dir']}")
    return 0


def main(argv=None) -> int:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON (nkn-exp/1)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None, help="output directory or file")
    common.add_argument("--threads", type=int, default=None, help="1 = force serial BLAS")

    parser = argparse.ArgumentParser(
        prog="kernelnet",
        description="Compositional kernel networks for Gaussian process regression",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add_parser("fit", help="fit a model on a full dataset")
    p.add_argument("--dataset", help="bundled dataset name")
    p.add_argument("--data", help="CSV path (header, target in last column)")
    p.add_argument("--preset", default="default6")
    p.add_argument("--q", type=int, default=None, help="mixture count for the sm preset")
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--noise-var", type=float, default=0.1)
    p.set_defaults(func=cmd_fit)

    p = add_parser("predict", help="predict from a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="CSV of feature rows")
    p.set_defaults(func=cmd_predict)

    p = add_parser("extrapolate", help="time-series extrapolation experiment")
    p.add_argument("--dataset", default="airline")
    p.add_argument("--data")
    p.add_argument("--models", help="name=preset[,name=preset...]; kernel:rbf for bare kernels")
    p.add_argument("--cutoff", type=float, default=None)
    p.add_argument("--seeds")
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.set_defaults(func=cmd_extrapolate)

    p = add_parser("bo", help="Bayesian optimization benchmark")
    p.add_argument("--benchmark", default="stybtang")
    p.add_argument("--dims", type=int, default=10)
    p.add_argument("--surrogate", default="nkn", help="comma list: nkn,rbf,2rbf,oracle")
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--seeds", default="0")
    p.set_defaults(func=cmd_bo)

    p = add_parser("texture", help="grid GP texture completion")
    p.add_argument("--image", required=True, help="P2/P5 PGM image")
    p.add_argument("--mask", required=True, help="PGM mask; nonzero = held out")
    p.add_argument("--axes", default="per", choices=["per", "rbf", "nkn4"])
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.set_defaults(func=cmd_texture)

    p = add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--models", type=int, default=20)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--d", type=int, default=2)
    p.set_defaults(func=cmd_gradcheck)

    p = add_parser("compile-pwp", help="compile a kernel polynomial to a network spec")
    p.add_argument("--pwp", required=True, help="JSON with terms + primitives")
    p.set_defaults(func=cmd_compile_pwp)

    p = add_parser("synth", help="emit a synthetic dataset")
    p.add_argument("--kind", required=True, choices=["fig1_2d", "gp_sample_1d", "neuron_toy"])
    p.set_defaults(func=cmd_synth)

    p = add_parser("run", help="run an experiment config verbatim")
    p.set_defaults(func=cmd_run)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
