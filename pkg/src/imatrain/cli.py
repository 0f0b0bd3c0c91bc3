"""Command-line frontend: generate, train, eval, sweep.

Each run writes into an output directory containing the resolved config and
a VERSION file; two runs with identical resolved configs produce
byte-identical checkpoints and reports.  Exit codes: 0 success, 2 config
error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import glob
import itertools
import os
import sys
import traceback

import numpy as np

from . import __version__
from .attacks import AttackConfig, bpgd_batch
from .config import RunConfig, load_config
from .data import load_csv, make_blobs, make_moons, save_csv
from .errors import ConfigError, DataError, NumericError
from .evaluate import (equilibrium_diagnostic, evaluate_robustness,
                       evaluate_white_noise, margin_histogram,
                       rasterize_boundary, write_bounds_meta, write_pgm)
from .net import AdamConfig, Model, load_checkpoint, mlp_layers
from .rngs import substream
from .train import (MarginTable, TrainConfig, ce_train, ima_train,
                    vanilla_adv_train)

OUT_ROOT_ENV = "IMATRAIN_OUT"


def _resolve_out(cfg: RunConfig, flag_value):
    out = flag_value or cfg["run"]["out"]
    if not out:
        raise ConfigError("no output directory: pass --out or set run.out")
    root = os.environ.get(OUT_ROOT_ENV, "")
    if root and not os.path.isabs(out):
        out = os.path.join(root, out)
    return out


def _prepare_out(cfg: RunConfig, out):
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config_resolved.cfg"), "w") as fh:
        fh.write(cfg.echo())
    with open(os.path.join(out, "VERSION"), "w") as fh:
        fh.write(f"imatrain {__version__}\n")


def _build_dataset(cfg: RunConfig):
    d = cfg["dataset"]
    if d["generator"] == "moons":
        return make_moons((d["n_train"], d["n_val"], d["n_test"]),
                          noise_std=d["noise_std"], seed=d["seed"])
    if d["generator"] == "blobs":
        return make_blobs(d["blob_centers"], d["blob_std"], d["blob_n"],
                          seed=d["seed"])
    if d["generator"] == "file":
        if not d["path"]:
            raise ConfigError("dataset.generator=file requires dataset.path")
        return load_csv(d["path"])
    raise ConfigError(
        f"unknown generator {d['generator']!r}; valid: moons, blobs, file")


def _attack_config(cfg: RunConfig, n_pgd=None, seed=None):
    a = cfg["attack"]
    clip = None
    if a["clip_lo"] != a["clip_hi"]:
        clip = (a["clip_lo"], a["clip_hi"])
    return AttackConfig(norm=a["norm"], epsilon=0.0,
                        n_pgd=n_pgd if n_pgd is not None else a["n_pgd"],
                        alpha=a["alpha"], n_binary=a["n_binary"],
                        seed=seed if seed is not None else cfg["run"]["seed"],
                        clip_box=clip)


def _train_config(cfg: RunConfig):
    t = cfg["train"]
    delta_eps = t["delta_eps"] if t["delta_eps"] > 0 else None
    return TrainConfig(epochs=t["epochs"], batch_size=t["batch_size"],
                       beta=t["beta"], eps_max=t["eps_max"],
                       delta_eps=delta_eps, attack=_attack_config(cfg),
                       optimizer=AdamConfig(lr=t["lr"]),
                       seed=cfg["run"]["seed"])


def _build_model(cfg: RunConfig, dataset):
    m = cfg["model"]
    layers = mlp_layers(dataset.feature_dim, tuple(m["hidden"]),
                        dataset.num_classes,
                        negative_slope=m["negative_slope"],
                        use_layer_norm=m["layer_norm"])
    return Model(layers, dataset.num_classes, seed=cfg["run"]["seed"])


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(cfg: RunConfig, out):
    _prepare_out(cfg, out)
    dataset = _build_dataset(cfg)
    path = os.path.join(out, "dataset.csv")
    save_csv(dataset, path)
    counts = dataset.counts()
    print(f"wrote {path}: " + " ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def cmd_train(cfg: RunConfig, out):
    _prepare_out(cfg, out)
    dataset = _build_dataset(cfg)
    model = _build_model(cfg, dataset)
    tcfg = _train_config(cfg)
    method = cfg["train"]["method"]
    if method == "ima":
        result = ima_train(model, dataset, tcfg, out_dir=out)
    elif method == "adv":
        eps = cfg["train"]["eps"]
        if eps < 0:
            raise ConfigError("train.eps is required for method=adv")
        result = vanilla_adv_train(model, dataset, eps, tcfg, out_dir=out)
    elif method == "ce":
        result = ce_train(model, dataset, tcfg, out_dir=out)
    else:
        raise ConfigError(f"unknown train.method {method!r}; valid: ima, adv, ce")
    last = result.logs[-1]
    print(f"method={method} epochs={len(result.logs)} "
          f"train_acc={last.train_acc:.4f} val_acc={last.val_acc:.4f}")
    return 0


def _eval_one(cfg: RunConfig, model, dataset, out, suffix=""):
    e = cfg["eval"]
    X, Y = dataset.subset("test")
    if len(Y) == 0:
        X, Y = dataset.subset("train")
    atk = _attack_config(cfg, n_pgd=e["n_pgd"])
    report = evaluate_robustness(model, X, Y, e["levels"], atk,
                                 checkpoint_id=suffix or "final")
    report.to_csv(os.path.join(out, f"report{suffix}.csv"))
    if e["white_noise_level"] >= 0:
        frac = evaluate_white_noise(model, X, Y, e["white_noise_level"],
                                    e["white_noise_trials"],
                                    seed=cfg["run"]["seed"])
        with open(os.path.join(out, f"white_noise{suffix}.csv"), "w") as fh:
            fh.write("level,flip_fraction\n")
            fh.write(f"{e['white_noise_level']:.17g},{frac:.17g}\n")
    margins = None
    if e["margins_path"]:
        rows = np.loadtxt(e["margins_path"], delimiter=",", skiprows=1,
                          ndmin=2)
        margins = rows[:, 1]
        table = MarginTable(margins, delta_eps=cfg["train"]["eps_max"]
                            / cfg["train"]["epochs"],
                            eps_max=cfg["train"]["eps_max"])
        hist = margin_histogram(table, e["hist_bins"])
        hist.to_csv(os.path.join(out, f"hist{suffix}.csv"))
    if e["equilibrium"]:
        if margins is None:
            raise ConfigError("eval.equilibrium requires eval.margins_path")
        _write_equilibrium(cfg, model, dataset, margins, out, suffix)
    if e["raster"]:
        if model.in_dim != 2:
            print("raster skipped: model input is not 2-D", file=sys.stderr)
        else:
            bounds = dataset.bounding_box()
            grid = rasterize_boundary(model, bounds, e["raster_resolution"])
            write_pgm(grid, os.path.join(out, f"boundary{suffix}.pgm"),
                      maxval=max(1, dataset.num_classes - 1))
            write_bounds_meta(bounds, e["raster_resolution"],
                              os.path.join(out, f"bounds{suffix}.meta"))


def _write_equilibrium(cfg, model, dataset, margins, out, suffix):
    """Boundary points from the train split, diagnosed and written as CSV."""
    X, Y = dataset.subset("train")
    if len(margins) != len(Y):
        raise DataError(f"margins file has {len(margins)} rows, train split "
                        f"has {len(Y)}")
    atk = _attack_config(cfg)
    target = cfg["eval"]["equilibrium_points"]
    correct = model.predict(X) == Y
    idx = np.where(correct)[0]
    mids, labels = [], []
    for start in range(0, len(idx), 2048):
        if len(mids) >= target:
            break
        chunk = idx[start:start + 2048]
        res = bpgd_batch(model, X[chunk], Y[chunk], margins[chunk], atk,
                         rng=substream(atk.seed, "equilibrium", start))
        mids.extend(0.5 * (res.points[res.found] + res.partners[res.found]))
        labels.extend(Y[chunk][res.found])
    if not mids:
        raise DataError("no boundary points found for equilibrium diagnostic")
    stats = equilibrium_diagnostic(model, np.array(mids[:target]),
                                   np.array(labels[:target]))
    stats.to_csv(os.path.join(out, f"equilibrium{suffix}.csv"))


def cmd_eval(cfg: RunConfig, out, checkpoint=None, checkpoint_sweep=None):
    _prepare_out(cfg, out)
    dataset = _build_dataset(cfg)
    if checkpoint_sweep:
        paths = sorted(glob.glob(os.path.join(checkpoint_sweep,
                                              "model_epoch*.ckpt")))
        if not paths:
            raise DataError(f"no model_epoch*.ckpt files in {checkpoint_sweep}")
        for path in paths:
            model = load_checkpoint(path)
            tag = os.path.basename(path).replace("model", "").replace(".ckpt", "")
            _eval_one(cfg, model, dataset, out, suffix=tag)
            print(f"evaluated {path}")
    else:
        if not checkpoint:
            raise ConfigError("eval needs --checkpoint or --checkpoint-sweep")
        model = load_checkpoint(checkpoint)
        _eval_one(cfg, model, dataset, out)
        print(f"evaluated {checkpoint}")
    return 0


def _sweep_grid(cfg: RunConfig):
    s = cfg["sweep"]
    axes = []
    for key in ("beta", "eps_max", "delta_eps", "eps"):
        if s[key]:
            axes.append([(f"train.{key}", v) for v in s[key]])
    if not axes:
        raise ConfigError("sweep grid is empty: set at least one sweep axis "
                          "(sweep.beta / eps_max / delta_eps / eps)")
    axes.append([("run.seed", v) for v in s["seeds"]])
    return [dict(combo) for combo in itertools.product(*axes)]


def _run_sweep_point(args):
    config_path, raw_overrides, out = args
    cfg = load_config(config_path, overrides=raw_overrides)
    try:
        cmd_train(cfg, out)
        dataset = _build_dataset(cfg)
        model = load_checkpoint(sorted(glob.glob(
            os.path.join(out, "model_epoch*.ckpt")))[-1])
        _eval_one(cfg, model, dataset, out)
        with open(os.path.join(out, ".done"), "w") as fh:
            fh.write("ok\n")
        return out, "ok"
    except Exception as exc:  # noqa: BLE001 - sweep records and continues
        return out, f"failed: {exc}"


def cmd_sweep(cfg: RunConfig, out, config_path, base_overrides):
    _prepare_out(cfg, out)
    grid = _sweep_grid(cfg)
    jobs = max(1, cfg["run"]["jobs"])
    tasks, rows = [], []
    for point in grid:
        name = "_".join(f"{k.split('.')[1]}{v:g}" if isinstance(v, float)
                        else f"{k.split('.')[1]}{v}" for k, v in point.items())
        sub = os.path.join(out, name)
        if os.path.exists(os.path.join(sub, ".done")):
            rows.append((name, point, "skipped (done)"))
            continue
        overrides = list(base_overrides) + [f"{k}={v}" for k, v in point.items()]
        tasks.append(((config_path, overrides, sub), name, point))
    if jobs > 1 and tasks:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_sweep_point, [t[0] for t in tasks]))
    else:
        results = [_run_sweep_point(t[0]) for t in tasks]
    for (sub, status), (_, name, point) in zip(results, tasks):
        rows.append((name, point, status))
    level = cfg["sweep"]["level"]
    with open(os.path.join(out, "summary.csv"), "w") as fh:
        fh.write("run,params,status,clean_acc,acc_at_level,level\n")
        for name, point, status in rows:
            clean = acc = ""
            report = os.path.join(out, name, "report.csv")
            if status in ("ok", "skipped (done)") and os.path.exists(report):
                clean, acc = _summary_from_report(report, level)
            params = ";".join(f"{k}={v}" for k, v in point.items())
            fh.write(f"{name},{params},{status},{clean},{acc},{level:.17g}\n")
    print(f"sweep finished: {len(rows)} grid points; summary in "
          f"{os.path.join(out, 'summary.csv')}")
    return 0


def _summary_from_report(path, level):
    clean = acc = ""
    with open(path) as fh:
        next(fh)
        for line in fh:
            lvl, kind, _c, _n, accuracy = line.strip().split(",")
            if kind != "worst_case":
                continue
            if float(lvl) == 0.0:
                clean = accuracy
            if abs(float(lvl) - level) < 1e-12:
                acc = accuracy
    return clean, acc


# ---------------------------------------------------------------------------
# entry point


def _parser():
    p = argparse.ArgumentParser(prog="imatrain",
                                description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version",
                   version=f"imatrain {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("generate", "train", "eval", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="config file path")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="override run.seed")
        sp.add_argument("--jobs", type=int, default=None,
                        help="override run.jobs (sweep parallelism)")
        sp.add_argument("--set", dest="overrides", action="append",
                        default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
        if name == "eval":
            sp.add_argument("--checkpoint", default=None)
            sp.add_argument("--checkpoint-sweep", default=None,
                            help="directory of per-epoch checkpoints")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.jobs is not None:
        overrides.append(f"run.jobs={args.jobs}")
    try:
        cfg = load_config(args.config, overrides=overrides)
        out = _resolve_out(cfg, args.out)
        if args.command == "generate":
            return cmd_generate(cfg, out)
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "eval":
            return cmd_eval(cfg, out, checkpoint=args.checkpoint,
                            checkpoint_sweep=args.checkpoint_sweep)
        return cmd_sweep(cfg, out, args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except Exception:  # noqa: BLE001 - report unexpected failures
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
