"""Command-line interface: train, gridsearch, eval, diagnose, project, data.

Every subcommand writes all of its outputs, including a manifest with
the resolved configuration and library versions, under --out and
nowhere else. Exit codes: 0 success, 1 user error, 2 numerical failure.
Tables printed to stdout always have a CSV twin on disk.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np

from . import bounds
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import DataFormatError, save_dataset
from .evaluate import (DELTA_SENTINEL, EvalReport, ProbeSpec, delta_metric,
                       evaluate_all, project_embeddings)
from .presets import DATASETS, PRESETS, build_dataset, preset_config
from .reference import CITATIONS, REFERENCE_RESULTS
from .tensor import TrainingDiverged
from .train import (LOG_COLUMNS, config_from_file, config_from_mapping,
                    config_to_mapping, grid_search, train)

OK, USER_ERROR, NUMERIC_ERROR = 0, 1, 2


class UserError(Exception):
    """Bad flags, files, or configuration; exits with code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UserError(f"{message}\n{self.format_usage()}")


def _versions():
    import scipy
    import sklearn
    return {"python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__}


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out, command, config_map=None, data_hashes=None,
                    extra=None):
    manifest = {"command": command, "config": config_map,
                "data_hashes": data_hashes, "versions": _versions()}
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True,
                               default=str) + "\n", encoding="utf-8")
    return path


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _say(args, *parts):
    if not args.quiet:
        print(*parts)


def _resolve_config(args, require_dataset=True):
    """Flag > config file > tuned preset > defaults."""
    pairs = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UserError(f"config file not found: {path}")
        try:
            pairs = config_to_mapping(config_from_file(path))
        except ValueError as exc:
            raise UserError(f"bad config {path}: {exc}") from exc
    elif args.dataset and args.dataset in PRESETS:
        pairs = dict(PRESETS[args.dataset])
    if args.dataset:
        pairs["dataset"] = args.dataset
    if args.seed is not None:
        pairs["seed"] = args.seed
    try:
        config = config_from_mapping({k: str(v) for k, v in pairs.items()})
    except ValueError as exc:
        raise UserError(str(exc)) from exc
    if require_dataset and not config.dataset:
        raise UserError("no dataset: pass --dataset or set it in the config")
    return config


def _load_splits(name, data_dir, seed=0):
    try:
        return build_dataset(name, Path(data_dir) if data_dir else None, seed)
    except (KeyError, FileNotFoundError, DataFormatError) as exc:
        raise UserError(str(exc)) from exc


def _config_file_text(config):
    pairs = config_to_mapping(config)
    return "".join(f"{k}={pairs[k]}\n" for k in sorted(pairs))


# ------------------------------------------------------------------ train

def cmd_train(args):
    config = _resolve_config(args)
    out = _out_dir(args)
    train_split, test_split, _ = _load_splits(config.dataset, args.data_dir)

    result = train(config, train_split)
    save_checkpoint(result.model, out / "checkpoint.bin")
    _write_csv(out / "log.csv", LOG_COLUMNS,
               [[row[c] for c in LOG_COLUMNS] for row in result.log])
    (out / "config.cfg").write_text(_config_file_text(config),
                                    encoding="utf-8")
    _write_manifest(out, "train", config_to_mapping(config),
                    {"train": train_split.content_hash(),
                     "test": test_split.content_hash()},
                    {"config_hash": config.config_hash(),
                     "diverged": result.diverged,
                     "early_stopped": result.early_stopped,
                     "epochs_run": result.epochs_run})
    if result.diverged:
        _say(args, "training diverged; checkpoint holds the last healthy "
                   "epoch")
        return NUMERIC_ERROR
    _say(args, f"trained {config.dataset} for {result.epochs_run} epochs; "
               f"outputs in {out}")
    return OK


# ------------------------------------------------------------- gridsearch

def _parse_grid(text):
    """'rho=0.1,1;delta=1,10' -> {'rho': [0.1, 1.0], 'delta': [1.0, 10.0]}"""
    grids = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise UserError(f"bad grid term {part!r}; want key=v1,v2,...")
        key, values = part.split("=", 1)
        try:
            grids[key.strip()] = [float(v) for v in values.split(",") if v]
        except ValueError as exc:
            raise UserError(f"bad grid values {values!r}") from exc
    if not grids:
        raise UserError("empty grid")
    return grids


def cmd_gridsearch(args):
    config = _resolve_config(args)
    out = _out_dir(args)
    train_split, _, _ = _load_splits(config.dataset, args.data_dir)
    grids = _parse_grid(args.grid)
    try:
        ranking = grid_search(config, grids, train_split, jobs=args.jobs)
    except ValueError as exc:
        raise UserError(str(exc)) from exc

    rows = []
    for rank, point in enumerate(ranking):
        w = point.config.weights
        rows.append([rank, w.rho, w.delta, w.lam,
                     repr(point.a_s_gap), repr(point.a_y)])
    _write_csv(out / "ranking.csv",
               ["rank", "rho", "delta", "lam", "a_s_gap", "a_y"], rows)
    best = ranking[0].config
    (out / "best.cfg").write_text(_config_file_text(best), encoding="utf-8")
    _write_manifest(out, "gridsearch", config_to_mapping(config),
                    {"train": train_split.content_hash()},
                    {"grid": grids, "points": len(ranking),
                     "best": config_to_mapping(best)})
    _say(args, f"searched {len(ranking)} points; best weights "
               f"rho={best.weights.rho} delta={best.weights.delta} "
               f"lam={best.weights.lam}")
    return OK


# ------------------------------------------------------------------- eval

def _fmt(value):
    if isinstance(value, str):
        return value
    if value is None or (isinstance(value, float) and not math.isfinite(value)):
        return DELTA_SENTINEL
    return f"{value:.3f}"


def report_table(reports, baselines=()):
    """Aligned text table plus raw CSV rows for a list of EvalReports.

    ``baselines`` holds (name, EvalReport) pairs matched to the reports
    task by task (single-task baselines compare against task 0); each
    contributes a relative-error-improvement row.
    """
    if not reports:
        raise ValueError("no reports to tabulate")
    header = ["model"]
    for rep in reports:
        tag = f"task{rep.task}" if len(reports) > 1 else ""
        header += [f"A_y{tag and '_' + tag}", f"A_s{tag and '_' + tag}"]
    rows = [["this-run"] + [cell for rep in reports
                            for cell in (rep.a_y, rep.a_s)]]
    for name, base in baselines:
        delta_y, delta_s = delta_metric(reports[0], base)
        row = [f"delta-vs-{name}", delta_y, delta_s]
        for rep in reports[1:]:
            row += ["", ""]
        rows.append(row)

    text_rows = [[_fmt(c) if not isinstance(c, str) else c for c in row]
                 for row in rows]
    widths = [max(len(header[i]), *(len(r[i]) for r in text_rows))
              for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths))
              for row in text_rows]
    csv_rows = [[c if isinstance(c, str) else repr(c) for c in row]
                for row in rows]
    return "\n".join(lines), header, csv_rows


def _reference_baselines(dataset, reports):
    """EvalReport stand-ins for every published method on this dataset."""
    entry = REFERENCE_RESULTS.get(dataset)
    if entry is None or entry.get("multi_task"):
        return []
    ours = reports[0]
    out = []
    for method, row in entry["rows"].items():
        if method == "adversarial-forgetting":
            continue
        a_s = row["a_s"] if row["a_s"] is not None else float("nan")
        out.append((method, EvalReport(
            a_y=row["a_y"], a_s=a_s, a_s_optimal=ours.a_s_optimal,
            s_kind=entry["s_kind"], task=0,
            metadata={"citation": CITATIONS[method]})))
    return out


def cmd_eval(args):
    if not args.checkpoint:
        raise UserError("eval needs --checkpoint")
    out = _out_dir(args)
    config = _resolve_config(args)
    train_split, test_split, extras = _load_splits(config.dataset,
                                                   args.data_dir)
    try:
        model = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError) as exc:
        raise UserError(f"cannot load checkpoint: {exc}") from exc

    reports = evaluate_all(model, train_split, test_split,
                           config_hash=config.config_hash())
    baselines = _reference_baselines(config.dataset, reports)
    text, header, csv_rows = report_table(reports, baselines)
    _write_csv(out / "results.csv", header, csv_rows)

    unseen_rows = []
    for name, split in sorted(extras.items()):
        acc = float(np.mean(model.predict(split.x) == split.y_tasks[0]))
        unseen_rows.append([name, repr(acc)])
    if unseen_rows:
        _write_csv(out / "unseen.csv", ["split", "a_y"], unseen_rows)

    _write_manifest(out, "eval", config_to_mapping(config),
                    {"train": train_split.content_hash(),
                     "test": test_split.content_hash()},
                    {"checkpoint": str(args.checkpoint),
                     "probe": vars(ProbeSpec())})
    _say(args, text)
    for name, acc in unseen_rows:
        _say(args, f"{name}: A_y={float(acc):.3f}")
    return OK


# --------------------------------------------------------------- diagnose

_CHANNEL_KEYS = ("d", "n", "seed", "sigma_eps", "z_var", "z_mean", "mask")


def _parse_channel_cfg(path):
    from .train import parse_config_text
    try:
        pairs = parse_config_text(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UserError(f"bad channel spec {path}: {exc}") from exc
    for key in pairs:
        if key not in _CHANNEL_KEYS:
            raise UserError(f"unknown channel spec key {key!r}; "
                            f"valid: {_CHANNEL_KEYS}")
    d = int(pairs.get("d", 4))
    n = int(pairs.get("n", 20000))
    seed = int(pairs.get("seed", 0))

    def vector(key, default):
        raw = pairs.get(key)
        if raw is None:
            return default
        values = [float(v) for v in raw.split(",")]
        return values[0] if len(values) == 1 else np.asarray(values)

    mask_text = pairs.get("mask", "fixed:0.5")
    kind, _, rest = mask_text.partition(":")
    params = [float(v) for v in rest.split(",")] if rest else []
    if kind == "fixed":
        mask = ("fixed", params[0] if len(params) == 1
                else np.asarray(params))
    elif kind == "beta":
        if len(params) != 2:
            raise UserError("beta mask needs two parameters, e.g. beta:2,3")
        mask = ("beta", params[0], params[1])
    elif kind == "coupled":
        mask = ("coupled", params[0] if params else 1.0)
    else:
        raise UserError(f"unknown mask rule {kind!r}")
    try:
        spec = bounds.ChannelSpec(d=d, z_var=vector("z_var", 1.0),
                                  z_mean=vector("z_mean", 0.0), mask=mask,
                                  sigma_eps=float(pairs.get("sigma_eps",
                                                            1e-3)))
    except ValueError as exc:
        raise UserError(str(exc)) from exc
    return spec, n, seed


def _bound_rows_from_channel(spec, n, seed):
    sample = bounds.sample_channel(spec, n, np.random.default_rng(seed))
    rows = []
    mi_sum = 0.0
    fixed_sum = 0.0
    random_sum = 0.0
    for i in range(spec.d):
        est = bounds.estimate_mi(sample.z[:, i], sample.z_tilde[:, i])
        mean_m = float(np.clip(sample.m[:, i].mean(), 0.0, 1.0))
        fixed = bounds.fixed_mask_bound(mean_m,
                                        float(sample.z[:, i].var(ddof=1)),
                                        spec.var_eps)
        rand = bounds.random_mask_bound(sample.m[:, i], sample.z[:, i],
                                        spec.var_eps)
        rows.append([str(i), repr(est.mi), repr(fixed), repr(rand)])
        mi_sum += est.mi
        fixed_sum += fixed
        random_sum += rand
    rows.append(["total", repr(mi_sum), repr(fixed_sum), repr(random_sum)])
    return rows


def cmd_diagnose(args):
    if bool(args.channel_spec) == bool(args.checkpoint):
        raise UserError("diagnose needs exactly one of --channel-spec or "
                        "--checkpoint")
    out = _out_dir(args)
    header = ["dimension", "mi_estimate", "fixed_bound", "random_bound"]
    if args.channel_spec:
        spec, n, seed = _parse_channel_cfg(args.channel_spec)
        rows = _bound_rows_from_channel(spec, n, seed)
        meta = {"channel_spec": str(args.channel_spec), "samples": n,
                "sigma_eps": spec.sigma_eps}
    else:
        config = _resolve_config(args)
        train_split, _, _ = _load_splits(config.dataset, args.data_dir)
        try:
            model = load_checkpoint(args.checkpoint)
        except (OSError, CheckpointError) as exc:
            raise UserError(f"cannot load checkpoint: {exc}") from exc
        report = bounds.model_bound_trace(model, train_split.x)
        rows = [[name, repr(mi), repr(fixed), repr(rand)]
                for name, mi, fixed, rand in report.rows()]
        meta = {"checkpoint": str(args.checkpoint),
                "sigma_eps": report.sigma_eps,
                "notes": report.metadata}
    _write_csv(out / "bounds.csv", header, rows)
    _write_manifest(out, "diagnose", None, None, meta)
    _say(args, f"wrote {len(rows)} bound rows to {out / 'bounds.csv'}")
    return OK


# ---------------------------------------------------------------- project

def cmd_project(args):
    if not args.checkpoint:
        raise UserError("project needs --checkpoint")
    out = _out_dir(args)
    config = _resolve_config(args)
    _, test_split, _ = _load_splits(config.dataset, args.data_dir)
    try:
        model = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError) as exc:
        raise UserError(f"cannot load checkpoint: {exc}") from exc

    written = {}
    for which in ("z", "z_tilde"):
        proj = project_embeddings(model, test_split.x, test_split.y_tasks[0],
                                  test_split.s_tasks[0], which=which)
        rows = [[repr(float(c[0])), repr(float(c[1])), int(y), int(s)]
                for c, y, s in zip(proj.coords, proj.y, proj.s)]
        path = out / f"projection_{which}.csv"
        _write_csv(path, ["pc1", "pc2", "y", "s"], rows)
        written[which] = {"constant": proj.constant, "rows": len(rows)}
    _write_manifest(out, "project", config_to_mapping(config),
                    {"test": test_split.content_hash()},
                    {"checkpoint": str(args.checkpoint),
                     "projections": written})
    _say(args, f"projections written to {out}")
    return OK


# ------------------------------------------------------------------- data

def cmd_data(args):
    config = _resolve_config(args)
    out = _out_dir(args)
    train_split, test_split, extras = _load_splits(config.dataset,
                                                   args.data_dir)
    paths = {}
    for tag, split in {"train": train_split, "test": test_split,
                       **extras}.items():
        path = out / f"{config.dataset}-{tag}.fdt"
        save_dataset(split, path)
        paths[tag] = {"path": path.name, "hash": split.content_hash(),
                      "n": split.n}
    _write_manifest(out, "data", {"dataset": config.dataset}, None,
                    {"splits": paths})
    _say(args, f"cached {len(paths)} splits of {config.dataset} in {out}")
    return OK


# ------------------------------------------------------------------- main

def build_parser():
    parser = _Parser(prog="forgetnet",
                     description="Invariant representations via adversarial "
                                 "forgetting")
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {"train": cmd_train, "gridsearch": cmd_gridsearch,
                "eval": cmd_eval, "diagnose": cmd_diagnose,
                "project": cmd_project, "data": cmd_data}
    for name, handler in handlers.items():
        cmd = sub.add_parser(name)
        cmd.set_defaults(handler=handler)
        cmd.add_argument("--config", help="flat key=value config file")
        cmd.add_argument("--data-dir", help="directory with raw dataset files")
        cmd.add_argument("--out", required=True, help="output directory")
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--jobs", type=int, default=1)
        cmd.add_argument("--dataset", help=f"one of {sorted(DATASETS)}")
        cmd.add_argument("--checkpoint", help="model file from train")
        cmd.add_argument("--channel-spec", dest="channel_spec",
                         help="synthetic channel config for diagnose")
        cmd.add_argument("--quiet", action="store_true")
    sub.choices["gridsearch"].add_argument(
        "--grid", default="rho=0.01,0.1,1;delta=0.1,1,10;lam=0.01,0.1,1",
        help="key=v1,v2 terms joined by ';' (powers of 10)")
    return parser


def run(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.handler(args)
    except UserError as exc:
        print(str(exc), file=sys.stderr)
        return USER_ERROR
    except TrainingDiverged as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERIC_ERROR


def main():
    raise SystemExit(run())
