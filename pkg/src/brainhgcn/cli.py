"""``brainhgcn`` command line: synth, build-graphs, train, eval, geom-selftest, distortion.

Options resolve as explicit flag, then ``--config`` file, then built-in
default.  The config file is INI-style with one section per subcommand
area (``[synth]``, ``[graph]``, ``[train]``, ``[model]``, ``[distortion]``)
holding ``key = value`` lines named like the long flags.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from pathlib import Path

from . import graph as gr
from . import selftest
from . import synth
from . import train as tr
from .model import ABLATIONS, ModelConfig

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s):
    if isinstance(s, (list, tuple)):
        return [int(x) for x in s]
    return [int(x) for x in str(s).replace(",", " ").split()]


# option table: (section, key, type, default, help); keys double as flag names
OPTIONS = {
    "synth": [
        ("synth", "n-subjects", int, 100, "subjects per class"),
        ("synth", "roi-count", int, None, "ROIs per subject (default 32, 116 with --full-size)"),
        ("synth", "time-points", int, None, "samples per series (default 64, 150 with --full-size)"),
        ("synth", "branching", _ints, [2, 3], "tree branching factor for class 0 and class 1"),
        ("synth", "noise", float, 0.1, "white-noise standard deviation"),
        ("synth", "rewire", float, 0.0, "per-edge rewiring probability"),
        ("synth", "coupling", float, None, "resolvent coupling lambda (default 0.5)"),
        ("synth", "full-size", _bool, False, "116 ROIs x 150 time points"),
    ],
    "graph": [
        ("graph", "k", int, 10, "top-k neighbours per node and sign"),
        ("graph", "zscore", _bool, True, "standardise node series"),
    ],
    "train": [
        ("train", "lr", float, 1e-3, "learning rate"),
        ("train", "weight-decay", float, 5e-4, "decoupled weight decay"),
        ("train", "batch-size", int, 32, "graphs per optimiser step"),
        ("train", "epochs", int, 100, "training epochs per fold"),
        ("train", "folds", int, 10, "cross-validation folds"),
        ("train", "jobs", int, 1, "folds trained in parallel"),
        ("train", "augment", _bool, True, "random orthogonal mixing of the time axis"),
    ],
    "model": [
        ("model", "hidden", int, 64, "hidden width d"),
        ("model", "layers", int, 3, "attention layers"),
        ("model", "heads", int, 4, "attention heads"),
        ("model", "tau0", float, 1.0, "base attention temperature"),
        ("model", "karcher-iters", int, 5, "Karcher flow iterations"),
        ("model", "eta", float, 0.1, "Karcher step size"),
        ("model", "karcher-init", str, None, "Karcher start: origin (default), mean or first"),
        ("model", "init-curvature", float, 1.0, "initial K for every layer"),
    ],
    "distortion": [
        ("distortion", "depth", int, 5, "tree depth"),
        ("distortion", "tree-branching", int, 2, "tree branching factor"),
        ("distortion", "dim", int, 2, "embedding dimension"),
        ("distortion", "iters", int, 2000, "optimiser steps"),
        ("distortion", "step", float, 0.05, "Adam step size"),
        ("distortion", "curvature", float, 1.0, "hyperbolic K"),
    ],
}

COMMAND_GROUPS = {
    "synth": ["synth"],
    "build-graphs": ["graph"],
    "train": ["graph", "train", "model"],
    "eval": ["graph"],
    "geom-selftest": [],
    "distortion": ["distortion"],
}


def _dest(key: str) -> str:
    return key.replace("-", "_")


def _add_options(p: argparse.ArgumentParser, groups):
    for g in groups:
        for _, key, typ, default, help_ in OPTIONS[g]:
            kw = {"dest": _dest(key), "default": None, "help": help_ + (f" (default {default})" if default is not None else "")}
            if typ is _bool:
                p.add_argument(f"--{key}", action=argparse.BooleanOptionalAction, **kw)
            elif typ is _ints:
                p.add_argument(f"--{key}", type=int, nargs="+", **kw)
            else:
                p.add_argument(f"--{key}", type=typ, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brainhgcn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--config", type=Path, help="INI file with option defaults")
    common.add_argument("--seed", type=int, default=None, help="random seed (falls back to $BRAINHGCN_SEED)")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    p.add_argument("--out", type=Path, required=True)
    _add_options(p, COMMAND_GROUPS["synth"])

    p = sub.add_parser("build-graphs", parents=[common], help="time series -> signed graph files")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_options(p, COMMAND_GROUPS["build-graphs"])

    p = sub.add_parser("train", parents=[common], help="cross-validated training")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="directory for metrics, loss curve, checkpoints")
    p.add_argument("--ablate", action="append", choices=ABLATIONS, default=None,
                   help="switch on an ablation (repeatable)")
    _add_options(p, COMMAND_GROUPS["train"])

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    _add_options(p, COMMAND_GROUPS["eval"])

    sub.add_parser("geom-selftest", parents=[common], help="manifold and gradient property suites")

    p = sub.add_parser("distortion", parents=[common], help="tree embedding distortion experiment")
    _add_options(p, COMMAND_GROUPS["distortion"])
    return parser


def _read_config(path) -> dict:
    if path is None:
        return {}
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    known = {g: {k for _, k, *_ in opts} for g, opts in OPTIONS.items()}
    known["train"] |= {"seed", "ablate"}
    known["synth"] |= {"seed"}
    known["distortion"] |= {"seed"}
    out = {}
    for section in cp.sections():
        if section not in known:
            raise UsageError(f"unknown config section [{section}]")
        for key, value in cp.items(section):
            key = key.replace("_", "-")
            if key not in known[section]:
                raise UsageError(f"unknown config key '{key}' in [{section}]")
            out[(section, key)] = value
    return out


def _resolve(args, groups, cfg: dict) -> dict:
    """Merge flag > config > default for every option in ``groups``."""
    res = {}
    for g in groups:
        for section, key, typ, default, _ in OPTIONS[g]:
            val = getattr(args, _dest(key))
            if val is None and (section, key) in cfg:
                try:
                    val = typ(cfg[(section, key)])
                except ValueError as exc:
                    raise UsageError(f"bad value for {key} in [{section}]: {exc}") from None
            res[_dest(key)] = default if val is None else val
    return res


def _seed(args, cfg, section, default):
    if args.seed is not None:
        return args.seed
    if (section, "seed") in cfg:
        return int(cfg[(section, "seed")])
    env = os.environ.get("BRAINHGCN_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"BRAINHGCN_SEED is not an integer: {env!r}") from None
    return default


def _emit(args, payload: dict, lines) -> None:
    if args.json:
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    else:
        for line in lines:
            print(line)


def _fmt_metrics(summary: dict):
    for key in ("acc", "sen", "spe", "auc"):
        s = summary[key]
        yield f"{key.upper():4s} {s['mean']:.2f} +/- {s['std']:.2f}"
    c = summary["confusion"]
    yield f"confusion tp={c['tp']} fn={c['fn']} tn={c['tn']} fp={c['fp']}"


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_synth(args, cfg):
    o = _resolve(args, ["synth"], cfg)
    kw = dict(
        n_subjects=o["n_subjects"], branching=tuple(o["branching"]), noise=o["noise"],
        rewire=o["rewire"], seed=_seed(args, cfg, "synth", 42),
    )
    for name in ("roi_count", "time_points", "coupling"):
        if o[name] is not None:
            kw[name] = o[name]
    spec = synth.SynthSpec.full_size(**kw) if o["full_size"] else synth.SynthSpec(**kw)
    manifest = synth.write_dataset(spec, args.out)
    payload = {"manifest": str(manifest), "subjects": 2 * spec.n_subjects, "spec": spec.to_dict()}
    _emit(args, payload, [f"wrote {2 * spec.n_subjects} subjects; manifest {manifest}"])
    return EXIT_OK


def cmd_build_graphs(args, cfg):
    o = _resolve(args, ["graph"], cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for path, label in gr.read_manifest(args.manifest):
        ts = gr.load_time_series(path)
        if label is None:
            label = ts.label
        ts = gr.SubjectTimeSeries(ts.series, ts.subject_id or Path(path).stem, label)
        g = gr.graph_from_series(ts, k=o["k"], zscore=o["zscore"])
        target = out / (Path(path).stem + ".json")
        gr.save_graph(g, target)
        entries.append((target, label))
    manifest = out / "manifest.txt"
    gr.write_manifest(entries, manifest)
    payload = {"manifest": str(manifest), "graphs": len(entries), "k": o["k"]}
    _emit(args, payload, [f"wrote {len(entries)} graphs (k={o['k']}); manifest {manifest}"])
    return EXIT_OK


def cmd_train(args, cfg):
    g = _resolve(args, ["graph"], cfg)
    t = _resolve(args, ["train"], cfg)
    m = _resolve(args, ["model"], cfg)
    ablate = args.ablate
    if ablate is None and ("train", "ablate") in cfg:
        ablate = cfg[("train", "ablate")].replace(",", " ").split()
    tcfg = tr.TrainConfig(
        lr=t["lr"], weight_decay=t["weight_decay"], batch_size=t["batch_size"],
        epochs=t["epochs"], folds=t["folds"], seed=_seed(args, cfg, "train", 0),
        ablations=tuple(ablate or ()), jobs=t["jobs"], augment=t["augment"],
    )
    model_kw = {
        "hidden": m["hidden"], "layers": m["layers"], "heads": m["heads"], "tau0": m["tau0"],
        "karcher_iters": m["karcher_iters"], "eta": m["eta"], "init_curvature": m["init_curvature"],
    }
    if m["karcher_init"] is not None:
        model_kw["karcher_init"] = m["karcher_init"]
    graphs = gr.load_dataset(args.manifest, k=g["k"], zscore=g["zscore"])
    result = tr.train(graphs, tcfg, model_kw)
    if args.out is not None:
        tr.write_outputs(result, args.out)
    _emit(args, result.report, _fmt_metrics(result.report["summary"]))
    return EXIT_OK


def cmd_eval(args, cfg):
    g = _resolve(args, ["graph"], cfg)
    params, header = tr.load_checkpoint(args.checkpoint)
    mcfg = ModelConfig.from_dict(header["model"])
    tr.load_checkpoint(args.checkpoint, expect=mcfg)
    graphs = gr.load_dataset(args.manifest, k=g["k"], zscore=g["zscore"])
    metrics = tr.evaluate(params, graphs, mcfg)
    payload = {"checkpoint": str(args.checkpoint), "n_subjects": len(graphs), "metrics": metrics}
    c = metrics["confusion"]
    lines = [f"{k.upper():4s} {metrics[k]:.2f}" for k in ("acc", "sen", "spe", "auc")]
    lines.append(f"confusion tp={c['tp']} fn={c['fn']} tn={c['tn']} fp={c['fp']}")
    _emit(args, payload, lines)
    return EXIT_OK


def cmd_geom_selftest(args, cfg):
    seed = _seed(args, cfg, "selftest", 0)
    results = selftest.run_all(seed)
    ok = all(r.passed for r in results)
    payload = {"seed": seed, "passed": ok, "suites": [r.to_dict() for r in results]}
    lines = [
        f"{r.name:20s} {'pass' if r.passed else 'FAIL'}  max_error={r.max_error:.3e}  tol={r.tolerance:.0e}"
        for r in results
    ]
    _emit(args, payload, lines)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_distortion(args, cfg):
    o = _resolve(args, ["distortion"], cfg)
    seed = _seed(args, cfg, "distortion", 0)
    edges = synth.binary_tree(o["depth"], o["tree_branching"])
    reports = [
        synth.embed_tree_distortion(edges, geom, o["dim"], o["iters"], o["step"], o["curvature"], seed)
        for geom in ("hyperbolic", "euclidean")
    ]
    payload = {
        "depth": o["depth"], "branching": o["tree_branching"], "seed": seed,
        "reports": [r.to_dict() for r in reports],
        "hyperbolic_better": reports[0].average < reports[1].average,
    }
    lines = [f"{r.geometry:10s} average={r.average:.4f} worst={r.worst:.4f}" for r in reports]
    _emit(args, payload, lines)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "build-graphs": cmd_build_graphs,
    "train": cmd_train,
    "eval": cmd_eval,
    "geom-selftest": cmd_geom_selftest,
    "distortion": cmd_distortion,
}

# errors that mean "bad input or arguments" rather than a failed computation
USAGE_ERRORS = (
    UsageError, gr.GraphError, gr.FormatError, tr.FoldError, tr.CheckpointError,
    synth.SynthError, FileNotFoundError, ValueError,
)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = _read_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except USAGE_ERRORS as exc:
        print(f"brainhgcn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"brainhgcn {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
