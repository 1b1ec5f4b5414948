"""faultstab command line: data generation, training, evaluation, stability runs.

Effective configuration = built-in defaults, then the JSON file given by
--config (top level or a section named after the command), then explicit flags.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from . import regressor as rg
from .errors import ConfigError, DataFormatError, NumericalError, PreconditionError
from .geometry import PARAM_NAMES, ParamBox, observation_grid, sine_basis
from .kernel import KernelConfig
from .operators import ForwardSetup
from .svg import bars_from_counts

OUT_ENV = "FAULTSTAB_OUTPUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

COMMON_DEFAULTS = {"out_dir": None, "workers": 1}
SETUP_DEFAULTS = {"n_grid": 11, "K": 8, "quad_order": 8, "cells": 8, "cutoff": True, "d0": -5.0}
BOX_DEFAULTS = dict(zip(["a_min", "b_min", "d_min"], ParamBox().lower)) | \
    dict(zip(["a_max", "b_max", "d_max"], ParamBox().upper))

DEFAULTS = {
    "gen": {**COMMON_DEFAULTS, **SETUP_DEFAULTS, **BOX_DEFAULTS,
            "count": None, "q": 5, "seed": 0, "start": 0, "noise": 0.0, "output": None},
    "train": {**COMMON_DEFAULTS, "train": None, "hidden": [64, 32, 16], "gamma": 0.2,
              "iters": 2000, "seed": 0, "model": None},
    "eval": {**COMMON_DEFAULTS, "model": None, "bank": None, "test": None, "s0_size": 2000,
             "s0_seed": 0, "bins": 20, "include_oracle": False},
    "stability": {**COMMON_DEFAULTS, **BOX_DEFAULTS, "K": 8, "dense_n": 65, "discrete_n": 33,
                  "quad_order": 8, "cells": 8, "cutoff": True, "d0": -5.0, "trials": 1000,
                  "seed": 0, "q": 5, "A1": None, "A2": 1.0, "sep_min": 1.0, "min_gap": 0.1,
                  "pilot": 32, "bins": 20},
    "quadcheck": {**COMMON_DEFAULTS, "n_list": [6, 11, 21, 41], "seed": 0, "K": 8,
                  "quad_order": 8, "cells": 8, "cutoff": True, "d0": -5.0},
    "report": {**COMMON_DEFAULTS},
}
REQUIRED = {"gen": ["count"], "train": ["train"], "eval": ["model", "bank", "test"]}


def _int_list(text):
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _add_setup(p, grid=True):
    if grid:
        p.add_argument("--n-grid", dest="n_grid", type=int, help="observation points per axis")
    p.add_argument("--K", type=int, help="sine modes per axis")
    p.add_argument("--quad-order", dest="quad_order", type=int)
    p.add_argument("--cells", type=int, help="source quadrature cells per axis")
    p.add_argument("--no-cutoff", dest="cutoff", action="store_const", const=False)
    p.add_argument("--d0", type=float, help="cutoff depth (negative)")


def _add_box(p):
    for name in ("a", "b", "d"):
        p.add_argument(f"--{name}-min", dest=f"{name}_min", type=float)
        p.add_argument(f"--{name}-max", dest=f"{name}_max", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faultstab", argument_default=argparse.SUPPRESS,
                                     description="Fault geometry stability and learned inversion experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file with parameters (flags take precedence)")
        p.add_argument("--out-dir", dest="out_dir", help=f"output directory (default ${OUT_ENV} or .)")
        p.add_argument("--workers", type=int)
        return p

    p = cmd("gen", "generate a synthetic dataset")
    p.add_argument("--count", type=int)
    p.add_argument("--q", type=int, help="number of leading singular vectors in the slip")
    p.add_argument("--seed", type=int)
    p.add_argument("--start", type=int, help="first sample index")
    p.add_argument("--noise", type=float, help="noise level relative to the sup norm")
    p.add_argument("--output")
    _add_setup(p)
    _add_box(p)

    p = cmd("train", "train the MLP surrogate")
    p.add_argument("--train", help="training dataset CSV")
    p.add_argument("--hidden", type=_int_list, help="hidden widths, e.g. 64,32,16")
    p.add_argument("--gamma", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--model", help="output model path")

    p = cmd("eval", "compare MLP and nearest-neighbor inversions")
    p.add_argument("--model")
    p.add_argument("--bank", help="dataset used as the full sample bank S")
    p.add_argument("--test", help="held-out dataset CSV")
    p.add_argument("--s0-size", dest="s0_size", type=int)
    p.add_argument("--s0-seed", dest="s0_seed", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--include-oracle", dest="include_oracle", action="store_const", const=True)

    p = cmd("stability", "sample the stability constant")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--A1", type=float)
    p.add_argument("--A2", type=float)
    p.add_argument("--sep-min", dest="sep_min", type=float)
    p.add_argument("--min-gap", dest="min_gap", type=float)
    p.add_argument("--pilot", type=int)
    p.add_argument("--dense-n", dest="dense_n", type=int)
    p.add_argument("--discrete-n", dest="discrete_n", type=int)
    p.add_argument("--bins", type=int)
    _add_setup(p, grid=False)
    _add_box(p)

    p = cmd("quadcheck", "observation quadrature convergence slope")
    p.add_argument("--n-list", dest="n_list", type=_int_list)
    p.add_argument("--seed", type=int)
    _add_setup(p, grid=False)

    cmd("report", "summarize outputs already in the output directory")
    return parser


def resolve_config(command: str, args: dict) -> dict:
    cfg = dict(DEFAULTS[command])
    path = args.pop("config", None)
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        section = raw.get(command, raw)
        unknown = sorted(k for k in section if k not in cfg and k not in DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
        cfg.update({k: v for k, v in section.items() if k in cfg})
    cfg.update(args)
    if cfg.get("out_dir") is None:
        cfg["out_dir"] = os.environ.get(OUT_ENV, ".")
    return cfg


def _box(cfg) -> ParamBox:
    return ParamBox((cfg["a_min"], cfg["b_min"], cfg["d_min"]), (cfg["a_max"], cfg["b_max"], cfg["d_max"]))


def _kernel(cfg) -> KernelConfig:
    return KernelConfig(bool(cfg["cutoff"]), float(cfg["d0"]))


def _positive(cfg, *keys):
    for k in keys:
        if cfg[k] is None or cfg[k] < 1:
            raise ConfigError(f"{k} must be a positive integer, got {cfg[k]}")


def _echo(command, cfg):
    print(f"# faultstab {command} config {json.dumps(cfg, sort_keys=True)}")


def _out(cfg) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str):
    path.write_text(text, encoding="utf-8", newline="")


# ---------------------------------------------------------------------------
# commands


def cmd_gen(cfg) -> int:
    _positive(cfg, "count", "q", "n_grid", "K")
    if cfg["noise"] < 0:
        raise ConfigError(f"noise must be nonnegative, got {cfg['noise']}")
    box = _box(cfg)
    setup = ForwardSetup(sine_basis(cfg["K"]), observation_grid(cfg["n_grid"]), _kernel(cfg),
                         cfg["quad_order"], cfg["cells"])
    if cfg["q"] >= setup.basis.size:
        raise ConfigError(f"q={cfg['q']} must be below the basis size {setup.basis.size}")
    out = _out(cfg)
    path = Path(cfg["output"]) if cfg["output"] else out / f"dataset_q{cfg['q']}_seed{cfg['seed']}_start{cfg['start']}.csv"
    data = ds_mod.generate(cfg["count"], cfg["q"], cfg["seed"], setup, box, noise_level=cfg["noise"],
                           start=cfg["start"], workers=cfg["workers"])
    ds_mod.save(data, path)
    print(f"count={len(data)} q={cfg['q']} seed={cfg['seed']} noise={cfg['noise']} path={path}")
    return EXIT_OK


def cmd_train(cfg) -> int:
    _positive(cfg, "iters")
    if not 0 <= cfg["gamma"] <= 1:
        raise ConfigError(f"gamma must lie in [0, 1], got {cfg['gamma']}")
    if not cfg["hidden"] or min(cfg["hidden"]) < 1:
        raise ConfigError(f"hidden widths must be positive, got {cfg['hidden']}")
    train = ds_mod.load(cfg["train"])
    out = _out(cfg)
    model = rg.train_mlp(train, hidden=tuple(cfg["hidden"]), gamma=cfg["gamma"],
                         max_iters=cfg["iters"], seed=cfg["seed"])
    path = Path(cfg["model"]) if cfg["model"] else out / "model.bin"
    rg.save_model(model, path)
    _write(out / "loss_trace.csv", "iteration,loss\n" + "".join(
        f"{i},{v!r}\n" for i, v in enumerate(model.loss_trace)))
    print(f"dims={'x'.join(map(str, model.dims))} iterations={model.iterations} "
          f"loss={model.loss_trace[0]:.6g}->{model.final_loss:.6g} path={path}")
    return EXIT_OK


def run_eval(methods, test):
    """methods: list of (name, callable, load_time). Returns evaluations."""
    return [rg.evaluate(name, fn, test, load_time) for name, fn, load_time in methods]


def write_eval(out: Path, evals, test, bins=20):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case", "method", *[f"{p}_true" for p in PARAM_NAMES], *[f"{p}_pred" for p in PARAM_NAMES],
                *[f"{p}_abs_err" for p in PARAM_NAMES]])
    for ev in evals:
        for i in range(len(test)):
            w.writerow([i, ev.name, *map(repr, test.targets[i].tolist()), *map(repr, ev.predictions[i].tolist()),
                        *map(repr, ev.abs_errors[i].tolist())])
    _write(out / "eval_cases.csv", buf.getvalue())

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", *[f"mae_{p}" for p in PARAM_NAMES]])
    for ev in evals:
        w.writerow([ev.name, *map(repr, ev.mae.tolist())])
    _write(out / "eval_errors.csv", buf.getvalue())

    # method x (error on a, load time, run time); timings vary run to run
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "error", "load_time", "run_time"])
    for ev in evals:
        w.writerow([ev.name, repr(float(ev.mae[0])), f"{ev.load_time:.6f}", f"{ev.run_time:.6f}"])
    _write(out / "table.csv", buf.getvalue())

    mlp = evals[0]
    for k, p in enumerate(PARAM_NAMES):
        err = mlp.predictions[:, k] - test.targets[:, k]
        counts, edges = np.histogram(err, bins=bins)
        _write(out / f"hist_{p}.svg", bars_from_counts(counts, edges, f"{mlp.name} error in {p} (normalized)",
                                                        f"{p} estimate - truth"))
        _write(out / f"hist_{p}.csv", "left,right,count\n" + "".join(
            f"{lo!r},{hi!r},{int(c)}\n" for lo, hi, c in zip(edges[:-1].tolist(), edges[1:].tolist(), counts)))


def cmd_eval(cfg) -> int:
    _positive(cfg, "s0_size", "bins")
    out = _out(cfg)
    model, t_model = rg.timed_load(rg.load_model, cfg["model"])
    bank_ds, t_bank = rg.timed_load(ds_mod.load, cfg["bank"])
    test = ds_mod.load(cfg["test"])
    if cfg["s0_size"] > len(bank_ds):
        raise ConfigError(f"s0_size={cfg['s0_size']} exceeds the bank size {len(bank_ds)}")
    S = rg.SampleBank.from_dataset(bank_ds, "S")
    S0, t_s0 = rg.timed_load(lambda _: S.subsample(cfg["s0_size"], cfg["s0_seed"]), None)
    methods = [("N", lambda x: rg.predict(model, x), t_model),
               ("S", lambda x: rg.nn_search(S, x), t_bank),
               ("S0", lambda x: rg.nn_search(S0, x), t_s0)]
    if cfg["include_oracle"]:
        methods.append(("oracle", lambda x: test.targets, 0.0))
    evals = run_eval(methods, test)
    write_eval(out, evals, test, cfg["bins"])
    for ev in evals:
        print(f"{ev.name}: mae_a={ev.mae[0]:.5f} mae_b={ev.mae[1]:.5f} mae_d={ev.mae[2]:.5f} "
              f"load={ev.load_time:.4f}s run={ev.run_time:.4f}s")
    return EXIT_OK


def cmd_stability(cfg) -> int:
    from .stability import StabilityConfig, StabilityContext, empirical_lipschitz

    _positive(cfg, "trials", "q", "K", "dense_n", "discrete_n", "pilot", "bins")
    scfg = StabilityConfig(A1=cfg["A1"], A2=cfg["A2"], q=cfg["q"], trials=cfg["trials"], seed=cfg["seed"],
                           pair_separation_min=cfg["sep_min"], min_gap=cfg["min_gap"], pilot=cfg["pilot"],
                           hist_bins=cfg["bins"])
    if (cfg["dense_n"] - 1) % (cfg["discrete_n"] - 1):
        raise ConfigError(f"discrete_n={cfg['discrete_n']} grid is not nested in dense_n={cfg['dense_n']}")
    if cfg["q"] >= cfg["K"] ** 2:
        raise ConfigError(f"q={cfg['q']} must be below the basis size {cfg['K'] ** 2}")
    ctx = StabilityContext.default(cfg["K"], cfg["dense_n"], cfg["discrete_n"], _kernel(cfg),
                                   cfg["quad_order"], cfg["cells"], _box(cfg))
    out = _out(cfg)
    rep = empirical_lipschitz(scfg, ctx, workers=cfg["workers"])
    _write(out / "stability_report.txt", rep.to_text())
    _write(out / "stability_trials.csv", rep.to_csv())
    _write(out / "stability_hist.svg", bars_from_counts(rep.hist_counts, np.log10(rep.hist_edges),
                                                        "sampled stability ratios", "log10 ratio"))
    print(f"c_hat={rep.c_hat:.6g} c_hat_disc={rep.c_hat_disc:.6g} "
          f"min_disc_over_cont={rep.min_disc_over_cont:.4f} completed={len(rep.completed)}/{rep.n_trials}")
    return EXIT_OK


def cmd_quadcheck(cfg) -> int:
    from .stability import cosine_test_function, forward_data_test_function, quadrature_order_check

    _positive(cfg, "K")
    if len(cfg["n_list"]) < 3 or min(cfg["n_list"]) < 2:
        raise ConfigError(f"n_list needs at least 3 sizes >= 2, got {cfg['n_list']}")
    setup = ForwardSetup(sine_basis(cfg["K"]), observation_grid(11), _kernel(cfg), cfg["quad_order"], cfg["cells"])
    fns = [cosine_test_function(), forward_data_test_function(setup, seed=cfg["seed"])]
    res = quadrature_order_check(fns, cfg["n_list"])
    out = _out(cfg)
    buf = io.StringIO()
    buf.write("function,n,M,abs_error\n")
    for name, errs in res.errors.items():
        for n, M, e in zip(res.n_list, res.M_list, errs):
            buf.write(f"\"{name}\",{n},{M},{float(e)!r}\n")
    _write(out / "quadcheck.csv", buf.getvalue())
    _write(out / "quadcheck_slopes.csv", "function,slope\n" + "".join(
        f"\"{k}\",{v!r}\n" for k, v in res.slopes.items()))
    for name, slope in res.slopes.items():
        print(f"slope[{name}]={slope:.4f}")
    return EXIT_OK


def cmd_report(cfg) -> int:
    out = Path(cfg["out_dir"])
    lines = []
    if (out / "table.csv").exists():
        lines.append("method comparison (error on a, load s, run s):")
        lines.extend("  " + row for row in (out / "table.csv").read_text().splitlines())
    if (out / "eval_errors.csv").exists():
        lines.append("mean absolute errors:")
        lines.extend("  " + row for row in (out / "eval_errors.csv").read_text().splitlines())
    if (out / "stability_report.txt").exists():
        keep = ("c_hat", "c_hat_disc", "min_disc_over_cont", "n_completed", "n_trials", "skipped.")
        lines.append("stability:")
        lines.extend("  " + row for row in (out / "stability_report.txt").read_text().splitlines()
                     if row.startswith(keep))
    if (out / "quadcheck_slopes.csv").exists():
        lines.append("quadrature slopes:")
        lines.extend("  " + row for row in (out / "quadcheck_slopes.csv").read_text().splitlines()[1:])
    if not lines:
        raise ConfigError(f"no outputs found in {out}")
    text = "\n".join(lines) + "\n"
    _write(out / "report.txt", text)
    print(text, end="")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "stability": cmd_stability,
            "quadcheck": cmd_quadcheck, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    ns = vars(parser.parse_args(argv))
    command = ns.pop("command")
    try:
        cfg = resolve_config(command, ns)
        missing = [k for k in REQUIRED.get(command, []) if cfg.get(k) is None]
        if missing:
            parser._subparsers._group_actions[0].choices[command].print_usage(sys.stderr)
            print(f"faultstab {command}: missing required option(s): "
                  + ", ".join("--" + k.replace("_", "-") for k in missing), file=sys.stderr)
            return EXIT_USAGE
        _echo(command, cfg)
        return COMMANDS[command](cfg)
    except (ConfigError, PreconditionError, DataFormatError, ValueError, OSError) as exc:
        print(f"faultstab {command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"faultstab {command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
