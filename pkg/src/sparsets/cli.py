"""Command line front end.

    sparsets simulate     --config cfg.json [--out DIR]
    sparsets train        --config cfg.json [--out DIR]
    sparsets select-order --config cfg.json [--out DIR]
    sparsets uq           --config cfg.json [--out DIR] [--baseline conformal]

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as C
from . import data as D
from . import experiments as X
from .errors import ConfigError, DataError, DivergenceError, ShapeError, SingularHessianError
from .models import Network, count_hidden_links, load_checkpoint, save_checkpoint, selected_input_lags
from .uq import interval_one_step, intervals_multi_horizon, split_conformal_baseline
from .metrics import coverage_and_length

log = logging.getLogger("sparsets")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _series_n(cfg) -> int:
    d = cfg["data"]
    if d["n"] is not None:
        return d["n"]
    return d["window"] + d["M_l"] - 1 + sum(d["splits"].get(k, 0) for k in ("train", "val", "test"))


def cmd_simulate(cfg: dict, out: Path, args) -> int:
    d = cfg["data"]
    seed = cfg["seed"]
    if d["kind"] == "ar1_panel":
        horizon = cfg["uq"]["horizon"] or d["horizon"]
        n = d["n_sequences"] or sum(d["splits"].values())
        panel = D.gen_ar1_panel(n, d["length"], horizon, d["phi"], seed)
        with open(out / "data.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"t{k + 1}" for k in range(panel.sequences.shape[1])])
            for row in panel.sequences:
                w.writerow([format(v, ".17g") for v in row])
        D.write_manifest(out / "manifest.json", panel.manifest)
        return EXIT_OK
    if d["kind"] == "csv":
        raise ConfigError("simulate needs a synthetic data.kind (expar, nlar or ar1_panel)")
    gen = D.gen_nlar if d["kind"] == "nlar" else D.gen_expar
    ds = gen(_series_n(cfg), seed, burn_in=d["burn_in"])
    D.write_csv(out / "data.csv", ds)
    D.write_manifest(out / "manifest.json", ds.manifest)
    return EXIT_OK


def _fit_from_config(cfg: dict, out: Path):
    seed = cfg["seed"]
    with open(out / "train_log.jsonl", "w") as sink:
        if cfg["data"]["kind"] == "ar1_panel":
            pd = X.load_panel(cfg, seed)
            cfg = {**cfg, "data": {**cfg["data"], "M_l": pd.train.inputs.shape[1]}}
            net = X.network_for(cfg, 1, pd.panel.horizon)
            return X.fit(net, pd.train, cfg, seed, log_sink=sink)
        sd = X.load_series(cfg, seed)
        net = X.network_for(cfg, cfg["data"]["window"], 1)
        return X.fit(net, sd.windows["train"], cfg, seed, log_sink=sink)


def cmd_train(cfg: dict, out: Path, args) -> int:
    try:
        f = _fit_from_config(cfg, out)
    except DivergenceError as exc:
        if exc.last_params is not None:
            net = X.network_for(cfg, cfg["data"]["window"], 1)
            if net.n_params == exc.last_params.size:
                save_checkpoint(out / "checkpoint_last_good.json", net.spec, exc.last_params,
                                np.ones(net.n_params), {"diverged_at": exc.iteration})
        raise
    spec = f.net.spec
    meta = {"seed": cfg["seed"], "kept_fraction": f.kept_fraction, **f.meta}
    save_checkpoint(out / "checkpoint.json", spec, f.params, f.mask, meta)
    summary = {"kept_fraction": f.kept_fraction, "n_params": int(f.mask.size), "n_kept": int(f.mask.sum())}
    summary["selected_lags"] = sorted(selected_input_lags(f.mask, spec))
    if spec.recurrent:
        summary["hidden_links"] = count_hidden_links(f.mask, spec)
    _dump(out / "train_summary.json", summary)
    return EXIT_OK


def cmd_select_order(cfg: dict, out: Path, args) -> int:
    if cfg["data"]["kind"] not in ("expar", "nlar"):
        raise ConfigError("select-order needs data.kind expar or nlar")
    res = X.run_selection(cfg)
    _dump(out / "selection.json", {"summary": res["summary"], "replicates": res["replicates"]})
    return EXIT_OK


def cmd_uq(cfg: dict, out: Path, args) -> int:
    if cfg["checkpoint"] is None:
        raise ConfigError("uq needs a trained checkpoint (config key 'checkpoint')")
    spec, params, mask, _ = load_checkpoint(cfg["checkpoint"])
    net = Network(spec)
    alpha = cfg["uq"]["alpha"]
    h = cfg["uq"]["hessian"]
    hkw = dict(fd_step=h["fd_step"], jitter_start=h["jitter_start"], jitter_max=h["jitter_max"], method=h["method"])
    seed = cfg["seed"]
    blocks = {}
    brep = None
    if cfg["data"]["kind"] == "ar1_panel":
        pd = X.load_panel(cfg, seed)
        if spec.output_dim != pd.panel.horizon:
            raise ShapeError("checkpoint output size does not match the horizon")
        rep = intervals_multi_horizon(net, params, mask, pd.train, pd.test, alpha, **hkw)
        targets = pd.test.targets
        if args.baseline == "conformal":
            bcfg = {**cfg, "data": {**cfg["data"], "M_l": pd.train.inputs.shape[1]}}
            bnet = X.network_for(bcfg, 1, pd.panel.horizon)
            bf = X.fit(bnet, pd.proper, bcfg, X.replicate_seed(seed, 1), anneal=False)
            brep = split_conformal_baseline(
                bnet.predict(bf.params, bf.mask, pd.calibration.inputs),
                pd.calibration.targets,
                bnet.predict(bf.params, bf.mask, pd.test.inputs),
                alpha,
                pd.panel.horizon,
            )
    else:
        sd = X.load_series(cfg, seed)
        rep = interval_one_step(net, params, mask, sd.windows["train"], sd.windows["test"], alpha, **hkw)
        targets = sd.windows["test"].targets
        if args.baseline == "conformal":
            cal = sd.windows[cfg["uq"]["calibration_split"]]
            if len(cal) == 0:
                raise ConfigError("conformal baseline needs a non-empty calibration split")
            brep = split_conformal_baseline(
                net.predict(params, mask, cal.inputs), cal.targets,
                net.predict(params, mask, sd.windows["test"].inputs), alpha, 1,
            )
        if sd.dataset.mean is not None:
            rep = rep.rescale(sd.dataset.mean, sd.dataset.sd)
            if brep is not None:
                brep = brep.rescale(sd.dataset.mean, sd.dataset.sd)
            targets = targets * sd.dataset.sd + sd.dataset.mean
    rep.to_csv(out / "intervals.csv")
    blocks["delta"] = coverage_and_length(rep, targets)
    if args.baseline == "conformal":
        brep.to_csv(out / "intervals_conformal.csv")
        blocks["conformal"] = coverage_and_length(brep, targets)
        blocks["conformal"]["warnings"] = brep.warnings
    _dump(out / "uq_summary.json", blocks)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "select-order": cmd_select_order,
    "uq": cmd_uq,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sparsets", description="Sparse RNN forecasting with prior annealing.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", help="output directory (overrides out_dir)")
    ap.add_argument("--baseline", choices=["conformal"], help="also emit a split-conformal report (uq)")
    ap.add_argument("--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = C.load(args.config)
        out = Path(args.out or cfg["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        log.info("running %s into %s", args.command, out)
        return COMMANDS[args.command](cfg, out, args)
    except (ConfigError, DataError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, SingularHessianError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
