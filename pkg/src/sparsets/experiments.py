"""End-to-end pipelines shared by the command line and the acceptance tests.

Everything is driven by a validated config dict (see :mod:`sparsets.config`)
and a seed.  Replicate ``j`` of a run with seed ``s`` draws its own seed from
the stream ``(s, "replicate", j)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import data as D
from .metrics import SelectionResult, coverage_and_length, msfe, mspe, selection_summary
from .models import (
    Network,
    NetworkSpec,
    count_hidden_links,
    prune_dead_units,
    selected_input_lags,
)
from .prior import AnnealSchedule, MixturePrior
from .rng import stream
from .train import TrainConfig, refine, run_prior_annealing, sparsify
from .uq import interval_one_step, intervals_multi_horizon, split_conformal_baseline

TRUE_LAGS = {"nlar": D.NLAR_TRUE_LAGS, "expar": D.EXPAR_TRUE_LAGS}


def replicate_seed(seed: int, j: int) -> int:
    return int(stream(seed, "replicate", j).integers(2**31 - 1))


# -- data ------------------------------------------------------------------------


@dataclass
class SeriesData:
    dataset: D.SeriesDataset  # standardised when requested
    windows: dict  # split name -> Windows
    bounds: dict  # split name -> (lo, hi) target positions


def load_series(cfg: dict, seed: int) -> SeriesData:
    """Generate or read a series, standardise on the training span and window it.

    The first ``window + M_l - 1`` values serve as history for the first
    training target; the splits follow as consecutive spans.
    """
    d = cfg["data"]
    W, M_l = d["window"], d["M_l"]
    sizes = {k: d["splits"].get(k, 0) for k in ("train", "val", "test")}
    history = W + M_l - 1
    if d["kind"] == "csv":
        ds = D.read_csv(d["csv_path"])
        avail = len(ds) - history
        if avail < sizes["train"] + sizes["val"] + sizes["test"]:
            raise D.DataError(f"csv series has {avail} usable values, splits need more")
    else:
        n = history + sizes["train"] + sizes["val"] + sizes["test"]
        gen = D.gen_nlar if d["kind"] == "nlar" else D.gen_expar
        ds = gen(n, seed, burn_in=d["burn_in"])
    lo = history
    bounds = {}
    for name in ("train", "val", "test"):
        bounds[name] = (lo, lo + sizes[name])
        lo += sizes[name]
    if d["standardize"]:
        ds = D.standardize(ds, train_stop=bounds["train"][1])
    allw = D.window_series(ds, W, M_l)
    windows = {k: D.select_targets(allw, b) for k, b in bounds.items()}
    return SeriesData(ds, windows, bounds)


def network_for(cfg: dict, input_width: int, output_dim: int, n_exog: int = 0) -> Network:
    m = cfg["model"]
    widths = (input_width, *m["hidden"], output_dim)
    warmup = cfg["data"]["M_l"] - 1 if m["kind"] == "rnn" else 0
    spec = NetworkSpec(m["kind"], widths, tuple(m["activations"]), warmup=warmup, n_exog=n_exog)
    return Network(spec)


# -- fitting ----------------------------------------------------------------------


@dataclass
class Fit:
    net: Network
    params: np.ndarray
    mask: np.ndarray
    kept_fraction: float
    log: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def train_config(cfg: dict, seed: int) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        learning_rate=t["lr"],
        momentum=t["momentum"],
        batch_size=t["batch_size"],
        total_iterations=t["iterations"],
        seed=seed,
        gradient_clip=t["gradient_clip"],
        refine_iterations=t["refine_iterations"],
        refine_learning_rate=t["refine_lr"],
        log_every=max(1, t["iterations"] // 50),
    )


def fit(net: Network, train: D.Windows, cfg: dict, seed: int, log_sink=None, anneal: bool = True) -> Fit:
    """Prior annealing, thresholding and masked refinement.

    With ``anneal=False`` the network is trained by plain SGD-momentum for
    the same number of iterations and left dense.
    """
    p, s = cfg["prior"], cfg["schedule"]
    tcfg = train_config(cfg, seed)
    params0 = net.init_params(stream(seed, "train", "init"), cfg["model"]["init"])
    if not anneal:
        sched = AnnealSchedule(tcfg.total_iterations, tcfg.total_iterations + 1, tcfg.total_iterations + 2,
                               p["sigma0_init_sq"], p["sigma0_end_sq"])
    else:
        sched = AnnealSchedule(s["T1"], s["T2"], s["T3"], p["sigma0_init_sq"], p["sigma0_end_sq"],
                               s["temp_const"], s["base_temperature"])
    prior = MixturePrior(p["lambda_n"], p["sigma0_init_sq"], p["sigma1_sq"])
    res = run_prior_annealing(
        net, train, prior, sched, tcfg, params=params0,
        target_sparsity=p["target_sparsity"] if anneal else None, log_sink=log_sink,
    )
    meta = {"sigma0_init_sq": res.schedule.sigma0_init_sq, "sigma0_end_sq": res.prior_end.sigma0_sq}
    if not anneal:
        mask = np.ones(net.n_params)
    else:
        mask, _ = sparsify(res.params, res.prior_end)
        if cfg["train"]["prune_dead_units"]:
            mask = prune_dead_units(mask, net.spec)
    params = refine(net, res.params, mask, train, tcfg, log_sink=log_sink)
    return Fit(net, params, mask, float(mask.mean()), res.log, meta)


# -- order selection -----------------------------------------------------------------


def selection_replicate(cfg: dict, seed: int) -> dict:
    sd = load_series(cfg, seed)
    W = cfg["data"]["window"]
    net = network_for(cfg, W, 1)
    f = fit(net, sd.windows["train"], cfg, seed)
    lags = selected_input_lags(f.mask, net.spec)
    links = count_hidden_links(f.mask, net.spec) if net.spec.recurrent else None
    scale = sd.dataset.sd if sd.dataset.sd is not None else 1.0

    def err(split, fn):
        w = sd.windows[split]
        if len(w) == 0:
            return None
        pred = net.predict(f.params, f.mask, w.inputs)
        return fn(pred * scale, w.targets * scale)

    return {
        "seed": seed,
        "selected_lags": sorted(lags),
        "ar_order": max(lags) if lags else 0,
        "hidden_links": links,
        "kept_fraction": f.kept_fraction,
        "mspe": err("test", mspe),
        "msfe": err("train", msfe),
        "fit": f,
        "data": sd,
    }


def run_selection(cfg: dict) -> dict:
    """Replicated order selection; returns the summary plus per-replicate rows."""
    rows = [selection_replicate(cfg, replicate_seed(cfg["seed"], j)) for j in range(cfg["replicates"])]
    true = TRUE_LAGS.get(cfg["data"]["kind"], frozenset())
    res = SelectionResult(
        true,
        [set(r["selected_lags"]) for r in rows],
        window=cfg["data"]["window"],
        hidden_links=[r["hidden_links"] for r in rows],
    )
    summary = selection_summary(res, [r["mspe"] for r in rows], [r["msfe"] for r in rows]) if true else {}
    public = [{k: v for k, v in r.items() if k not in ("fit", "data")} for r in rows]
    return {"summary": summary, "replicates": public, "rows": rows}


# -- intervals ---------------------------------------------------------------------


def one_step_intervals(cfg: dict, seed: int, fit_result: Fit | None = None, sd: SeriesData | None = None) -> dict:
    sd = load_series(cfg, seed) if sd is None else sd
    if fit_result is None:
        fit_result = fit(network_for(cfg, cfg["data"]["window"], 1), sd.windows["train"], cfg, seed)
    net, params, mask = fit_result.net, fit_result.params, fit_result.mask
    h = cfg["uq"]["hessian"]
    test = sd.windows["test"]
    rep = interval_one_step(
        net, params, mask, sd.windows["train"], test, cfg["uq"]["alpha"],
        fd_step=h["fd_step"], jitter_start=h["jitter_start"], jitter_max=h["jitter_max"], method=h["method"],
    )
    targets = test.targets
    if sd.dataset.mean is not None:
        rep = rep.rescale(sd.dataset.mean, sd.dataset.sd)
        targets = targets * sd.dataset.sd + sd.dataset.mean
    return {"report": rep, "summary": coverage_and_length(rep, targets), "targets": targets, "fit": fit_result}


@dataclass
class PanelData:
    panel: D.PanelDataset
    train: D.Windows
    proper: D.Windows
    calibration: D.Windows
    test: D.Windows


def load_panel(cfg: dict, seed: int) -> PanelData:
    """AR(1) panel; the training sequences are split in half for the
    conformal baseline (proper training / calibration)."""
    d = cfg["data"]
    horizon = cfg["uq"]["horizon"] or d["horizon"]
    sizes = {k: d["splits"].get(k, 0) for k in ("train", "test")}
    n = d["n_sequences"] or sizes["train"] + sizes["test"]
    panel = D.gen_ar1_panel(n, d["length"], horizon, d["phi"], seed, splits=sizes)
    train = D.panel_windows(panel.subset("train"), horizon)
    test = D.panel_windows(panel.subset("test"), horizon)
    half = len(train) // 2
    return PanelData(panel, train, train.take(np.arange(half)), train.take(np.arange(half, len(train))), test)


def panel_intervals(cfg: dict, seed: int, baseline: bool = True) -> dict:
    pd = load_panel(cfg, seed)
    horizon = pd.panel.horizon
    cfg = {**cfg, "data": {**cfg["data"], "M_l": pd.train.inputs.shape[1]}}
    alpha = cfg["uq"]["alpha"]
    h = cfg["uq"]["hessian"]
    net = network_for(cfg, 1, horizon)
    f = fit(net, pd.train, cfg, seed)
    rep = intervals_multi_horizon(
        net, f.params, f.mask, pd.train, pd.test, alpha,
        fd_step=h["fd_step"], jitter_start=h["jitter_start"], jitter_max=h["jitter_max"], method=h["method"],
    )
    out = {"report": rep, "summary": coverage_and_length(rep, pd.test.targets), "fit": f, "data": pd}
    if baseline:
        bnet = network_for(cfg, 1, horizon)
        bf = fit(bnet, pd.proper, cfg, replicate_seed(seed, 1), anneal=False)
        cal_pred = bnet.predict(bf.params, bf.mask, pd.calibration.inputs)
        test_pred = bnet.predict(bf.params, bf.mask, pd.test.inputs)
        brep = split_conformal_baseline(cal_pred, pd.calibration.targets, test_pred, alpha, horizon)
        out["baseline_report"] = brep
        out["baseline_summary"] = coverage_and_length(brep, pd.test.targets)
    return out
