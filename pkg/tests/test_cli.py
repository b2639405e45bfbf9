"""Command line: config validation, artefacts, exit codes, idempotence."""

import csv
import json

import numpy as np
import pytest

from sparsets import config as C
from sparsets.cli import main
from sparsets.errors import ConfigError
from sparsets.models import count_hidden_links, load_checkpoint

SMALL = {
    "seed": 3,
    "data": {"kind": "expar", "window": 2, "M_l": 2, "splits": {"train": 150, "val": 40, "test": 40}},
    "model": {"hidden": [6]},
    "prior": {"lambda_n": 1e-3, "sigma1_sq": 0.05, "sigma0_init_sq": 1e-4, "sigma0_end_sq": 1e-5},
    "schedule": {"T1": 60, "T2": 80, "T3": 120},
    "train": {"iterations": 150, "refine_iterations": 40, "batch_size": 16},
}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _merge(base, **sections):
    out = json.loads(json.dumps(base))
    for k, v in sections.items():
        if isinstance(v, dict):
            out.setdefault(k, {}).update(v)
        else:
            out[k] = v
    return out


def test_simulate_expar_rows_and_idempotent(tmp_path):
    cfg = _write(tmp_path, {"seed": 1, "data": {"kind": "expar", "n": 100}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    rows = list(csv.reader(open(tmp_path / "a" / "data.csv")))
    assert rows[0] == ["y"] and len(rows) == 101
    for f in ("data.csv", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_simulate_nlar_manifest(tmp_path):
    cfg = _write(tmp_path, {"data": {"kind": "nlar", "n": 50}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert len(man["params"]) == 7 and man["params"]["g1"] == 12.80


def test_simulate_panel(tmp_path):
    cfg = _write(tmp_path, {"data": {"kind": "ar1_panel", "n_sequences": 4, "length": 8, "horizon": 2}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = list(csv.reader(open(tmp_path / "data.csv")))
    assert len(rows) == 5 and len(rows[0]) == 8


@pytest.mark.parametrize(
    "bad",
    [
        {"data": {"kind": "arma"}},
        {"bogus": 1},
        {"prior": {"lambda_n": 0}},
        {"schedule": {"T1": 5, "T2": 5}},
        {"data": {"kind": "csv", "csv_path": "missing.csv"}},
        {"train": {"lr": "fast"}},
    ],
)
def test_invalid_configs_exit_2(tmp_path, bad, capsys):
    cfg = _write(tmp_path, bad)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert capsys.readouterr().err


def test_malformed_inputs_exit_2(tmp_path):
    (tmp_path / "x.json").write_text("{not json")
    assert main(["train", "--config", str(tmp_path / "x.json")]) == 2
    assert main(["train", "--config", str(tmp_path / "none.json")]) == 2
    assert main(["nope", "--config", "x"]) == 2


def test_config_build_defaults():
    cfg = C.build({})
    assert cfg["prior"]["lambda_n"] > 0 and cfg["schedule"]["T1"] < cfg["schedule"]["T2"]
    with pytest.raises(ConfigError):
        C.build({"model": {"hidden": [4], "activations": []}})


def test_train_select_and_uq(tmp_path):
    cfg_path = _write(tmp_path, SMALL)
    out = tmp_path / "run"
    assert main(["train", "--config", cfg_path, "--out", str(out)]) == 0
    spec, params, mask, meta = load_checkpoint(out / "checkpoint.json")
    summary = json.loads((out / "train_summary.json").read_text())
    assert summary["hidden_links"] == count_hidden_links(mask, spec)
    logs = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
    assert {"iter", "phase", "loss"} <= set(logs[0]) and all(np.isfinite(r["loss"]) for r in logs)

    # deterministic rerun
    out2 = tmp_path / "run2"
    assert main(["train", "--config", cfg_path, "--out", str(out2)]) == 0
    assert (out / "checkpoint.json").read_bytes() == (out2 / "checkpoint.json").read_bytes()

    uq_cfg = _write(tmp_path, _merge(SMALL, checkpoint=str(out / "checkpoint.json"),
                                     uq={"hessian": {"method": "gauss_newton"}}), "uq.json")
    assert main(["uq", "--config", uq_cfg, "--out", str(out), "--baseline", "conformal"]) == 0
    blocks = json.loads((out / "uq_summary.json").read_text())
    assert set(blocks) == {"delta", "conformal"}
    assert 0.0 <= blocks["delta"]["coverage"] <= 1.0
    rows = list(csv.reader(open(out / "intervals.csv")))
    assert rows[0] == ["point_index", "horizon", "center", "lower", "upper"] and len(rows) == 41

    wide = _write(tmp_path, _merge(SMALL, checkpoint=str(out / "checkpoint.json"),
                                   uq={"alpha": 0.3, "hessian": {"method": "gauss_newton"}}), "uq2.json")
    assert main(["uq", "--config", wide, "--out", str(tmp_path / "w")]) == 0
    narrow = json.loads((tmp_path / "w" / "uq_summary.json").read_text())
    assert narrow["delta"]["mean_width"] < blocks["delta"]["mean_width"]

    sel = _write(tmp_path, _merge(SMALL, replicates=2), "sel.json")
    assert main(["select-order", "--config", sel, "--out", str(tmp_path / "s")]) == 0
    doc = json.loads((tmp_path / "s" / "selection.json").read_text())
    assert len(doc["replicates"]) == 2 and "fsr" in doc["summary"]


def test_dense_when_prior_never_applied(tmp_path):
    cfg = _merge(SMALL, schedule={"T1": 150, "T2": 151, "T3": 152})
    out = tmp_path / "d"
    assert main(["train", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    _, params, mask, _ = load_checkpoint(out / "checkpoint.json")
    assert mask.mean() > 0.9


def test_uq_without_checkpoint(tmp_path):
    assert main(["uq", "--config", _write(tmp_path, SMALL), "--out", str(tmp_path)]) == 2
    assert main(["uq", "--config", _write(tmp_path, _merge(SMALL, checkpoint="gone.json")), "--out", str(tmp_path)]) == 2


def test_divergence_exit_3(tmp_path):
    cfg = _merge(SMALL, train={"lr": 1e7})
    with np.errstate(all="ignore"):
        code = main(["train", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "x")])
    assert code == 3
    assert (tmp_path / "x" / "checkpoint_last_good.json").exists()
