import csv
import json
from pathlib import Path

import pytest

from stoclear import ExperimentConfig, PhParams, run_experiment, verify
from stoclear.runner import ConfigError, money, price, quantity


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_full_run_writes_every_table(tmp_path):
    art = run_experiment(ExperimentConfig("micro1", tmp_path / "out"))
    names = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert names == ["dispatch.csv", "distortion.csv", "duals.csv", "metrics.csv",
                     "payments.csv", "relationships.csv", "summary.json"]
    summary = json.loads(art.files["summary"].read_text())
    assert summary["formulations"]["canonical"]["objective"] == -2320.0
    assert summary["relationships"]["passed"]
    assert not art.violations


def test_runs_are_byte_identical(tmp_path):
    outputs = []
    for name in ("a", "b"):
        cfg = ExperimentConfig("pzp6", tmp_path / name, perturb=True, seed=2 ** 64 - 1)
        run_experiment(cfg)
        outputs.append({p.name: p.read_bytes() for p in (tmp_path / name).iterdir()})
    assert outputs[0] == outputs[1]


def test_seed_changes_perturbed_results(tmp_path):
    texts = []
    for seed in (1, 2):
        art = run_experiment(ExperimentConfig("micro1", tmp_path / str(seed), perturb=True, seed=seed))
        texts.append(art.files["duals"].read_text())
    assert texts[0] != texts[1]


def test_payment_rows_add_up(tmp_path):
    art = run_experiment(ExperimentConfig("micro1", tmp_path, formulation="state_vector",
                                          mechanism="rs"))
    rows = read_csv(art.files["payments"])
    assert {r["mechanism"] for r in rows} == {"Rs"}
    for r in rows:
        assert float(r["profit_usd"]) == pytest.approx(float(r["rho_usd"]) + float(r["phi_usd"]), abs=0.011)
    assert "relationships" not in art.files


@pytest.mark.parametrize("form", ["clairvoyant:w2", "clairvoyant:2"])
def test_clairvoyant_by_name_or_index(tmp_path, form):
    art = run_experiment(ExperimentConfig("micro1", tmp_path, formulation=form))
    assert list(art.clearings) == ["clairvoyant:w2"]
    assert art.summary["formulations"]["clairvoyant:w2"]["objective"] == -3120.0


@pytest.mark.parametrize("kwargs, message", [
    ({"formulation": "clairvoyant"}, "needs a scenario"),
    ({"formulation": "clairvoyant:9"}, "outside 1..2"),
    ({"formulation": "clairvoyant:dry"}, "unknown scenario"),
    ({"formulation": "robust"}, "unknown formulation"),
    ({"mechanism": "rx"}, "unknown mechanism"),
    ({"solver": "benders"}, "unknown solver"),
    ({"solver": "ph"}, "only applies"),
    ({"formulation": "canonical", "mechanism": "rs"}, "prices under Rc"),
    ({"seed": -1}, "unsigned 64-bit"),
])
def test_config_errors(tmp_path, kwargs, message):
    with pytest.raises(ConfigError, match=message):
        run_experiment(ExperimentConfig("micro1", tmp_path / "x", **kwargs))
    assert not (tmp_path / "x").exists()


def test_ph_run_writes_trace(tmp_path):
    cfg = ExperimentConfig("micro1", tmp_path, formulation="mean_vector", solver="ph",
                           ph=PhParams(max_iters=500))
    art = run_experiment(cfg)
    trace = read_csv(art.files["ph_trace"])
    assert trace[0]["iteration"] == "1"
    assert art.summary["ph"]["status"] == "converged"
    assert art.summary["formulations"]["mean_vector+ph"]["objective"] == pytest.approx(-2320.0, rel=1e-4)


def test_failed_write_removes_partial_artifacts(tmp_path, monkeypatch):
    calls = []
    original = Path.write_text

    def flaky(self, *args, **kwargs):
        calls.append(self.name)
        if len(calls) == 3:
            raise OSError("disk full")
        return original(self, *args, **kwargs)

    monkeypatch.setattr(Path, "write_text", flaky)
    out = tmp_path / "new"
    with pytest.raises(OSError, match="disk full"):
        run_experiment(ExperimentConfig("micro1", out))
    assert not out.exists()


@pytest.mark.parametrize("fmt, value, text", [(money, -0.001, "0.00"), (price, -1e-9, "0.000000"),
                                              (quantity, 2.5, "2.5000"), (money, -3.456, "-3.46"),
                                              (price, float("inf"), "inf")])
def test_number_formatting(fmt, value, text):
    assert fmt(value) == text


def test_no_negative_zero_in_artifacts(tmp_path):
    art = run_experiment(ExperimentConfig("zkab6", tmp_path))
    for path in art.files.values():
        for line in path.read_text().splitlines():
            for cell in line.split(","):
                assert not (cell.startswith("-") and cell.strip("-0.") == ""), (path.name, line)


def test_verify_passes_on_micro1(micro1):
    checks = verify(micro1)
    assert all(c.passed for _, c in checks), [c for _, c in checks if not c.passed]
    names = {c.name for _, c in checks}
    assert {"clairvoyant bound", "equal objectives across formulations"} <= names


def test_verify_reports_band_violations(pzp6):
    failed = [(k, c.name) for k, c in verify(pzp6) if not c.passed]
    assert failed
    assert all(name.endswith("distortion band") for _, name in failed)
