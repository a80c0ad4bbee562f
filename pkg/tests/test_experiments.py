import csv
import io
import json

import numpy as np
import pytest

from qunnbench import experiments as ex
from qunnbench import render
from qunnbench.errors import ArgumentError, CatalogLookupError, ConfigError, IngestionError, ParseError


def tiny(backend=None, **kw):
    doc = {
        "dataset": {"name": "mnist"},
        "backend": backend or {"kind": "quanv", "ansatz": 3},
        "train": {"n_train": 20, "epochs": 1},
        "n_test": 12,
        "attacks": [{"method": "FGSM", "epsilons": [0.0, 0.1]}, {"method": "PGD", "epsilons": [0.02], "pgd_iters": 2}],
        "n_runs": 2,
        "base_seed": 3,
    }
    doc.update(kw)
    return ex.ExperimentConfig.from_dict(doc)


def test_config_round_trip():
    cfg = tiny()
    assert ex.ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    assert ex.ExperimentConfig.from_text(json.dumps(cfg.to_dict())).digest() == cfg.digest()
    assert cfg.backend_name == "ansatz3"
    assert tiny({"kind": "cnn"}).backend_name == "cnn"


@pytest.mark.parametrize(
    "patch, err",
    [
        ({"colour": 1}, ParseError),
        ({"backend": {"kind": "quanv"}}, ParseError),
        ({"backend": {"kind": "quanv", "ansatz": 10}}, CatalogLookupError),
        ({"backend": {"kind": "cnn", "ansatz": 3}}, ParseError),
        ({"attacks": [{"method": "FGSM", "epsilons": [0.2, 0.1]}]}, ConfigError),
        ({"attacks": [{"method": "FGSM", "epsilons": [-0.1]}]}, ParseError),
        ({"attacks": [{"method": "CW"}]}, ParseError),
        ({"n_runs": 0}, ParseError),
        ({"dataset": {"name": "cifar"}}, ConfigError),
        ({"backend": {"kind": "quanv", "circuit": {"n_qubits": 4, "ops": [{"gate": "RY", "target": 9, "param": 0}]}}}, ParseError),
    ],
)
def test_config_validation(patch, err):
    doc = tiny().to_dict()
    doc.update(patch)
    with pytest.raises(err):
        ex.ExperimentConfig.from_dict(doc)


def test_config_bad_json_position():
    with pytest.raises(ParseError) as e:
        ex.ExperimentConfig.from_text('{"dataset": }')
    assert e.value.position.startswith("line 1")


def test_custom_circuit_backend():
    circuit = {"label": "mine", "n_qubits": 4, "ops": [{"gate": "RY", "target": k, "param": k} for k in range(4)]}
    cfg = tiny({"kind": "quanv", "circuit": circuit})
    assert cfg.backend_name == "mine"
    model, test, seed = ex.train_run(cfg, 0)
    assert seed == 3 and len(test) == 12


def test_recipes():
    ids = lambda name: [c.backend.get("ansatz", "cnn") for c in ex.recipe(name)]
    assert ids("expressibility-sweep") == [9, 15, 13, 14, 6]
    assert ids("entanglement-sweep") == [1, 3, 19, 2, 9]
    assert ids("combination") == [1, 9, 3, 6]
    assert ids("gate-selection") == [3, 4, 5, 6, 7, 8, 11, 12, 13, 14, 16, 17, 18, 19]
    assert ids("qunn-vs-cnn") == ["cnn", 9, 15, 13, 14, 6]
    assert ids("agm") == ["cnn", 3, 9, 1, 6]
    assert ex.recipe("combination")[0].label == "Low-Ent, Low-Exp (Ansatz 1)"
    assert [c.label for c in ex.recipe("combination")][1:] == [
        "High-Ent, Low-Exp (Ansatz 9)",
        "Low-Ent, High-Exp (Ansatz 3)",
        "High-Ent, High-Exp (Ansatz 6)",
    ]
    assert all(c.measure_agm and not c.attacks for c in ex.recipe("agm"))
    with pytest.raises(ArgumentError):
        ex.recipe("nope")


def test_recipe_protocols():
    full = ex.recipe("combination")[0]
    assert (full.n_runs, full.n_test, full.train_config(0).n_train, full.train_config(0).epochs) == (10, 1000, 1000, 30)
    desk = ex.recipe("combination", desk=True)[0]
    assert (desk.n_runs, desk.n_test, desk.train_config(0).n_train, desk.train_config(0).epochs) == (3, 200, 200, 10)
    assert ex.recipe("agm", dataset="fmnist", base_seed=4)[2].dataset == {"name": "fmnist"}
    assert ex.recipe("agm", base_seed=4)[0].base_seed == 4


def test_run_experiment_outputs(tmp_path):
    cfg = tiny()
    result = ex.run_experiment(cfg, tmp_path / "a")
    rows = list(csv.DictReader(io.StringIO((tmp_path / "a" / "results.csv").read_text())))
    assert list(rows[0]) == ex.RESULT_COLUMNS
    assert [(r["method"], r["epsilon"]) for r in rows] == [("clean", "0"), ("FGSM", "0"), ("FGSM", "0.1"), ("PGD", "0.02")]
    for r in result.rows:
        assert r.n_runs == 2 and 0 <= r.mean <= 1 and r.std >= 0
        assert r.seeds == (3, 4)
    # an epsilon-0 attack is the clean evaluation, run by run
    assert result.row("ansatz3", "FGSM", 0.0).values == result.row("ansatz3", "clean", 0.0).values
    runs = list(csv.DictReader(io.StringIO((tmp_path / "a" / "runs.csv").read_text())))
    assert len(runs) == 8 and {r["seed"] for r in runs} == {"3", "4"}
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    exp = man["experiments"][0]
    assert exp["seeds"] == [3, 4] and exp["config_digest"] == cfg.digest()
    assert man["catalog_version"] == ex.catalog_version()
    assert ex.ExperimentConfig.from_dict(exp["config"]) == cfg


def test_run_experiment_byte_identical(tmp_path):
    cfg = tiny({"kind": "cnn"}, measure_agm=True)
    ex.run_experiment(cfg, tmp_path / "a")
    ex.run_experiment(cfg, tmp_path / "b", cache_dir=tmp_path / "cache")
    ex.run_experiment(cfg, tmp_path / "c", cache_dir=tmp_path / "cache")
    for name in ("results.csv", "runs.csv", "agm.csv", "manifest.json"):
        a = (tmp_path / "a" / name).read_bytes()
        assert a == (tmp_path / "b" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()
    assert list((tmp_path / "cache").glob("*.qnvf"))


def test_worker_count_does_not_change_output(tmp_path):
    cfgs = [tiny(), tiny({"kind": "cnn"})]
    one = ex.run_experiments(cfgs, tmp_path / "one", workers=1)
    two = ex.run_experiments(cfgs, tmp_path / "two", workers=2)
    assert one.results_csv() == two.results_csv()
    assert (tmp_path / "one" / "runs.csv").read_bytes() == (tmp_path / "two" / "runs.csv").read_bytes()


def test_partial_results_flushed(tmp_path):
    bad = tmp_path / "bad.idx"
    bad.write_bytes(b"\x00\x00\x08\x04" + bytes(12))
    broken = tiny(dataset={"name": "mine", "train": {"images": str(bad), "labels": str(bad)}, "test": {"images": str(bad), "labels": str(bad)}})
    with pytest.raises(IngestionError):
        ex.run_experiments([tiny(n_runs=1), broken], tmp_path / "out")
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert "IngestionError" in man["error"] and len(man["experiments"]) == 1
    assert "ansatz3" in (tmp_path / "out" / "results.csv").read_text()


def test_metrics_report():
    text = ex.metrics_report(seed=2, n_pairs=1000, n_samples=1000)
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[0]) == ["id", "expressibility", "entanglement", "control_gate", "n_pairs", "n_bins", "seed"]
    assert len(rows) == 18
    by_id = {int(r["id"]): r for r in rows}
    assert by_id[6]["control_gate"] == "CRx" and by_id[3]["control_gate"] == "CRz"
    assert float(by_id[1]["entanglement"]) == 0.0
    assert ex.metrics_report([6, 9], seed=2, n_pairs=1000, n_samples=1000) == ex.metrics_report(
        [6, 9], seed=2, n_pairs=1000, n_samples=1000
    )


def _result(eps_list):
    res = ex.SweepResult()
    for backend, base in (("cnn", 0.8), ("ansatz3", 0.7)):
        res.rows.append(ex.SweepRow(backend, "clean", 0.0, (base, base - 0.1), (0, 1)))
        for e in eps_list:
            res.rows.append(ex.SweepRow(backend, "FGSM", e, (base - e, base - e / 2), (0, 1)))
    return res


def test_render_csv_and_svg(tmp_path):
    res = _result([0.0, 0.1, 0.2])
    csv_path, svg_path = render.render_curves(res, tmp_path)
    assert csv_path.read_text().splitlines()[0] == "backend,method,epsilon,mean_acc,std_acc,n_runs"
    svg = svg_path.read_text()
    assert svg.startswith("<?xml") and "cnn" in svg and "ansatz3" in svg
    # re-rendering from the CSV alone reproduces the SVG byte for byte
    _, again = render.render_curves(csv_path.read_text(), tmp_path / "re")
    assert again.read_bytes() == svg_path.read_bytes()


def test_render_single_point(tmp_path):
    res = _result([0.3])
    rows = render.read_results_csv(res.results_csv())
    assert sum(r["method"] == "FGSM" for r in rows) == 2
    _, svg = render.render_curves(res, tmp_path)
    assert svg is not None


def test_render_failure_keeps_csv(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("no backend")

    monkeypatch.setattr(render, "curve_svg", boom)
    csv_path, svg_path = render.render_curves(_result([0.1]), tmp_path)
    assert svg_path is None and csv_path.exists()
    with pytest.raises(ArgumentError):
        render.render_curves("backend,method,epsilon,mean_acc,std_acc,n_runs\n", tmp_path)


def test_sweep_row_statistics():
    row = ex.SweepRow("x", "FGSM", 0.1, (0.5, 0.7, 0.9), (0, 1, 2))
    assert row.mean == pytest.approx(0.7) and row.std == pytest.approx(0.2)
    assert ex.SweepRow("x", "FGSM", 0.1, (0.5,), (0,)).std == 0.0
