"""Experiment configs, multi-seed sweeps, recipes and CSV reports."""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .attacks import DEFAULT_EPSILONS, FGSM, PGD, SweepSpec, avg_gradient_magnitude, evaluate
from .circuits import CATALOG_IDS, builtin_ansatz, control_gate_tag, parse_circuit
from .classical import ConvConfig, ConvFilter, Model, TrainConfig, train_head
from .data import Dataset, load_bundled, load_idx, subset
from .errors import ArgumentError, ConfigError, ParseError, QunnError
from .metrics import DEFAULT_BINS, DEFAULT_PAIRS, DEFAULT_SAMPLES, metric_report
from .quanv import FeatureCache, QuanvConfig, QuanvFilter

log = logging.getLogger(__name__)

# independent RNG streams derived from each run seed
STREAM_TRAIN_SUBSET = 1
STREAM_TEST_SUBSET = 2
STREAM_BACKEND = 3

DESK = {"n_train": 200, "n_test": 200, "epochs": 10, "n_runs": 3}
FULL_SCALE = {"n_train": 1000, "n_test": 1000, "epochs": 30, "n_runs": 10}

RESULT_COLUMNS = ["backend", "method", "epsilon", "mean_acc", "std_acc", "n_runs"]
RUN_COLUMNS = ["backend", "method", "epsilon", "run", "seed", "accuracy"]
AGM_COLUMNS = ["backend", "mean_agm", "std_agm", "n_runs", "per_run"]

_PATH_PAIR = {
    "type": "object",
    "properties": {"images": {"type": "string"}, "labels": {"type": "string"}},
    "required": ["images", "labels"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "label": {"type": "string"},
        "dataset": {
            "type": "object",
            "properties": {
                "name": {"type": "string"},
                "train": _PATH_PAIR,
                "test": _PATH_PAIR,
            },
            "required": ["name"],
            "additionalProperties": False,
        },
        "backend": {
            "oneOf": [
                {
                    "type": "object",
                    "properties": {"kind": {"const": "cnn"}},
                    "required": ["kind"],
                    "additionalProperties": False,
                },
                {
                    "type": "object",
                    "properties": {
                        "kind": {"const": "quanv"},
                        "ansatz": {"type": "integer"},
                        "circuit": {"type": "object"},
                    },
                    "required": ["kind"],
                    "oneOf": [{"required": ["ansatz"]}, {"required": ["circuit"]}],
                    "additionalProperties": False,
                },
            ]
        },
        "quanv": {
            "type": "object",
            "properties": {
                "encode_scale": {"type": "number", "exclusiveMinimum": 0},
                "layers": {"type": "integer", "minimum": 1},
                "kernel": {"type": "integer", "minimum": 1},
                "stride": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "conv": {
            "type": "object",
            "properties": {
                "n_filters": {"type": "integer", "minimum": 1},
                "kernel": {"type": "integer", "minimum": 1},
                "stride": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "train": {
            "type": "object",
            "properties": {
                "epochs": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "n_train": {"type": "integer", "minimum": 1},
                "shuffle": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "n_test": {"type": "integer", "minimum": 1},
        "attacks": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "method": {"enum": [FGSM, PGD]},
                    "epsilons": {"type": "array", "items": {"type": "number", "minimum": 0}},
                    "pgd_alpha": {"type": ["number", "null"], "exclusiveMinimum": 0},
                    "pgd_iters": {"type": "integer", "minimum": 1},
                },
                "required": ["method"],
                "additionalProperties": False,
            },
        },
        "measure_agm": {"type": "boolean"},
        "n_runs": {"type": "integer", "minimum": 1},
        "base_seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
    },
    "required": ["dataset", "backend"],
    "additionalProperties": False,
}


@dataclass
class ExperimentConfig:
    dataset: dict
    backend: dict
    label: str = ""
    quanv: dict = field(default_factory=dict)
    conv: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    n_test: int = FULL_SCALE["n_test"]
    attacks: list = field(default_factory=list)
    measure_agm: bool = False
    n_runs: int = FULL_SCALE["n_runs"]
    base_seed: int = 0
    output_dir: str = "results"

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(doc, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "$"
            raise ParseError(exc.message, where) from None
        cfg = cls(**copy.deepcopy(doc))
        cfg.validate()
        return cfg

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, f"line {exc.lineno} col {exc.colno}") from None
        if not isinstance(doc, dict):
            raise ParseError("config must be an object", "$")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "dataset": self.dataset,
            "backend": self.backend,
            "quanv": self.quanv,
            "conv": self.conv,
            "train": self.train,
            "n_test": self.n_test,
            "attacks": self.attacks,
            "measure_agm": self.measure_agm,
            "n_runs": self.n_runs,
            "base_seed": self.base_seed,
            "output_dir": self.output_dir,
        }

    def digest(self) -> str:
        doc = self.to_dict()
        doc.pop("output_dir")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def validate(self):
        """Semantic checks beyond the JSON schema."""
        backend = self.backend
        if backend["kind"] == "quanv":
            if "ansatz" in backend:
                builtin_ansatz(backend["ansatz"])  # raises CatalogLookupError
            else:
                parse_circuit(backend["circuit"])
        for spec in self.attacks:
            eps = spec.get("epsilons") or DEFAULT_EPSILONS[spec["method"]]
            if list(eps) != sorted(eps):
                raise ConfigError(f"{spec['method']} epsilons must be ascending")
        if self.dataset["name"] not in ("mnist", "fmnist") and "train" not in self.dataset:
            raise ConfigError(f"dataset {self.dataset['name']!r} needs explicit train/test paths")

    @property
    def backend_name(self) -> str:
        if self.backend["kind"] == "cnn":
            return "cnn"
        if "ansatz" in self.backend:
            return f"ansatz{self.backend['ansatz']}"
        return self.backend["circuit"].get("label") or "custom"

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **self.train)

    def sweeps(self) -> list[SweepSpec]:
        return [
            SweepSpec(
                a["method"],
                tuple(a.get("epsilons") or ()),
                self.n_runs,
                a.get("pgd_alpha"),
                a.get("pgd_iters", 10),
            )
            for a in self.attacks
        ]

    def with_desk(self) -> "ExperimentConfig":
        out = copy.deepcopy(self)
        out.train = {**out.train, "n_train": DESK["n_train"], "epochs": DESK["epochs"]}
        out.n_test = DESK["n_test"]
        out.n_runs = DESK["n_runs"]
        return out


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return ExperimentConfig.from_text(text)


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    ds = cfg.dataset
    name = ds["name"]
    if "train" in ds:
        train = load_idx(ds["train"]["images"], ds["train"]["labels"], f"{name}-train")
        test = load_idx(ds["test"]["images"], ds["test"]["labels"], f"{name}-test")
        return train, test
    return load_bundled(name, "train"), load_bundled(name, "test")


def build_backend(cfg: ExperimentConfig, rng):
    if cfg.backend["kind"] == "cnn":
        return ConvFilter(ConvConfig.glorot(rng, **cfg.conv))
    if "ansatz" in cfg.backend:
        ansatz = builtin_ansatz(cfg.backend["ansatz"])
    else:
        ansatz = parse_circuit(cfg.backend["circuit"])
    return QuanvFilter(QuanvConfig.sampled(ansatz, rng, **cfg.quanv))


@dataclass
class RunOutcome:
    run: int
    seed: int
    clean: float
    accuracy: dict  # (method, epsilon) -> accuracy
    agm: float | None
    model: Model | None = None


def train_run(cfg: ExperimentConfig, run: int, datasets=None, cache_dir=None):
    """Train the model of one run; returns ``(model, test_subset, seed)``."""
    seed = cfg.base_seed + run
    train_ds, test_ds = datasets or load_datasets(cfg)
    tcfg = cfg.train_config(seed)
    train = subset(train_ds, tcfg.n_train, [seed, STREAM_TRAIN_SUBSET])
    test = subset(test_ds, cfg.n_test, [seed, STREAM_TEST_SUBSET])
    backend = build_backend(cfg, np.random.default_rng([seed, STREAM_BACKEND]))
    if cache_dir is not None:
        feats = FeatureCache(cache_dir).get_or_compute(train.digest, backend, train.images)
    else:
        feats = backend.features(train.images)
    head = train_head(feats, train.labels, tcfg)
    return Model(backend, head), test, seed


def execute_run(cfg: ExperimentConfig, run: int, datasets=None, cache_dir=None, keep_model=False) -> RunOutcome:
    model, test, seed = train_run(cfg, run, datasets, cache_dir)
    clean = evaluate(model, test.images, test.labels)
    acc = {}
    for sweep in cfg.sweeps():
        for eps in sweep.epsilons:
            acc[(sweep.method, eps)] = evaluate(model, test.images, test.labels, sweep.attack(eps))
    agm = avg_gradient_magnitude(model, test.images, test.labels) if cfg.measure_agm else None
    return RunOutcome(run, seed, clean, acc, agm, model if keep_model else None)


def _execute_task(args):
    cfg_doc, run, cache_dir = args
    return execute_run(ExperimentConfig.from_dict(cfg_doc), run, cache_dir=cache_dir)


@dataclass
class SweepRow:
    backend: str
    method: str
    epsilon: float
    values: tuple  # per-run accuracies in run order
    seeds: tuple

    @property
    def n_runs(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        return float(np.std(self.values, ddof=1)) if len(self.values) > 1 else 0.0


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)
    agm: dict = field(default_factory=dict)  # backend -> per-run AGM tuple

    def extend(self, other: "SweepResult"):
        self.rows.extend(other.rows)
        self.agm.update(other.agm)

    def row(self, backend: str, method: str, epsilon: float) -> SweepRow:
        for r in self.rows:
            if r.backend == backend and r.method == method and r.epsilon == epsilon:
                return r
        raise KeyError((backend, method, epsilon))

    def results_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in self.rows:
            w.writerow([r.backend, r.method, f"{r.epsilon:g}", f"{r.mean:.6f}", f"{r.std:.6f}", r.n_runs])
        return buf.getvalue()

    def runs_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for r in self.rows:
            for i, (seed, v) in enumerate(zip(r.seeds, r.values)):
                w.writerow([r.backend, r.method, f"{r.epsilon:g}", i, seed, f"{v:.6f}"])
        return buf.getvalue()

    def agm_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(AGM_COLUMNS)
        for backend, values in self.agm.items():
            std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
            w.writerow([backend, f"{np.mean(values):.6f}", f"{std:.6f}", len(values), ";".join(f"{v:.6f}" for v in values)])
        return buf.getvalue()


def _collect(cfg: ExperimentConfig, outcomes: list[RunOutcome]) -> SweepResult:
    name = cfg.backend_name
    seeds = tuple(o.seed for o in outcomes)
    result = SweepResult()
    result.rows.append(SweepRow(name, "clean", 0.0, tuple(o.clean for o in outcomes), seeds))
    for sweep in cfg.sweeps():
        for eps in sweep.epsilons:
            values = tuple(o.accuracy[(sweep.method, eps)] for o in outcomes)
            result.rows.append(SweepRow(name, sweep.method, eps, values, seeds))
    if cfg.measure_agm:
        result.agm[name] = tuple(o.agm for o in outcomes)
    return result


def catalog_version() -> str:
    h = hashlib.sha256()
    root = resources.files("qunnbench.catalog")
    for i in CATALOG_IDS:
        h.update(root.joinpath(f"ansatz_{i:02d}.json").read_bytes())
    return h.hexdigest()[:16]


def manifest(configs: list[ExperimentConfig]) -> dict:
    return {
        "package_version": __version__,
        "catalog_version": catalog_version(),
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "experiments": [
            {
                "label": c.label,
                "backend": c.backend_name,
                "config_digest": c.digest(),
                "seeds": [c.base_seed + r for r in range(c.n_runs)],
                "config": c.to_dict(),
            }
            for c in configs
        ],
    }


def write_outputs(out_dir, result: SweepResult, configs: list[ExperimentConfig], error: str | None = None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(result.results_csv())
    (out / "runs.csv").write_text(result.runs_csv())
    if result.agm:
        (out / "agm.csv").write_text(result.agm_csv())
    doc = manifest(configs)
    if error:
        doc["error"] = error
    (out / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def run_experiments(configs: list[ExperimentConfig], out_dir=None, workers: int = 1, cache_dir=None) -> SweepResult:
    """Run every config for all its runs; results are ordered by (config, run).

    On failure, completed configs are flushed to ``out_dir`` together with
    the error before re-raising.
    """
    result = SweepResult()
    done: list[ExperimentConfig] = []
    try:
        if workers > 1:
            tasks = [(c.to_dict(), r, cache_dir) for c in configs for r in range(c.n_runs)]
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(_execute_task, tasks))
            pos = 0
            for c in configs:
                result.extend(_collect(c, outcomes[pos : pos + c.n_runs]))
                pos += c.n_runs
                done.append(c)
        else:
            cache = {}
            for c in configs:
                key = json.dumps(c.dataset, sort_keys=True)
                if key not in cache:
                    cache[key] = load_datasets(c)
                outcomes = []
                for r in range(c.n_runs):
                    log.info("%s run %d/%d", c.label or c.backend_name, r + 1, c.n_runs)
                    outcomes.append(execute_run(c, r, cache[key], cache_dir))
                result.extend(_collect(c, outcomes))
                done.append(c)
    except QunnError as exc:
        if out_dir is not None:
            write_outputs(out_dir, result, done, error=f"{type(exc).__name__}: {exc}")
        raise
    if out_dir is not None:
        write_outputs(out_dir, result, configs)
    return result


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int = 1, cache_dir=None) -> SweepResult:
    return run_experiments([cfg], out_dir if out_dir is not None else cfg.output_dir, workers, cache_dir)


COMBINATION_LABELS = {
    1: "Low-Ent, Low-Exp (Ansatz 1)",
    9: "High-Ent, Low-Exp (Ansatz 9)",
    3: "Low-Ent, High-Exp (Ansatz 3)",
    6: "High-Ent, High-Exp (Ansatz 6)",
}
GATE_PAIRS = ((3, 4), (5, 6), (7, 8), (11, 12), (13, 14), (16, 17), (18, 19))
RECIPES = ("expressibility-sweep", "entanglement-sweep", "combination", "gate-selection", "qunn-vs-cnn", "agm")


def _default_attacks():
    return [{"method": FGSM}, {"method": PGD}]


def recipe(name: str, dataset: str = "mnist", desk: bool = False, base_seed: int = 0) -> list[ExperimentConfig]:
    """The experiment configs of one named study, in presentation order."""

    def quanv(aid, label=None, attacks=None, agm=False):
        return ExperimentConfig(
            dataset={"name": dataset},
            backend={"kind": "quanv", "ansatz": aid},
            label=label or f"Ansatz {aid}",
            attacks=_default_attacks() if attacks is None else attacks,
            measure_agm=agm,
            base_seed=base_seed,
        )

    def cnn(attacks=None, agm=False):
        return ExperimentConfig(
            dataset={"name": dataset},
            backend={"kind": "cnn"},
            label="CNN",
            attacks=_default_attacks() if attacks is None else attacks,
            measure_agm=agm,
            base_seed=base_seed,
        )

    if name == "expressibility-sweep":
        configs = [quanv(i) for i in (9, 15, 13, 14, 6)]
    elif name == "entanglement-sweep":
        configs = [quanv(i) for i in (1, 3, 19, 2, 9)]
    elif name == "combination":
        configs = [quanv(i, COMBINATION_LABELS[i]) for i in (1, 9, 3, 6)]
    elif name == "gate-selection":
        configs = []
        for z, x in GATE_PAIRS:
            for aid in (z, x):
                tag = control_gate_tag(builtin_ansatz(aid))
                configs.append(quanv(aid, f"Pair {z}-{x}: Ansatz {aid} ({tag})", [{"method": FGSM}]))
    elif name == "qunn-vs-cnn":
        configs = [cnn()] + [quanv(i) for i in (9, 15, 13, 14, 6)]
    elif name == "agm":
        configs = [cnn([], True)] + [quanv(i, f"QuNN (Ansatz {i})", [], True) for i in (3, 9, 1, 6)]
    else:
        raise ArgumentError(f"unknown recipe {name!r}; choose from {', '.join(RECIPES)}")
    return [c.with_desk() if desk else c for c in configs]


def metrics_report(
    ids=CATALOG_IDS,
    seed: int = 0,
    n_pairs: int = DEFAULT_PAIRS,
    n_bins: int = DEFAULT_BINS,
    n_samples: int = DEFAULT_SAMPLES,
) -> str:
    """Table-1-shaped CSV: id, expressibility, entanglement, control_gate, n_pairs, n_bins, seed."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "expressibility", "entanglement", "control_gate", "n_pairs", "n_bins", "seed"])
    for aid in ids:
        rep = metric_report(builtin_ansatz(aid), seed, n_pairs, n_bins, n_samples)
        w.writerow([aid, f"{rep.expressibility:.6f}", f"{rep.entanglement:.6f}", rep.control_gate, n_pairs, n_bins, seed])
    return buf.getvalue()
