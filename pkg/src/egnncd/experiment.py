"""Cross-validated experiments: single runs, ablations, sweeps and comparisons."""
from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import KINDS as BASELINE_KINDS, train_baseline
from .data import Dataset, dataset_stats, id_map_hash, load_dataset, make_folds
from .metrics import METRICS, ComparisonTable, evaluate
from .model import EgnnCD, TrainConfig, predict_all, train
from .nn import save_checkpoint
from .synth import SynthSpec, generate

MODEL_KINDS = ("egnn",) + BASELINE_KINDS


@dataclass
class ExperimentConfig:
    # data source: either logs + qmatrix, or synth = true
    logs: str = ""
    qmatrix: str = ""
    synth: bool = False
    process: str = "dina"
    n_students: int = 500
    n_exercises: int = 40
    n_concepts: int = 8
    concepts_per_exercise: float = 2.0
    slip: float = 0.1
    guess: float = 0.1
    ability_sd: float = 1.0
    synth_seed: int = 42
    # models
    model: str = "egnn"
    models: str = "egnn,pmf,irt"
    # training (mirrors TrainConfig)
    lr: float = 0.003
    epochs: int = 200
    batch_size: int = 256
    dropout: float = 0.2
    gate_mode: str = "literal"
    variant: int = 4
    dim: int = 128
    layers: int = 2
    encoding: str = "binary-correct"
    cap_hidden: int = 32
    early_stop: bool = True
    patience: int = 10
    min_delta: float = 1e-5
    latent_dim: int = 8
    dtype: str = "float32"
    # protocol
    folds: int = 5
    seed: int = 42
    out: str = "runs"
    jobs: int = 1
    checkpoints: bool = True

    def validate(self):
        if self.synth and (self.logs or self.qmatrix):
            raise ValueError("give either logs/qmatrix or synth = true, not both")
        if not self.synth:
            if not (self.logs and self.qmatrix):
                raise ValueError("no data source: set logs and qmatrix, or synth = true")
            for p in (self.logs, self.qmatrix):
                if not Path(p).exists():
                    raise FileNotFoundError(f"missing data file: {p}")
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODEL_KINDS}")
        for m in self.model_list():
            if m not in MODEL_KINDS:
                raise ValueError(f"unknown model {m!r} in models")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        self.train_config()  # field-level checks
        if self.synth:
            self.synth_spec()
        return self

    def model_list(self):
        return [m.strip() for m in self.models.split(",") if m.strip()]

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        kw = {k: v for k, v in asdict(self).items() if k in names}
        return TrainConfig(**kw)

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(n_students=self.n_students, n_exercises=self.n_exercises,
                         n_concepts=self.n_concepts,
                         concepts_per_exercise=self.concepts_per_exercise,
                         process=self.process, slip=self.slip, guess=self.guess,
                         ability_sd=self.ability_sd, seed=self.synth_seed)

    def snapshot(self):
        return asdict(self)

    def digest(self):
        snap = {k: v for k, v in self.snapshot().items() if k not in ("out", "jobs")}
        return hashlib.sha256(json.dumps(snap, sort_keys=True).encode()).hexdigest()[:16]


# -- config files -----------------------------------------------------------

def _coerce(name, raw, typ):
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        raw = raw[1:-1]
    if typ in (bool, "bool"):
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if typ in (int, "int"):
        return int(raw)
    if typ in (float, "float"):
        return float(raw)
    return raw


def parse_kv(text, cls):
    """Parse flat ``key = value`` lines (``#`` comments) into keyword args for ``cls``.

    Unknown keys are errors.
    """
    types = {f.name: f.type for f in fields(cls)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, raw, types[key])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return out


def load_config(path=None, **overrides) -> ExperimentConfig:
    kw = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        kw = parse_kv(p.read_text(), ExperimentConfig)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**kw).validate()


def load_synth_spec(path) -> SynthSpec:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"spec file not found: {p}")
    return SynthSpec(**parse_kv(p.read_text(), SynthSpec))


# -- records ----------------------------------------------------------------

@dataclass
class RunRecord:
    model: str
    dataset: str
    config: dict
    config_hash: str
    seed: int
    k: int
    fold_hash: str
    folds: list = field(default_factory=list)
    mean: dict = field(default_factory=dict)
    sd: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0
    version: str = __version__

    def aggregate(self):
        self.folds.sort(key=lambda f: f["fold"])
        vals = {m: np.array([f["metrics"][m] for f in self.folds]) for m in METRICS}
        self.mean = {m: float(v.mean()) for m, v in vals.items()}
        self.sd = {m: float(v.std(ddof=1)) if len(v) > 1 else 0.0 for m, v in vals.items()}
        return self

    def to_dict(self):
        return asdict(self)

    def comparable(self):
        """Everything except timing and output location, for reproducibility checks."""
        d = self.to_dict()
        d.pop("wall_clock_s")
        d["config"] = {k: v for k, v in d["config"].items() if k not in ("out", "jobs")}
        return d

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1))
        return path

    @classmethod
    def read(cls, path):
        return cls(**json.loads(Path(path).read_text()))


# -- core runner ------------------------------------------------------------

def build_dataset(cfg: ExperimentConfig):
    """Returns ``(dataset, name)``."""
    if cfg.synth:
        spec = cfg.synth_spec()
        return generate(spec).dataset, f"synth-{spec.process}"
    return load_dataset(cfg.logs, cfg.qmatrix), Path(cfg.logs).stem


def _student_spread(students, preds):
    """Largest within-student range of predictions."""
    order = np.argsort(students, kind="stable")
    s, p = students[order], preds[order]
    cuts = np.flatnonzero(np.diff(s)) + 1
    return float(max((g.max() - g.min()) for g in np.split(p, cuts))) if len(p) else 0.0


def run_fold(ds: Dataset, plan, fold, kind, tcfg: TrainConfig, ckpt_dir=None, on_step=None):
    tr, te = plan.train_idx(fold), plan.test_idx(fold)
    if kind == "egnn":
        result = train(ds, tr, tcfg, on_step=on_step)
        pairs = np.c_[ds.students[te], ds.exercises[te]]
        preds = predict_all(result.model, result.fm, pairs)
    else:
        result = train_baseline(kind, ds, tr, tcfg, on_step=on_step)
        preds = result.model.predict_pairs(ds.students[te], ds.exercises[te])
    report = evaluate(ds.labels[te], preds)
    if ckpt_dir is not None:
        path = Path(ckpt_dir) / f"{kind}-fold{fold}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {**result.model.config(), "train_config": tcfg.to_dict(),
                "id_map_hash": id_map_hash(ds), "fold": fold}
        save_checkpoint(path, result.model.params, getattr(result.model, "optimizer", None),
                        seed=tcfg.seed, meta=meta)
    return {
        "fold": fold,
        "n_train": int(len(tr)),
        "n_test": int(len(te)),
        "metrics": {m: getattr(report, m) for m in METRICS},
        "counts": {"tp": report.tp, "fp": report.fp, "fn": report.fn, "tn": report.tn},
        "epochs_run": result.epochs_run,
        "loss_trace": [float(x) for x in result.loss_trace],
        "student_spread": _student_spread(ds.students[te], preds),
    }


def _fold_job(args):
    try:
        return run_fold(*args)
    except Exception as exc:
        raise type(exc)(f"fold {args[2]}: {exc}") from exc


def crossval(ds: Dataset, name: str, kind: str, cfg: ExperimentConfig, tcfg=None, plan=None,
             out_dir=None, on_step=None) -> RunRecord:
    """k-fold run; ``on_step(model, step)`` is forwarded to training (serial runs only)."""
    tcfg = tcfg or cfg.train_config()
    plan = plan or make_folds(ds, cfg.folds, cfg.seed)
    t0 = time.perf_counter()
    ckpt = Path(out_dir) / "checkpoints" if (out_dir and cfg.checkpoints) else None
    jobs = [(ds, plan, f, kind, tcfg, ckpt, on_step) for f in range(plan.k)]
    if cfg.jobs > 1:
        if on_step is not None:
            raise ValueError("on_step hooks need jobs = 1")
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            folds = list(pool.map(_fold_job, jobs))
    else:
        folds = [_fold_job(j) for j in jobs]
    snap = cfg.snapshot()
    snap.update(tcfg.to_dict())
    snap["model"] = kind
    rec = RunRecord(model=kind, dataset=name, config=snap,
                    config_hash=hashlib.sha256(json.dumps(
                        {k: v for k, v in snap.items() if k not in ("out", "jobs")},
                        sort_keys=True).encode()).hexdigest()[:16],
                    seed=cfg.seed, k=plan.k, fold_hash=plan.digest(), folds=folds,
                    wall_clock_s=time.perf_counter() - t0).aggregate()
    if out_dir:
        rec.write(Path(out_dir) / "run.json")
    return rec


def _write_metric_csv(path, axis_name, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([axis_name, *METRICS, *(f"{m}_sd" for m in METRICS)])
        for value, rec in rows:
            w.writerow([value, *(repr(rec.mean[m]) for m in METRICS),
                        *(repr(rec.sd[m]) for m in METRICS)])
    return path


# -- commands ---------------------------------------------------------------

def cmd_crossval(cfg: ExperimentConfig) -> RunRecord:
    ds, name = build_dataset(cfg)
    return crossval(ds, name, cfg.model, cfg, out_dir=cfg.out)


def cmd_ablate(cfg: ExperimentConfig):
    """One cross-validation per nested variant (1..4) on shared folds; writes fig3.csv."""
    ds, name = build_dataset(cfg)
    plan = make_folds(ds, cfg.folds, cfg.seed)
    base = cfg.train_config()
    records = {}
    for v in (1, 2, 3, 4):
        tcfg = TrainConfig(**{**base.to_dict(), "variant": v})
        records[v] = crossval(ds, name, "egnn", cfg, tcfg=tcfg, plan=plan,
                              out_dir=Path(cfg.out) / f"variant{v}")
    labels = {1: "EGNN-CD-1", 2: "EGNN-CD-2", 3: "EGNN-CD-3", 4: "EGNN-CD"}
    _write_metric_csv(Path(cfg.out) / "fig3.csv", "variant",
                      [(labels[v], r) for v, r in records.items()])
    return records


SWEEP_AXES = {"dim": ("dim", "fig4.csv"), "d": ("dim", "fig4.csv"),
              "layers": ("layers", "fig5.csv"), "l": ("layers", "fig5.csv")}


def cmd_sweep(cfg: ExperimentConfig, axis: str, values):
    """Cross-validate once per value of ``dim`` or ``layers`` on shared folds."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; use dim or layers")
    values = [int(v) for v in values]
    if not values:
        raise ValueError("sweep needs at least one value")
    field_name, fig = SWEEP_AXES[axis]
    ds, name = build_dataset(cfg)
    plan = make_folds(ds, cfg.folds, cfg.seed)
    base = cfg.train_config()
    records = {}
    for val in values:
        tcfg = TrainConfig(**{**base.to_dict(), field_name: val})
        records[val] = crossval(ds, name, "egnn", cfg, tcfg=tcfg, plan=plan,
                                out_dir=Path(cfg.out) / f"{field_name}{val}")
    _write_metric_csv(Path(cfg.out) / fig, field_name, list(records.items()))
    return records


def compare_records(records: dict, epsilon=1e-4) -> ComparisonTable:
    """Comparison table from saved run records (first model is the reference)."""
    recs = list(records.values())
    if len(recs) < 2:
        raise ValueError("comparison needs at least two models")
    hashes = {r.fold_hash for r in recs}
    if len(hashes) != 1:
        raise ValueError(f"models were evaluated on different folds: {sorted(hashes)}")
    datasets = sorted({r.dataset for r in recs})
    rows = [(d, m) for d in datasets for m in METRICS]
    values = np.full((len(rows), len(recs)), np.nan)
    for j, r in enumerate(recs):
        for i, (d, m) in enumerate(rows):
            if r.dataset == d:
                values[i, j] = r.mean[m]
    return ComparisonTable(rows=rows, models=list(records), values=values, epsilon=epsilon).compute()


def cmd_compare(cfg: ExperimentConfig, models=None, table_csv=None):
    if table_csv is not None:
        table = ComparisonTable.from_csv(table_csv).compute()
        table.write(cfg.out)
        return table
    models = models or cfg.model_list()
    if len(models) < 2:
        raise ValueError("compare needs at least two models")
    ds, name = build_dataset(cfg)
    plan = make_folds(ds, cfg.folds, cfg.seed)
    records = {m: crossval(ds, name, m, cfg, plan=plan, out_dir=Path(cfg.out) / m) for m in models}
    table = compare_records(records)
    table.write(cfg.out)
    return table


def cmd_stats(logs, qmatrix, name=None):
    ds = load_dataset(logs, qmatrix)
    st = dataset_stats(ds)
    return st, "\n".join([st.table_header(), st.table_row(name or Path(logs).stem)])


def cmd_gen(spec: SynthSpec, out_dir):
    from .synth import write_ground_truth
    return write_ground_truth(generate(spec), out_dir)


def load_egnn_checkpoint(path, ds: Dataset | None = None) -> EgnnCD:
    """Rebuild an EGNN-CD model from a checkpoint, checking dataset compatibility."""
    from .nn import load_checkpoint
    params, _, seed, meta = load_checkpoint(path)
    if meta.get("kind") != "egnn":
        raise ValueError(f"checkpoint holds a {meta.get('kind')!r} model, not egnn")
    if ds is not None and meta.get("id_map_hash") != id_map_hash(ds):
        raise ValueError("checkpoint was trained on a dataset with a different id map")
    model = EgnnCD(meta["in_dims"], dim=meta["dim"], layers=meta["layers"],
                   variant=meta["variant"], gate_mode=meta["gate_mode"],
                   dropout_rate=meta["dropout_rate"], cap_hidden=meta["cap_hidden"],
                   seed=meta["seed"], dtype=meta.get("dtype", "float64"))
    for k, p in params.items():
        model.params[k].value[...] = p.value
    return model

