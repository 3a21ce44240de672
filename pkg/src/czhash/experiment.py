"""Config-driven experiment runs: scenarios, code lengths, repeats, sweeps, ablations.

A config file is flat text with one ``key = value`` per line (``#`` starts a
comment).  Keys name fields of :class:`SyntheticConfig`, :class:`TrainerConfig`
or the experiment itself; ``seed`` and ``bits`` are experiment-level.  Every
job is a pure function of the resolved config, so reruns reproduce the output
files byte for byte.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .dataset import (
    SCENARIOS,
    CrossModalDataset,
    ScenarioSplit,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    make_split,
)
from .encoder import EncoderParams, load_params, save_params
from .errors import ConfigError, DatasetError
from .evaluation import EvalReport, evaluate_codes
from .retrieval import encode
from .similarity import build_all
from .trainer import ABLATION_SIMILARITY, ABLATIONS, TrainerConfig, TrainState, train

DIRECTIONS = ("img_to_txt", "txt_to_img")
RELEVANCE_MODES = ("union", "intersection")
SWEEP_PARAMS = ("alpha", "beta", "bits", "mask_fraction", "seen_fraction")
THREADS_ENV = "CZHASH_THREADS"


@dataclass(frozen=True)
class ExperimentConfig:
    data: SyntheticConfig = field(default_factory=SyntheticConfig)
    data_path: str | None = None
    scenarios: tuple[str, ...] = ("A",)
    trainer: TrainerConfig = field(default_factory=lambda: TrainerConfig(iterations=200))
    bits: tuple[int, ...] = (16, 32, 64, 128)
    repeats: int = 10
    seen_fraction: float = 0.8
    mask_fraction: float = 0.7
    test_fraction: float = 0.2
    relevance: str = "union"
    map_at_k: int | None = None
    output: str = "results"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))
        if not self.scenarios or any(s not in SCENARIOS for s in self.scenarios):
            raise ConfigError(f"scenarios must be drawn from {SCENARIOS}")
        if not self.bits or min(self.bits) < 1:
            raise ConfigError("bits must be a non-empty list of positive integers")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.relevance not in RELEVANCE_MODES:
            raise ConfigError(f"relevance must be one of {RELEVANCE_MODES}")
        if self.map_at_k is not None and self.map_at_k < 1:
            raise ConfigError("map_at_k must be positive")

    def with_values(self, **values) -> "ExperimentConfig":
        """Copy with flat keys replaced (same keys as the config file)."""
        top, data, trainer = {}, {}, {}
        for key, value in values.items():
            owner = _owner(key)
            {"top": top, "data": data, "trainer": trainer}[owner][key] = value
        return replace(
            self,
            data=replace(self.data, **data),
            trainer=replace(self.trainer, **trainer),
            **top,
        )

    def flat(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name not in ("data", "trainer"):
                out[f.name] = getattr(self, f.name)
        for f in fields(SyntheticConfig):
            if f.name != "seed":
                out[f.name] = getattr(self.data, f.name)
        for f in fields(TrainerConfig):
            if f.name not in ("seed", "bits"):
                out[f.name] = getattr(self.trainer, f.name)
        return out


# ---------------------------------------------------------------------------
# flat config files

_TOP_KEYS = {f.name for f in fields(ExperimentConfig)} - {"data", "trainer"}
_DATA_KEYS = {f.name for f in fields(SyntheticConfig)} - {"seed"}
_TRAINER_KEYS = {f.name for f in fields(TrainerConfig)} - {"seed", "bits"}
_LIST_KEYS = {"scenarios", "bits", "hidden_dims"}
_OPTIONAL_INT = {"map_at_k", "steps_per_epoch"}


def _owner(key: str) -> str:
    if key in _TOP_KEYS:
        return "top"
    if key in _DATA_KEYS:
        return "data"
    if key in _TRAINER_KEYS:
        return "trainer"
    raise ConfigError(f"unknown config key {key!r}")


def _field_type(key: str):
    owner = {"top": ExperimentConfig, "data": SyntheticConfig, "trainer": TrainerConfig}[
        _owner(key)
    ]
    default = {f.name: f for f in fields(owner)}[key]
    if default.default is not dataclasses.MISSING:
        return type(default.default)
    return type(default.default_factory())


def parse_value(key: str, text: str):
    """Convert the string form of ``key`` to its typed value."""
    text = text.strip()
    if key in _LIST_KEYS:
        items = [t.strip() for t in text.split(",") if t.strip()]
        return tuple(items) if key == "scenarios" else tuple(int(t) for t in items)
    if key in _OPTIONAL_INT or key == "data_path":
        if text.lower() in ("", "none"):
            return None
        return text if key == "data_path" else int(text)
    kind = _field_type(key)
    try:
        if kind is bool:
            if text.lower() not in ("true", "false", "1", "0"):
                raise ValueError(text)
            return text.lower() in ("true", "1")
        return kind(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        _owner(key)
        values[key] = parse_value(key, value)
    return values


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then the file (if any), then ``overrides``; later wins."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(), str(path)))
    values.update(overrides or {})
    return ExperimentConfig().with_values(**values)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = [f"# czhash {__version__}"]
    lines += [f"{k} = {format_value(v)}" for k, v in sorted(cfg.flat().items())]
    return "\n".join(lines) + "\n"


def write_provenance(cfg: ExperimentConfig, directory) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "config.resolved", dump_config(cfg))
    atomic_write(out / "VERSION", f"{__version__}\n")


def atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# seeds and data


def job_seeds(seed: int, repeat: int) -> tuple[int, int]:
    """(split seed, trainer seed) for one repeat; independent of bits and sweeps."""
    split_ss, train_ss = np.random.SeedSequence([seed, repeat]).spawn(2)
    return int(split_ss.generate_state(1)[0]), int(train_ss.generate_state(1)[0])


def load_data(cfg: ExperimentConfig) -> CrossModalDataset:
    if cfg.data_path is not None:
        return load_dataset(cfg.data_path)
    return generate_synthetic(replace(cfg.data, seed=cfg.seed))


def split_for(ds, cfg: ExperimentConfig, scenario: str, repeat: int) -> ScenarioSplit:
    split_seed, _ = job_seeds(cfg.seed, repeat)
    return make_split(
        ds,
        scenario,
        seen_fraction=cfg.seen_fraction,
        mask_fraction=cfg.mask_fraction,
        seed=split_seed,
        test_fraction=cfg.test_fraction,
    )


# ---------------------------------------------------------------------------
# training and evaluation of one model


@dataclass
class TrainedModel:
    params1: EncoderParams
    params2: EncoderParams
    state: TrainState
    split: ScenarioSplit
    trainer: TrainerConfig


def fit(ds, split, trainer: TrainerConfig, callback=None) -> TrainedModel:
    sims = build_all(ds, split, ABLATION_SIMILARITY[trainer.ablation])
    p1, p2, state = train(ds, split, sims, trainer, callback)
    return TrainedModel(p1, p2, state, split, trainer)


def relevance_labels(ds: CrossModalDataset, mode: str = "union") -> list[frozenset[str]]:
    """Ground-truth label sets used to judge relevance.

    ``union`` pools both modalities' labels; ``intersection`` keeps only
    categories present in both label spaces.
    """
    truth = ds.true_labels()
    if mode == "union":
        return truth
    if mode == "intersection":
        common = set(ds.modality1.label_universe) & set(ds.modality2.label_universe)
        return [s & common for s in truth]
    raise ConfigError(f"relevance must be one of {RELEVANCE_MODES}")


def hash_all(ds, model: TrainedModel) -> tuple[np.ndarray, np.ndarray]:
    a = ds.attributes
    ridge = model.trainer.ridge
    b1 = encode(model.params1, a, model.state.hashing_projection(1), ds.modality1.features, ridge)
    b2 = encode(model.params2, a, model.state.hashing_projection(2), ds.modality2.features, ridge)
    return b1, b2


def evaluate_model(
    ds, model: TrainedModel, relevance: str = "union", top_k: int | None = None
) -> list[EvalReport]:
    """Both directions: test rows of one modality query every row of the other."""
    b1, b2 = hash_all(ds, model)
    truth = relevance_labels(ds, relevance)
    test = list(model.split.test)
    queries = [truth[i] for i in test]
    reports = []
    for direction, q, db in (("img_to_txt", b1, b2), ("txt_to_img", b2, b1)):
        reports.append(
            evaluate_codes(
                q[test], db, queries, truth,
                direction=direction, bits=model.trainer.bits,
                scenario=model.split.scenario, top_k=top_k,
            )
        )
    return reports


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(directory, model: TrainedModel, ds: CrossModalDataset) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    save_params(out / "encoder1.json", model.params1)
    save_params(out / "encoder2.json", model.params2)
    st = model.state
    arrays = dict(
        f1=st.f1, f2=st.f2, c1=st.c1, c2=st.c2, w1=st.w1, w2=st.w2, codes=st.codes,
        attributes=ds.attributes.vectors,
    )
    if st.hash_w1 is not None:
        arrays.update(hash_w1=st.hash_w1, hash_w2=st.hash_w2)
    with open(out / "state.npz", "wb") as fh:
        np.savez(fh, **arrays)
    trainer = dataclasses.asdict(model.trainer)
    trainer["hidden_dims"] = list(trainer["hidden_dims"])
    meta = {"version": __version__, "trainer": trainer, "iteration": st.iteration,
            "split": model.split.to_json()}
    atomic_write(out / "checkpoint.json", json.dumps(meta, indent=1) + "\n")
    return out


def load_checkpoint(directory) -> TrainedModel:
    root = Path(directory)
    if not (root / "checkpoint.json").is_file():
        raise DatasetError(f"{root} is not a checkpoint directory (no checkpoint.json)")
    meta = json.loads((root / "checkpoint.json").read_text())
    trainer = TrainerConfig(**meta["trainer"])
    with np.load(root / "state.npz") as z:
        arr = {k: z[k] for k in z.files}
    state = TrainState(
        arr["f1"], arr["f2"], arr["c1"], arr["c2"], arr["w1"], arr["w2"], arr["codes"],
        iteration=int(meta["iteration"]),
        hash_w1=arr.get("hash_w1"), hash_w2=arr.get("hash_w2"),
    )
    return TrainedModel(
        load_params(root / "encoder1.json"),
        load_params(root / "encoder2.json"),
        state,
        ScenarioSplit.from_json(meta["split"]),
        trainer,
    )


# ---------------------------------------------------------------------------
# jobs


@dataclass(frozen=True)
class Job:
    scenario: str
    bits: int
    repeat: int
    tag: tuple = ()  # (name, value) pairs identifying a sweep or ablation cell


def _job_name(job: Job) -> str:
    tag = "".join(f"{k}-{v}_" for k, v in job.tag)
    return f"{tag}{job.scenario}_b{job.bits}_r{job.repeat}"


def run_job(cfg: ExperimentConfig, job: Job, ds=None, log_dir=None) -> list[dict]:
    ds = load_data(cfg) if ds is None else ds
    split = split_for(ds, cfg, job.scenario, job.repeat)
    _, train_seed = job_seeds(cfg.seed, job.repeat)
    trainer = replace(cfg.trainer, bits=job.bits, seed=train_seed)
    log = []
    model = fit(ds, split, trainer, lambda epoch, loss: log.append({"epoch": epoch, **loss.as_dict()}))
    rows = []
    for rep in evaluate_model(ds, model, cfg.relevance, cfg.map_at_k):
        row = dict(job.tag)
        row.update(scenario=job.scenario, direction=rep.direction, bits=job.bits,
                   repeat=job.repeat, map=rep.map)
        row.update({f"p@{r}": v for r, v in rep.precision_at.items()})
        rows.append(row)
    if log_dir is not None:
        text = "".join(json.dumps(entry) + "\n" for entry in log)
        atomic_write(Path(log_dir) / f"{_job_name(job)}.jsonl", text)
    return rows


def _run_job_star(args):
    return run_job(*args)


def thread_cap() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1")
    return value


def run_jobs(
    configs: Sequence[tuple[ExperimentConfig, Job]], log_dir=None, workers: int | None = None
) -> list[dict]:
    """Run jobs (possibly in parallel); rows come back in job order."""
    workers = thread_cap() if workers is None else workers
    if log_dir is not None:
        Path(log_dir).mkdir(parents=True, exist_ok=True)
    if workers <= 1 or len(configs) <= 1:
        cache: dict = {}
        out = []
        for cfg, job in configs:
            key = (cfg.data_path, cfg.data, cfg.seed)
            if key not in cache:
                cache[key] = load_data(cfg)
            out.append(run_job(cfg, job, cache[key], log_dir))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_run_job_star, [(c, j, None, log_dir) for c, j in configs]))
    return [row for rows in out for row in rows]


# ---------------------------------------------------------------------------
# tables


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def rows_to_csv(rows: list[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def aggregate(rows: list[dict], keys: Sequence[str]) -> list[dict]:
    """Mean and standard deviation of MAP over repeats, grouped by ``keys``."""
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row["map"])
    out = []
    for key, maps in groups.items():
        entry = dict(zip(keys, key))
        entry.update(map=float(np.mean(maps)), std=float(np.std(maps)), runs=len(maps))
        out.append(entry)
    return out


def _write_tables(out: Path, rows, keys, name: str) -> list[dict]:
    run_cols = [*keys, "repeat", "map", *sorted(k for k in rows[0] if k.startswith("p@"))]
    summary = aggregate(rows, keys)
    atomic_write(out / f"{name}.csv", rows_to_csv(summary, [*keys, "map", "std", "runs"]))
    atomic_write(out / f"{name}_runs.csv", rows_to_csv(rows, run_cols))
    return summary


def _grid(cfg: ExperimentConfig, tag: tuple = ()) -> list[tuple[ExperimentConfig, Job]]:
    return [
        (cfg, Job(s, b, r, tag))
        for s in cfg.scenarios
        for b in cfg.bits
        for r in range(cfg.repeats)
    ]


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> list[dict]:
    """Train and evaluate every scenario x bits x repeat; write ``results.csv``.

    ``results.csv`` has one row per (scenario, direction, bits) with the mean
    MAP over repeats; ``results_runs.csv`` keeps the individual runs.
    """
    out = Path(cfg.output)
    write_provenance(cfg, out)
    rows = run_jobs(_grid(cfg), out / "logs", workers)
    return _write_tables(out, rows, ("scenario", "direction", "bits"), "results")


def sweep(
    cfg: ExperimentConfig, param: str, values: Sequence, workers: int | None = None
) -> list[dict]:
    """One evaluation row per value; every value shares the same seeds."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"cannot sweep {param!r}; choose from {SWEEP_PARAMS}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    out = Path(cfg.output)
    write_provenance(cfg, out)
    jobs = []
    for value in values:
        value = parse_value(param, str(value)) if isinstance(value, str) else value
        if param == "bits":
            value = value[0] if isinstance(value, tuple) else int(value)
            cell = cfg.with_values(bits=(value,))
        else:
            cell = cfg.with_values(**{param: value})
        jobs += _grid(cell, ((param, value),))
    rows = run_jobs(jobs, out / "logs", workers)
    for row in rows:
        row["param"] = param
        row["value"] = row[param] if param == "bits" else row.pop(param)
    return _write_tables(out, rows, ("param", "value", "scenario", "direction", "bits"), "sweep")


def ablate(
    cfg: ExperimentConfig, variants: Sequence[str] = ABLATIONS, workers: int | None = None
) -> list[dict]:
    """Full model against its ablations on identical splits and seeds."""
    for v in variants:
        if v not in ABLATIONS:
            raise ConfigError(f"unknown ablation {v!r}; choose from {ABLATIONS}")
    out = Path(cfg.output)
    write_provenance(cfg, out)
    jobs = []
    for v in variants:
        jobs += _grid(cfg.with_values(ablation=v), (("ablation", v),))
    rows = run_jobs(jobs, out / "logs", workers)
    return _write_tables(out, rows, ("ablation", "scenario", "direction", "bits"), "ablation")

