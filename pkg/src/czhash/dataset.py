"""Paired two-modality datasets, scenario splits and the on-disk format.

A dataset is a set of ``n`` paired instances (e.g. image/text pairs).  Each
modality carries its own feature matrix and its own label sets, drawn from a
per-modality label universe.  Category attribute vectors are indexed by the
union of both universes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DatasetError, ParseError, ShapeError, SplitError

FORMAT_HEADER = "czhash-dataset v1"
SCENARIOS = ("A", "B", "C", "D")

_FILES = {
    "m1_features": "m1.features.csv",
    "m2_features": "m2.features.csv",
    "m1_labels": "m1.labels.txt",
    "m2_labels": "m2.labels.txt",
    "attributes": "attributes.csv",
}


def ceil_fraction(fraction: float, total: int) -> int:
    """``ceil(fraction * total)`` without float round-up noise (0.7 * 10 -> 7)."""
    return int(math.ceil(round(fraction * total, 9)))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ModalityData:
    """Features and label sets of one modality.

    An empty label set marks the instance as unlabeled in this modality.
    """

    features: np.ndarray
    label_sets: tuple[frozenset[str], ...]
    label_universe: tuple[str, ...]

    def __post_init__(self):
        feats = _readonly(self.features)
        if feats.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {feats.shape}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "label_sets", tuple(frozenset(s) for s in self.label_sets))
        object.__setattr__(self, "label_universe", tuple(self.label_universe))
        if feats.shape[0] != len(self.label_sets):
            raise ShapeError(
                f"{feats.shape[0]} feature rows but {len(self.label_sets)} label sets"
            )
        if len(set(self.label_universe)) != len(self.label_universe):
            raise DatasetError("label universe contains duplicates")
        universe = set(self.label_universe)
        for i, labels in enumerate(self.label_sets):
            unknown = labels - universe
            if unknown:
                raise DatasetError(
                    f"instance {i} carries labels outside the universe: {sorted(unknown)}"
                )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def labeled_mask(self) -> np.ndarray:
        return np.array([bool(s) for s in self.label_sets], dtype=bool)

    def __eq__(self, other):
        if not isinstance(other, ModalityData):
            return NotImplemented
        return (
            np.array_equal(self.features, other.features)
            and self.label_sets == other.label_sets
            and self.label_universe == other.label_universe
        )


@dataclass(frozen=True, eq=False)
class AttributeMatrix:
    """Category attribute vectors, one row per category."""

    categories: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self):
        vecs = _readonly(self.vectors)
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "categories", tuple(self.categories))
        if vecs.ndim != 2 or vecs.shape[0] != len(self.categories):
            raise ShapeError(
                f"attribute matrix shape {vecs.shape} does not match "
                f"{len(self.categories)} categories"
            )
        if len(set(self.categories)) != len(self.categories):
            raise DatasetError("attribute categories contain duplicates")

    @property
    def c(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def index(self) -> dict[str, int]:
        return {cat: k for k, cat in enumerate(self.categories)}

    def __eq__(self, other):
        if not isinstance(other, AttributeMatrix):
            return NotImplemented
        return self.categories == other.categories and np.array_equal(
            self.vectors, other.vectors
        )


@dataclass(frozen=True, eq=False)
class CrossModalDataset:
    """Paired instances of two modalities plus the shared attribute matrix.

    Instances ``0..l-1`` are labeled in at least one modality and
    ``l..n-1`` are unlabeled in both.
    """

    modality1: ModalityData
    modality2: ModalityData
    attributes: AttributeMatrix
    l: int = field(init=False)

    def __post_init__(self):
        m1, m2 = self.modality1, self.modality2
        if m1.n != m2.n:
            raise ShapeError(f"modalities are not paired: {m1.n} vs {m2.n} rows")
        union = set(m1.label_universe) | set(m2.label_universe)
        if set(self.attributes.categories) != union:
            raise DatasetError(
                "attribute categories must equal the union of both label universes"
            )
        labeled = m1.labeled_mask() | m2.labeled_mask()
        l = int(labeled.sum())
        if not labeled[:l].all():
            raise DatasetError(
                "labeled instances must precede unlabeled ones (rows 0..l-1 labeled)"
            )
        object.__setattr__(self, "l", l)

    @property
    def n(self) -> int:
        return self.modality1.n

    @property
    def u(self) -> int:
        return self.n - self.l

    def modality(self, v: int) -> ModalityData:
        if v == 1:
            return self.modality1
        if v == 2:
            return self.modality2
        raise ValueError(f"modality must be 1 or 2, got {v}")

    def true_labels(self) -> list[frozenset[str]]:
        """Union of both modalities' labels for each instance."""
        return [a | b for a, b in zip(self.modality1.label_sets, self.modality2.label_sets)]

    def __eq__(self, other):
        if not isinstance(other, CrossModalDataset):
            return NotImplemented
        return (
            self.modality1 == other.modality1
            and self.modality2 == other.modality2
            and self.attributes == other.attributes
        )


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticConfig:
    n: int = 1000
    c: int = 10
    d: int = 16
    d1: int = 64
    d2: int = 32
    labels_per_instance: int = 1
    cluster_noise: float = 0.3
    label_space_overlap: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n", "c", "d", "d1", "d2", "labels_per_instance"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.cluster_noise < 0:
            raise ConfigError("cluster_noise must be non-negative")
        if not 0.0 <= self.label_space_overlap <= 1.0:
            raise ConfigError("label_space_overlap must lie in [0, 1]")
        if self.labels_per_instance > self.c:
            raise ConfigError(
                f"labels_per_instance={self.labels_per_instance} exceeds c={self.c}"
            )


_SPREAD = 2.0


def category_names(c: int) -> list[str]:
    width = len(str(c - 1))
    return [f"c{k:0{width}d}" for k in range(c)]


def generate_synthetic(cfg: SyntheticConfig) -> CrossModalDataset:
    """Draw a clustered two-modality dataset.

    Every category is a latent centroid in ``R^d`` (also used as its
    attribute vector).  An instance picks ``labels_per_instance`` categories,
    sits at the mean of their centroids plus isotropic noise, and each
    modality observes an independent random linear projection of that
    latent point with its own additive noise.
    """
    rng = np.random.default_rng(cfg.seed)
    names = category_names(cfg.c)
    # unit-variance latent coordinates scaled so inter-centroid distances
    # sit around 2 * sqrt(2): Euclidean similarity stays informative
    centroids = _SPREAD * rng.normal(size=(cfg.c, cfg.d)) / np.sqrt(cfg.d)

    choice = np.argsort(rng.random((cfg.n, cfg.c)), axis=1)[:, : cfg.labels_per_instance]
    choice.sort(axis=1)
    latent = centroids[choice].mean(axis=1)
    latent = latent + _SPREAD * cfg.cluster_noise * rng.normal(size=latent.shape) / np.sqrt(cfg.d)

    feats = []
    for dv in (cfg.d1, cfg.d2):
        proj = rng.normal(size=(cfg.d, dv)) / np.sqrt(dv)
        noise = _SPREAD * cfg.cluster_noise * rng.normal(size=(cfg.n, dv)) / np.sqrt(dv)
        feats.append(latent @ proj + noise)
    x1, x2 = feats

    # shared categories first, remaining ones alternate between modalities
    n_shared = ceil_fraction(cfg.label_space_overlap, cfg.c)
    order = rng.permutation(cfg.c)
    only1, only2 = set(), set()
    for rank, k in enumerate(order[n_shared:]):
        (only1 if rank % 2 == 0 else only2).add(int(k))
    in1 = [k for k in range(cfg.c) if k not in only2]
    in2 = [k for k in range(cfg.c) if k not in only1]
    set1, set2 = set(in1), set(in2)

    labels1 = [frozenset(names[k] for k in row if k in set1) for row in choice]
    labels2 = [frozenset(names[k] for k in row if k in set2) for row in choice]

    return CrossModalDataset(
        ModalityData(x1, labels1, [names[k] for k in in1]),
        ModalityData(x2, labels2, [names[k] for k in in2]),
        AttributeMatrix(names, centroids),
    )


# ---------------------------------------------------------------------------
# scenario splits


@dataclass(frozen=True)
class ScenarioSplit:
    scenario: str
    train: tuple[int, ...]
    test: tuple[int, ...]
    seen_m1: frozenset[str]
    seen_m2: frozenset[str]
    masked: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise SplitError(f"unknown scenario {self.scenario!r}")
        object.__setattr__(self, "train", tuple(int(i) for i in self.train))
        object.__setattr__(self, "test", tuple(int(i) for i in self.test))
        object.__setattr__(self, "masked", tuple(int(i) for i in self.masked))
        object.__setattr__(self, "seen_m1", frozenset(self.seen_m1))
        object.__setattr__(self, "seen_m2", frozenset(self.seen_m2))
        if set(self.train) & set(self.test):
            raise SplitError("train and test indices overlap")
        if not set(self.masked) <= set(self.train):
            raise SplitError("masked indices must be training indices")

    def seen(self, v: int) -> frozenset[str]:
        return self.seen_m1 if v == 1 else self.seen_m2

    def visible_labels(self, ds: CrossModalDataset, v: int) -> list[frozenset[str]]:
        """Label sets of the training instances as the learner sees them."""
        masked = set(self.masked)
        seen = self.seen(v)
        sets = ds.modality(v).label_sets
        return [frozenset() if i in masked else sets[i] & seen for i in self.train]

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "train": list(self.train),
            "test": list(self.test),
            "masked": list(self.masked),
            "seen_m1": sorted(self.seen_m1),
            "seen_m2": sorted(self.seen_m2),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ScenarioSplit":
        try:
            return cls(
                scenario=data["scenario"],
                train=data["train"],
                test=data["test"],
                masked=data["masked"],
                seen_m1=data["seen_m1"],
                seen_m2=data["seen_m2"],
                seed=data["seed"],
            )
        except KeyError as exc:
            raise DatasetError(f"split file is missing key {exc}") from None


def make_split(
    ds: CrossModalDataset,
    scenario: str,
    seen_fraction: float = 0.8,
    mask_fraction: float = 0.7,
    seed: int = 0,
    test_fraction: float = 0.2,
) -> ScenarioSplit:
    """Build the train/test partition for one of the four scenarios.

    * ``A``: random instance split, ``ceil(test_fraction * n)`` test rows.
    * ``B``: a random ``seen_fraction`` of categories is seen; instances
      carrying any unseen category form the test set.
    * ``C``: ``B`` plus hiding all labels of ``ceil(mask_fraction * |train|)``
      training instances.
    * ``D``: ``C`` plus a separate per-modality draw of which remaining
      training categories each modality observes.

    Every step draws from its own seed stream, so B, C and D built with the
    same seed share their test set and C and D share their mask.
    """
    scenario = scenario.upper()
    if scenario not in SCENARIOS:
        raise SplitError(f"unknown scenario {scenario!r}")
    if not 0.0 < seen_fraction <= 1.0:
        raise SplitError("seen_fraction must lie in (0, 1]")
    if not 0.0 <= mask_fraction < 1.0:
        raise SplitError("mask_fraction must lie in [0, 1)")
    rng_inst, rng_cat, rng_mask, rng_modal = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)
    )
    n = ds.n
    categories = ds.attributes.categories

    if scenario == "A":
        perm = rng_inst.permutation(n)
        n_test = ceil_fraction(test_fraction, n)
        test = np.sort(perm[:n_test])
        train = np.sort(perm[n_test:])
        everything = frozenset(categories)
        return ScenarioSplit("A", train, test, everything, everything, (), seed)

    n_seen = ceil_fraction(seen_fraction, len(categories))
    if n_seen >= len(categories):
        raise SplitError("seen_fraction leaves no unseen categories")
    order = rng_cat.permutation(len(categories))
    seen = frozenset(categories[k] for k in order[:n_seen])
    unseen = frozenset(categories) - seen

    truth = ds.true_labels()
    is_test = np.array([bool(labels & unseen) for labels in truth])
    test = np.flatnonzero(is_test)
    train = np.flatnonzero(~is_test)
    if test.size == 0:
        raise SplitError("no instance carries an unseen category")
    if train.size == 0:
        raise SplitError("every instance carries an unseen category")

    masked: np.ndarray = np.array([], dtype=int)
    if scenario in ("C", "D"):
        n_mask = ceil_fraction(mask_fraction, train.size)
        masked = np.sort(rng_mask.choice(train, size=n_mask, replace=False))

    seen1 = seen2 = seen
    if scenario == "D":
        drawn = []
        for v in (1, 2):
            available = [k for k in ds.modality(v).label_universe if k in seen]
            k_v = ceil_fraction(seen_fraction, len(available))
            pick = rng_modal.permutation(len(available))[:k_v]
            drawn.append(frozenset(available[j] for j in pick))
        seen1, seen2 = drawn
    return ScenarioSplit(scenario, train, test, seen1, seen2, masked, seed)


def save_split(path, split: ScenarioSplit) -> None:
    Path(path).write_text(json.dumps(split.to_json(), indent=1) + "\n")


def load_split(path) -> ScenarioSplit:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path, exc.lineno) from None
    return ScenarioSplit.from_json(data)


# ---------------------------------------------------------------------------
# on-disk format


def _write_lines(path: Path, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(FORMAT_HEADER + "\n")
        for line in lines:
            fh.write(line + "\n")


def _read_body(path: Path) -> list[str]:
    if not path.exists():
        raise DatasetError(f"missing dataset file {path}")
    lines = path.read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != FORMAT_HEADER:
        raise ParseError(f"expected header line {FORMAT_HEADER!r}", path, 1)
    return lines[1:]


def _fmt(x: float) -> str:
    return repr(float(x))


def _check_label_id(label: str) -> None:
    if not label or any(ch in label for ch in ";,\n\r") or label != label.strip():
        raise DatasetError(f"label id {label!r} cannot be written to the text format")


def _parse_floats(path: Path, lineno: int, fields: Sequence[str]) -> list[float]:
    out = []
    for col, tok in enumerate(fields, start=1):
        try:
            out.append(float(tok))
        except ValueError:
            raise ParseError(f"column {col}: {tok!r} is not a number", path, lineno) from None
    return out


def _read_matrix(path: Path) -> np.ndarray:
    rows = []
    width = None
    for lineno, line in enumerate(_read_body(path), start=2):
        values = _parse_floats(path, lineno, line.split(","))
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ParseError(f"expected {width} columns, found {len(values)}", path, lineno)
        rows.append(values)
    if not rows:
        raise ParseError("no feature rows", path)
    return np.array(rows, dtype=np.float64)


def _read_labels(path: Path) -> tuple[list[frozenset[str]], list[str]]:
    body = _read_body(path)
    if not body or not body[0].startswith("universe:"):
        raise ParseError("second line must be 'universe: id;id;...'", path, 2)
    universe = [t for t in body[0][len("universe:"):].strip().split(";") if t]
    sets = []
    for lineno, line in enumerate(body[1:], start=3):
        tokens = [t.strip() for t in line.split(";")] if line.strip() else []
        if any(not t for t in tokens):
            raise ParseError("empty category id", path, lineno)
        sets.append(frozenset(tokens))
    return sets, universe


def save_dataset(ds: CrossModalDataset, directory) -> Path:
    """Write ``ds`` in the text directory format.  Floats round-trip exactly."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for v in (1, 2):
        m = ds.modality(v)
        _write_lines(
            out / _FILES[f"m{v}_features"],
            (",".join(_fmt(x) for x in row) for row in m.features),
        )
        for label in m.label_universe:
            _check_label_id(label)
        lines = ["universe: " + ";".join(m.label_universe)]
        lines += [";".join(sorted(s)) for s in m.label_sets]
        _write_lines(out / _FILES[f"m{v}_labels"], lines)
    attrs = ds.attributes
    _write_lines(
        out / _FILES["attributes"],
        (
            ",".join([cat] + [_fmt(x) for x in row])
            for cat, row in zip(attrs.categories, attrs.vectors)
        ),
    )
    return out


def load_dataset(directory) -> CrossModalDataset:
    """Read a dataset directory written by :func:`save_dataset`."""
    root = Path(directory)
    if not root.is_dir():
        raise DatasetError(f"{root} is not a dataset directory")
    modalities = []
    for v in (1, 2):
        feats = _read_matrix(root / _FILES[f"m{v}_features"])
        sets, universe = _read_labels(root / _FILES[f"m{v}_labels"])
        if len(sets) != feats.shape[0]:
            raise ShapeError(
                f"modality {v}: {feats.shape[0]} feature rows but {len(sets)} label lines"
            )
        modalities.append(ModalityData(feats, sets, universe))

    path = root / _FILES["attributes"]
    cats, vecs = [], []
    for lineno, line in enumerate(_read_body(path), start=2):
        fields = line.split(",")
        if len(fields) < 2:
            raise ParseError("expected a category id and at least one value", path, lineno)
        cats.append(fields[0].strip())
        vecs.append(_parse_floats(path, lineno, fields[1:]))
    if len({len(v) for v in vecs}) > 1:
        raise ParseError("attribute rows have differing lengths", path)
    return CrossModalDataset(modalities[0], modalities[1], AttributeMatrix(cats, vecs))
