import filecmp
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from czhash.dataset import (
    FORMAT_HEADER,
    AttributeMatrix,
    CrossModalDataset,
    ModalityData,
    ScenarioSplit,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    load_split,
    make_split,
    save_dataset,
    save_split,
)
from czhash.errors import ConfigError, DatasetError, ParseError, ShapeError, SplitError


@pytest.fixture(scope="module")
def small():
    return generate_synthetic(SyntheticConfig(n=200, c=10, seed=7))


def _write_fixture(root, labels1="a;b\na\n\n", universe1="a;b", extra_attr=""):
    root.mkdir()
    (root / "m1.features.csv").write_text(f"{FORMAT_HEADER}\n0.0,1.0\n2.0,3.0\n4.0,5.5\n")
    (root / "m2.features.csv").write_text(f"{FORMAT_HEADER}\n1.0\n2.0\n3.0\n")
    (root / "m1.labels.txt").write_text(f"{FORMAT_HEADER}\nuniverse: {universe1}\n{labels1}")
    (root / "m2.labels.txt").write_text(f"{FORMAT_HEADER}\nuniverse: a;b\nb\n\n\n")
    (root / "attributes.csv").write_text(f"{FORMAT_HEADER}\na,1.0,0.0\nb,0.0,1.0\n{extra_attr}")
    return root


# ---------------------------------------------------------------------------
# types


def test_three_instance_fixture_loads(tmp_path):
    ds = load_dataset(_write_fixture(tmp_path / "ds"))
    assert (ds.n, ds.l, ds.u) == (3, 2, 1)
    assert ds.modality1.label_sets[2] == frozenset()
    np.testing.assert_array_equal(ds.modality1.features[2], [4.0, 5.5])
    assert ds.true_labels()[0] == {"a", "b"}


def test_label_outside_universe_rejected(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(_write_fixture(tmp_path / "ds", labels1="a;z\na\n\n"))


def test_unlabeled_rows_must_come_last():
    feats = np.zeros((2, 1))
    with pytest.raises(DatasetError):
        CrossModalDataset(
            ModalityData(feats, [frozenset(), {"a"}], ["a"]),
            ModalityData(feats, [frozenset(), frozenset()], ["a"]),
            AttributeMatrix(["a"], [[1.0]]),
        )


def test_unpaired_modalities_rejected():
    with pytest.raises(ShapeError):
        CrossModalDataset(
            ModalityData(np.zeros((2, 1)), [{"a"}, {"a"}], ["a"]),
            ModalityData(np.zeros((3, 1)), [{"a"}] * 3, ["a"]),
            AttributeMatrix(["a"], [[1.0]]),
        )


def test_attribute_categories_must_cover_union():
    with pytest.raises(DatasetError):
        CrossModalDataset(
            ModalityData(np.zeros((1, 1)), [{"a"}], ["a"]),
            ModalityData(np.zeros((1, 1)), [{"b"}], ["b"]),
            AttributeMatrix(["a"], [[1.0]]),
        )


def test_features_are_read_only(small):
    with pytest.raises(ValueError):
        small.modality1.features[0, 0] = 1.0


# ---------------------------------------------------------------------------
# parsing errors


def test_bad_number_reports_line(tmp_path):
    root = _write_fixture(tmp_path / "ds")
    (root / "m1.features.csv").write_text(f"{FORMAT_HEADER}\n0.0,1.0\n2.0,oops\n4.0,5.5\n")
    with pytest.raises(ParseError, match=r"m1\.features\.csv:3"):
        load_dataset(root)


def test_ragged_rows_rejected(tmp_path):
    root = _write_fixture(tmp_path / "ds")
    (root / "m1.features.csv").write_text(f"{FORMAT_HEADER}\n0.0,1.0\n2.0\n4.0,5.5\n")
    with pytest.raises(ParseError):
        load_dataset(root)


def test_missing_header_rejected(tmp_path):
    root = _write_fixture(tmp_path / "ds")
    (root / "m2.features.csv").write_text("1.0\n2.0\n3.0\n")
    with pytest.raises(ParseError, match=":1"):
        load_dataset(root)


def test_row_count_mismatch_is_shape_error(tmp_path):
    root = _write_fixture(tmp_path / "ds")
    (root / "m1.labels.txt").write_text(f"{FORMAT_HEADER}\nuniverse: a;b\na\na\n")
    with pytest.raises(ShapeError):
        load_dataset(root)


def test_missing_directory(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "nowhere")


# ---------------------------------------------------------------------------
# synthetic generation


def test_generation_is_byte_identical(tmp_path):
    cfg = SyntheticConfig(n=200, c=10, seed=7)
    a = save_dataset(generate_synthetic(cfg), tmp_path / "a")
    b = save_dataset(generate_synthetic(cfg), tmp_path / "b")
    names = sorted(p.name for p in a.iterdir())
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert mismatch == [] and errors == [] and len(match) == 5


def test_round_trip_is_exact(tmp_path, small):
    loaded = load_dataset(save_dataset(small, tmp_path / "ds"))
    assert loaded == small
    np.testing.assert_array_equal(loaded.attributes.vectors, small.attributes.vectors)


def test_too_many_labels_per_instance():
    with pytest.raises(ConfigError):
        SyntheticConfig(c=3, labels_per_instance=4)


@pytest.mark.parametrize("c, shared", [(10, 5), (7, 4), (4, 2)])
def test_label_space_overlap_counts(c, shared):
    ds = generate_synthetic(SyntheticConfig(n=50, c=c, label_space_overlap=0.5, seed=1))
    u1 = set(ds.modality1.label_universe)
    u2 = set(ds.modality2.label_universe)
    assert len(u1 & u2) == shared == math.ceil(c / 2)
    assert u1 | u2 == set(ds.attributes.categories)


def test_noise_free_classes_collapse():
    ds = generate_synthetic(SyntheticConfig(n=60, c=4, cluster_noise=0.0, seed=3))
    truth = ds.true_labels()
    for v in (1, 2):
        x = ds.modality(v).features
        for i in range(ds.n):
            for j in range(i + 1, ds.n):
                same = bool(truth[i] & truth[j])
                assert np.array_equal(x[i], x[j]) == same


def test_attribute_shape_and_ids():
    ds = generate_synthetic(SyntheticConfig(n=40, c=5, d=6, seed=2))
    assert ds.attributes.vectors.shape == (5, 6)
    assert list(ds.attributes.categories) == ["c0", "c1", "c2", "c3", "c4"]


# ---------------------------------------------------------------------------
# splits


def test_scenario_a_test_size(small):
    split = make_split(small, "A", seed=4)
    assert len(split.test) == math.ceil(0.2 * small.n)
    assert split.seen_m1 == split.seen_m2 == set(small.attributes.categories)


def test_scenario_c_mask_count(small):
    split = make_split(small, "C", mask_fraction=0.7, seed=4)
    assert len(split.masked) == math.ceil(0.7 * len(split.train))
    assert set(split.masked) <= set(split.train)


def test_zero_shot_purity(small):
    for scenario in "BCD":
        split = make_split(small, scenario, seed=5)
        unseen = set(small.attributes.categories) - (split.seen_m1 | split.seen_m2)
        assert unseen
        for v in (1, 2):
            for labels in split.visible_labels(small, v):
                assert not labels & unseen
                assert labels <= split.seen(v)
        truth = small.true_labels()
        assert all(truth[i] & unseen for i in split.test)


def test_scenarios_share_streams(small):
    b, c, d = (make_split(small, s, seed=9) for s in "BCD")
    assert b.test == c.test == d.test
    assert c.masked == d.masked
    assert b.seen_m1 == b.seen_m2 == c.seen_m1
    assert d.seen_m1 <= c.seen_m1 and d.seen_m2 <= c.seen_m1


def test_scenario_d_draws_per_modality():
    ds = generate_synthetic(SyntheticConfig(n=300, c=20, label_space_overlap=0.5, seed=3))
    differ = 0
    for seed in range(5):
        split = make_split(ds, "D", seed=seed)
        assert split.seen_m1 <= set(ds.modality1.label_universe)
        assert split.seen_m2 <= set(ds.modality2.label_universe)
        differ += split.seen_m1 != split.seen_m2
    assert differ > 0


def test_everything_seen_is_an_error(small):
    with pytest.raises(SplitError):
        make_split(small, "B", seen_fraction=1.0)


def test_bad_fractions(small):
    with pytest.raises(SplitError):
        make_split(small, "C", mask_fraction=1.0)
    with pytest.raises(SplitError):
        make_split(small, "Z")


@settings(max_examples=30, deadline=None)
@given(scenario=st.sampled_from("ABCD"), seed=st.integers(0, 2**32 - 1))
def test_split_is_partition(small, scenario, seed):
    split = make_split(small, scenario, seed=seed)
    train, test = set(split.train), set(split.test)
    assert not train & test
    assert train | test == set(range(small.n))
    assert split == make_split(small, scenario, seed=seed)


def test_split_file_round_trip(tmp_path, small):
    split = make_split(small, "D", seed=11)
    path = tmp_path / "split.json"
    save_split(path, split)
    assert load_split(path) == split
    assert ScenarioSplit.from_json(split.to_json()) == split


def test_split_file_missing_key(tmp_path):
    path = tmp_path / "split.json"
    path.write_text('{"scenario": "A"}')
    with pytest.raises(DatasetError):
        load_split(path)
