import numpy as np
import pytest

from condvar import (
    DataFormatError,
    Dataset,
    GroupIndex,
    Sample,
    augment_with_groups,
    build_group_index,
    load_csv,
    save_csv,
)


def make_dataset(labels, ids, p=2, seed=0):
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((len(labels), p))
    return Dataset.from_arrays(feats, labels, ids, n_classes=max(labels) + 1)


def test_grouping_by_label_and_id():
    ds = make_dataset([1, 1, 0, 1, 0], ["a", "a", "b", None, None])
    gi = build_group_index(ds)
    assert gi.m == 4
    assert gi.c == 1
    as_lists = [sorted(int(i) for i in g) for g in gi.groups]
    assert as_lists == [[0, 1], [2], [3], [4]]


def test_all_ids_absent_gives_singletons():
    ds = make_dataset([0, 1, 0, 1, 0, 1, 0], [None] * 7)
    gi = build_group_index(ds)
    assert gi.m == 7 and gi.c == 0


def test_grouping_key_is_label_and_id_pair():
    # same id token, different labels: must not merge
    ds = make_dataset([1, 0], ["a", "a"])
    gi = build_group_index(ds)
    assert gi.m == 2
    ds2 = make_dataset([1, 1], ["a", "a"])
    assert build_group_index(ds2).m == 1


def test_group_index_invariants_on_random_instances():
    rng = np.random.default_rng(3)
    for _ in range(25):
        n = int(rng.integers(1, 40))
        labels = rng.integers(0, 3, n).tolist()
        ids = [None if rng.random() < 0.4 else f"i{rng.integers(0, 6)}" for _ in range(n)]
        ds = make_dataset(labels, ids)
        gi = build_group_index(ds)
        flat = np.sort(np.concatenate(gi.groups))
        assert np.array_equal(flat, np.arange(n))
        assert gi.c == sum(len(g) - 1 for g in gi.groups)
        for g in gi.groups:
            keys = {(ds.samples[i].label, ds.samples[i].id) for i in g}
            assert len(keys) == 1
            if ds.samples[g[0]].id is None:
                assert len(g) == 1


def test_group_index_rejects_non_partition():
    with pytest.raises(ValueError):
        GroupIndex((np.array([0, 1]), np.array([1, 2])), 3)
    with pytest.raises(ValueError):
        GroupIndex((np.array([0]),), 2)


def test_augment_identity_transform_groups_of_two():
    ds = make_dataset([0, 1, 1], [None, None, None])
    out = augment_with_groups(ds, lambda f: f, 1, [1])
    gi = build_group_index(out)
    assert len(out) == 4
    sizes = sorted(len(g) for g in gi.groups)
    assert sizes == [1, 1, 2]
    pair = gi.nontrivial()[0]
    f0, f1 = out.samples[pair[0]].features, out.samples[pair[1]].features
    assert np.array_equal(f0, f1)


def test_augment_count_increases_grouped_observations():
    ds = make_dataset(list(range(2)) * 3, [None] * 6)
    out = augment_with_groups(ds, lambda f: f + 1.0, 2, [0, 2, 4])
    gi = build_group_index(out)
    assert gi.c == 6
    assert len(out) == 12


def test_augment_rotation_by_pi():
    ds = Dataset.from_arrays(np.array([[1.0, 0.0]]), [0], n_classes=1)
    rot = np.array([[-1.0, 0.0], [0.0, -1.0]])
    out = augment_with_groups(ds, lambda f: rot @ f, 1, [0])
    gi = build_group_index(out)
    assert gi.m == 1 and gi.c == 1
    assert np.allclose(out.samples[1].features, [-1.0, 0.0])


def test_augment_selection_out_of_range():
    ds = make_dataset([0, 1], [None, None])
    with pytest.raises(IndexError):
        augment_with_groups(ds, lambda f: f, 1, [5])


def test_csv_row_parsing(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("id,y,x0,x1\na,1,0.5,-0.25\n,0,1.0,2.0\n")
    ds = load_csv(path)
    assert ds.samples[0].id == "a"
    assert ds.samples[0].label == 1
    assert np.array_equal(ds.samples[0].features, [0.5, -0.25])
    assert ds.samples[1].id is None


def test_csv_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(12)
    feats = rng.standard_normal((100, 5)) * np.exp(rng.uniform(-8, 8, (100, 5)))
    ids = [None if i % 3 else f"g{i % 7}" for i in range(100)]
    ds = Dataset.from_arrays(feats, rng.integers(0, 3, 100), ids)
    path = tmp_path / "rt.csv"
    save_csv(ds, path)
    back = load_csv(path)
    assert back.p == ds.p and len(back) == len(ds)
    for a, b in zip(ds.samples, back.samples):
        assert a.label == b.label and a.id == b.id
        assert np.array_equal(a.features, b.features)


@pytest.mark.parametrize("content", [
    "id,y,x0\na,1\n",                # ragged row
    "id,y,x0\na,1,abc\n",            # non-numeric feature
    "y,x0\n1,2.0\n",                 # missing header field
    "id,label,x0\na,1,2.0\n",        # wrong header name
    "",                              # empty file
])
def test_csv_malformed_inputs(tmp_path, content):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    with pytest.raises(DataFormatError):
        load_csv(path)


def test_dataset_validates_dimensions():
    with pytest.raises(ValueError):
        Dataset([Sample(np.array([1.0]), 0)], p=2, n_classes=1)
    with pytest.raises(ValueError):
        Dataset([Sample(np.array([1.0, 2.0]), 3)], p=2, n_classes=2)
