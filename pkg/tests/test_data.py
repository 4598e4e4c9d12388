import numpy as np
import pytest

from dapt.data import (
    base_new_split,
    generate_dataset,
    load_dataset,
    sample_k_shot,
    save_dataset,
)
from dapt.errors import ConfigError


def small(sigma=0.5, seed=11, c=4, per_class=6):
    return generate_dataset(c, 2, 5, per_class, sigma, seed)


def test_generation_validation():
    with pytest.raises(ConfigError):
        generate_dataset(1, 2, 5, 4, 0.5, 0)
    with pytest.raises(ConfigError):
        generate_dataset(2, 2, 5, 0, 0.5, 0)


def test_zero_noise_makes_identical_samples():
    ds = small(sigma=0.0)
    first = [t for t, y in ds.samples if y == 2]
    for tokens in first[1:]:
        assert np.array_equal(tokens, first[0])


def test_same_seed_identical_dataset():
    a, b = small(), small()
    for (ta, ya), (tb, yb) in zip(a.samples, b.samples):
        assert ya == yb and np.array_equal(ta, tb)
    assert np.array_equal(a.class_centers, b.class_centers)


def test_within_class_distances_below_cross_class():
    ds = small(sigma=0.1, c=2, per_class=10)
    toks = {c: [t.reshape(-1) for t, y in ds.samples if y == c] for c in (0, 1)}
    within = np.mean([np.linalg.norm(a - b)
                      for group in toks.values()
                      for i, a in enumerate(group) for b in group[i + 1:]])
    cross = np.mean([np.linalg.norm(a - b) for a in toks[0] for b in toks[1]])
    assert within < cross


def test_labels_in_range_and_balanced():
    ds = small()
    labels = [y for _, y in ds.samples]
    assert all(0 <= y < ds.num_classes for y in labels)
    for c in range(ds.num_classes):
        assert labels.count(c) == ds.per_class


def test_k_shot_counts_and_disjointness():
    ds = small()
    train, test = sample_k_shot(ds, 1, sampling_seed=3)
    assert len(train.samples) == 4  # K=1, C=4
    assert len(test.samples) == 4 * 5
    train_ids = {id(t) for t, _ in train.samples}
    assert train_ids.isdisjoint(id(t) for t, _ in test.samples)
    for c in range(4):
        assert sum(1 for _, y in train.samples if y == c) == 1


def test_k_shot_rejects_k_at_or_above_per_class():
    ds = small(per_class=4)
    with pytest.raises(ConfigError):
        sample_k_shot(ds, 4, 0)
    with pytest.raises(ConfigError):
        sample_k_shot(ds, 0, 0)


def test_k_shot_seeds_change_selection():
    ds = small(per_class=12)
    a, _ = sample_k_shot(ds, 3, sampling_seed=0)
    b, _ = sample_k_shot(ds, 3, sampling_seed=1)
    a_keys = [tuple(t.reshape(-1)[:3]) for t, _ in a.samples]
    b_keys = [tuple(t.reshape(-1)[:3]) for t, _ in b.samples]
    assert a_keys != b_keys
    again, _ = sample_k_shot(ds, 3, sampling_seed=0)
    assert a_keys == [tuple(t.reshape(-1)[:3]) for t, _ in again.samples]


def test_base_new_split_rules():
    ds = small(c=4)
    base_train, base_test, new_test = base_new_split(ds, 2, sampling_seed=0)
    assert base_train.classes == (0, 1)
    assert new_test.classes == (2, 3)
    assert all(y in (0, 1) for _, y in base_train.samples)
    assert all(y in (0, 1) for _, y in base_test.samples)
    assert all(y in (2, 3) for _, y in new_test.samples)
    assert len(new_test.samples) == 2 * ds.per_class

    ds3 = small(c=3)
    bt, _, nt = base_new_split(ds3, 2, sampling_seed=0)
    assert bt.classes == (0, 1)
    assert nt.classes == (2,)


def test_json_round_trip(tmp_path):
    ds = small(per_class=3)
    path = tmp_path / "ds.json"
    save_dataset(ds, path)
    loaded = load_dataset(path)
    assert loaded.num_classes == ds.num_classes
    assert len(loaded.samples) == len(ds.samples)
    for (ta, ya), (tb, yb) in zip(ds.samples, loaded.samples):
        assert ya == yb and np.array_equal(ta, tb)


def test_json_rejects_unknown_fields(tmp_path):
    ds = small(per_class=2)
    path = tmp_path / "ds.json"
    save_dataset(ds, path)
    doc = path.read_text().replace('"config"', '"extra": 1, "config"', 1)
    path.write_text(doc)
    with pytest.raises(ConfigError, match="unknown"):
        load_dataset(path)
