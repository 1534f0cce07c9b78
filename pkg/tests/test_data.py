import numpy as np
import pytest

from fedtrust import data as ds
from fedtrust.errors import InputError


def all_labels(client):
    return np.concatenate([client.train.y, client.test.y])


def test_iid_class_counts_within_binomial_band():
    spec = ds.DatasetSpec(num_classes=4, feature_dim=3, samples_per_client=1000, seed=2)
    sigma = np.sqrt(1000 * 0.25 * 0.75)
    for client in ds.generate(spec, 5):
        counts = np.bincount(all_labels(client), minlength=4)
        assert np.all(np.abs(counts - 250) <= 3 * sigma)


def test_dirichlet_large_alpha_is_nearly_uniform():
    spec = ds.DatasetSpec(num_classes=4, feature_dim=3, samples_per_client=2,
                          partition="dirichlet", alpha=1e6, seed=0)
    # the per-client proportions themselves, drawn the same way generate draws them
    props = np.random.default_rng(0).dirichlet(np.full(4, spec.alpha), size=50)
    assert np.max(np.abs(props - 0.25)) < 0.01
    clients = ds.generate(ds.DatasetSpec(num_classes=4, feature_dim=3, samples_per_client=20_000,
                                         partition="dirichlet", alpha=1e6, seed=0), 2)
    for c in clients:
        frac = np.bincount(all_labels(c), minlength=4) / 20_000
        assert np.max(np.abs(frac - 0.25)) < 0.01


def test_small_alpha_is_skewed():
    spec = ds.DatasetSpec(num_classes=8, feature_dim=3, samples_per_client=400,
                          partition="dirichlet", alpha=0.05, seed=1)
    tops = [np.bincount(all_labels(c), minlength=8).max() / 400 for c in ds.generate(spec, 10)]
    assert np.mean(tops) > 0.5


def test_generate_is_deterministic():
    spec = ds.DatasetSpec(num_classes=3, feature_dim=4, samples_per_client=(10, 30),
                          partition="dirichlet", protected_attribute_rate=0.4, seed=9)
    a, b = ds.generate(spec, 4), ds.generate(spec, 4)
    for x, y in zip(a, b):
        for s1, s2 in ((x.train, y.train), (x.test, y.test)):
            assert np.array_equal(s1.X, s2.X)
            assert np.array_equal(s1.y, s2.y)
            assert np.array_equal(s1.protected, s2.protected)


def test_sizes_and_split():
    spec = ds.DatasetSpec(num_classes=3, feature_dim=2, samples_per_client=(5, 9), test_fraction=0.2, seed=4)
    for c in ds.generate(spec, 20):
        n = len(c.train) + len(c.test)
        assert 5 <= n <= 9
        assert len(c.test) >= 1 and len(c.train) >= 1
        assert c.train.X.shape == (len(c.train), 2)


def test_protected_rate():
    spec = ds.DatasetSpec(num_classes=2, feature_dim=2, samples_per_client=5000,
                          protected_attribute_rate=0.3, seed=5)
    c = ds.generate(spec, 1)[0]
    rate = np.concatenate([c.train.protected, c.test.protected]).mean()
    assert abs(rate - 0.3) < 3 * np.sqrt(0.3 * 0.7 / 5000)


@pytest.mark.parametrize("spec", [
    ds.DatasetSpec(samples_per_client=0),
    ds.DatasetSpec(samples_per_client=(10, 5)),
    ds.DatasetSpec(num_classes=1),
    ds.DatasetSpec(partition="shards"),
    ds.DatasetSpec(partition="dirichlet", alpha=0.0),
    ds.DatasetSpec(protected_attribute_rate=1.5),
])
def test_infeasible_spec(spec):
    with pytest.raises(InputError):
        ds.generate(spec, 2)


def test_zero_clients():
    with pytest.raises(InputError):
        ds.generate(ds.DatasetSpec(), 0)


def _client(labels):
    y = np.asarray(labels)
    empty = ds.Split(np.zeros((0, 1)), np.zeros(0, dtype=int), np.zeros(0, dtype=bool))
    return ds.ClientDataset(0, ds.Split(np.zeros((y.size, 1)), y, np.zeros(y.size, dtype=bool)), empty)


def test_class_distribution_counts():
    d = ds.class_distribution(_client([0, 0, 1]), b"salt")
    assert sorted(d.values()) == [1, 2]
    assert d[ds.hash_label(0, b"salt")] == 2


def test_salts_give_disjoint_keys_same_counts():
    c = _client([0, 0, 1, 2, 2, 2])
    a, b = ds.class_distribution(c, b"one"), ds.class_distribution(c, b"two")
    assert not set(a) & set(b)
    assert sorted(a.values()) == sorted(b.values())


def test_merged_distribution_matches_global_histogram():
    spec = ds.DatasetSpec(num_classes=5, feature_dim=2, samples_per_client=(20, 60),
                          partition="dirichlet", alpha=0.5, seed=3)
    clients = ds.generate(spec, 7)
    merged = ds.merge_distributions(ds.class_distribution(c, b"s") for c in clients)
    hist = np.bincount(np.concatenate([c.train.y for c in clients]), minlength=5)
    expected = {ds.hash_label(k, b"s"): int(n) for k, n in enumerate(hist) if n}
    assert merged == expected


def test_spec_round_trip():
    spec = ds.DatasetSpec(samples_per_client=(100, 200), partition="dirichlet", seed=3)
    assert ds.DatasetSpec.from_dict(spec.to_dict()) == spec


def test_load_csv(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "t.csv"
    lines = ["f0,f1,label,protected"]
    for i in range(60):
        lines.append(f"{rng.normal():.4f},{rng.normal():.4f},{i % 3},{i % 2}")
    path.write_text("\n".join(lines) + "\n")
    spec = ds.DatasetSpec(num_classes=3, feature_dim=2, seed=1)
    clients = ds.load_csv(path, spec, 3)
    total = sum(len(c.train) + len(c.test) for c in clients)
    assert total == 60
    assert clients[0].train.X.shape[1] == 2
    prot = np.concatenate([np.concatenate([c.train.protected, c.test.protected]) for c in clients])
    assert prot.sum() == 30
    dirichlet = ds.load_csv(path, ds.DatasetSpec(partition="dirichlet", alpha=5.0, seed=1), 3)
    assert sum(len(c.train) + len(c.test) for c in dirichlet) == 60


def test_load_csv_rejects_missing_label(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(InputError):
        ds.load_csv(path, ds.DatasetSpec(), 1)
