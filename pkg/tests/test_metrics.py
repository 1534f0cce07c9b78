import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedtrust import data as ds
from fedtrust import federation as fl
from fedtrust import metrics as mt
from fedtrust import model as mk
from fedtrust.errors import InputError
from fedtrust.factsheet import FactSheet, autofill_from_run

from conftest import random_params


def counts(*values):
    return {f"c{i}": v for i, v in enumerate(values)}


def client(acc=1.0, n=10, clever=None, k=0, disc=None, imp=(1.0,)):
    return fl.ClientFinalStats("x", n, 0.0, acc, list(imp), clever, k, disc)


# ------------------------------------------------------------ privacy

def test_dp_flag():
    assert mt.metric_differential_privacy(None) == 0
    assert mt.metric_differential_privacy(FactSheet()) == 0
    fs = autofill_from_run(FactSheet(), fl.FederationConfig(10, 0.5, 5, dp=fl.DPSettings(epsilon=20.0)))
    assert mt.metric_differential_privacy(fs) == 1


def test_entropy_examples():
    assert mt.metric_entropy(counts(3, 3, 3, 3)) == pytest.approx(1.0, abs=1e-15)
    assert mt.metric_entropy(counts(10, 0, 0)) == 0.0
    assert mt.metric_entropy(counts(2, 1, 1)) == pytest.approx(1.5 / math.log2(3), abs=1e-12)


@given(st.lists(st.integers(0, 50), min_size=2, max_size=30).filter(lambda v: sum(v) > 0))
def test_entropy_in_unit_interval(values):
    assert 0.0 <= mt.metric_entropy(counts(*values)) <= 1.0


def test_privacy_risk_examples():
    assert mt.metric_global_privacy_risk(None, 50) == 1.0
    assert mt.metric_global_privacy_risk(fl.DPSettings(epsilon=6.0), 50) == pytest.approx(
        math.exp(6) / (49 + math.exp(6)), rel=1e-12)
    assert mt.metric_global_privacy_risk(fl.DPSettings(epsilon=1e-12), 100) == pytest.approx(0.01, rel=1e-9)
    assert math.isfinite(mt.metric_global_privacy_risk(fl.DPSettings(epsilon=1e6), 10))


# ------------------------------------------------------------ robustness

def linear_bound(params, x, c):
    W, b = params.layers()[0]
    z = W @ x + b
    return min((z[c] - z[j]) / np.linalg.norm(W[c] - W[j]) for j in range(len(z)) if j != c)


def test_clever_is_exact_for_logistic():
    rng = np.random.default_rng(0)
    arch = mk.ArchitectureDescriptor(mk.LOGISTIC, 5, 4)
    for _ in range(20):
        params = random_params(arch, rng)
        x = rng.normal(size=5)
        c = int(mk.predict(params, x)[0])
        got = mt.clever_sample_score(params, x, c, 2.0, 16, rng)
        assert got == pytest.approx(linear_bound(params, x, c), abs=1e-12)


def test_clever_misclassified_or_tied_is_zero():
    arch = mk.ArchitectureDescriptor(mk.LOGISTIC, 3, 3)
    rng = np.random.default_rng(1)
    assert mt.clever_sample_score(mk.zeros(arch), np.ones(3), 0, 2.0, 8, rng) == 0.0
    params = random_params(arch, rng)
    x = rng.normal(size=3)
    wrong = (int(mk.predict(params, x)[0]) + 1) % 3
    assert mt.clever_sample_score(params, x, wrong, 2.0, 8, rng) == 0.0


def test_clever_flat_model_falls_back_to_radius():
    arch = mk.ArchitectureDescriptor(mk.LOGISTIC, 2, 2)
    # biases only: class 0 always wins and the margin is constant in x
    params = mk.ModelParams(arch, np.array([0, 0, 0, 0, 1.0, 0]))
    assert mt.clever_sample_score(params, np.zeros(2), 0, 3.0, 4, np.random.default_rng(0)) == 3.0


def test_clever_mlp_is_a_lower_bound_on_sampled_flips():
    rng = np.random.default_rng(2)
    arch = mk.ArchitectureDescriptor(mk.MLP, 4, 3, hidden_dim=6)
    params = random_params(arch, rng)
    x = rng.normal(size=4)
    c = int(mk.predict(params, x)[0])
    bound = mt.clever_sample_score(params, x, c, 1.0, 256, np.random.default_rng(3))
    assert bound > 0
    # points well inside the bound keep their label along random directions
    for d in rng.normal(size=(50, 4)):
        d /= np.linalg.norm(d)
        assert int(mk.predict(params, x + 0.5 * min(bound, 1.0) * d)[0]) == c


def test_certified_robustness_weights_by_samples():
    stats = SimpleNamespace(clients=[client(clever=1.0, k=2), client(clever=4.0, k=6), client(clever=None, k=0)])
    assert mt.metric_certified_robustness(stats) == pytest.approx((2 + 24) / 8)
    with pytest.raises(InputError):
        mt.metric_certified_robustness(SimpleNamespace(clients=[client()]))


def test_performance_examples():
    assert mt.metric_performance(SimpleNamespace(clients=[client(1.0), client(1.0)])) == 1.0
    assert mt.metric_performance(SimpleNamespace(clients=[client(0.5, 10), client(1.0, 30)])) == 0.875
    assert mt.metric_performance(SimpleNamespace(clients=[client(0.3, 5)])) == 0.3


def test_flags_and_scale():
    fs = FactSheet()
    assert mt.metric_personalization(fs) == 0
    fs.flags.personalization = True
    assert mt.metric_personalization(fs) == 1
    for n in (1, 10, 100):
        assert mt.metric_federation_scale(fl.FederationConfig(n, 1.0, 1)) == n


# ------------------------------------------------------------ fairness

def test_participation_variation_examples():
    assert mt.metric_participation_variation(counts(4, 4, 4)) == 0.0
    assert mt.metric_participation_variation(counts(1, 3)) == pytest.approx(0.5)
    assert mt.metric_participation_variation(counts(10, 0)) == pytest.approx(1.0)


def test_accuracy_variation_examples():
    assert mt.metric_accuracy_variation([0.7, 0.7, 0.7]) == pytest.approx(0.0, abs=1e-15)
    assert mt.metric_accuracy_variation([0.4, 0.8]) == pytest.approx(1 / 3)
    assert mt.metric_accuracy_variation([0.0, 0.0]) == 0.0


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=20))
def test_accuracy_variation_nonnegative(values):
    assert mt.metric_accuracy_variation(values) >= 0.0


def test_class_imbalance_examples():
    assert mt.metric_class_imbalance(counts(5, 5, 5, 5)) == 1.0
    assert mt.metric_class_imbalance(counts(100, 0)) == 0.0
    assert mt.metric_class_imbalance(counts(75, 25)) == pytest.approx(0.5)
    # an absent class is padded with a zero count
    assert mt.metric_class_imbalance(counts(100), num_classes=2) == 0.0


def test_discrimination_examples():
    arch = mk.ArchitectureDescriptor(mk.LOGISTIC, 1, 2)
    # predicts class 1 iff x > 0
    params = mk.ModelParams(arch, np.array([-1.0, 1.0, 0.0, 0.0]))
    X = np.array([[1.0], [-1.0], [1.0], [-1.0]])
    y = np.array([1, 0, 1, 0])
    assert mt.client_discrimination(params, X, y, [1, 1, 0, 0]) == 0.0
    # perfect on the protected group, always wrong on the rest
    y_rest = np.array([1, 0, 0, 1])
    got = mt.client_discrimination(params, X, y_rest, [1, 1, 0, 0])
    assert got == pytest.approx(1.0 - mt.macro_f1(y_rest[2:], mk.predict(params, X[2:])))
    assert mt.client_discrimination(params, X, y, [0, 0, 0, 0]) is None


def test_discrimination_near_zero_when_attribute_is_independent():
    spec = ds.DatasetSpec(num_classes=3, feature_dim=5, samples_per_client=600, protected_attribute_rate=0.5,
                          test_fraction=0.5, class_separation=4.0)
    for seed in range(5):
        cfg = fl.FederationConfig(3, 1.0, 10, learning_rate=0.5, seed=seed)
        clients = ds.generate(replace(spec, seed=seed), 3)
        stats = fl.run(cfg, clients, cfg.architecture(5, 3))
        assert abs(mt.metric_discrimination_index(stats)) < 0.1


def test_discrimination_weighted_by_test_size():
    stats = SimpleNamespace(clients=[client(n=10, disc=0.2), client(n=30, disc=-0.2), client(n=5, disc=None)])
    assert mt.metric_discrimination_index(stats) == pytest.approx(-0.1)


# ------------------------------------------------------------ explainability

def test_transparency():
    assert mt.metric_algorithmic_transparency("CNN") == 1
    assert mt.metric_algorithmic_transparency("DecisionTree") == 5
    assert mt.metric_algorithmic_transparency(mk.LOGISTIC) == 4
    with pytest.raises(InputError):
        mt.metric_algorithmic_transparency("transformer")


def test_model_size():
    assert mt.metric_model_size(mk.ArchitectureDescriptor(mk.LOGISTIC, 10, 4)) == 44
    assert mt.metric_model_size(mk.ArchitectureDescriptor(mk.MLP, 8, 4, hidden_dim=16)) == 212


def test_feature_importance_examples():
    assert mt.metric_feature_importance([[0.2, 0.8], [0.2, 0.8]]) == pytest.approx(0.0, abs=1e-15)
    assert mt.metric_feature_importance([[0.5, 0.5]]) == 0.0
    assert mt.metric_feature_importance([[1.0, 0.0], [0.0, 1.0]]) == pytest.approx(1.0)


def test_permutation_importance_finds_the_used_feature():
    arch = mk.ArchitectureDescriptor(mk.LOGISTIC, 3, 2)
    params = mk.ModelParams(arch, np.array([-1.0, 0, 0, 1.0, 0, 0, 0, 0]))
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 3))
    y = (X[:, 0] > 0).astype(int)
    imp = mt.permutation_importance(params, X, y, 3, rng)
    assert imp[0] == 1.0 and imp[1] == imp[2] == 0.0


# ------------------------------------------------------------ federation

def test_selector_and_aggregation():
    assert mt.metric_client_selector(None) == 0
    assert mt.metric_client_selector(fl.FederationConfig(4, 0.5, 1)) == 0
    assert mt.metric_client_selector(fl.FederationConfig(4, 0.5, 1, selector="roundrobin")) == 1
    assert mt.metric_aggregation_algorithm(fl.FederationConfig(4, 0.5, 1)) == "FedAvg"
    assert mt.metric_aggregation_algorithm(fl.FederationConfig(4, 0.5, 1, aggregator="fedprox")) == "FedProx"
    with pytest.raises(InputError):
        mt.metric_aggregation_algorithm(SimpleNamespace(aggregator="krum"))


@given(st.lists(st.floats(0.01, 100.0), min_size=1, max_size=30))
def test_cv_scale_invariant(values):
    a = mt.coefficient_of_variation(values)
    assert a >= 0
    assert mt.coefficient_of_variation([3.0 * v for v in values]) == pytest.approx(a, rel=1e-9, abs=1e-12)


def test_compute_metrics_covers_taxonomy():
    spec = ds.DatasetSpec(num_classes=3, feature_dim=4, samples_per_client=30, protected_attribute_rate=0.5)
    cfg = fl.FederationConfig(4, 0.5, 2)
    stats = fl.run(cfg, ds.generate(spec, 4), cfg.architecture(4, 3))
    fs = autofill_from_run(FactSheet(), cfg, stats)
    got = mt.compute_metrics(fs, stats)
    assert [m.metric for m in got] == [m for ns in mt.TAXONOMY.values() for ids in ns.values() for m in ids]
    off = {m.metric for m in got if not m.available}
    assert off == {"discrimination_index"}
    assert all(m.available for m in mt.compute_metrics(fs, stats, include_discrimination=True))
