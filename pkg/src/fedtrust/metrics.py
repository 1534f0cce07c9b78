"""Raw trust metrics.

Server-side metrics read only the FactSheet, the federation config, hashed
aggregate statistics and model parameters. The client-side primitives at the
bottom (certified robustness, permutation importance, discrimination index)
run on a client's own test split and return scalars or short vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import model as mk
from .errors import InputError
from .model import ArchitectureDescriptor, ModelParams

if TYPE_CHECKING:
    from .factsheet import FactSheet
    from .federation import DPSettings, FederationConfig, RunStatistics

Raw = Union[int, float, str, None]

# pillar -> notion -> metric ids, in report order
TAXONOMY: Dict[str, Dict[str, List[str]]] = {
    "privacy": {
        "privacy_preserving": ["differential_privacy"],
        "uncertainty": ["entropy"],
        "indistinguishability": ["global_privacy_risk"],
    },
    "robustness": {
        "resilience_to_attacks": ["certified_robustness"],
        "algorithm_robustness": ["performance", "personalization"],
        "client_reliability": ["federation_scale"],
    },
    "fairness": {
        "client_selection": ["participation_variation"],
        "performance": ["accuracy_variation"],
        "group_level": ["discrimination_index"],
        "class_distribution": ["class_imbalance"],
    },
    "explainability": {
        "interpretability": ["algorithmic_transparency", "model_size"],
        "post_hoc": ["feature_importance"],
    },
    "accountability": {
        "factsheet_completeness": [
            "factsheet_project",
            "factsheet_participants",
            "factsheet_data",
            "factsheet_configuration",
            "factsheet_system",
        ],
    },
    "federation": {
        "client_management": ["client_selector"],
        "optimization": ["aggregation_algorithm"],
    },
}

# metric id -> (phase, producer)
SCHEDULE: Dict[str, Tuple[str, str]] = {
    "differential_privacy": ("pre", "server"),
    "entropy": ("pre", "server"),
    "global_privacy_risk": ("pre", "server"),
    "certified_robustness": ("post", "server"),
    "performance": ("during", "clients"),
    "personalization": ("pre", "server"),
    "federation_scale": ("pre", "server"),
    "participation_variation": ("post", "server"),
    "accuracy_variation": ("during", "clients"),
    "discrimination_index": ("post", "clients"),
    "class_imbalance": ("pre", "clients"),
    "algorithmic_transparency": ("pre", "server"),
    "model_size": ("post", "server"),
    "feature_importance": ("post", "server"),
    "factsheet_project": ("pre", "server"),
    "factsheet_participants": ("pre", "server"),
    "factsheet_data": ("pre", "server"),
    "factsheet_configuration": ("pre", "server"),
    "factsheet_system": ("post", "server"),
    "client_selector": ("pre", "server"),
    "aggregation_algorithm": ("pre", "server"),
}

METRIC_LOCATION: Dict[str, Tuple[str, str]] = {
    m: (pillar, notion)
    for pillar, notions in TAXONOMY.items()
    for notion, metrics in notions.items()
    for m in metrics
}

TRANSPARENCY = {
    "DecisionTree": 5.0,
    "RandomForest": 4.0,
    "LogisticRegression": 4.0,
    "SVM": 2.0,
    "KNN": 3.0,
    "GaussianProcess": 3.0,
    "AdaBoost": 3.0,
    "GaussianNB": 3.5,
    "QDA": 3.0,
    "LinearRegression": 3.5,
    "MLP": 1.0,
    "Sequential": 1.0,
    "CNN": 1.0,
}
ARCH_FAMILY = {mk.LOGISTIC: "LogisticRegression", mk.MLP: "MLP"}

AGGREGATION_NAMES = {
    "fedavg": "FedAvg",
    "weighted-fedavg": "FedAvg",
    "fedprox": "FedProx",
    "fedopt": "FedOpt",
    "fedbn": "FedBN",
    "pfedme": "pFedMe",
    "ditto": "Ditto",
    "fedem": "FedEM",
}


@dataclass
class MetricValue:
    metric: str
    pillar: str
    notion: str
    raw: Raw
    phase: str
    producer: str
    normalized: Optional[float] = None
    available: bool = True
    note: Optional[str] = None

    @classmethod
    def make(cls, metric: str, raw: Raw, available: bool = True, note: Optional[str] = None) -> "MetricValue":
        pillar, notion = METRIC_LOCATION[metric]
        phase, producer = SCHEDULE[metric]
        return cls(metric, pillar, notion, raw, phase, producer, available=available, note=note)


def _counts(table: Dict[str, int]) -> List[int]:
    # key order fixes the float summation order, so reloaded stats score identically
    return [table[k] for k in sorted(table)]


def coefficient_of_variation(values: Sequence[float]) -> float:
    """Population sigma over mu."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise InputError("coefficient of variation of an empty sequence")
    mu = float(v.mean())
    if mu == 0.0:
        raise InputError("coefficient of variation undefined for zero mean")
    return float(v.std() / abs(mu))


# ---------------------------------------------------------------- privacy

def metric_differential_privacy(fs: Optional["FactSheet"]) -> int:
    return int(bool(fs is not None and fs.flags.differential_privacy))


def metric_entropy(selection_count: Dict[str, int]) -> float:
    """Shannon entropy of client participation frequencies, divided by log2(N)."""
    counts = np.asarray(_counts(selection_count), dtype=np.float64)
    if counts.size < 2:
        raise InputError("entropy needs at least two clients")
    total = counts.sum()
    if total <= 0:
        raise InputError("no client was ever selected")
    p = counts[counts > 0] / total
    h = float(-(p * np.log2(p)).sum())
    return min(max(h / math.log2(counts.size), 0.0), 1.0)


def metric_global_privacy_risk(dp: Optional["DPSettings"], num_clients: int) -> float:
    """Posterior of singling out one of N clients under eps-indistinguishability.

    ``e^eps / (N - 1 + e^eps)``; 1.0 without DP.
    """
    if num_clients < 2:
        raise InputError("global privacy risk needs at least two clients")
    if dp is None:
        return 1.0
    eps = float(dp.epsilon)
    if not eps > 0:
        raise InputError("epsilon must be > 0")
    # rewritten to stay finite for large eps
    return 1.0 / (1.0 + (num_clients - 1) * math.exp(-eps))


# ------------------------------------------------------------- robustness

def clever_sample_score(params: ModelParams, x0: np.ndarray, label: int, radius: float,
                        n_samples: int, rng: np.random.Generator) -> float:
    """Smallest margin-over-Lipschitz bound across competing classes for one point."""
    x0 = np.asarray(x0, dtype=np.float64)
    d = x0.size
    if n_samples > 0:
        dirs = rng.normal(size=(n_samples, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        r = radius * rng.random(n_samples) ** (1.0 / d)
        pts = x0 + dirs * r[:, None]
    else:
        pts = x0[None, :]
    best = math.inf
    for j in range(params.arch.num_classes):
        if j == label:
            continue
        g = float(mk.margin(params, x0, (label, j))[0])
        if g <= 0.0:
            return 0.0
        lip = float(np.linalg.norm(mk.input_grad_batch(params, pts, (label, j)), axis=1).max())
        bound = g / lip if lip > 0 else math.inf
        best = min(best, bound)
    # flat margin everywhere sampled: fall back to the search radius
    return radius if math.isinf(best) else best


def certified_robustness(params: ModelParams, X: np.ndarray, y: np.ndarray, radius: float,
                         n_samples: int, rng: np.random.Generator) -> float:
    """Mean CLEVER-style bound over the correctly classified rows of ``X``."""
    scores = _clever_scores(params, X, y, radius, n_samples, rng, limit=None)
    if not scores:
        raise InputError("every sample is misclassified; certified robustness undefined")
    return float(np.mean(scores))


def _clever_scores(params, X, y, radius, n_samples, rng, limit):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    correct = np.flatnonzero(mk.predict(params, X) == y)
    if limit is not None:
        correct = correct[:limit]
    return [clever_sample_score(params, X[i], int(y[i]), radius, n_samples, rng) for i in correct]


def client_clever(params: ModelParams, X, y, radius: float, n_samples: int, points: int,
                  rng: np.random.Generator) -> Tuple[Optional[float], int]:
    """(mean bound, number of points) over up to ``points`` correct test samples."""
    scores = _clever_scores(params, X, y, radius, n_samples, rng, limit=points)
    if not scores:
        return None, 0
    return float(np.mean(scores)), len(scores)


def metric_certified_robustness(stats: "RunStatistics") -> float:
    pairs = [(c.clever_score, c.clever_samples) for c in stats.clients
             if c.clever_score is not None and c.clever_samples > 0]
    if not pairs:
        raise InputError("no client had a correctly classified test sample")
    total = sum(n for _, n in pairs)
    return float(sum(s * n for s, n in pairs) / total)


def metric_performance(stats: "RunStatistics") -> float:
    """Test-size weighted mean of each client's final accuracy."""
    n = np.array([c.num_test for c in stats.clients], dtype=np.float64)
    acc = np.array([c.test_accuracy for c in stats.clients], dtype=np.float64)
    if n.sum() <= 0:
        raise InputError("no client test samples")
    return float((n * acc).sum() / n.sum())


def metric_personalization(fs: Optional["FactSheet"]) -> int:
    return int(bool(fs is not None and fs.flags.personalization))


def metric_federation_scale(config: "FederationConfig") -> int:
    return int(config.num_clients)


# --------------------------------------------------------------- fairness

def metric_participation_variation(selection_count: Dict[str, int]) -> float:
    return coefficient_of_variation(_counts(selection_count))


def metric_accuracy_variation(accuracies: Sequence[float]) -> float:
    acc = np.asarray(accuracies, dtype=np.float64)
    if acc.size == 0:
        raise InputError("no client accuracies")
    if acc.mean() == 0.0:
        return 0.0  # all zero: no dispersion
    return coefficient_of_variation(acc)


def metric_class_imbalance(merged: Dict[str, int], num_classes: Optional[int] = None) -> float:
    """Balance ratio ``1 - clamp(CV)``; classes absent from the map count as zero."""
    counts = _counts(merged)
    if num_classes is not None:
        if len(counts) > num_classes:
            raise InputError("more hashed classes than the model has outputs")
        counts += [0] * (num_classes - len(counts))
    if not counts or sum(counts) == 0:
        raise InputError("empty class distribution")
    cv = coefficient_of_variation(counts)
    return 1.0 - min(max(cv, 0.0), 1.0)


def macro_f1(y_true, y_pred) -> float:
    from sklearn.metrics import f1_score

    return float(f1_score(y_true, y_pred, average="macro", zero_division=0))


def client_discrimination(params: ModelParams, X, y, protected) -> Optional[float]:
    """F1(protected) - F1(rest) on one client's test split, or None if a group is empty."""
    prot = np.asarray(protected, dtype=bool)
    if prot.size == 0 or prot.all() or not prot.any():
        return None
    pred = mk.predict(params, X)
    y = np.asarray(y)
    return macro_f1(y[prot], pred[prot]) - macro_f1(y[~prot], pred[~prot])


def metric_discrimination_index(stats: "RunStatistics") -> float:
    pairs = [(c.discrimination_index, c.num_test) for c in stats.clients
             if c.discrimination_index is not None]
    if not pairs:
        raise InputError("protected or unprotected group is empty federation-wide")
    total = sum(n for _, n in pairs)
    return float(sum(v * n for v, n in pairs) / total)


# --------------------------------------------------------- explainability

def metric_algorithmic_transparency(model_type: str) -> float:
    family = ARCH_FAMILY.get(model_type, model_type)
    if family not in TRANSPARENCY:
        raise InputError(f"no transparency rating for model type {model_type!r}")
    return TRANSPARENCY[family]


def metric_model_size(arch: ArchitectureDescriptor) -> int:
    return arch.param_count


def permutation_importance(params: ModelParams, X, y, repeats: int,
                           rng: np.random.Generator) -> np.ndarray:
    """L1-normalised accuracy drop from shuffling each feature column.

    Negative drops (shuffling helped by chance) are clipped to zero.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    base = float(np.mean(mk.predict(params, X) == y))
    d = X.shape[1]
    drops = np.zeros(d)
    for j in range(d):
        total = 0.0
        for _ in range(repeats):
            Xp = X.copy()
            Xp[:, j] = rng.permutation(Xp[:, j])
            total += base - float(np.mean(mk.predict(params, Xp) == y))
        drops[j] = total / repeats
    drops = np.clip(drops, 0.0, None)
    s = drops.sum()
    return drops / s if s > 0 else drops


def metric_feature_importance(vectors: Sequence[Sequence[float]]) -> float:
    """Mean over features of the across-client CV of importance scores."""
    if len(vectors) < 2:
        return 0.0
    M = np.asarray(vectors, dtype=np.float64)
    mu = M.mean(axis=0)
    used = mu > 0
    if not used.any():
        return 0.0
    cv = M.std(axis=0)[used] / mu[used]
    return float(cv.mean())


# ------------------------------------------------------------- federation

def metric_client_selector(config: Optional["FederationConfig"]) -> int:
    if config is None:
        return 0
    return int(config.selector != "random")


def metric_aggregation_algorithm(config: "FederationConfig") -> str:
    key = config.aggregator.lower()
    if key not in AGGREGATION_NAMES:
        raise InputError(f"unsupported aggregation algorithm {config.aggregator!r}")
    return AGGREGATION_NAMES[key]


# ----------------------------------------------------------------- driver

def compute_metrics(fs: "FactSheet", stats: "RunStatistics",
                    include_discrimination: Optional[bool] = None) -> List[MetricValue]:
    """Every metric in :data:`TAXONOMY` for a finished run, in taxonomy order.

    A metric whose inputs are missing is returned with ``available=False``.
    """
    from .factsheet import evaluate_completeness

    config = stats.config
    if include_discrimination is None:
        include_discrimination = config.evaluation.discrimination_index
    arch = stats.final_model.arch
    completeness = evaluate_completeness(fs)

    producers = {
        "differential_privacy": lambda: metric_differential_privacy(fs),
        "entropy": lambda: metric_entropy(stats.selection_count),
        "global_privacy_risk": lambda: metric_global_privacy_risk(config.dp, config.num_clients),
        "certified_robustness": lambda: metric_certified_robustness(stats),
        "performance": lambda: metric_performance(stats),
        "personalization": lambda: metric_personalization(fs),
        "federation_scale": lambda: metric_federation_scale(config),
        "participation_variation": lambda: metric_participation_variation(stats.selection_count),
        "accuracy_variation": lambda: metric_accuracy_variation([c.test_accuracy for c in stats.clients]),
        "discrimination_index": lambda: metric_discrimination_index(stats),
        "class_imbalance": lambda: metric_class_imbalance(stats.class_distribution, arch.num_classes),
        "algorithmic_transparency": lambda: metric_algorithmic_transparency(arch.kind),
        "model_size": lambda: metric_model_size(arch),
        "feature_importance": lambda: metric_feature_importance([c.feature_importance for c in stats.clients]),
        "factsheet_project": lambda: completeness.project,
        "factsheet_participants": lambda: completeness.participants,
        "factsheet_data": lambda: completeness.data,
        "factsheet_configuration": lambda: completeness.configuration,
        "factsheet_system": lambda: completeness.system,
        "client_selector": lambda: metric_client_selector(config),
        "aggregation_algorithm": lambda: metric_aggregation_algorithm(config),
    }
    out = []
    for pillar, notions in TAXONOMY.items():
        for notion, ids in notions.items():
            for mid in ids:
                if mid == "discrimination_index" and not include_discrimination:
                    out.append(MetricValue.make(mid, None, available=False, note="disabled"))
                    continue
                try:
                    out.append(MetricValue.make(mid, producers[mid]()))
                except InputError as exc:
                    out.append(MetricValue.make(mid, None, available=False, note=str(exc)))
    return out
