"""Normalisation of raw metrics and the metric -> notion -> pillar -> global roll-up."""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .errors import ConfigError, InputError
from .metrics import METRIC_LOCATION, TAXONOMY, MetricValue

SCHEMA_VERSION = "1.0"

AGGREGATION_SCORES = {
    "FedAvg": 0.8493,
    "FedOpt": 0.8492,
    "FedProx": 0.8477,
    "FedBN": 0.8548,
    "pFedMe": 0.8765,
    "Ditto": 0.8661,
    "FedEM": 0.8479,
}
MODEL_SIZE_BREAKPOINTS = (1, 10, 50, 100, 500, 1_000, 5_000, 10_000, 50_000, 100_000, 500_000)
MODEL_SIZE_STEPS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
SCALE_STEPS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)  # 10, 1e2, ..., 1e6 clients
CLEVER_CEILING = 4.0
CLEVER_BINS = 20

PILLAR_TITLES = {
    "privacy": "Privacy",
    "robustness": "Robustness",
    "fairness": "Fairness",
    "explainability": "Explainability",
    "accountability": "Accountability",
    "federation": "Federation",
}


def _clamp(v: float, lo: float = 0.0, hi: float = 1.0) -> float:
    return min(max(v, lo), hi)


def _number(metric: str, raw) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)) or math.isnan(raw):
        raise InputError(f"{metric} expects a numeric raw value, got {raw!r}")
    return float(raw)


def clever_score(raw: float) -> float:
    """Bound / 4 floored onto the 0.05 grid; 4.0 and above score 1."""
    if raw <= 0:
        return 0.0
    k = min(int(math.floor(raw * CLEVER_BINS / CLEVER_CEILING + 1e-9)), CLEVER_BINS)
    return k / CLEVER_BINS


def federation_scale_score(num_clients: int) -> float:
    n = int(num_clients)
    if n < 10:
        return 0.0
    decade = len(str(n)) - 1
    return SCALE_STEPS[min(decade, 6) - 1]


def model_size_score(params: int, literal: bool = False) -> float:
    """Score from the smallest breakpoint >= ``params``; small models score high.

    ``literal=True`` flips the mapping so 1 param scores 0 and 5e5 params score 1.
    """
    idx = min(bisect.bisect_left(MODEL_SIZE_BREAKPOINTS, int(params)), len(MODEL_SIZE_STEPS) - 1)
    step = MODEL_SIZE_STEPS[idx]
    return step if literal else MODEL_SIZE_STEPS[-1 - idx]


def normalize(metric: str, raw: Any, model_size_literal: bool = False) -> Tuple[float, Optional[str]]:
    """Map a raw metric value into [0, 1].

    Returns the score and a warning when the raw value had to be clamped.
    """
    if metric not in METRIC_LOCATION:
        raise InputError(f"unknown metric {metric!r}")
    warning = None

    def bounded(v: float, lo: float, hi: float) -> float:
        nonlocal warning
        if v < lo or v > hi:
            warning = f"raw value {v!r} outside [{lo}, {hi}], clamped"
        return _clamp(v, lo, hi)

    if metric in ("differential_privacy", "personalization", "client_selector") or metric.startswith("factsheet_"):
        v = _number(metric, raw)
        if v not in (0.0, 1.0):
            warning = f"flag value {raw!r} coerced"
        return (1.0 if v >= 0.5 else 0.0), warning
    if metric in ("entropy", "performance", "class_imbalance"):
        return bounded(_number(metric, raw), 0.0, 1.0), warning
    if metric == "global_privacy_risk":
        return 1.0 - bounded(_number(metric, raw), 0.0, 1.0), warning
    if metric == "certified_robustness":
        v = _number(metric, raw)
        if v < 0:
            warning = f"raw value {v!r} below 0, clamped"
        return clever_score(v), warning
    if metric == "federation_scale":
        v = _number(metric, raw)
        if v < 1:
            warning = f"raw value {v!r} below 1"
        return federation_scale_score(max(int(v), 0)), warning
    if metric in ("participation_variation", "accuracy_variation", "feature_importance"):
        v = _number(metric, raw)
        if v < 0:
            warning = f"raw value {v!r} below 0, clamped"
        return 1.0 - _clamp(v), warning
    if metric == "discrimination_index":
        return 1.0 - abs(bounded(_number(metric, raw), -1.0, 1.0)), warning
    if metric == "algorithmic_transparency":
        return (bounded(_number(metric, raw), 1.0, 5.0) - 1.0) / 4.0, warning
    if metric == "model_size":
        v = _number(metric, raw)
        if v < 1:
            warning = f"raw value {v!r} below 1, clamped"
        return model_size_score(max(int(v), 1), literal=model_size_literal), warning
    if metric == "aggregation_algorithm":
        if raw not in AGGREGATION_SCORES:
            raise InputError(f"no score for aggregation algorithm {raw!r}")
        return AGGREGATION_SCORES[raw], warning
    raise InputError(f"no normalisation rule for {metric!r}")  # pragma: no cover


@dataclass
class WeightConfig:
    """Relative weights per group; missing entries weigh 1. Groups renormalise."""

    pillars: Dict[str, float] = field(default_factory=dict)
    notions: Dict[str, float] = field(default_factory=dict)
    metrics: Dict[str, float] = field(default_factory=dict)
    model_size_literal: bool = False

    def validate(self) -> None:
        notions = {n for p in TAXONOMY.values() for n in p}
        for kind, table, known in (("pillar", self.pillars, set(TAXONOMY)),
                                   ("notion", self.notions, notions),
                                   ("metric", self.metrics, set(METRIC_LOCATION))):
            for k, w in table.items():
                if k not in known:
                    raise ConfigError(f"unknown {kind} {k!r} in weights")
                if isinstance(w, bool) or not isinstance(w, (int, float)) or not w >= 0 or math.isinf(w):
                    raise ConfigError(f"weight for {kind} {k!r} must be a finite non-negative number")
        groups = [("global", list(TAXONOMY), self.pillars)]
        for pillar, ns in TAXONOMY.items():
            groups.append((pillar, list(ns), self.notions))
            for notion, ms in ns.items():
                groups.append((notion, ms, self.metrics))
        for name, members, table in groups:
            if not any(table.get(m, 1.0) > 0 for m in members):
                raise ConfigError(f"weight group {name!r} has no positive weight")

    @classmethod
    def from_dict(cls, d: Optional[Dict[str, Any]]) -> "WeightConfig":
        d = dict(d or {})
        try:
            w = cls(
                pillars=dict(d.pop("pillars", {}) or {}),
                notions=dict(d.pop("notions", {}) or {}),
                metrics=dict(d.pop("metrics", {}) or {}),
                model_size_literal=bool(d.pop("model_size_literal", False)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad weights section: {exc}") from exc
        if d:
            raise ConfigError(f"unknown weights keys: {sorted(d)}")
        w.validate()
        return w

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pillars": dict(sorted(self.pillars.items())),
            "notions": dict(sorted(self.notions.items())),
            "metrics": dict(sorted(self.metrics.items())),
            "model_size_literal": self.model_size_literal,
        }


@dataclass
class NotionScore:
    name: str
    score: Optional[float]
    weight: float
    metrics: List[MetricValue]


@dataclass
class PillarScore:
    name: str
    score: float
    weight: float
    notions: List[NotionScore]


@dataclass
class TrustReport:
    global_score: float
    pillars: List[PillarScore]
    config: Dict[str, Any] = field(default_factory=dict)
    factsheet_digest: str = ""
    preset: str = "custom"
    weights: Dict[str, Any] = field(default_factory=dict)

    def pillar(self, name: str) -> PillarScore:
        for p in self.pillars:
            if p.name == name:
                return p
        raise KeyError(name)

    def metric(self, name: str) -> MetricValue:
        for p in self.pillars:
            for n in p.notions:
                for m in n.metrics:
                    if m.metric == name:
                        return m
        raise KeyError(name)

    @property
    def warnings(self) -> List[str]:
        return [f"{m.metric}: {m.note}" for p in self.pillars for n in p.notions
                for m in n.metrics if m.available and m.note]


def _weighted_mean(items: Sequence[Tuple[float, float]]) -> Optional[float]:
    """Mean of (score, weight) pairs with weights renormalised; None if all weights vanish."""
    wsum = sum(w for _, w in items)
    if wsum <= 0:
        return None
    return sum(w * s for s, w in items) / wsum


def score_metrics(metrics: Sequence[MetricValue], weights: Optional[WeightConfig] = None) -> List[MetricValue]:
    """Fill ``normalized`` on every available metric (in place) and return the list."""
    literal = weights.model_size_literal if weights else False
    for m in metrics:
        if not m.available:
            m.normalized = None
            continue
        m.normalized, warning = normalize(m.metric, m.raw, model_size_literal=literal)
        if warning:
            m.note = warning
    return list(metrics)


def aggregate(metrics: Sequence[MetricValue], weights: Optional[WeightConfig] = None, **meta) -> TrustReport:
    """Weighted means bottom-up, skipping unavailable metrics and empty notions."""
    weights = weights or WeightConfig()
    weights.validate()
    by_id = {m.metric: m for m in metrics}
    pillars: List[PillarScore] = []
    for pillar, notions in TAXONOMY.items():
        notion_scores: List[NotionScore] = []
        for notion, ids in notions.items():
            members = [by_id[i] for i in ids if i in by_id]
            for m in members:
                if m.available and m.normalized is None:
                    raise InputError(f"metric {m.metric} has not been normalised")
            items = [(m.normalized, float(weights.metrics.get(m.metric, 1.0)))
                     for m in members if m.available]
            notion_scores.append(NotionScore(notion, _weighted_mean(items),
                                             float(weights.notions.get(notion, 1.0)), members))
        score = _weighted_mean([(n.score, n.weight) for n in notion_scores if n.score is not None])
        if score is None:
            raise InputError(f"pillar {pillar!r} has no available metric")
        pillars.append(PillarScore(pillar, score, float(weights.pillars.get(pillar, 1.0)), notion_scores))
    global_score = _weighted_mean([(p.score, p.weight) for p in pillars])
    if global_score is None:
        raise ConfigError("all pillar weights are zero")
    return TrustReport(global_score, pillars, weights=weights.to_dict(), **meta)


# ----------------------------------------------------------------- output

def _json_raw(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def report_to_dict(report: TrustReport) -> Dict[str, Any]:
    pillars = {}
    for p in report.pillars:
        notions = {}
        for n in p.notions:
            notions[n.name] = {
                "score": n.score,
                "weight": n.weight,
                "metrics": {
                    m.metric: {
                        "raw": _json_raw(m.raw),
                        "normalized": m.normalized,
                        "phase": m.phase,
                        "producer": m.producer,
                        "available": m.available,
                        "note": m.note,
                    }
                    for m in n.metrics
                },
            }
        pillars[p.name] = {"score": p.score, "weight": p.weight, "notions": notions}
    return {
        "schema_version": SCHEMA_VERSION,
        "preset": report.preset,
        "global_score": report.global_score,
        "pillars": pillars,
        "weights": report.weights,
        "config": report.config,
        "factsheet_digest": report.factsheet_digest,
    }


def report_from_dict(d: Dict[str, Any]) -> TrustReport:
    validate_report(d)
    pillars = []
    for pname, p in d["pillars"].items():
        notions = []
        for nname, n in p["notions"].items():
            ms = []
            for mid, m in n["metrics"].items():
                mv = MetricValue.make(mid, m["raw"], available=m["available"], note=m["note"])
                mv.normalized = m["normalized"]
                mv.phase, mv.producer = m["phase"], m["producer"]
                ms.append(mv)
            notions.append(NotionScore(nname, n["score"], n["weight"], ms))
        pillars.append(PillarScore(pname, p["score"], p["weight"], notions))
    return TrustReport(
        global_score=d["global_score"],
        pillars=pillars,
        config=d.get("config", {}),
        factsheet_digest=d.get("factsheet_digest", ""),
        preset=d.get("preset", "custom"),
        weights=d.get("weights", {}),
    )


def load_schema(name: str) -> Dict[str, Any]:
    return json.loads(resources.files("fedtrust").joinpath("schemas", name).read_text())


def validate_report(d: Dict[str, Any]) -> None:
    import jsonschema

    try:
        jsonschema.validate(d, load_schema("report.schema.json"))
    except jsonschema.ValidationError as exc:
        raise InputError(f"report does not match schema: {exc.message}") from exc


def _fmt(v: Optional[float]) -> str:
    return "n/a" if v is None else f"{v:.2f}"


def _fmt_raw(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def render(report: TrustReport, fmt: str = "json") -> str:
    """JSON document or an indented text tree with two-decimal scores."""
    if fmt == "json":
        return json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"
    if fmt != "text":
        raise InputError(f"unknown format {fmt!r}")
    lines = [f"Trust score: {_fmt(report.global_score)}   (preset: {report.preset})", ""]
    for p in report.pillars:
        lines.append(f"{PILLAR_TITLES.get(p.name, p.name):<40}{_fmt(p.score):>6}")
        for n in p.notions:
            lines.append(f"  {n.name.replace('_', ' '):<38}{_fmt(n.score):>6}")
            for m in n.metrics:
                raw = _fmt_raw(m.raw) if m.available else "n/a"
                score = _fmt(m.normalized) if m.available else "n/a"
                lines.append(f"    {m.metric:<36}{score:>6}   raw={raw}")
        lines.append("")
    warnings = report.warnings
    if warnings:
        lines.append("Warnings:")
        lines.extend(f"  {w}" for w in warnings)
    return "\n".join(lines).rstrip() + "\n"


def build_report(fs, stats, weights: Optional[WeightConfig] = None, preset: str = "custom",
                 include_discrimination: Optional[bool] = None) -> TrustReport:
    """Metrics, normalisation and roll-up for one finished run."""
    from .factsheet import digest
    from .metrics import compute_metrics

    metrics = score_metrics(compute_metrics(fs, stats, include_discrimination), weights)
    return aggregate(
        metrics,
        weights,
        config=stats.config.to_dict(),
        factsheet_digest=digest(fs),
        preset=preset,
    )
