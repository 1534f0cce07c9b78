"""FactSheet model, JSON (de)serialization and per-section completeness."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import MISSING, dataclass, field, fields, is_dataclass, replace
from typing import TYPE_CHECKING, Any, Dict, List, Optional

from .errors import InputError

if TYPE_CHECKING:
    from .federation import FederationConfig, RunStatistics

SECTIONS = ("project", "participants", "data", "configuration", "system")


@dataclass
class Project:
    overview: Optional[str] = None
    purpose: Optional[str] = None
    background: Optional[str] = None
    extra: Dict[str, Any] = field(default_factory=dict)


@dataclass
class Participants:
    count: Optional[int] = None
    org_names: Optional[List[str]] = None
    extra: Dict[str, Any] = field(default_factory=dict)


@dataclass
class Data:
    provenance: Optional[str] = None
    preprocessing: Optional[str] = None
    extra: Dict[str, Any] = field(default_factory=dict)


@dataclass
class GlobalHyperparams:
    rounds: Optional[int] = None
    max_timeout: Optional[float] = None
    termination_accuracy: Optional[float] = None
    extra: Dict[str, Any] = field(default_factory=dict)


@dataclass
class LocalHyperparams:
    learning_rate: Optional[float] = None
    epochs: Optional[int] = None
    extra: Dict[str, Any] = field(default_factory=dict)


@dataclass
class Configuration:
    optimizer: Optional[str] = None
    model_type: Optional[str] = None
    global_hyperparams: GlobalHyperparams = field(default_factory=GlobalHyperparams)
    local_hyperparams: LocalHyperparams = field(default_factory=LocalHyperparams)
    extra: Dict[str, Any] = field(default_factory=dict)


@dataclass
class System:
    avg_training_time_s: Optional[float] = None
    model_size_params: Optional[int] = None
    avg_upload_bytes: Optional[float] = None
    avg_download_bytes: Optional[float] = None
    extra: Dict[str, Any] = field(default_factory=dict)


@dataclass
class Flags:
    differential_privacy: bool = False
    personalization: bool = False
    non_random_selector: bool = False
    extra: Dict[str, Any] = field(default_factory=dict)


@dataclass
class FactSheet:
    project: Project = field(default_factory=Project)
    participants: Participants = field(default_factory=Participants)
    data: Data = field(default_factory=Data)
    configuration: Configuration = field(default_factory=Configuration)
    system: System = field(default_factory=System)
    flags: Flags = field(default_factory=Flags)
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return _dump(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "FactSheet":
        if not isinstance(d, dict):
            raise InputError("FactSheet document must be a JSON object")
        fs = _load(cls, d)
        _check_nonnegative(fs)
        return fs

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FactSheet":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise InputError(f"FactSheet is not valid JSON: {exc}") from exc


def _dump(obj) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for f in fields(obj):
        if f.name == "extra":
            continue
        v = getattr(obj, f.name)
        out[f.name] = _dump(v) if is_dataclass(v) else copy.deepcopy(v)
    for k, v in obj.extra.items():
        out[k] = copy.deepcopy(v)
    return out


def _load(cls, d: Dict[str, Any]):
    known = {f.name: f for f in fields(cls) if f.name != "extra"}
    kwargs: Dict[str, Any] = {}
    extra: Dict[str, Any] = {}
    for k, v in d.items():
        if k not in known:
            extra[k] = copy.deepcopy(v)
            continue
        f = known[k]
        section = f.default_factory() if f.default_factory is not MISSING else None
        if is_dataclass(section):
            if v is None:
                v = {}
            if not isinstance(v, dict):
                raise InputError(f"FactSheet field {k!r} must be an object")
            kwargs[k] = _load(type(section), v)
        else:
            kwargs[k] = copy.deepcopy(v)
    obj = cls(**kwargs)
    obj.extra = extra
    return obj


def _check_nonnegative(fs: FactSheet) -> None:
    numeric = [
        ("participants.count", fs.participants.count),
        ("configuration.global_hyperparams.rounds", fs.configuration.global_hyperparams.rounds),
        ("configuration.global_hyperparams.max_timeout", fs.configuration.global_hyperparams.max_timeout),
        ("configuration.global_hyperparams.termination_accuracy", fs.configuration.global_hyperparams.termination_accuracy),
        ("configuration.local_hyperparams.learning_rate", fs.configuration.local_hyperparams.learning_rate),
        ("configuration.local_hyperparams.epochs", fs.configuration.local_hyperparams.epochs),
        ("system.avg_training_time_s", fs.system.avg_training_time_s),
        ("system.model_size_params", fs.system.model_size_params),
        ("system.avg_upload_bytes", fs.system.avg_upload_bytes),
        ("system.avg_download_bytes", fs.system.avg_download_bytes),
    ]
    for name, v in numeric:
        if v is None:
            continue
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise InputError(f"{name} must be numeric")
        if v < 0:
            raise InputError(f"{name} must be non-negative")


@dataclass(frozen=True)
class CompletenessResult:
    project: int
    participants: int
    data: int
    configuration: int
    system: int

    def as_dict(self) -> Dict[str, int]:
        return {s: getattr(self, s) for s in SECTIONS}


def _text(v) -> bool:
    return isinstance(v, str) and v.strip() != ""


def _num(v) -> bool:
    return v is not None and not isinstance(v, bool) and isinstance(v, (int, float))


def evaluate_completeness(fs: FactSheet) -> CompletenessResult:
    """1 for a section whose listed fields are all present and non-empty, else 0."""
    p = fs.project
    project = all(_text(v) for v in (p.overview, p.purpose, p.background))

    pa = fs.participants
    names = pa.org_names or []
    participants = (
        _num(pa.count) and pa.count >= 1 and len(names) >= pa.count
        and all(_text(n) for n in names[: int(pa.count)])
    )

    data = _text(fs.data.provenance) and _text(fs.data.preprocessing)

    c = fs.configuration
    g, loc = c.global_hyperparams, c.local_hyperparams
    configuration = (
        _text(c.optimizer) and _text(c.model_type)
        and all(_num(v) for v in (g.rounds, g.max_timeout, g.termination_accuracy))
        and all(_num(v) for v in (loc.learning_rate, loc.epochs))
    )

    s = fs.system
    system = all(_num(v) for v in (s.avg_training_time_s, s.model_size_params,
                                    s.avg_upload_bytes, s.avg_download_bytes))
    return CompletenessResult(int(project), int(participants), int(data), int(configuration), int(system))


def autofill_from_run(fs: FactSheet, config: "FederationConfig",
                      stats: Optional["RunStatistics"] = None) -> FactSheet:
    """Fill configuration, system and flag facts from the run.

    Project, data and participant names are human-authored and left alone;
    the participant count is only filled when missing.
    """
    from .metrics import AGGREGATION_NAMES

    out = copy.deepcopy(fs)
    cfg = out.configuration
    cfg.optimizer = AGGREGATION_NAMES.get(config.aggregator, config.aggregator)
    cfg.model_type = stats.final_model.arch.kind if stats is not None else config.model
    cfg.global_hyperparams = replace(
        cfg.global_hyperparams,
        rounds=config.rounds,
        max_timeout=config.max_timeout_s,
        termination_accuracy=config.termination_accuracy,
    )
    cfg.local_hyperparams = replace(
        cfg.local_hyperparams,
        learning_rate=config.learning_rate,
        epochs=config.local_epochs,
    )
    if out.participants.count is None:
        out.participants.count = config.num_clients

    out.flags.differential_privacy = config.dp is not None
    out.flags.personalization = bool(config.personalization_enabled)
    out.flags.non_random_selector = config.selector != "random"

    if stats is not None:
        out.system = replace(
            out.system,
            avg_training_time_s=stats.avg_training_time_s,
            model_size_params=stats.final_model.arch.param_count,
            avg_upload_bytes=stats.avg_upload_bytes,
            avg_download_bytes=stats.avg_download_bytes,
        )
    return out


def digest(fs: FactSheet) -> str:
    """SHA-256 of the canonical JSON, ignoring the wall-clock training time."""
    d = fs.to_dict()
    d.get("system", {}).pop("avg_training_time_s", None)
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return "sha256:" + hashlib.sha256(blob).hexdigest()
