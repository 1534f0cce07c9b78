"""Experiment presets, config files and the simulate/evaluate pipeline."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from . import data as ds
from .errors import ConfigError, InputError
from .factsheet import FactSheet, autofill_from_run
from .federation import FederationConfig, RunStatistics, run
from .model import ModelParams
from .scoring import TrustReport, WeightConfig, build_report, load_schema, render

PRESETS = ("exp1", "exp2", "exp3", "exp4")

STATS_FILE = "stats.json"
MODEL_FILE = "model.json"
FACTSHEET_FILE = "factsheet.json"
REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"


@dataclass
class ExperimentPreset:
    name: str
    federation: FederationConfig
    dataset: ds.DatasetSpec
    factsheet: FactSheet = field(default_factory=FactSheet)
    weights: WeightConfig = field(default_factory=WeightConfig)
    description: str = ""

    def with_seed(self, seed: int) -> "ExperimentPreset":
        return replace(
            self,
            federation=replace(self.federation, seed=seed),
            dataset=replace(self.dataset, seed=seed),
        )

    @classmethod
    def from_dict(cls, d: Dict[str, Any], default_name: str = "custom") -> "ExperimentPreset":
        import jsonschema

        try:
            jsonschema.validate(d, load_schema("experiment.schema.json"))
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid experiment config: {exc.message}") from exc
        try:
            spec = ds.DatasetSpec.from_dict(d["dataset"])
        except InputError as exc:
            raise ConfigError(str(exc)) from exc
        fed = dict(d["federation"])
        fed.setdefault("seed", spec.seed)
        return cls(
            name=d.get("name", default_name),
            description=d.get("description", ""),
            federation=FederationConfig.from_dict(fed),
            dataset=spec,
            factsheet=FactSheet.from_dict(d.get("factsheet") or {}),
            weights=WeightConfig.from_dict(d.get("weights")),
        )


def _read_structured(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    try:
        if path.suffix in (".yaml", ".yml"):
            import yaml

            doc = yaml.safe_load(text)
        else:
            doc = json.loads(text)
    except Exception as exc:  # json and yaml raise unrelated types
        raise InputError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"{path} must hold a mapping at the top level")
    return doc


def load_preset(name: str) -> ExperimentPreset:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("fedtrust").joinpath("presets", f"{name}.json").read_text()
    return ExperimentPreset.from_dict(json.loads(text), default_name=name)


def load_config(path: Union[str, Path]) -> ExperimentPreset:
    return ExperimentPreset.from_dict(_read_structured(path))


def load_weights(path: Union[str, Path]) -> WeightConfig:
    doc = _read_structured(path)
    # accept either a bare weights mapping or a config file with a `weights` section
    return WeightConfig.from_dict(doc["weights"] if "weights" in doc else doc)


def simulate(preset: ExperimentPreset, include_discrimination: Optional[bool] = None,
             **run_kwargs) -> Tuple[RunStatistics, FactSheet, TrustReport]:
    """Generate data, train, autofill the FactSheet and score the run."""
    cfg = preset.federation
    if include_discrimination is not None:
        cfg = replace(cfg, evaluation=replace(cfg.evaluation, discrimination_index=include_discrimination))
    clients = ds.generate(preset.dataset, cfg.num_clients)
    arch = cfg.architecture(preset.dataset.feature_dim, preset.dataset.num_classes)
    stats = run(cfg, clients, arch, **run_kwargs)
    stats.preset = preset.name
    stats.weights = preset.weights.to_dict()
    fs = autofill_from_run(preset.factsheet, cfg, stats)
    report = build_report(fs, stats, preset.weights, preset=preset.name)
    return stats, fs, report


def _dump(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_artifacts(out_dir: Union[str, Path], stats: RunStatistics, fs: FactSheet,
                    report: TrustReport) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / STATS_FILE, stats.to_dict())
    _dump(out / MODEL_FILE, stats.final_model.to_dict())
    (out / FACTSHEET_FILE).write_text(fs.to_json() + "\n")
    (out / REPORT_JSON).write_text(render(report, "json"))
    (out / REPORT_TEXT).write_text(render(report, "text"))
    return out


def _validated(path: Union[str, Path], schema: str) -> Dict[str, Any]:
    import jsonschema

    doc = _read_structured(path)
    try:
        jsonschema.validate(doc, load_schema(schema))
    except jsonschema.ValidationError as exc:
        raise InputError(f"{path}: {exc.message}") from exc
    return doc


def load_run(stats_path, factsheet_path, model_path) -> Tuple[RunStatistics, FactSheet]:
    final_model = ModelParams.from_dict(_validated(model_path, "model.schema.json"))
    stats_doc = _validated(stats_path, "stats.schema.json")
    if stats_doc["arch"] != final_model.arch.to_dict():
        raise InputError("model architecture does not match the statistics file")
    try:
        stats = RunStatistics.from_dict(stats_doc, final_model)
    except ConfigError as exc:
        raise InputError(str(exc)) from exc
    fs = FactSheet.from_dict(_validated(factsheet_path, "factsheet.schema.json"))
    return stats, fs


def evaluate(stats_path, factsheet_path, model_path, weights: Optional[WeightConfig] = None,
             include_discrimination: Optional[bool] = None) -> TrustReport:
    """Rebuild the trust report from persisted run artifacts.

    Weights default to the ones recorded with the run.
    """
    stats, fs = load_run(stats_path, factsheet_path, model_path)
    if weights is None:
        weights = WeightConfig.from_dict(stats.weights)
    return build_report(fs, stats, weights, preset=stats.preset, include_discrimination=include_discrimination)
