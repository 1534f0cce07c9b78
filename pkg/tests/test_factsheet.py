import json

import pytest

from fedtrust import data as ds
from fedtrust import federation as fl
from fedtrust.errors import InputError
from fedtrust.factsheet import (FactSheet, autofill_from_run, digest, evaluate_completeness)


def full_factsheet() -> FactSheet:
    return FactSheet.from_dict({
        "project": {"overview": "o", "purpose": "p", "background": "b"},
        "participants": {"count": 2, "org_names": ["a", "b"]},
        "data": {"provenance": "synthetic", "preprocessing": "none"},
        "configuration": {
            "optimizer": "FedAvg", "model_type": "mlp-1h",
            "global_hyperparams": {"rounds": 5, "max_timeout": 60, "termination_accuracy": 0.9},
            "local_hyperparams": {"learning_rate": 0.1, "epochs": 1},
        },
        "system": {"avg_training_time_s": 0.1, "model_size_params": 44,
                   "avg_upload_bytes": 352, "avg_download_bytes": 352},
    })


def tiny_run():
    spec = ds.DatasetSpec(num_classes=3, feature_dim=4, samples_per_client=20)
    cfg = fl.FederationConfig(3, 1.0, 1)
    return cfg, fl.run(cfg, ds.generate(spec, 3), cfg.architecture(4, 3))


def test_full_is_complete():
    assert set(evaluate_completeness(full_factsheet()).as_dict().values()) == {1}


def test_empty_is_incomplete():
    assert set(evaluate_completeness(FactSheet()).as_dict().values()) == {0}


def test_missing_purpose_zeroes_project():
    fs = full_factsheet()
    fs.project.purpose = None
    r = evaluate_completeness(fs)
    assert r.project == 0 and r.data == 1


def test_blank_string_counts_as_missing():
    fs = full_factsheet()
    fs.data.provenance = "   "
    assert evaluate_completeness(fs).data == 0


def test_participant_names_must_cover_count():
    fs = full_factsheet()
    fs.participants.count = 3
    assert evaluate_completeness(fs).participants == 0
    fs.participants.count = 0
    assert evaluate_completeness(fs).participants == 0


def test_overview_only_project_like_demo_setup():
    fs = FactSheet.from_dict({"project": {"overview": "digit recognition"}})
    assert evaluate_completeness(fs).project == 0


def test_unknown_keys_survive_round_trip():
    doc = full_factsheet().to_dict()
    doc["custom_section"] = {"x": 1}
    doc["project"]["tags"] = ["a"]
    fs = FactSheet.from_json(json.dumps(doc))
    assert fs.to_dict() == doc


def test_negative_number_rejected():
    with pytest.raises(InputError):
        FactSheet.from_dict({"system": {"model_size_params": -1}})


def test_non_numeric_rejected():
    with pytest.raises(InputError):
        FactSheet.from_dict({"configuration": {"local_hyperparams": {"epochs": "two"}}})


def test_bad_json():
    with pytest.raises(InputError):
        FactSheet.from_json("{not json")


def test_autofill_completes_configuration_and_system():
    cfg, stats = tiny_run()
    fs = autofill_from_run(FactSheet(), cfg, stats)
    r = evaluate_completeness(fs)
    assert (r.configuration, r.system) == (1, 1)
    assert fs.system.model_size_params == 15
    assert fs.configuration.optimizer == "FedAvg"
    assert fs.participants.count == 3


def test_autofill_keeps_human_text():
    cfg, stats = tiny_run()
    fs = FactSheet.from_dict({"project": {"purpose": "keep me"}, "participants": {"count": 9}})
    out = autofill_from_run(fs, cfg, stats)
    assert out.project.purpose == "keep me"
    assert out.participants.count == 9
    assert fs.configuration.optimizer is None  # input untouched


def test_autofill_without_run_leaves_system_incomplete():
    cfg, _ = tiny_run()
    assert evaluate_completeness(autofill_from_run(FactSheet(), cfg)).system == 0


def test_autofill_flags():
    cfg = fl.FederationConfig(4, 0.5, 1, dp=fl.DPSettings(epsilon=1.0), selector="roundrobin",
                              personalization_enabled=True)
    fs = autofill_from_run(FactSheet(), cfg)
    assert fs.flags.differential_privacy and fs.flags.personalization and fs.flags.non_random_selector


def test_digest_ignores_training_time():
    a, b = full_factsheet(), full_factsheet()
    b.system.avg_training_time_s = 99.0
    assert digest(a) == digest(b)
    b.data.provenance = "other"
    assert digest(a) != digest(b)
