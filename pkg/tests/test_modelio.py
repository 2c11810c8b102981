import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from micpkit.errors import ModelError
from micpkit.generate import generate_instance
from micpkit.modelio import dumps, from_document, load, save, to_document
from micpkit.section6 import build_instance


@pytest.mark.parametrize("profile,seed", [
    ("micp-smooth", 0), ("micp-smooth", 3), ("micp-separable", 1), ("twostage-small", 2),
])
def test_round_trip_identity(profile, seed, tmp_path):
    inst = generate_instance(seed, profile)
    doc = to_document(inst)
    text = dumps(doc)
    again = to_document(from_document(json.loads(text)))
    assert dumps(again) == text
    path = tmp_path / "m.json"
    save(inst, path)
    loaded = load(path)
    assert dumps(to_document(loaded)) == text


def test_walkthrough_instance_round_trip(tmp_path):
    inst = build_instance()
    path = tmp_path / "s6.json"
    save(inst, path)
    loaded = load(path)
    assert dumps(to_document(loaded)) == dumps(to_document(inst))
    assert len(loaded.scenarios) == 2
    assert loaded.ambiguity.is_singleton()


@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False, width=64))
def test_seventeen_digit_float_round_trip(x):
    assert float(f"{x:.17g}") == x


def test_malformed_document_rejected():
    with pytest.raises((ModelError, KeyError)):
        from_document({"variables": [{"name": "x"}], "objective": {"linear": {"c": [1.0]}}})


def test_unreadable_file_raises(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ModelError):
        load(path)
