import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from routebench.control_schema import (
    REASON_MAX_CHARS,
    ControlRecord,
    FailureClass,
    ParseFailure,
    RouteLabel,
    classify,
    parse_control_record,
    validate_schema,
)

VALID = {"route": "dev", "confidence": 0.9, "memory": True, "tool": False, "reason": "stack trace"}

records = st.builds(
    ControlRecord,
    route=st.sampled_from(list(RouteLabel)),
    confidence=st.floats(0, 1, allow_nan=False),
    memory=st.booleans(),
    tool=st.booleans(),
    reason=st.text(min_size=1, max_size=600).filter(lambda s: s.strip()),
)


def test_valid_record_parses():
    rec = parse_control_record(json.dumps(VALID))
    assert rec == ControlRecord(RouteLabel.DEV, 0.9, True, False, "stack trace")


@given(records)
def test_json_round_trip(rec):
    assert parse_control_record(rec.to_json()) == rec
    assert validate_schema(json.loads(rec.to_json())) == []


def test_canonical_serialization_has_fixed_key_order():
    rec = ControlRecord(RouteLabel.CHAT, 0.5, False, False, "hi")
    assert rec.to_json() == '{"route":"chat","confidence":0.5,"memory":false,"tool":false,"reason":"hi"}'


@pytest.mark.parametrize("raw", ["", "not json", '{"route": "dev",', "[1, 2", "{'route': 'dev'}"])
def test_syntax_errors_are_parse_errors(raw):
    assert classify(raw) is FailureClass.JSON_PARSE_ERROR


@pytest.mark.parametrize("raw", ['{"route":"dev","confidence":NaN,"memory":true,"tool":false,"reason":"x"}',
                                 '{"route":"dev","confidence":Infinity,"memory":true,"tool":false,"reason":"x"}'])
def test_nonstandard_constants_rejected(raw):
    assert classify(raw) is FailureClass.JSON_PARSE_ERROR


@pytest.mark.parametrize("patch, path", [
    ({"route": "develop"}, ".route"),
    ({"route": "DEV"}, ".route"),
    ({"confidence": 1.5}, ".confidence"),
    ({"confidence": -0.01}, ".confidence"),
    ({"confidence": "0.9"}, ".confidence"),
    ({"confidence": True}, ".confidence"),
    ({"memory": "true"}, ".memory"),
    ({"tool": 1}, ".tool"),
    ({"reason": "   "}, ".reason"),
    ({"reason": 3}, ".reason"),
    ({"extra": 1}, ".extra"),
])
def test_schema_violations(patch, path):
    doc = {**VALID, **patch}
    with pytest.raises(ParseFailure) as exc:
        parse_control_record(json.dumps(doc))
    assert exc.value.failure_class is FailureClass.SCHEMA_INVALID
    assert [v.path for v in exc.value.violations] == [path]


def test_all_violations_reported():
    violations = validate_schema({"route": "x", "confidence": 2})
    paths = sorted(v.path for v in violations)
    assert paths == [".confidence", ".memory", ".reason", ".route", ".tool"]


def test_non_object_is_schema_invalid():
    assert classify("[1, 2, 3]") is FailureClass.SCHEMA_INVALID
    assert classify("42") is FailureClass.SCHEMA_INVALID


def test_object_embedded_in_prose_is_extracted():
    raw = "Sure! Here is the record:\n" + json.dumps(VALID) + "\nHope that helps."
    assert parse_control_record(raw).route is RouteLabel.DEV


def test_long_reason_truncated_not_rejected():
    rec = parse_control_record(json.dumps({**VALID, "reason": "a" * 2000}))
    assert len(rec.reason) == REASON_MAX_CHARS


def test_record_rejects_bad_values():
    with pytest.raises(ValueError):
        ControlRecord(RouteLabel.DEV, 1.1, False, False, "x")
    with pytest.raises(ValueError):
        ControlRecord(RouteLabel.DEV, 0.5, False, False, " ")
    with pytest.raises(ValueError):
        ControlRecord("nope", 0.5, False, False, "x")


def test_classes_are_disjoint():
    # syntax is checked first: broken JSON with a bad route is a parse error only
    assert classify('{"route":"develop"') is FailureClass.JSON_PARSE_ERROR
