import json

import numpy as np
import pytest

from conftest import policy_doc, policy_files
from ricsim.errors import PolicyError
from ricsim.policy import (
    A1Policy,
    AllocationSchema,
    Label,
    PolicyType,
    SchemaKind,
    ScopeKind,
    cross_check,
    load_policy_file,
    parse,
    serialize,
    slice_key,
    slice_scope_matches,
)


def ts(policy_id, scope, cells):
    return parse(policy_doc(policy_id, "TS_PREFERENCES", scope, {"cells": cells}))


# -- corpus ------------------------------------------------------------------

@pytest.mark.parametrize("path", policy_files("valid"), ids=lambda p: p.stem)
def test_valid_corpus_parses(path):
    policy = load_policy_file(path)
    assert isinstance(policy, A1Policy)
    assert parse(serialize(policy)) == policy


@pytest.mark.parametrize("path", policy_files("invalid"), ids=lambda p: p.stem)
def test_invalid_corpus_is_rejected(path):
    with pytest.raises(PolicyError) as info:
        load_policy_file(path)
    assert info.value.path.startswith("$")
    assert info.value.message


def test_corpus_sizes():
    assert len(policy_files("valid")) >= 10
    assert len(policy_files("invalid")) >= 15


# -- parsing details ---------------------------------------------------------

def test_ts_policy_fields():
    p = ts("p1", {"ue_id": "ue1"}, {"c2": "AVOID", "c1": "PREFER"})
    assert p.policy_type is PolicyType.TS_PREFERENCES
    assert p.scope.kind is ScopeKind.UE and p.scope.value == "ue1"
    assert p.body.labels == {"c1": Label.PREFER, "c2": Label.AVOID}
    assert [cell for cell, _ in p.body.cells] == ["c1", "c2"]


def test_error_paths_point_at_offender():
    with pytest.raises(PolicyError) as info:
        ts("p1", {"ue_id": "ue1"}, {"c1": "MAYBE"})
    assert info.value.path == "$.body.cells.c1"

    doc = policy_doc("p1", "SLA_TARGET", {"slice_id": "c1/1"},
                     {"guaranteed_throughput_bps": 9e7, "max_throughput_bps": 1e7})
    with pytest.raises(PolicyError) as info:
        parse(doc)
    assert info.value.path == "$.body.guaranteed_throughput_bps"

    with pytest.raises(PolicyError) as info:
        parse("{not json")
    assert info.value.path == "$"


def test_parse_accepts_bytes():
    raw = policy_doc("p1", "TA_BLACKLIST", {"cell_id": "c1"},
                     {"cell_id": "c1", "ta_indices": [5, 2], "ttl_s": 30}).encode()
    p = parse(raw)
    assert p.body.ta_indices == (2, 5)
    assert p.body.ttl_s == 30.0


def test_nan_is_rejected():
    with pytest.raises(PolicyError):
        parse('{"policy_id": "p", "policy_type": "SLA_TARGET", "scope": {"cell_id": "c1"},'
              ' "body": {"max_throughput_bps": Infinity}}')


@pytest.mark.parametrize("text,kind,qi", [
    ("EQUAL", SchemaKind.EQUAL, None),
    ("RESERVE", SchemaKind.RESERVE, None),
    ("PREFER_3", SchemaKind.PREFER_X, 3),
    ("PREFER_255", SchemaKind.PREFER_X, 255),
])
def test_allocation_schema_parse(text, kind, qi):
    schema = AllocationSchema.parse(text)
    assert schema.kind is kind
    assert schema.prefer_5qi == qi
    assert str(schema) == text


def test_allocation_schema_rejects_unknown():
    with pytest.raises(ValueError):
        AllocationSchema.parse("PREFER_x")


def test_describe():
    assert ts("p1", {"ue_id": "ue1"}, {"c1": "PREFER"}).describe() == "PREFER c1 for ue_id=ue1"
    sla = parse(policy_doc("q", "SLA_TARGET", {"cell_id": "c1"}, {"allocation_schema": "RESERVE"}))
    assert sla.describe() == "SLA {'allocation_schema': 'RESERVE'} for cell_id=c1"
    bl = parse(policy_doc("b", "TA_BLACKLIST", {"cell_id": "g"}, {"cell_id": "g", "ta_indices": [4, 3], "ttl_s": 9}))
    assert bl.describe() == "blacklist TA [3, 4] on g"


def test_slice_scopes():
    assert slice_key("c1", 3) == "c1/3"
    assert slice_scope_matches("5qi:3", "c9", 3)
    assert slice_scope_matches("5qi:3", None, 3)
    assert not slice_scope_matches("5qi:3", "c1", 4)
    assert slice_scope_matches("c1/3", "c1", 3)
    assert not slice_scope_matches("c1/3", "c2", 3)


# -- cross-check -------------------------------------------------------------

def test_cross_check_clean():
    active = [ts("a", {"ue_id": "ue1"}, {"c1": "PREFER"})]
    assert cross_check(active, ts("b", {"ue_id": "ue2"}, {"c1": "AVOID"})) == []


def test_cross_check_duplicate_id():
    active = [ts("a", {"ue_id": "ue1"}, {"c1": "PREFER"})]
    findings = cross_check(active, ts("a", {"ue_id": "ue2"}, {"c1": "PREFER"}))
    assert [f.kind for f in findings] == ["duplicate_id"]
    assert findings[0].policy_ids == ("a",)


def test_cross_check_same_scope_with_contradiction():
    active = [ts("a", {"ue_id": "ue1"}, {"c1": "PREFER"})]
    findings = cross_check(active, ts("b", {"ue_id": "ue1"}, {"c1": "AVOID"}))
    assert [f.kind for f in findings] == ["contradictory_label", "duplicate_scope"]
    assert all(f.policy_ids == ("a", "b") for f in findings)


def test_cross_check_replacement_is_not_a_conflict():
    active = [ts("a", {"ue_id": "ue1"}, {"c1": "PREFER"})]
    assert cross_check(active, ts("a", {"ue_id": "ue1"}, {"c1": "AVOID"})) == []


def test_cross_check_no_serviceable_cell():
    p = ts("a", {"ue_id": "ue1"}, {"c1": "FORBID"})
    assert [f.kind for f in cross_check([], p)] == ["no_serviceable_cell"]
    assert cross_check([], p, known_cells=["c1", "c2"]) == []
    two = ts("b", {"ue_id": "ue1"}, {"c1": "FORBID", "c2": "FORBID"})
    assert [f.kind for f in cross_check([], two, known_cells=["c1", "c2"])] == ["no_serviceable_cell"]


def test_cross_check_merges_slice_and_ue_labels():
    active = [ts("s", {"slice_id": "5qi:1"}, {"c1": "FORBID"})]
    findings = cross_check(active, ts("u", {"ue_id": "ue1"}, {"c2": "FORBID"}), known_cells=["c1", "c2"])
    assert [(f.kind, f.policy_ids) for f in findings] == [("no_serviceable_cell", ("s", "u"))]
    # the UE document lifting the slice FORBID leaves c1 serviceable
    lifted = cross_check(active, ts("u", {"ue_id": "ue1"}, {"c1": "AVOID", "c2": "FORBID"}), known_cells=["c1", "c2"])
    assert [f.kind for f in lifted] == ["contradictory_label"]


def test_cross_check_slice_candidate_against_ue_documents():
    active = [ts("u1", {"ue_id": "ue1"}, {"c1": "FORBID"}), ts("u2", {"ue_id": "ue2"}, {"c1": "PREFER"})]
    findings = cross_check(active, ts("s", {"slice_id": "c1/1"}, {"c1": "PREFER", "c2": "FORBID"}),
                           known_cells=["c1", "c2"])
    assert sorted((f.kind, f.policy_ids) for f in findings) == [
        ("contradictory_label", ("s", "u1")),
        ("no_serviceable_cell", ("s", "u1")),
    ]


def test_cross_check_slice_scopes_meet_on_a_shared_5qi():
    active = [ts("a", {"slice_id": "5qi:2"}, {"c1": "FORBID"}), ts("b", {"slice_id": "c2/1"}, {"c1": "FORBID"})]
    assert cross_check(active, ts("c", {"slice_id": "c1/1"}, {"c1": "PREFER", "c2": "FORBID"}),
                       known_cells=["c1", "c2"]) == []
    clash = cross_check(active, ts("d", {"slice_id": "5qi:1"}, {"c1": "PREFER"}))
    assert [(f.kind, f.policy_ids) for f in clash] == [
        ("contradictory_label", ("b", "d")),
        ("no_serviceable_cell", ("b", "d")),
    ]


def test_cross_check_is_deterministic():
    active = [ts(f"p{i}", {"ue_id": "ue1"}, {"c1": "PREFER"}) for i in range(5)]
    candidate = ts("z", {"ue_id": "ue1"}, {"c1": "FORBID"})
    first = cross_check(active, candidate)
    assert cross_check(list(reversed(active)), candidate) == first


# -- robustness --------------------------------------------------------------

def test_random_bytes_never_crash():
    rng = np.random.default_rng(2024)
    valid = [path.read_bytes() for path in policy_files("valid")]
    for i in range(10_000):
        if i % 2:
            data = rng.integers(0, 256, size=int(rng.integers(0, 64)), dtype=np.uint8).tobytes()
        else:
            # truncate or flip one byte of a valid document
            doc = bytearray(valid[i % len(valid)])
            cut = int(rng.integers(0, len(doc)))
            if i % 4:
                doc[cut] = int(rng.integers(0, 256))
                data = bytes(doc)
            else:
                data = bytes(doc[:cut])
        try:
            result = parse(data)
        except PolicyError:
            continue
        assert isinstance(result, A1Policy)
        assert parse(serialize(result)) == result


def test_serialize_is_canonical():
    p = ts("p1", {"slice_id": "5qi:1"}, {"c2": "PREFER", "c1": "AVOID"})
    text = serialize(p)
    assert json.loads(text)["body"] == {"cells": {"c1": "AVOID", "c2": "PREFER"}}
    assert serialize(parse(text)) == text
