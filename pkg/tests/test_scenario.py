import json

import pytest

from ricsim.config import SCENARIO_DIR
from ricsim.errors import ConfigError
from ricsim.scenario import apply_overrides, from_dict, load_document, load_scenario
from ricsim.utils import get_dotted, parse_override, set_dotted
from ricsim.wireless import LocalizationTechnique


BUNDLED = ["ts_table", "qra_table", "ssd_scs_sweep", "bmm_loc_sweep", "ts_bmm_conflict"]


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_validate(name):
    cfg = load_scenario(SCENARIO_DIR / f"{name}.json")
    assert cfg.name == name
    assert cfg.cells


def test_defaults(make_config):
    cfg = make_config()
    assert cfg.tick_s == pytest.approx(0.1)
    assert cfg.boundary == "bounce"
    assert cfg.ta.scs_khz == 15
    assert cfg.localization is LocalizationTechnique.PERFECT
    assert cfg.ric.priority == ["bmm", "ts", "qra", "ssd"]
    assert not any([cfg.xapps.ts.enabled, cfg.xapps.qra.enabled, cfg.xapps.ssd.enabled, cfg.xapps.bmm.enabled])
    assert cfg.trace.serving_every == 1


def test_unknown_key_names_its_path(base_doc):
    base_doc["cells"][0]["colour"] = "red"
    with pytest.raises(ConfigError) as info:
        from_dict(base_doc)
    paths = [path for path, _ in info.value.diagnostics]
    assert "$.cells[0]" in paths
    assert any("colour" in message for _, message in info.value.diagnostics)


def test_every_schema_problem_is_reported(base_doc):
    base_doc["tick_s"] = -1
    base_doc["xapps"] = {"bmm": {"mode": "magic"}}
    with pytest.raises(ConfigError) as info:
        from_dict(base_doc)
    paths = {path for path, _ in info.value.diagnostics}
    assert {"$.tick_s", "$.xapps.bmm.mode"} <= paths


def test_semantic_checks(base_doc):
    base_doc["bounds"]["x_max"] = -200
    base_doc["cells"].append({"cell_id": "c1", "x": 5, "y": 5})
    base_doc["obstacles"] = [{"cell_id": "c1", "beam_ids": [0], "x_min": 0, "y_min": 0, "x_max": 1, "y_max": 1,
                              "attenuation_db": 5}]
    base_doc["ric"] = {"priority": ["bmm", "xyz"]}
    with pytest.raises(ConfigError) as info:
        from_dict(base_doc)
    paths = {path for path, _ in info.value.diagnostics}
    assert {"$.bounds.x_max", "$.cells[1].cell_id", "$.obstacles[0].beam_ids", "$.ric.priority[1]"} <= paths


def test_generated_ue_ids_must_not_collide(base_doc):
    base_doc["ues"] = [{"ue_id": "ue2", "x": 1, "y": 1}]
    base_doc["ue_groups"] = [{"prefix": "ue", "count": 3, "placement": {"type": "point", "x": 2, "y": 2}}]
    with pytest.raises(ConfigError) as info:
        from_dict(base_doc)
    assert info.value.diagnostics[0][0] == "$.ue_groups[0].prefix"


def test_placement_needs_its_fields(base_doc):
    base_doc["ue_groups"] = [{"prefix": "u", "count": 1, "placement": {"type": "disk", "x": 0, "y": 0}}]
    with pytest.raises(ConfigError) as info:
        from_dict(base_doc)
    assert info.value.diagnostics == [("$.ue_groups[0].placement", "disk placement needs radius_m")]


def test_annulus_radii_must_be_ordered(base_doc):
    base_doc["ue_groups"] = [{"prefix": "u", "count": 1, "kind": "IOT_LEGIT",
                              "placement": {"type": "annulus", "x": 0, "y": 0, "radius_m": 50, "min_radius_m": 50}}]
    with pytest.raises(ConfigError) as info:
        from_dict(base_doc)
    assert info.value.diagnostics == [("$.ue_groups[0].placement.min_radius_m", "must be smaller than radius_m")]


def test_mobile_ue_on_a_cell_site(base_doc):
    base_doc["ues"] = [{"ue_id": "ue1", "x": 0, "y": 0, "speed_mps": 5}]
    base_doc["ue_groups"] = [{"prefix": "m", "count": 2, "placement": {"type": "point", "x": 0, "y": 0}}]
    with pytest.raises(ConfigError) as info:
        from_dict(base_doc)
    paths = [path for path, _ in info.value.diagnostics]
    assert paths == ["$.ues[0]", "$.ue_groups[0].placement"]
    assert "cell c1" in info.value.diagnostics[0][1]


def test_static_device_may_sit_on_a_cell_site(base_doc):
    base_doc["ues"] = [{"ue_id": "d1", "x": 0, "y": 0, "kind": "IOT_LEGIT"}]
    assert from_dict(base_doc).ues[0].kind == "IOT_LEGIT"


def test_embedded_policy_errors_are_prefixed(base_doc):
    base_doc["policies"] = [{"at_s": 0, "document": {
        "policy_id": "p", "policy_type": "TS_PREFERENCES", "scope": {"ue_id": "u"}, "body": {"cells": {"c1": "NO"}},
    }}]
    with pytest.raises(ConfigError) as info:
        from_dict(base_doc)
    assert info.value.diagnostics[0][0] == "$.policies[0].document.body.cells.c1"


def test_timed_policies_are_parsed(bundled):
    cfg = from_dict(bundled("ts_table"))
    assert [p.at_s for p in cfg.policies] == [39.6, 79.2, 118.8]
    assert [p.policy.describe() for p in cfg.policies] == [
        "PREFER c1 for ue_id=ue1", "AVOID c1 for ue_id=ue1", "FORBID c1 for ue_id=ue1",
    ]


# -- overrides ---------------------------------------------------------------

def test_overrides_address_nested_fields(base_doc):
    doc = apply_overrides(base_doc, ["cells.0.prb_count=50", "ta.scs_khz=240", ("localization", "GPS")])
    cfg = from_dict(doc)
    assert cfg.cells[0].prb_count == 50
    assert cfg.ta.scs_khz == 240
    assert cfg.localization is LocalizationTechnique.GPS
    assert "ta" not in base_doc


def test_override_of_unknown_field_is_a_config_error(base_doc):
    doc = apply_overrides(base_doc, ["xapps.ts.bogus=1"])
    with pytest.raises(ConfigError) as info:
        from_dict(doc)
    assert info.value.diagnostics[0][0] == "$.xapps.ts"


@pytest.mark.parametrize("item", ["no_equals_sign", "=5", "cells.9.x=1", "name.inner=1"])
def test_bad_overrides(base_doc, item):
    with pytest.raises(ConfigError):
        apply_overrides(base_doc, [item])


def test_parse_override_values():
    assert parse_override("a.b=1.5") == ("a.b", 1.5)
    assert parse_override("a=true") == ("a", True)
    assert parse_override("a=GPS") == ("a", "GPS")
    assert parse_override("a=[1, 2]") == ("a", [1, 2])


def test_dotted_helpers():
    doc = {"cells": [{"x": 1}]}
    set_dotted(doc, "cells.0.x", 4)
    set_dotted(doc, "ta.scs_khz", 30)
    assert get_dotted(doc, "cells.0.x") == 4
    assert doc["ta"] == {"scs_khz": 30}


# -- files -------------------------------------------------------------------

def test_missing_file(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_document(tmp_path / "nope.json")
    assert info.value.diagnostics[0][0] == "$"


def test_non_object_and_nan_documents(tmp_path):
    path = tmp_path / "list.json"
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_document(path)
    path.write_text('{"seed": NaN}')
    with pytest.raises(ConfigError):
        load_document(path)


def test_seed_argument_wins(tmp_path, base_doc):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(base_doc))
    assert load_scenario(path, seed=99).seed == 99
    assert load_scenario(path).seed == 7
