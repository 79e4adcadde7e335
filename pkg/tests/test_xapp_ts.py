import numpy as np
import pytest

from conftest import policy_doc
from ricsim.errors import DomainError
from ricsim.policy import parse
from ricsim.ransim import run
from ricsim.runner import run_config
from ricsim.scenario import apply_overrides, from_dict
from ricsim.wireless import Position, PropagationParams, rsrp_dbm
from ricsim.xapp_ts import TsState, association_table, calibration_offset, decide


def ts_policy(policy_id, scope, cells):
    return parse(policy_doc(policy_id, "TS_PREFERENCES", scope, {"cells": cells}))


def state_with(*policies, exponent=2.0, hysteresis=0.0):
    state = TsState(calibration_offset(exponent), hysteresis)
    for p in policies:
        state.install(p)
    return state


def test_calibration_offset():
    assert calibration_offset(2.0) == pytest.approx(9.5424, abs=1e-4)
    assert calibration_offset(1.0) == pytest.approx(4.7712, abs=1e-4)
    with pytest.raises(DomainError):
        calibration_offset(0.0)


def test_strongest_cell_without_policy():
    assert decide("ue1", {"c1": -80.0, "c2": -70.0}, state_with()) == "c2"


def test_prefer_and_avoid_shift_scores():
    prefer = state_with(ts_policy("p", {"ue_id": "ue1"}, {"c1": "PREFER"}))
    assert decide("ue1", {"c1": -80.0, "c2": -70.0}, prefer) == "c2"
    assert decide("ue1", {"c1": -79.0, "c2": -70.0}, prefer) == "c1"
    avoid = state_with(ts_policy("p", {"ue_id": "ue1"}, {"c2": "AVOID"}))
    assert decide("ue1", {"c1": -79.0, "c2": -70.0}, avoid) == "c1"
    assert decide("ue2", {"c1": -79.0, "c2": -70.0}, avoid) == "c2"


def test_forbid_removes_cells():
    state = state_with(ts_policy("p", {"ue_id": "ue1"}, {"c2": "FORBID"}))
    assert decide("ue1", {"c1": -120.0, "c2": -40.0}, state) == "c1"
    everything = state_with(ts_policy("p", {"ue_id": "ue1"}, {"c1": "FORBID", "c2": "FORBID"}))
    assert decide("ue1", {"c1": -60.0, "c2": -40.0}, everything) is None
    assert everything.last_decision["ue1"] is None


def test_hysteresis_keeps_serving_cell():
    state = state_with(hysteresis=3.0)
    assert decide("ue1", {"c1": -75.0, "c2": -74.0}, state, serving="c1") == "c1"
    assert decide("ue1", {"c1": -75.0, "c2": -71.0}, state, serving="c1") == "c2"


def test_slice_policy_with_ue_override():
    state = state_with(
        ts_policy("s", {"slice_id": "5qi:1"}, {"c2": "PREFER", "c1": "AVOID"}),
        ts_policy("u", {"ue_id": "ue7"}, {"c1": "PREFER"}),
    )
    assert state.labels_for("ue1", five_qi=1)["c2"].value == "PREFER"
    assert state.labels_for("ue1", five_qi=2) == {}
    labels = state.labels_for("ue7", five_qi=1)
    assert (labels["c1"].value, labels["c2"].value) == ("PREFER", "PREFER")


def test_empty_report_and_bad_state():
    with pytest.raises(DomainError):
        decide("ue1", {}, state_with())
    with pytest.raises(DomainError):
        TsState(0.0)
    with pytest.raises(DomainError):
        TsState(3.0, hysteresis_db=-1)


@pytest.mark.parametrize("exponent", [2.0, 3.0, 3.5])
@pytest.mark.parametrize("label,boundary", [("PREFER", 150.0), ("AVOID", 50.0), (None, 100.0)])
def test_handover_boundary_by_position_sweep(exponent, label, boundary):
    p = PropagationParams(ref_loss_db=40, exponent=exponent, tx_power_dbm=30)
    policies = [ts_policy("p", {"ue_id": "ue1"}, {"c1": label})] if label else []
    state = state_with(*policies, exponent=exponent)
    c1, c2 = Position(0, 0), Position(200, 0)
    first_c2 = None
    for x in np.arange(1.0, 200.0, 0.25):
        ue = Position(float(x), 0.0)
        rsrp = {"c1": rsrp_dbm(ue, c1, None, p), "c2": rsrp_dbm(ue, c2, None, p)}
        if decide("ue1", rsrp, state) == "c2":
            first_c2 = float(x)
            break
    assert first_c2 == pytest.approx(boundary, abs=0.5)


def test_association_table_walkthrough(bundled):
    result = run_config(from_dict(bundled("ts_table")))
    table = result.tables["ts_association"]
    c1 = table[table["cell"] == "c1"].set_index("phase")["fraction"]
    assert list(c1.index) == ["NONE", "PREFER c1 for ue_id=ue1", "AVOID c1 for ue_id=ue1",
                              "FORBID c1 for ue_id=ue1"]
    assert c1["NONE"] == pytest.approx(0.5, abs=0.02)
    assert c1["PREFER c1 for ue_id=ue1"] == pytest.approx(0.75, abs=0.02)
    assert c1["AVOID c1 for ue_id=ue1"] == pytest.approx(0.25, abs=0.02)
    assert c1["FORBID c1 for ue_id=ue1"] == 0.0
    assert table.groupby("phase", sort=False)["fraction"].sum().tolist() == pytest.approx([1.0] * 4)
    assert result.summary["handovers"] > 0


def test_association_mirrors_for_second_cell(bundled):
    doc = bundled("ts_table")
    for i, timed in enumerate(doc["policies"]):
        label = next(iter(timed["document"]["body"]["cells"].values()))
        doc = apply_overrides(doc, [(f"policies.{i}.document.body.cells", {"c2": label})])
    table = run_config(from_dict(doc)).tables["ts_association"]
    c2 = table[table["cell"] == "c2"].set_index("phase")["fraction"]
    assert c2["PREFER c2 for ue_id=ue1"] == pytest.approx(0.75, abs=0.02)
    assert c2["AVOID c2 for ue_id=ue1"] == pytest.approx(0.25, abs=0.02)
    assert c2["FORBID c2 for ue_id=ue1"] == 0.0


def test_association_table_without_samples(make_config):
    trace = run(make_config(duration_s=0.0))
    table = association_table(trace, ["c1"])
    assert table[["phase", "cell", "samples", "fraction"]].values.tolist() == [["NONE", "c1", 0, 0.0]]
