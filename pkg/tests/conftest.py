import copy
import json

import numpy as np
import pytest

from ricsim.config import POLICY_CORPUS_DIR, SCENARIO_DIR
from ricsim.scenario import from_dict, load_document


BASE_DOC = {
    "name": "unit",
    "seed": 7,
    "duration_s": 1.0,
    "tick_s": 0.1,
    "bounds": {"x_min": -100, "y_min": -100, "x_max": 100, "y_max": 100},
    "cells": [{"cell_id": "c1", "x": 0, "y": 0}],
}


@pytest.fixture
def base_doc():
    """Smallest valid scenario document; tests mutate their own copy."""
    return copy.deepcopy(BASE_DOC)


@pytest.fixture
def bundled():
    """Loader of the scenario documents shipped under data/scenarios."""
    def load(name):
        return load_document(SCENARIO_DIR / f"{name}.json")
    return load


@pytest.fixture
def make_config(base_doc):
    def build(**changes):
        doc = copy.deepcopy(base_doc)
        doc.update(changes)
        return from_dict(doc)
    return build


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def policy_files(kind):
    return sorted((POLICY_CORPUS_DIR / kind).glob("*.json"))


def policy_doc(policy_id, policy_type, scope, body):
    return json.dumps({"policy_id": policy_id, "policy_type": policy_type, "scope": scope, "body": body})
