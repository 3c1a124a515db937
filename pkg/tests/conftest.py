from __future__ import annotations

from importlib.resources import files

import pytest

from hpsec.syntax import load_model

CORPUS = files("hpsec") / "corpus"

# ranges that exercise both controller branches of the vehicle models
VEHICLE_BOUNDS = {
    "eps": (0.05, 0.5),
    "d_p": (20.0, 200.0),
    "d_p_1": (20.0, 200.0),
    "A": (1.0, 5.0),
    "B": (1.0, 5.0),
    "T": (18.0, 24.0),
    "temp_p": (10.0, 30.0),
    "temp_p_1": (10.0, 30.0),
}


def corpus_path(name: str) -> str:
    return str(CORPUS / name)


@pytest.fixture
def load():
    return lambda name: load_model(corpus_path(name))
