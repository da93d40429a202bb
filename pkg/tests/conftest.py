import numpy as np
import pytest

from sptlab.marketdata import RiskFreeCurve, panel_from_records


@pytest.fixture
def tiny_panel():
    """One day, three securities."""
    return panel_from_records([
        ("2001-03-05", "AAA", 0.01, 30.0),
        ("2001-03-05", "BBB", -0.02, 10.0),
        ("2001-03-05", "CCC", 0.005, 20.0),
    ])


@pytest.fixture
def flat_rf():
    """A constant 3% curve that covers any panel starting after 1990."""
    return RiskFreeCurve(np.array(["1990-01-01"], dtype="datetime64[D]"),
                         np.array([0.03]))


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path
