"""Shared fixtures."""

import datetime

import pytest


@pytest.fixture
def small_spec():
    """A two-station, two-variable synthetic spec that runs in seconds."""
    return {
        "stations": ["KSEA", "KPDX"],
        "start_date": datetime.date(2007, 1, 1),
        "days": 90,
        "members": 4,
        "variables": ["mintemp", "maxtemp"],
        "correlation": [[1.0, 0.5], [0.5, 1.0]],
        "member_bias": [0.3, -0.2, 0.1, 0.0],
        "member_noise": 0.3,
        "seed": 7,
        "window": 12,
    }
