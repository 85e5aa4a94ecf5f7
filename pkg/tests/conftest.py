from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cdsxva.config import WORKERS_ENV
from cdsxva.factors import CirParams, FactorRegime

settings.register_profile("ci", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")

HIGH = FactorRegime.HIGH.params
REGIMES = [FactorRegime.LOW, FactorRegime.MEDIUM, FactorRegime.HIGH]
SEED = 12345


def const_params(x: float) -> CirParams:
    """Factor frozen at ``x`` (no drift, no noise)."""
    return CirParams(0.0, 0.0, 0.0, x)


@pytest.fixture(autouse=True)
def _single_worker(monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, os.environ.get(WORKERS_ENV, "1"))


def within(value, target, se, k=3.0):
    return abs(value - target) <= k * se


@pytest.fixture
def rng():
    return np.random.default_rng(7)


ROOT_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "high_regime.yaml"
