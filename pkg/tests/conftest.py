"""Shared test configuration: keep every test hermetic and seed-stable."""

import pytest


@pytest.fixture(autouse=True)
def _isolated_results_root(monkeypatch, tmp_path):
    # keep CLI output away from the repository and from other tests
    monkeypatch.setenv("CVDLAB_RESULTS_ROOT", str(tmp_path / "runs"))
