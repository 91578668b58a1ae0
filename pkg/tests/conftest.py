"""Session fixtures: the file:// corpus host and replayed pipeline snapshots."""

from __future__ import annotations

import shutil
from pathlib import Path

import pytest

from lemma_forge.cli import main as cli_main

from tests.support import LLM_FIXTURES, build_archive_host, run_argv


@pytest.fixture(scope="session")
def archive_host(tmp_path_factory):
    return build_archive_host(tmp_path_factory.mktemp("host"))


@pytest.fixture(scope="session")
def corpus_snapshot(tmp_path_factory, archive_host) -> Path:
    """One full replayed pipeline run over the bundled corpus. Read-only:
    tests that append or rewrite stages must use ``corpus_snapshot_copy``."""
    if not LLM_FIXTURES.is_dir():
        pytest.fail(
            f"committed model-call fixtures missing at {LLM_FIXTURES}; "
            "regenerate with `python -m tests.support`"
        )
    snap = tmp_path_factory.mktemp("pipeline") / "weekly"
    code = cli_main(run_argv(snap, archive_host.endpoint, replay=True))
    assert code == 0, "replayed pipeline run failed"
    return snap


@pytest.fixture()
def corpus_snapshot_copy(corpus_snapshot, tmp_path) -> Path:
    dest = tmp_path / "snapshot"
    shutil.copytree(corpus_snapshot, dest)
    return dest
