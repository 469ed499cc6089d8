"""Collects one status line per acceptance criterion and prints them after the run."""

import os
from pathlib import Path

import pytest

ACCEPTANCE: dict[int, list[str]] = {}


def record(criterion: int, status: str, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append(f"{status} {detail}")


@pytest.fixture
def acceptance():
    return record


def mafengwo_location():
    """``(dir, layout)`` of a local Mafengwo copy, or None.

    Looks at ``ALIGNGROUP_MAFENGWO_DIR`` and then ``data/Mafengwo`` next to the
    package; either the canonical or the AGREE-style layout is accepted.
    """
    candidates = [os.environ.get("ALIGNGROUP_MAFENGWO_DIR"), Path(__file__).resolve().parent.parent / "data" / "Mafengwo"]
    for c in candidates:
        if not c:
            continue
        root = Path(c)
        if (root / "user_train.tsv").exists():
            return root, "canonical"
        if (root / "userRatingTrain.txt").exists():
            return root, "agree"
    return None


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE):
        for line in ACCEPTANCE[criterion]:
            terminalreporter.write_line(f"criterion {criterion:2d}: {line}")
