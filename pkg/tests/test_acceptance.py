"""Runs every published-device acceptance criterion at its stated tolerance.

One test per criterion; each prints a single PASS/FAIL line so the suite
output doubles as a reproduction record."""

import pytest

from photonstat.acceptance import CRITERION_IDS, run_criterion


@pytest.mark.parametrize("criterion_id", CRITERION_IDS)
def test_criterion(criterion_id, capsys):
    result = run_criterion(criterion_id)
    status = "PASS" if result.passed else "FAIL"
    if result.informational and result.passed:
        status = "INFO"
    with capsys.disabled():
        print(f"{status} {result.criterion_id}: {result.title}")
        for line in result.details:
            print(f"    {line}")
    assert result.passed, "\n".join(result.details)
