"""Acceptance criteria at their pinned tolerances.

Each test prints one PASS/FAIL line (plus its sub-checks) to the terminal.
Several criteria run 10**7 to 3 * 10**8 Monte Carlo trials; the whole file
takes roughly ten to fifteen minutes on one core.
"""

import json

import pytest

from stretchlab.acceptance import CRITERIA, INVARIANTS, run_invariant


def _report(capsys, result):
    with capsys.disabled():
        print()
        print(result.line())
        for name, ok in result.parts.items():
            print(f"      {'ok ' if ok else 'BAD'}  {name}")
        print("      " + json.dumps(result.details, default=str)[:600])


@pytest.mark.parametrize("key", [k for k in CRITERIA if k != "9"])
def test_criterion(key, capsys):
    result = CRITERIA[key]()
    _report(capsys, result)
    assert result.passed, result.details


@pytest.mark.parametrize("name", list(INVARIANTS))
def test_criterion_9_invariant(name, capsys):
    result = run_invariant(name)
    _report(capsys, result)
    assert result.passed, result.details
