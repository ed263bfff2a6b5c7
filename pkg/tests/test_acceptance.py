"""All ten acceptance criteria at their stated sizes and tolerances.

Each test prints one PASS/FAIL line (visible with ``pytest -s`` or in the
captured output of ``pytest -v``); the summary test prints them together.
"""

import json

import pytest

from susylangevin import acceptance

_RESULTS: dict = {}


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(acceptance.CRITERIA))
def test_criterion(number):
    rep = acceptance.CRITERIA[number]()
    _RESULTS[number] = rep
    print(acceptance.summary_line(rep))
    assert rep["pass"], json.dumps(rep, indent=1, default=float)[:4000]


def test_summary(capsys):
    with capsys.disabled():
        print()
        for n in sorted(_RESULTS):
            print(acceptance.summary_line(_RESULTS[n]))
    assert _RESULTS, "run together with the criterion tests"
