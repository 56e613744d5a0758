"""The thirteen acceptance criteria at their stated tolerances.

Each test prints a single ``criterion NN [PASS|FAIL] ...`` line with the
measured values, then asserts the pass flag. Run with
``pytest tests/test_acceptance.py -v`` (the lines are printed even without ``-s``).
"""
import pytest

from fracns.acceptance import CRITERIA, evaluate


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    result = evaluate(number)
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.line()
