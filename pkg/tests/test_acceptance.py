"""One test per acceptance criterion; each prints a single PASS/FAIL line."""
import pytest

from osplab.checks import CRITERIA, run_check


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    result = run_check(number)
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.line()
