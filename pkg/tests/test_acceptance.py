"""The twelve acceptance criteria, one test each.

Every test prints the criterion's PASS/FAIL line (visible with ``-s`` or in
the captured output of a failure) and asserts that it passed.
"""
import pytest

from sviproj import acceptance


@pytest.mark.parametrize("number", range(1, 13))
def test_criterion(number):
    res = acceptance.CRITERIA[number - 1]()
    print(res.line())
    assert res.number == number
    assert res.passed, res.line()
