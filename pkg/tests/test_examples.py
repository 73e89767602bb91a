"""Every built-in example check, run individually so failures name the case."""

import pytest

from dkseg import selftest


@pytest.mark.parametrize("name", list(selftest.CHECKS))
def test_builtin_check(name):
    selftest.CHECKS[name]()


def test_selftest_counts_failures(monkeypatch):
    def boom():
        raise AssertionError("nope")

    monkeypatch.setitem(selftest.CHECKS, "boom", boom)
    lines = []
    assert selftest.run(names={"boom", "softmax_examples"}, out=lines.append) == 1
    assert any(line.startswith("FAIL boom") for line in lines)
    assert any(line.startswith("PASS softmax_examples") for line in lines)
