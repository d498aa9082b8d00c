"""Acceptance criteria 1-10, one test each.

Each test prints the ledger line of its check so ``pytest -v -s`` doubles as
the verification report.
"""

import pytest

from ksblowup import acceptance


def _run(item):
    res = acceptance.CHECKS[item]()
    print(res.line())
    assert res.passed, res.line()


def test_criterion_01_eigenvalue_law():
    _run(1)


def test_criterion_02_refined_correction():
    _run(2)


def test_criterion_03_eigenfunction_norms():
    _run(3)


def test_criterion_04_spectral_gap():
    _run(4)


def test_criterion_05_coercivity():
    _run(5)


def test_criterion_06_stable_modulation_law():
    _run(6)


def test_criterion_07_unstable_laws():
    _run(7)


def test_criterion_08_overlap_constants():
    _run(8)


def test_criterion_09_pde_solver():
    _run(9)


def test_criterion_10_cross_module_oracle():
    _run(10)


def test_acceptance_items_complete():
    assert sorted(acceptance.CHECKS) == list(range(1, 11))
    with pytest.raises(KeyError):
        acceptance.CHECKS[11]
