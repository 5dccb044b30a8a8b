import numpy as np
import pytest

from corrmatch.assignment import Assignment, solve_assignment

from oracles import brute_force_best, dp_best_score

KAPPA = -50.0


def test_diagonal_dominance():
    res = solve_assignment(np.array([[0.0, -1.0], [-1.0, 0.0]]), kappa=KAPPA)
    assert res.pairs == ((0, 0), (1, 1))
    assert res.score == 0.0


def test_anti_diagonal():
    res = solve_assignment(np.array([[-1.0, 0.0], [0.0, -1.0]]), kappa=KAPPA)
    assert res.pairs == ((0, 1), (1, 0))
    assert res.score == 0.0


def test_empty_matrix():
    res = solve_assignment(np.zeros((0, 5)), kappa=KAPPA)
    assert res.pairs == ()
    assert res.score == 0.0


def test_all_rows_excluded():
    values = np.full((3, 4), -np.inf)
    res = solve_assignment(values, kappa=KAPPA)
    assert res.pairs == ()
    assert res.score == 3 * KAPPA


def test_partially_excluded_row():
    values = np.array([[-1.0, -np.inf], [-np.inf, -np.inf]])
    res = solve_assignment(values, kappa=KAPPA)
    assert res.pairs == ((0, 0),)
    assert res.score == -1.0 + KAPPA


def test_conflict_forces_one_row_unmatched():
    # Both rows can only use column 0; the better row wins, the other skips.
    values = np.array([[-2.0, -np.inf], [-1.0, -np.inf]])
    res = solve_assignment(values, kappa=KAPPA)
    assert res.pairs == ((1, 0),)
    assert res.score == KAPPA + -1.0


def test_kappa_preferred_over_worse_cell():
    # A cell below the floor penalty is not worth matching.
    values = np.array([[-80.0]])
    res = solve_assignment(values, kappa=KAPPA)
    assert res.pairs == ()
    assert res.score == KAPPA


def test_one_to_one_validation():
    with pytest.raises(ValueError):
        Assignment(pairs=((0, 1), (1, 1)), score=0.0)


def _random_instance(rng):
    n_rows = rng.integers(1, 8)
    n_cols = rng.integers(n_rows, 10)
    values = -10.0 * rng.random((n_rows, n_cols))
    assignable = rng.random((n_rows, n_cols)) > 0.25
    values = np.where(assignable, values, -np.inf)
    return values, assignable


def test_matches_enumeration_oracle_small():
    rng = np.random.default_rng(11)
    for _ in range(300):
        n_rows = rng.integers(1, 5)
        n_cols = rng.integers(n_rows, 6)
        values = -10.0 * rng.random((n_rows, n_cols))
        assignable = rng.random((n_rows, n_cols)) > 0.3
        values = np.where(assignable, values, -np.inf)
        expect_pairs, expect_score = brute_force_best(values, assignable, KAPPA)
        res = solve_assignment(values, assignable, kappa=KAPPA)
        assert res.score == expect_score
        assert res.pairs == expect_pairs


def test_matches_dp_oracle_medium():
    rng = np.random.default_rng(12)
    for _ in range(200):
        values, assignable = _random_instance(rng)
        res = solve_assignment(values, assignable, kappa=KAPPA)
        assert res.score == dp_best_score(values, assignable, KAPPA)


def test_oracles_agree_with_each_other():
    rng = np.random.default_rng(13)
    for _ in range(100):
        n_rows = rng.integers(1, 4)
        n_cols = rng.integers(n_rows, 5)
        values = np.where(rng.random((n_rows, n_cols)) > 0.3,
                          -5.0 * rng.random((n_rows, n_cols)), -np.inf)
        assignable = np.isfinite(values)
        _, expect = brute_force_best(values, assignable, KAPPA)
        assert dp_best_score(values, assignable, KAPPA) == expect


def test_lexicographic_tie_break_on_tied_matrix():
    # All-zero matrices make every complete matching optimal.
    values = np.zeros((2, 2))
    res = solve_assignment(values, kappa=KAPPA)
    assert res.pairs == ((0, 0), (1, 1))

    values = np.zeros((2, 3))
    res = solve_assignment(values, kappa=KAPPA)
    assert res.pairs == ((0, 0), (1, 1))


def test_lexicographic_tie_break_matches_enumeration():
    # Duplicated columns and quantized values produce frequent exact ties.
    rng = np.random.default_rng(14)
    for _ in range(200):
        n_rows = rng.integers(1, 4)
        n_cols = rng.integers(n_rows, 5)
        values = -1.0 * rng.integers(0, 3, size=(n_rows, n_cols)).astype(float)
        assignable = rng.random((n_rows, n_cols)) > 0.25
        values = np.where(assignable, values, -np.inf)
        expect_pairs, expect_score = brute_force_best(values, assignable, KAPPA)
        res = solve_assignment(values, assignable, kappa=KAPPA)
        assert res.score == expect_score
        assert res.pairs == expect_pairs


def test_lexicographic_prefix_rule_with_tied_kappa():
    # kappa equal to the only cell value: skipping everything ties with
    # matching, and the empty suffix is the lexicographically smaller set.
    values = np.array([[-50.0, -np.inf], [-np.inf, -50.0]])
    res = solve_assignment(values, kappa=-50.0)
    assert res.pairs == ()
    assert res.score == -100.0


def test_score_monotone_in_single_cell():
    rng = np.random.default_rng(15)
    for _ in range(50):
        values, assignable = _random_instance(rng)
        base = solve_assignment(values, assignable, kappa=KAPPA).score
        cells = np.argwhere(assignable)
        if cells.size == 0:
            continue
        r, c = cells[rng.integers(len(cells))]
        bumped = values.copy()
        bumped[r, c] += 5.0 * rng.random()
        assert solve_assignment(bumped, assignable, kappa=KAPPA).score >= base


def test_permutation_equivariance():
    rng = np.random.default_rng(16)
    for _ in range(50):
        values, assignable = _random_instance(rng)
        n_cols = values.shape[1]
        perm = rng.permutation(n_cols)
        res = solve_assignment(values, assignable, kappa=KAPPA)
        permuted = solve_assignment(values[:, perm], assignable[:, perm], kappa=KAPPA)
        assert permuted.score == pytest.approx(res.score, abs=1e-12)
        # Mapping the permuted pairs back must land on an optimal pair set.
        back = tuple(sorted((i, int(perm[j])) for i, j in permuted.pairs))
        total = sum(values[i, j] for i, j in back) + KAPPA * (values.shape[0] - len(back))
        assert total == pytest.approx(res.score, abs=1e-12)


def test_rejects_nan_values():
    with pytest.raises(ValueError):
        solve_assignment(np.array([[np.nan]]))
