import numpy as np
import pytest

from corrmatch.geometry import GridSpec, colocated_patch, patch_at
from corrmatch.matching import (BinaryMappingStructure, adjacency_candidates,
                                best_binary_structure, binary_correlation,
                                binary_structure_score_matrix, binary_structure_scores,
                                correlation_matrix, greedy_score, match_score,
                                rank_gallery, rank_of_scores, score_correlation)
from corrmatch.metric import MetricModel
from corrmatch.structure import CorrespondenceStructure

PROBE_1 = GridSpec(4, 4, 4, 4, 1, 1)       # one probe patch
GALLERY_2 = GridSpec(4, 4, 4, 2, 2, 2)     # two gallery patches


def flat_model(dim: int, n_loc: int, m: float = 1.0, sigma: float = 1.0) -> MetricModel:
    mats = np.repeat(np.eye(dim)[None] * m, n_loc, axis=0)
    return MetricModel(matrices=mats, sigmas=np.full(n_loc, sigma),
                       global_matrix=np.eye(dim) * m, global_sigma=sigma)


def tiny_structure(probs) -> CorrespondenceStructure:
    return CorrespondenceStructure(probs=np.asarray(probs, dtype=np.float64),
                                   probe_grid=PROBE_1, gallery_grid=GALLERY_2)


def test_correlation_gates_low_probability():
    structure = tiny_structure([[0.96, 0.04]])
    model = flat_model(1, 1)
    corr = correlation_matrix(np.array([[0.5]]), np.array([[0.5], [0.5]]),
                              structure, model, t_c=0.05)
    assert not corr.assignable[0, 1]
    assert corr.values[0, 1] == -np.inf
    assert corr.assignable[0, 0]


def test_correlation_exact_values_and_nonpositive():
    structure = tiny_structure([[0.5, 0.5]])
    model = flat_model(1, 1)
    probe = np.array([[1.0]])
    gallery = np.array([[1.0], [0.0]])
    corr = correlation_matrix(probe, gallery, structure, model, t_c=0.05)
    # identical descriptors: phi = 1, C = log(0.5)
    assert corr.values[0, 0] == pytest.approx(np.log(0.5), abs=1e-12)
    # difference 1: phi = e^-1, C = log(e^-1 * 0.5)
    assert corr.values[0, 1] == pytest.approx(-1.0 + np.log(0.5), abs=1e-12)
    assert np.all(corr.values[corr.assignable] <= 0.0)


def test_perfect_match_degenerate_grids_scores_zero():
    probe = GridSpec(4, 4, 4, 4, 1, 1)
    gallery = GridSpec(4, 4, 4, 4, 1, 1)
    structure = CorrespondenceStructure(probs=np.array([[1.0]]),
                                        probe_grid=probe, gallery_grid=gallery)
    model = flat_model(1, 1)
    result = match_score(np.array([[0.3]]), np.array([[0.3]]), structure, model)
    assert result.score == 0.0
    assert result.pairs == ((0, 0),)


def test_all_rows_excluded_gives_kappa_floor():
    structure = tiny_structure([[0.5, 0.5]])
    model = flat_model(1, 1)
    corr = correlation_matrix(np.array([[0.5]]), np.array([[0.5], [0.5]]),
                              structure, model, t_c=0.9)
    result = score_correlation(corr, kappa=-50.0)
    assert result.pairs == ()
    assert result.score == -50.0


def test_match_score_two_patch_hand_computed():
    probe_grid = GridSpec(4, 8, 4, 4, 1, 4)     # two probe patches stacked
    gallery_grid = GridSpec(4, 8, 4, 4, 1, 4)   # two gallery patches stacked
    probs = np.array([[0.8, 0.2], [0.2, 0.8]])
    structure = CorrespondenceStructure(probs=probs, probe_grid=probe_grid,
                                        gallery_grid=gallery_grid)
    model = flat_model(1, 2)
    probe = np.array([[0.0], [1.0]])
    gallery = np.array([[0.0], [1.0]])
    result = match_score(probe, gallery, structure, model, t_c=0.05)
    # diagonal pairs: phi = 1 each, C = log 0.8 twice
    assert result.pairs == ((0, 0), (1, 1))
    assert result.score == pytest.approx(np.log(0.8) + np.log(0.8), abs=1e-12)


def test_rank_gallery_exact_duplicate_first():
    rng = np.random.default_rng(0)
    structure = tiny_structure([[0.5, 0.5]])
    model = flat_model(1, 1)
    probe = np.array([[0.42]])
    duplicate = probe.copy().repeat(2, axis=0).reshape(2, 1)[:2]
    noise = [np.array([[0.9], [0.1]]), np.array([[0.0], [0.77]])]
    galleries = [noise[0], np.array([[0.42], [0.42]]), noise[1]]
    ranked, rank = rank_gallery(probe, galleries, structure, model, correct_index=1)
    assert ranked[0][0] == 1
    assert rank == 1


def test_rank_gallery_tie_keeps_input_order():
    structure = tiny_structure([[0.5, 0.5]])
    model = flat_model(1, 1)
    probe = np.array([[0.5]])
    same = np.array([[0.5], [0.5]])
    ranked, rank = rank_gallery(probe, [same, same.copy()], structure, model,
                                correct_index=1)
    assert [idx for idx, _ in ranked] == [0, 1]
    assert rank == 2


def test_rank_of_scores_stable():
    assert rank_of_scores([1.0, 3.0, 3.0, 0.5], 2) == 2
    assert rank_of_scores([1.0, 3.0, 3.0, 0.5], 1) == 1
    assert rank_of_scores([1.0, 3.0, 3.0, 0.5], 3) == 4


def test_greedy_score_matches_row_maxima():
    structure = tiny_structure([[0.5, 0.5]])
    model = flat_model(1, 1)
    corr = correlation_matrix(np.array([[0.3]]), np.array([[0.3], [0.9]]),
                              structure, model, t_c=0.05)
    assert greedy_score(corr) == pytest.approx(float(corr.values[0].max()), abs=1e-15)


CANON_PROBE = GridSpec(48, 128, 18, 24, 6, 8)
CANON_GALLERY = GridSpec(48, 128, 18, 24, 3, 4)


def striped_descriptors(rng, grid, n_patterns=32):
    """Deterministic descriptors that vary smoothly with patch position."""
    base = rng.random((n_patterns, 8))
    out = np.empty((grid.n_patches, 8))
    for k in range(grid.n_patches):
        ref = patch_at(grid, k)
        out[k] = base[(ref.row * 3 + ref.col) % n_patterns]
    return out


def test_adjacency_candidates_self_match_links_colocated():
    rng = np.random.default_rng(1)
    model = flat_model(8, 84)
    gallery_desc = rng.random((297, 8))
    # probe descriptors copied from the co-located gallery patches
    probe_desc = np.empty((84, 8))
    for i in range(84):
        co = colocated_patch(CANON_PROBE, CANON_GALLERY, patch_at(CANON_PROBE, i))
        probe_desc[i] = gallery_desc[co.ordinal]
    for cand in adjacency_candidates(probe_desc, gallery_desc, model,
                                     CANON_PROBE, CANON_GALLERY, ranges=(1, 3)):
        for i, j in cand.links:
            co = colocated_patch(CANON_PROBE, CANON_GALLERY, patch_at(CANON_PROBE, i))
            assert j == co.ordinal


def test_adjacency_candidates_window_respects_range():
    rng = np.random.default_rng(2)
    model = flat_model(8, 84)
    probe_desc = rng.random((84, 8))
    gallery_desc = rng.random((297, 8))
    for span in (1, 2, 4):
        (cand,) = adjacency_candidates(probe_desc, gallery_desc, model,
                                       CANON_PROBE, CANON_GALLERY, ranges=(span,))
        for i, j in cand.links:
            co = colocated_patch(CANON_PROBE, CANON_GALLERY, patch_at(CANON_PROBE, i))
            assert abs(patch_at(CANON_GALLERY, j).row - co.row) <= span


def test_adjacency_large_range_is_global_argmax():
    rng = np.random.default_rng(3)
    model = flat_model(8, 84)
    probe_desc = rng.random((84, 8))
    gallery_desc = rng.random((297, 8))
    (cand,) = adjacency_candidates(probe_desc, gallery_desc, model,
                                   CANON_PROBE, CANON_GALLERY, ranges=(27,))
    from corrmatch.metric import batched_similarity
    for i, j in cand.links:
        sims = batched_similarity(model, np.repeat(probe_desc[i][None], 297, axis=0),
                                  gallery_desc, np.full(297, i))
        assert sims[j] == sims.max()


def test_binary_score_matrix_matches_generic_path():
    rng = np.random.default_rng(4)
    n_probe, n_gal, dim = 6, 9, 4
    model = flat_model(dim, n_probe)
    probe_stack = rng.random((3, n_probe, dim))
    gallery_stack = rng.random((4, n_gal, dim))
    links = tuple((i, int(rng.integers(0, n_gal))) for i in range(n_probe))
    binary = BinaryMappingStructure(links=links)
    fast = binary_structure_score_matrix(probe_stack, gallery_stack, binary, model, n_gal)
    for p in range(3):
        for g in range(4):
            corr = binary_correlation(probe_stack[p], gallery_stack[g], binary,
                                      model, n_probe, n_gal)
            assert fast[p, g] == score_correlation(corr).score
    single = binary_structure_scores(probe_stack[0], gallery_stack, binary, model)
    assert np.array_equal(single, fast[0])


def test_binary_score_matrix_with_conflicts_matches_generic_path():
    rng = np.random.default_rng(5)
    n_probe, n_gal, dim = 5, 3, 4
    model = flat_model(dim, n_probe)
    probe_stack = rng.random((2, n_probe, dim))
    gallery_stack = rng.random((3, n_gal, dim))
    # heavy column contention plus an unlinked probe patch
    binary = BinaryMappingStructure(links=((0, 1), (1, 1), (2, 1), (3, 0)))
    fast = binary_structure_score_matrix(probe_stack, gallery_stack, binary, model, n_gal)
    for p in range(2):
        for g in range(3):
            corr = binary_correlation(probe_stack[p], gallery_stack[g], binary,
                                      model, n_probe, n_gal)
            assert fast[p, g] == score_correlation(corr).score


def test_binary_score_multi_link_row_falls_back_to_solver():
    rng = np.random.default_rng(6)
    n_probe, n_gal, dim = 3, 4, 2
    model = flat_model(dim, n_probe)
    probe_stack = rng.random((2, n_probe, dim))
    gallery_stack = rng.random((2, n_gal, dim))
    binary = BinaryMappingStructure(links=((0, 0), (0, 2), (1, 1), (2, 1)))
    scores = binary_structure_score_matrix(probe_stack, gallery_stack, binary, model, n_gal)
    for p in range(2):
        for g in range(2):
            corr = binary_correlation(probe_stack[p], gallery_stack[g], binary,
                                      model, n_probe, n_gal)
            assert scores[p, g] == score_correlation(corr).score


def test_best_binary_structure_prefers_lower_rank():
    rng = np.random.default_rng(7)
    n_probe, n_gal, dim = 4, 6, 3
    model = flat_model(dim, n_probe)
    galleries = rng.random((5, n_gal, dim))
    probe = galleries[2, [0, 1, 2, 3], :].copy()  # correct gallery is index 2
    good = BinaryMappingStructure(links=tuple((i, i) for i in range(n_probe)))
    # under "bad" every probe patch bids on gallery patch 5, where a wrong
    # gallery image holds an exact copy of probe patch 0: correct can't rank 1
    galleries[0, 5] = probe[0]
    bad = BinaryMappingStructure(links=tuple((i, n_gal - 1) for i in range(n_probe)))
    chosen = best_binary_structure(probe, galleries, 2, [bad, good], model)
    assert chosen == good


def test_best_binary_structure_single_candidate():
    rng = np.random.default_rng(8)
    model = flat_model(2, 3)
    galleries = rng.random((3, 4, 2))
    probe = rng.random((3, 2))
    only = BinaryMappingStructure(links=((0, 0), (1, 1), (2, 2)))
    assert best_binary_structure(probe, galleries, 0, [only], model) == only


def test_duplicate_links_rejected():
    with pytest.raises(ValueError):
        BinaryMappingStructure(links=((0, 1), (0, 1)))


def test_correlation_value_example_e_inverse():
    # phi = e^-1 and P = e^-1 combine to a correlation of exactly -2.
    probe_grid = GridSpec(4, 4, 4, 4, 1, 1)
    gallery_grid = GridSpec(4, 4, 4, 2, 2, 2)
    p = float(np.exp(-1.0))
    structure = CorrespondenceStructure(probs=np.array([[p, 1.0 - p]]),
                                        probe_grid=probe_grid, gallery_grid=gallery_grid)
    model = flat_model(1, 1)
    f_diff = np.sqrt(1.0)  # distance 1 under the identity metric, sigma 1
    corr = correlation_matrix(np.array([[f_diff]]), np.array([[0.0], [0.0]]),
                              structure, model, t_c=0.05)
    assert corr.values[0, 0] == pytest.approx(-2.0, abs=1e-12)
