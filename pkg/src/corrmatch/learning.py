"""Boosting-style learning of the correspondence structure.

Each iteration ranks every training probe's correct match under the current
structure, samples binary mapping structures from the well-ranked and the
poorly-ranked halves, converts them into a probability update through a
chain of rank-weighted priors, appearance-ratio conditionals, and spatial
impact kernels, and blends the update into the structure.  Rank-based
quantities (structure priors, per-link importances) are memoized across
iterations since the underlying binary structures never change.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .assignment import DEFAULT_KAPPA, solve_sparse
from .errors import ConfigurationError
from .geometry import GridSpec
from .matching import (DEFAULT_ADJACENCY_RANGES, DEFAULT_T_C, BinaryMappingStructure,
                       adjacency_candidates, best_binary_structure,
                       binary_structure_score_matrix, rank_of_scores)
from .metric import MetricModel, build_avg_similarity
from .structure import CorrespondenceStructure, blend_update, init_structure

DEFAULT_T_D = 32


@dataclass(frozen=True)
class CmcCurve:
    """values[n-1] = fraction of probes whose correct match ranks <= n."""

    values: np.ndarray
    gallery_size: int

    def __post_init__(self) -> None:
        if self.values.shape != (self.gallery_size,):
            raise ValueError("curve length must equal the gallery size")
        if np.any(np.diff(self.values) < 0) or self.values[-1] != 1.0:
            raise ValueError("curve must be non-decreasing and end at 1")

    def at_rank(self, n: int) -> float:
        return float(self.values[n - 1]) if n <= self.gallery_size else 1.0


def cmc_curve(ranks, gallery_size: int) -> CmcCurve:
    """Cumulative match curve from 1-based correct-match ranks."""
    ranks = np.asarray(ranks, dtype=np.int64)
    if ranks.size == 0:
        raise ValueError("ranks must be non-empty")
    if np.any(ranks < 1) or np.any(ranks > gallery_size):
        raise ValueError("ranks must lie in [1, gallery_size]")
    counts = np.bincount(ranks, minlength=gallery_size + 1)[1:]
    return CmcCurve(values=np.cumsum(counts) / ranks.size, gallery_size=gallery_size)


@dataclass(frozen=True)
class LearnerConfig:
    epsilon: float = 0.2
    n_cmc: int = 5
    selection_count: int = 20
    top_fraction: float = 0.5
    max_iterations: int = 300
    tolerance: float = 1e-4
    t_d: int = DEFAULT_T_D
    t_c: float = DEFAULT_T_C
    kappa: float = DEFAULT_KAPPA
    adjacency_ranges: tuple[int, ...] = DEFAULT_ADJACENCY_RANGES
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.epsilon <= 1:
            raise ConfigurationError("epsilon must lie in (0, 1]")
        if self.selection_count < 2 or self.selection_count % 2:
            raise ConfigurationError("selection_count must be even and >= 2")
        if min(self.n_cmc, self.max_iterations, self.t_d) < 1 or self.tolerance < 0:
            raise ConfigurationError("n_cmc, max_iterations, t_d must be positive")


@dataclass(frozen=True)
class IterationStats:
    iteration: int
    mean_rank: float
    cmc1: float
    cmc5: float
    delta: float
    sum_ranks: int
    max_row_sum_error: float
    min_entry: float


@dataclass
class LearnResult:
    structure: CorrespondenceStructure
    diagnostics: list[IterationStats]
    binary_structures: list[BinaryMappingStructure] = field(default_factory=list)
    converged: bool = False


def link_impact(i: int, s: int, t_d: int = DEFAULT_T_D) -> float:
    """Spatial influence of a link anchored at probe patch s onto patch i."""
    d = abs(i - s)
    return 0.0 if d >= t_d else 1.0 / (d + 1.0)


def impact_table(n_probe: int, t_d: int) -> np.ndarray:
    """impact[i, s] over all probe ordinal pairs."""
    idx = np.arange(n_probe)
    d = np.abs(idx[:, None] - idx[None, :]).astype(np.float64)
    return np.where(d >= t_d, 0.0, 1.0 / (d + 1.0))


def conditional_prob(binary: BinaryMappingStructure, i: int, avg_table: np.ndarray) -> np.ndarray:
    """Distribution over gallery patches for probe patch i given a link set.

    Linked patches get raw weight 1; unlinked ones get their average
    appearance similarity relative to the summed similarity of i's linked
    patches; with no links the raw row is the average-similarity row.  The
    raw weights are normalized to sum 1.
    """
    js = sorted(binary.links_per_row().get(i, ()))
    row = avg_table[i]
    if js:
        raw = row / row[js].sum()
        raw[js] = 1.0
    else:
        raw = row.copy()
    return raw / raw.sum()


def conditional_matrix(binary: BinaryMappingStructure, avg_table: np.ndarray) -> np.ndarray:
    """conditional_prob stacked for every probe patch."""
    return np.stack([conditional_prob(binary, i, avg_table)
                     for i in range(avg_table.shape[0])])


def structure_prior(cmc_scores) -> np.ndarray:
    """Normalized rank-n CMC scores; uniform when all are zero."""
    scores = np.asarray(cmc_scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("need at least one structure")
    total = scores.sum()
    if total == 0.0:
        return np.full(scores.size, 1.0 / scores.size)
    return scores / total


def link_importance(cmc_scores) -> np.ndarray:
    """Normalized per-link rank-n CMC scores; uniform when all are zero."""
    return structure_prior(cmc_scores)


def patch_importance(binary: BinaryMappingStructure, link_importances: dict,
                     n_probe: int, t_d: int = DEFAULT_T_D) -> np.ndarray:
    """Importance of each probe patch: impact-weighted sum of link importances."""
    weights = np.zeros(n_probe)
    for (s, _t), imp in link_importances.items():
        weights[s] += imp
    out = impact_table(n_probe, t_d) @ weights
    total = out.sum()
    if total == 0.0:
        raise ValueError("no probe patch is reachable from the structure's links")
    return out / total


def compute_update(joint_matrices, priors) -> np.ndarray:
    """Prior-weighted mixture of per-structure joint probability matrices."""
    priors = np.asarray(priors, dtype=np.float64)
    if len(joint_matrices) != priors.size or priors.size == 0:
        raise ValueError("need one prior per structure")
    out = np.zeros_like(joint_matrices[0])
    for joint, prior in zip(joint_matrices, priors):
        out += prior * joint
    return out


def find_binary_structures(probe_stack: np.ndarray, gallery_stack: np.ndarray,
                           model: MetricModel, probe_grid: GridSpec,
                           gallery_grid: GridSpec,
                           config: LearnerConfig) -> list[BinaryMappingStructure]:
    """Best adjacency-search link set per training probe (loop step 1)."""
    out = []
    for alpha in range(probe_stack.shape[0]):
        candidates = adjacency_candidates(probe_stack[alpha], gallery_stack[alpha],
                                          model, probe_grid, gallery_grid,
                                          config.adjacency_ranges)
        out.append(best_binary_structure(probe_stack[alpha], gallery_stack, alpha,
                                         candidates, model, config.kappa))
    return out


class _TrainingContext:
    """Per-split caches shared across boosting iterations."""

    def __init__(self, probe_stack, gallery_stack, model, probe_grid, gallery_grid, config):
        self.probe_stack = probe_stack
        self.gallery_stack = gallery_stack
        self.model = model
        self.probe_grid = probe_grid
        self.gallery_grid = gallery_grid
        self.config = config
        self.n_train = probe_stack.shape[0]
        self.n_a = probe_grid.n_patches
        self.n_b = gallery_grid.n_patches
        self.avg_table = build_avg_similarity(list(probe_stack), list(gallery_stack),
                                              model, probe_grid, gallery_grid)
        self.binary_structures: list[BinaryMappingStructure] = []
        self._structure_cmc: dict[int, float] = {}
        self._link_cmc: dict[tuple[int, int], float] = {}
        self._joint: dict[int, np.ndarray] = {}
        self._sim_log: dict[tuple[int, int], np.ndarray] = {}

    def find_binary_structures(self) -> None:
        self.binary_structures = find_binary_structures(
            self.probe_stack, self.gallery_stack, self.model,
            self.probe_grid, self.gallery_grid, self.config)

    def structure_cmc(self, alpha: int) -> float:
        """Rank-n CMC over the training set with structure alpha as the model."""
        if alpha not in self._structure_cmc:
            scores = binary_structure_score_matrix(self.probe_stack, self.gallery_stack,
                                                   self.binary_structures[alpha],
                                                   self.model, self.n_b, self.config.kappa)
            ranks = [rank_of_scores(list(scores[p]), p) for p in range(self.n_train)]
            curve = cmc_curve(ranks, self.n_train)
            self._structure_cmc[alpha] = curve.at_rank(self.config.n_cmc)
        return self._structure_cmc[alpha]

    def link_cmc(self, link: tuple[int, int]) -> float:
        """Rank-n CMC using one link alone; ranks depend on that cell only."""
        if link not in self._link_cmc:
            s, t = link
            sims = self._pair_log_similarity(s, t)
            ranks = [rank_of_scores(list(sims[p]), p) for p in range(self.n_train)]
            self._link_cmc[link] = cmc_curve(ranks, self.n_train).at_rank(self.config.n_cmc)
        return self._link_cmc[link]

    def _pair_log_similarity(self, i: int, j: int) -> np.ndarray:
        """log similarity of probe patch i vs gallery patch j across all images."""
        key = (i, j)
        if key not in self._sim_log:
            m = self.model.matrix_at(i)
            sigma = self.model.sigma_at(i)
            d = self.probe_stack[:, i, None, :] - self.gallery_stack[None, :, j, :]
            dist = np.einsum("pgk,kl,pgl->pg", d, m, d)
            self._sim_log[key] = -np.minimum(np.maximum(dist, 0.0) / sigma, 700.0)
        return self._sim_log[key]

    def joint_matrix(self, alpha: int) -> np.ndarray:
        """Importance-weighted conditional matrix for structure alpha."""
        if alpha not in self._joint:
            binary = self.binary_structures[alpha]
            importances = link_importance([self.link_cmc(m) for m in binary.links])
            link_imp = dict(zip(binary.links, importances))
            imp = patch_importance(binary, link_imp, self.n_a, self.config.t_d)
            cond = conditional_matrix(binary, self.avg_table)
            self._joint[alpha] = imp[:, None] * cond
        return self._joint[alpha]

    def rank_correct_matches(self, structure: CorrespondenceStructure) -> np.ndarray:
        """1-based rank of each probe's correct match under the structure."""
        mask = structure.probs > self.config.t_c
        log_p = np.log(structure.probs, out=np.full_like(structure.probs, -np.inf),
                       where=mask)
        row_cols = [np.flatnonzero(mask[i]) for i in range(self.n_a)]
        blocks = [np.stack([self._pair_log_similarity(i, int(j)) for j in cols])
                  if len(cols) else np.empty((0, self.n_train, self.n_train))
                  for i, cols in enumerate(row_cols)]
        log_p_rows = [log_p[i, cols] for i, cols in enumerate(row_cols)]

        ranks = np.empty(self.n_train, dtype=np.int64)
        for p in range(self.n_train):
            scores = []
            for g in range(self.n_train):
                row_vals = [blocks[i][:, p, g] + log_p_rows[i] for i in range(self.n_a)]
                match = solve_sparse(row_cols, row_vals, self.n_b, self.config.kappa)
                total = 0.0
                for i, j in enumerate(match):
                    if j < 0:
                        total += self.config.kappa
                    else:
                        pos = int(np.searchsorted(row_cols[i], j))
                        total += float(row_vals[i][pos])
                scores.append(total)
            ranks[p] = rank_of_scores(scores, p)
        return ranks


def learn_structure(probe_stack: np.ndarray, gallery_stack: np.ndarray,
                    model: MetricModel, probe_grid: GridSpec, gallery_grid: GridSpec,
                    config: LearnerConfig,
                    binary_structures: list[BinaryMappingStructure] | None = None) -> LearnResult:
    """Run the full boosting loop and return the learned structure.

    ``probe_stack[k]`` and ``gallery_stack[k]`` hold the descriptor arrays of
    the k-th training identity's probe and correct-match gallery images.
    """
    probe_stack = np.asarray(probe_stack, dtype=np.float64)
    gallery_stack = np.asarray(gallery_stack, dtype=np.float64)
    if probe_stack.shape[0] != gallery_stack.shape[0]:
        raise ValueError("probe and gallery training stacks must align")
    if probe_stack.shape[0] < 2:
        raise ConfigurationError("training requires at least two identities")

    ctx = _TrainingContext(probe_stack, gallery_stack, model, probe_grid,
                           gallery_grid, config)
    if binary_structures is None:
        ctx.find_binary_structures()
    else:
        if len(binary_structures) != ctx.n_train:
            raise ValueError("need one binary structure per training identity")
        ctx.binary_structures = list(binary_structures)

    structure = init_structure(probe_grid, gallery_grid, config.t_d)
    rng = np.random.default_rng(config.seed)
    half = config.selection_count // 2
    diagnostics: list[IterationStats] = []
    converged = False

    for iteration in range(1, config.max_iterations + 1):
        ranks = ctx.rank_correct_matches(structure)
        cutoff = float(np.quantile(ranks, config.top_fraction))
        top = np.flatnonzero(ranks <= cutoff)  # cutoff ties count as well-ranked
        bottom = np.flatnonzero(ranks > cutoff)
        if len(top) < half or len(bottom) < half:
            warnings.warn(f"selection clamped: halves have {len(top)}/{len(bottom)} "
                          f"candidates for {half} draws", stacklevel=2)
        chosen = []
        for pool in (top, bottom):
            take = min(half, len(pool))
            if take:
                chosen.extend(int(a) for a in rng.choice(pool, size=take, replace=False))

        priors = structure_prior([ctx.structure_cmc(a) for a in chosen])
        update = compute_update([ctx.joint_matrix(a) for a in chosen], priors)
        row_sums = update.sum(axis=1)
        live = row_sums > 0.0
        normalized = np.zeros_like(update)
        normalized[live] = update[live] / row_sums[live, None]

        new_structure = blend_update(structure, normalized, config.epsilon)
        delta = float(np.abs(new_structure.probs - structure.probs).mean())
        curve = cmc_curve(ranks, ctx.n_train)
        diagnostics.append(IterationStats(
            iteration=iteration,
            mean_rank=float(ranks.mean()),
            cmc1=curve.at_rank(1),
            cmc5=curve.at_rank(5),
            delta=delta,
            sum_ranks=int(ranks.sum()),
            max_row_sum_error=float(np.abs(new_structure.probs.sum(axis=1) - 1.0).max()),
            min_entry=float(new_structure.probs.min()),
        ))
        structure = new_structure
        if delta < config.tolerance:
            converged = True
            break

    return LearnResult(structure=structure, diagnostics=diagnostics,
                       binary_structures=ctx.binary_structures, converged=converged)
