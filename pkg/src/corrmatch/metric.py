"""Per-location similarity metrics between patch descriptors.

For every probe patch location a Mahalanobis-style matrix is learned as the
difference of inverse covariance matrices of descriptor differences taken
from similar and dissimilar training pairs.  Squared distances are clamped
at zero (the learned matrix is generally indefinite) and mapped through
exp(-distance / sigma) so similarity lives in (0, 1] and equals exactly 1
for identical descriptors.  Locations with too few pairs fall back to one
global metric pooled over all locations.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, FormatError
from .geometry import GridSpec, colocated_patch, patch_at

RIDGE_FACTOR = 1e-3
SIGMA_FLOOR = 1e-6
# The similarity bandwidth is this fraction of the mean similar-pair
# distance.  Training pairs come from a wide spatial window, so their mean
# distance is dominated by content mismatches; using it directly as the
# exp(-d / sigma) bandwidth would (by Jensen's inequality) pin the average
# in-window similarity ratio above e^-1 and flatten every learned
# correspondence row below the match-time probability gate.
DEFAULT_SIGMA_SCALE = 0.15
# Cap on distance / sigma before exponentiation: keeps similarities strictly
# positive (exp(-700) is the order of the smallest normal double).
MAX_EXPONENT = 700.0

_MAGIC = b"PKMETR01" + bytes(8)  # 16-byte magic/version header


@dataclass(frozen=True)
class MetricModel:
    """Learned similarity model: one matrix and scale per probe location.

    ``fallback`` flags locations that were data-starved and use the pooled
    global matrix/scale instead of their own.
    """

    matrices: np.ndarray          # (n_locations, dim, dim)
    sigmas: np.ndarray            # (n_locations,)
    global_matrix: np.ndarray     # (dim, dim)
    global_sigma: float
    fallback: np.ndarray = field(default=None)  # (n_locations,) bool

    def __post_init__(self) -> None:
        n_loc, dim, dim2 = self.matrices.shape
        if dim != dim2:
            raise ValueError("per-location matrices must be square")
        if self.sigmas.shape != (n_loc,):
            raise ValueError("sigma count does not match location count")
        if self.global_matrix.shape != (dim, dim):
            raise ValueError("global matrix dimension mismatch")
        if np.any(self.sigmas <= 0) or self.global_sigma <= 0:
            raise ValueError("sigmas must be positive")
        asym = np.abs(self.matrices - self.matrices.transpose(0, 2, 1)).max(initial=0.0)
        if asym > 1e-9:
            raise ValueError(f"matrices must be symmetric, worst asymmetry {asym:g}")
        if self.fallback is None:
            object.__setattr__(self, "fallback", np.zeros(n_loc, dtype=bool))

    @property
    def n_locations(self) -> int:
        return self.matrices.shape[0]

    @property
    def dim(self) -> int:
        return self.matrices.shape[1]

    def matrix_at(self, loc: int) -> np.ndarray:
        return self.global_matrix if self.fallback[loc] else self.matrices[loc]

    def sigma_at(self, loc: int) -> float:
        return self.global_sigma if self.fallback[loc] else float(self.sigmas[loc])


def _difference_moment(pairs: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Second moment (about zero) of descriptor differences."""
    a, b = pairs
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return d.T @ d / len(d)


def _ridge(matrix: np.ndarray) -> np.ndarray:
    dim = matrix.shape[0]
    gamma = RIDGE_FACTOR * np.trace(matrix) / dim
    return matrix + gamma * np.eye(dim)


def _learn_matrix(similar_moment: np.ndarray, dissimilar_moment: np.ndarray) -> np.ndarray:
    m = np.linalg.inv(_ridge(similar_moment)) - np.linalg.inv(_ridge(dissimilar_moment))
    m = (m + m.T) / 2.0
    # Project onto the PSD cone.  Normalized histogram blocks give the
    # difference vectors near-null directions whose inverse-covariance gap is
    # sampling noise blown up by 1/gamma; left in place, those directions make
    # the zero-clamped distance saturate unrelated patches at similarity 1.
    eigvals, eigvecs = np.linalg.eigh(m)
    clipped = (eigvecs * np.maximum(eigvals, 0.0)) @ eigvecs.T
    return (clipped + clipped.T) / 2.0


def _scale_for(matrix: np.ndarray, similar: tuple[np.ndarray, np.ndarray],
               sigma_scale: float) -> float:
    a, b = similar
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    dist = np.einsum("nk,kl,nl->n", d, matrix, d)
    return max(sigma_scale * float(np.maximum(dist, 0.0).mean()), SIGMA_FLOOR)


def train_metric(similar_pairs, dissimilar_pairs,
                 sigma_scale: float = DEFAULT_SIGMA_SCALE) -> MetricModel:
    """Learn per-location metrics from descriptor-pair lists.

    ``similar_pairs[i]`` and ``dissimilar_pairs[i]`` are (A, B) array pairs of
    shape (n_i, dim) holding the two sides of each training pair at probe
    location i.  A location needs at least dim + 1 similar and dissimilar
    pairs, otherwise it falls back to the global metric pooled over all
    locations.  ``sigma_scale`` scales the mean similar-pair distance into
    the exp(-d / sigma) bandwidth.
    """
    if len(similar_pairs) != len(dissimilar_pairs):
        raise ValueError("similar and dissimilar lists must align per location")
    n_loc = len(similar_pairs)
    if n_loc == 0:
        raise ConfigurationError("no locations to train")

    total_similar = sum(len(a) for a, _ in similar_pairs)
    total_dissimilar = sum(len(a) for a, _ in dissimilar_pairs)
    if total_similar == 0 or total_dissimilar == 0:
        raise ConfigurationError("training set has no similar or no dissimilar pairs")

    dims = {a.shape[1] for a, _ in similar_pairs if len(a)}
    dims |= {a.shape[1] for a, _ in dissimilar_pairs if len(a)}
    if len(dims) != 1:
        raise ValueError(f"inconsistent descriptor dims {dims}")
    dim = dims.pop()

    pooled_similar = (np.concatenate([a for a, _ in similar_pairs]),
                      np.concatenate([b for _, b in similar_pairs]))
    pooled_dissimilar = (np.concatenate([a for a, _ in dissimilar_pairs]),
                         np.concatenate([b for _, b in dissimilar_pairs]))
    global_matrix = _learn_matrix(_difference_moment(pooled_similar),
                                  _difference_moment(pooled_dissimilar))
    global_sigma = _scale_for(global_matrix, pooled_similar, sigma_scale)

    matrices = np.empty((n_loc, dim, dim))
    sigmas = np.empty(n_loc)
    fallback = np.zeros(n_loc, dtype=bool)
    for i in range(n_loc):
        sim, dis = similar_pairs[i], dissimilar_pairs[i]
        if len(sim[0]) < dim + 1 or len(dis[0]) < dim + 1:
            matrices[i] = global_matrix
            sigmas[i] = global_sigma
            fallback[i] = True
            continue
        matrices[i] = _learn_matrix(_difference_moment(sim), _difference_moment(dis))
        sigmas[i] = _scale_for(matrices[i], sim, sigma_scale)
    return MetricModel(matrices=matrices, sigmas=sigmas, global_matrix=global_matrix,
                       global_sigma=global_sigma, fallback=fallback)


def appearance_similarity(model: MetricModel, f_a: np.ndarray, f_b: np.ndarray,
                          loc: int) -> float:
    """Similarity in (0, 1]; exactly 1 for equal descriptors."""
    f_a = np.asarray(f_a, dtype=np.float64)
    f_b = np.asarray(f_b, dtype=np.float64)
    if f_a.shape != (model.dim,) or f_b.shape != (model.dim,):
        raise ValueError(f"descriptors must have dim {model.dim}")
    if not 0 <= loc < model.n_locations:
        raise ValueError(f"location {loc} outside [0, {model.n_locations})")
    d = f_a - f_b
    dist = float(d @ model.matrix_at(loc) @ d)
    return float(np.exp(-min(max(dist, 0.0) / model.sigma_at(loc), MAX_EXPONENT)))


def batched_similarity(model: MetricModel, f_a: np.ndarray, f_b: np.ndarray,
                       locs: np.ndarray) -> np.ndarray:
    """Vectorized similarity for stacked descriptor pairs at given locations.

    ``f_a`` and ``f_b`` have shape (n, dim), ``locs`` (n,).  Pairs are grouped
    per location so each group uses one matrix.
    """
    f_a = np.asarray(f_a, dtype=np.float64)
    f_b = np.asarray(f_b, dtype=np.float64)
    locs = np.asarray(locs, dtype=np.int64)
    d = f_a - f_b
    out = np.empty(len(d))
    for loc in np.unique(locs):
        sel = locs == loc
        dd = d[sel]
        dist = np.einsum("nk,kl,nl->n", dd, model.matrix_at(int(loc)), dd)
        exponent = np.minimum(np.maximum(dist, 0.0) / model.sigma_at(int(loc)), MAX_EXPONENT)
        out[sel] = np.exp(-exponent)
    return out


def build_training_pairs(probe_descriptors, gallery_descriptors, wrong_gallery_descriptors,
                         probe_grid: GridSpec, gallery_grid: GridSpec, t_d: int):
    """Similar/dissimilar descriptor pairs per probe location.

    For each correct match pair, probe patch i pairs with every gallery patch
    within zig-zag distance < t_d of its co-located patch; the same gallery
    positions taken from a wrong-identity image form the dissimilar pairs.

    ``probe_descriptors`` / ``gallery_descriptors`` / ``wrong_gallery_descriptors``
    are aligned lists of per-image descriptor arrays.
    """
    if not (len(probe_descriptors) == len(gallery_descriptors) == len(wrong_gallery_descriptors)):
        raise ValueError("descriptor lists must align")
    if not probe_descriptors:
        raise ConfigurationError("empty training set")
    n_loc = probe_grid.n_patches
    n_gal = gallery_grid.n_patches
    ordinals = np.arange(n_gal)

    probe_stack = np.stack(probe_descriptors)          # (n_imgs, n_loc, dim)
    gallery_stack = np.stack(gallery_descriptors)      # (n_imgs, n_gal, dim)
    wrong_stack = np.stack(wrong_gallery_descriptors)

    similar, dissimilar = [], []
    for i in range(n_loc):
        co = colocated_patch(probe_grid, gallery_grid, patch_at(probe_grid, i))
        window = np.flatnonzero(np.abs(ordinals - co.ordinal) < t_d)
        probe_side = np.repeat(probe_stack[:, i, :], len(window), axis=0)
        similar.append((probe_side, gallery_stack[:, window, :].reshape(len(probe_stack) * len(window), -1)))
        dissimilar.append((probe_side, wrong_stack[:, window, :].reshape(len(probe_stack) * len(window), -1)))
    return similar, dissimilar


def build_avg_similarity(probe_descriptors, gallery_descriptors, model: MetricModel,
                         probe_grid: GridSpec, gallery_grid: GridSpec) -> np.ndarray:
    """Mean patch-pair similarity over correct match pairs, shape (N_A, N_B).

    ``probe_descriptors[k]`` and ``gallery_descriptors[k]`` belong to the k-th
    correct match image pair of the training set.
    """
    if len(probe_descriptors) != len(gallery_descriptors) or not probe_descriptors:
        raise ValueError("need aligned, non-empty correct-pair descriptor lists")
    probe_stack = np.stack(probe_descriptors)    # (n_pairs, N_A, dim)
    gallery_stack = np.stack(gallery_descriptors)  # (n_pairs, N_B, dim)
    n_a = probe_grid.n_patches
    n_b = gallery_grid.n_patches
    if probe_stack.shape[1] != n_a or gallery_stack.shape[1] != n_b:
        raise ValueError("descriptor counts do not match grids")
    table = np.empty((n_a, n_b))
    for i in range(n_a):
        d = probe_stack[:, i, None, :] - gallery_stack          # (n_pairs, N_B, dim)
        dist = np.einsum("pjk,kl,pjl->pj", d, model.matrix_at(i), d)
        exponent = np.minimum(np.maximum(dist, 0.0) / model.sigma_at(i), MAX_EXPONENT)
        table[i] = np.exp(-exponent).mean(axis=0)
    return table


def save_metric(path, model: MetricModel) -> None:
    """Little-endian blob: 16-byte header, counts, matrices, sigmas, global."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", model.n_locations, model.dim))
        fh.write(model.matrices.astype("<f8").tobytes(order="C"))
        fh.write(model.sigmas.astype("<f8").tobytes())
        fh.write(model.global_matrix.astype("<f8").tobytes(order="C"))
        fh.write(struct.pack("<d", model.global_sigma))
        fh.write(model.fallback.astype(np.uint8).tobytes())


def load_metric(path) -> MetricModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:16] != _MAGIC:
        raise FormatError(f"bad metric magic {blob[:16]!r}")
    n_loc, dim = struct.unpack_from("<II", blob, 16)
    offset = 24
    sizes = [n_loc * dim * dim * 8, n_loc * 8, dim * dim * 8, 8, n_loc]
    if len(blob) != offset + sum(sizes):
        raise FormatError(f"metric payload has {len(blob) - offset} bytes, "
                          f"expected {sum(sizes)}")
    matrices = np.frombuffer(blob, dtype="<f8", count=n_loc * dim * dim,
                             offset=offset).reshape(n_loc, dim, dim).copy()
    offset += sizes[0]
    sigmas = np.frombuffer(blob, dtype="<f8", count=n_loc, offset=offset).copy()
    offset += sizes[1]
    global_matrix = np.frombuffer(blob, dtype="<f8", count=dim * dim,
                                  offset=offset).reshape(dim, dim).copy()
    offset += sizes[2]
    (global_sigma,) = struct.unpack_from("<d", blob, offset)
    offset += 8
    fallback = np.frombuffer(blob, dtype=np.uint8, count=n_loc, offset=offset).astype(bool)
    return MetricModel(matrices=matrices, sigmas=sigmas, global_matrix=global_matrix,
                       global_sigma=global_sigma, fallback=fallback)
