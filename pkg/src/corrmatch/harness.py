"""Dataset ingestion, split protocol, synthetic data, and ablation runs.

The manifest is a CSV (identity, camera, path) pointing at PPM images; the
evaluation protocol draws repeated seeded 50/50 identity splits, trains the
metric and the correspondence structure on the training half, and reports
CMC curves on the test half for four pipeline variants: no-structure,
simple-average, no-global, and proposed.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .errors import ConfigurationError
from .geometry import colocated_patch, patch_at
from .imaging import RgbImage, extract_descriptors, load_image, save_image, scale_to_canonical
from .learning import (CmcCurve, LearnResult, cmc_curve, find_binary_structures,
                       learn_structure)
from .matching import (BinaryMappingStructure, binary_structure_score_matrix,
                       correlation_matrix, greedy_score, score_correlation)
from .metric import MetricModel, build_training_pairs, train_metric
from .structure import CorrespondenceStructure

CAMERAS = ("A", "B")
ARMS = ("no-structure", "simple-average", "no-global", "proposed")

# How much of the shared scene texture weak-texture identities keep inside
# their blocks; low values make their patches locally ambiguous.
WEAK_SCENE_STRENGTH = 0.12


@dataclass(frozen=True)
class ManifestEntry:
    identity: str
    camera: str
    path: str


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    entries: tuple[ManifestEntry, ...]

    def identities(self) -> list[str]:
        seen: dict[str, None] = {}
        for entry in self.entries:
            seen.setdefault(entry.identity, None)
        return list(seen)

    def image_paths(self, identity: str, camera: str) -> list[str]:
        paths = [e.path for e in self.entries
                 if e.identity == identity and e.camera == camera]
        if not paths:
            raise KeyError(f"no image for ({identity}, {camera})")
        return paths

    def image_path(self, identity: str, camera: str) -> str:
        return self.image_paths(identity, camera)[0]


def load_manifest(path, allow_multi: bool = True) -> DatasetManifest:
    """Read and validate a dataset manifest CSV.

    Paths are resolved relative to the manifest file.  Every identity must
    appear in both cameras; with allow_multi extra images per (identity,
    camera) are kept (callers use the first one per camera).
    """
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if not rows:
        raise ConfigurationError(f"manifest {path} is empty")
    header = [c.strip() for c in rows[0]]
    if header != ["identity", "camera", "path"]:
        raise ConfigurationError(f"manifest header must be identity,camera,path, got {header}")

    entries = []
    problems = []
    seen_pairs: dict[tuple[str, str], int] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            problems.append(f"line {lineno}: expected 3 columns")
            continue
        identity, camera, rel = (c.strip() for c in row)
        if camera not in CAMERAS:
            problems.append(f"line {lineno}: unknown camera {camera!r}")
            continue
        full = rel if os.path.isabs(rel) else os.path.join(base, rel)
        if not os.path.isfile(full):
            problems.append(f"line {lineno}: missing file {rel}")
            continue
        seen_pairs[(identity, camera)] = seen_pairs.get((identity, camera), 0) + 1
        entries.append(ManifestEntry(identity=identity, camera=camera, path=full))

    identities = {e.identity for e in entries}
    for identity in sorted(identities):
        for camera in CAMERAS:
            if (identity, camera) not in seen_pairs:
                problems.append(f"identity {identity!r} missing camera {camera}")
    if not allow_multi:
        dupes = [f"({i}, {c}) x{n}" for (i, c), n in sorted(seen_pairs.items()) if n > 1]
        if dupes:
            problems.append("duplicate entries: " + "; ".join(dupes))
    if problems:
        raise ConfigurationError(f"invalid manifest {path}: " + " | ".join(problems))
    if not entries:
        raise ConfigurationError(f"manifest {path} has no entries")
    return DatasetManifest(name=os.path.basename(path), entries=tuple(entries))


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    repeats: int
    splits: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]  # (train, test) per repeat


def make_splits(manifest: DatasetManifest, seed: int, repeats: int = 10) -> SplitPlan:
    """Seeded repeated 50/50 identity splits; odd counts favor training."""
    identities = manifest.identities()
    if len(identities) < 4:
        raise ConfigurationError(f"need at least 4 identities, have {len(identities)}")
    rng = np.random.default_rng(seed)
    splits = []
    for _ in range(repeats):
        order = list(rng.permutation(identities))
        cut = (len(order) + 1) // 2
        splits.append((tuple(order[:cut]), tuple(order[cut:])))
    return SplitPlan(seed=seed, repeats=repeats, splits=tuple(splits))


def _triangle_wave(y: np.ndarray, period: float, phase: float) -> np.ndarray:
    """Symmetric triangle wave in [0, 1]."""
    frac = ((y - phase) / period) % 1.0
    return 1.0 - np.abs(2.0 * frac - 1.0)


_PALETTE = np.array([
    [200, 60, 50], [60, 140, 200], [70, 180, 90], [210, 180, 60],
    [160, 80, 190], [220, 120, 40], [90, 200, 200], [190, 90, 120],
], dtype=np.float64)


def shared_scene_texture(seed: int, width: int, height: int) -> np.ndarray:
    """Population-wide texture factors, identical for every identity.

    Re-identification data is hard because viewpoint distortion dwarfs the
    appearance differences between people; a strong shared texture (which
    translates together with the figure) reproduces that: it localizes
    patches precisely when alignment is right and produces large residuals
    when it is wrong, without telling identities apart.
    """
    rng = np.random.default_rng([seed, 0x5CE77E])
    cell = 8
    fine = rng.uniform(0.72, 1.28, size=(height // cell + 1, width // cell + 1, 1))
    fine = np.kron(fine, np.ones((cell, cell, 1)))[:height, :width]
    coarse_cell = 16
    coarse = rng.choice([0.82, 1.0, 1.18],
                        size=(height // coarse_cell + 1, width // coarse_cell + 1, 1))
    coarse = np.kron(coarse, np.ones((coarse_cell, coarse_cell, 1)))[:height, :width]
    ramp = (0.75 + 0.25 * (1.0 - np.arange(height) / (height - 1.0)))[:, None, None]
    return fine * coarse * ramp


def render_identity(rng: np.random.Generator, scene: np.ndarray,
                    weak_texture: bool = False, palette_size: int = 8) -> np.ndarray:
    """A figure of stacked colored blocks under the shared scene texture.

    Identity-specific content is deliberately sparse and coarse: block
    colors drawn with replacement from a small palette, a lightly jittered
    shared body template, and a faint two-level cell pattern.  Histograms of
    misaligned patches therefore collide between identities, while exactly
    aligned patches still separate them.  Weak-texture identities flatten
    the shared texture inside their blocks, which makes their patches
    locally ambiguous and their adjacency-search links scatter.
    """
    height, width = scene.shape[:2]
    # Boundaries are a per-identity subset of one shared anchor template, so
    # identities with different block counts still share cut positions.
    n_blocks = int(rng.integers(3, 6))
    template = np.array([0.2, 0.4, 0.6, 0.8]) * height
    picks = np.sort(rng.choice(4, size=n_blocks - 1, replace=False))
    cuts = template[picks] + rng.integers(-4, 5, size=n_blocks - 1)
    cuts = np.clip(cuts, 12, height - 12)
    cuts = np.maximum.accumulate(cuts + np.arange(n_blocks - 1) * 1e-3)  # keep order
    bounds = [0, *[int(c) for c in cuts], height]
    n_colors = min(max(palette_size, 2), len(_PALETTE))
    colors = _PALETTE[rng.integers(0, n_colors, size=n_blocks)]

    img = np.array([58.0, 62.0, 68.0])[None, None, :] * scene

    scene_strength = WEAK_SCENE_STRENGTH if weak_texture else 1.0
    block_scene = 1.0 + scene_strength * (scene - 1.0)
    for b in range(n_blocks):
        y0, y1 = bounds[b], bounds[b + 1]
        block_w = int(rng.choice([18, 28, 38]))
        x0 = (width - block_w) // 2
        img[y0:y1, x0:x0 + block_w, :] = (colors[b][None, None, :]
                                          * block_scene[y0:y1, x0:x0 + block_w, :])

    id_depth = 0.05
    cell = 8
    id_cells = rng.choice([1.0 - id_depth, 1.0 + id_depth],
                          size=(height // cell + 1, width // cell + 1, 3))
    img *= np.kron(id_cells, np.ones((cell, cell, 1)))[:height, :width]
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


def generate_synthetic(out_dir, n_identities: int, shift_rows: int, noise_level: float,
                       seed: int, config: RunConfig | None = None,
                       weak_fraction: float = 0.35, palette_size: int = 8):
    """Write a synthetic camera-pair dataset with a known vertical shift.

    Camera A holds the rendered figure; camera B holds the same figure
    translated down by shift_rows gallery-stride rows (wrapping at the
    border) with per-pixel uniform noise.  Returns (manifest, ground_truth).
    """
    config = config or RunConfig()
    gallery_grid = config.gallery_grid()
    shift_pixels = shift_rows * config.gallery_stride_y
    if not 0 <= shift_pixels < config.image_height:
        raise ConfigurationError(f"shift of {shift_rows} rows leaves the canvas")

    img_dir = os.path.join(out_dir, "imgs")
    os.makedirs(img_dir, exist_ok=True)
    scene = shared_scene_texture(seed, config.image_width, config.image_height)
    rows = [("identity", "camera", "path")]
    for idx in range(n_identities):
        rng = np.random.default_rng([seed, idx])
        weak = rng.random() < weak_fraction
        base = render_identity(rng, scene, weak, palette_size=palette_size)
        shifted = np.roll(base, shift_pixels, axis=0)
        if noise_level > 0.0:
            noise = rng.uniform(-noise_level * 255.0, noise_level * 255.0, shifted.shape)
            shifted = np.clip(np.floor(shifted + noise + 0.5), 0, 255).astype(np.uint8)
        identity = f"id{idx:04d}"
        for camera, pixels in (("A", base), ("B", shifted)):
            rel = os.path.join("imgs", f"{identity}_{camera}.ppm")
            save_image(os.path.join(out_dir, rel), RgbImage(pixels=pixels))
            rows.append((identity, camera, rel))

    manifest_path = os.path.join(out_dir, "manifest.csv")
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(",".join(row) + "\n")
    ground_truth = {"n_identities": n_identities, "shift_rows": shift_rows,
                    "shift_pixels": shift_pixels, "noise_level": noise_level,
                    "seed": seed, "weak_fraction": weak_fraction,
                    "palette_size": palette_size}
    with open(os.path.join(out_dir, "ground_truth.json"), "w", encoding="utf-8") as fh:
        json.dump(ground_truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return load_manifest(manifest_path), ground_truth


class DescriptorBank:
    """Descriptors per (identity, camera) computed once and shared by arms."""

    def __init__(self, manifest: DatasetManifest, config: RunConfig):
        self.config = config
        self.probe_grid = config.probe_grid()
        self.gallery_grid = config.gallery_grid()
        self._cache: dict[tuple[str, str], np.ndarray] = {}
        self.manifest = manifest

    def descriptors_for(self, path: str, camera: str) -> np.ndarray:
        key = (path, camera)
        if key not in self._cache:
            grid = self.probe_grid if camera == "A" else self.gallery_grid
            img = scale_to_canonical(load_image(path), grid)
            self._cache[key] = extract_descriptors(img, grid, self.config.color_bins,
                                                   self.config.gradient_bins)
        return self._cache[key]

    def descriptors(self, identity: str, camera: str) -> np.ndarray:
        return self.descriptors_for(self.manifest.image_path(identity, camera), camera)

    def stacks(self, identities) -> tuple[np.ndarray, np.ndarray]:
        probes = np.stack([self.descriptors(i, "A") for i in identities])
        galleries = np.stack([self.descriptors(i, "B") for i in identities])
        return probes, galleries

    def gallery_pool(self, identities) -> tuple[np.ndarray, np.ndarray]:
        """Every camera-B image of the identities, with owner indices.

        Supports all-pairs evaluation of multi-image identities; with one
        image per identity it degenerates to the aligned stack.
        """
        descs, owners = [], []
        for idx, identity in enumerate(identities):
            for path in self.manifest.image_paths(identity, "B"):
                descs.append(self.descriptors_for(path, "B"))
                owners.append(idx)
        return np.stack(descs), np.array(owners, dtype=np.int64)


def train_split_metric(probe_stack: np.ndarray, gallery_stack: np.ndarray,
                       config: RunConfig) -> MetricModel:
    """Metric from a training split; wrong-identity pairs come from the next
    identity in the split order (a fixed derangement keeps this seedless)."""
    n = probe_stack.shape[0]
    wrong = [gallery_stack[(k + 1) % n] for k in range(n)]
    similar, dissimilar = build_training_pairs(list(probe_stack), list(gallery_stack),
                                               wrong, config.probe_grid(),
                                               config.gallery_grid(), config.t_d)
    return train_metric(similar, dissimilar, sigma_scale=config.sigma_scale)


def colocated_links(config: RunConfig) -> BinaryMappingStructure:
    probe_grid, gallery_grid = config.probe_grid(), config.gallery_grid()
    links = tuple((i, colocated_patch(probe_grid, gallery_grid, patch_at(probe_grid, i)).ordinal)
                  for i in range(probe_grid.n_patches))
    return BinaryMappingStructure(links=links)


def simple_average_structure(binaries, config: RunConfig) -> CorrespondenceStructure:
    """Row-normalized mean of 0/1 link matrices from all training probes."""
    probe_grid, gallery_grid = config.probe_grid(), config.gallery_grid()
    acc = np.zeros((probe_grid.n_patches, gallery_grid.n_patches))
    for binary in binaries:
        for i, j in binary.links:
            acc[i, j] += 1.0
    totals = acc.sum(axis=1)
    if np.any(totals == 0.0):
        raise ConfigurationError("simple-average structure has an unlinked probe patch")
    return CorrespondenceStructure(probs=acc / totals[:, None],
                                   probe_grid=probe_grid, gallery_grid=gallery_grid)


@dataclass
class SplitArtifacts:
    """Everything trained on one split that the arms share."""

    metric: MetricModel
    learned: LearnResult | None = None
    binaries: list[BinaryMappingStructure] | None = None

    def binary_structures(self) -> list[BinaryMappingStructure]:
        if self.learned is not None:
            return self.learned.binary_structures
        if self.binaries is None:
            raise ValueError("split was trained without binary structures")
        return self.binaries


def train_on_split(bank: DescriptorBank, train_ids, config: RunConfig,
                   need_structure: bool = True,
                   need_binaries: bool = True) -> SplitArtifacts:
    """Train the shared per-split artifacts; skip stages no arm requires."""
    probe_stack, gallery_stack = bank.stacks(train_ids)
    metric = train_split_metric(probe_stack, gallery_stack, config)
    learned = None
    binaries = None
    if need_structure:
        learned = learn_structure(probe_stack, gallery_stack, metric,
                                  config.probe_grid(), config.gallery_grid(),
                                  config.learner_config())
    elif need_binaries:
        binaries = find_binary_structures(probe_stack, gallery_stack, metric,
                                          config.probe_grid(), config.gallery_grid(),
                                          config.learner_config())
    return SplitArtifacts(metric=metric, learned=learned, binaries=binaries)


def _rank_of_owner(scores, owners, target: int) -> int:
    """1-based rank of the first gallery image belonging to ``target``."""
    order = sorted(range(len(scores)), key=lambda idx: (-scores[idx], idx))
    for pos, idx in enumerate(order, start=1):
        if owners[idx] == target:
            return pos
    raise ValueError("correct identity missing from the gallery pool")


def _test_ranks(bank: DescriptorBank, test_ids, artifacts: SplitArtifacts,
                arm: str, config: RunConfig) -> tuple[list[int], int]:
    """Correct-match ranks per probe and the gallery pool size.

    With use_first_image the gallery holds one image per identity;
    otherwise every camera-B image of the test identities competes and the
    best-ranked image of the correct identity counts.
    """
    probe_stack, _ = bank.stacks(test_ids)
    n = len(test_ids)
    if config.use_first_image:
        gallery_stack = bank.stacks(test_ids)[1]
        owners = np.arange(n)
    else:
        gallery_stack, owners = bank.gallery_pool(test_ids)
    metric = artifacts.metric

    if arm == "no-structure":
        scores = binary_structure_score_matrix(probe_stack, gallery_stack,
                                               colocated_links(config), metric,
                                               config.gallery_grid().n_patches,
                                               config.kappa)
        return ([_rank_of_owner(list(scores[p]), owners, p) for p in range(n)],
                len(gallery_stack))

    if arm == "simple-average":
        structure = simple_average_structure(artifacts.binary_structures(), config)
    elif arm in ("no-global", "proposed"):
        if artifacts.learned is None:
            raise ValueError(f"arm {arm!r} needs a trained structure")
        structure = artifacts.learned.structure
    else:
        raise ValueError(f"unknown ablation arm {arm!r}")

    ranks = []
    for p in range(n):
        scores = []
        for g in range(len(gallery_stack)):
            corr = correlation_matrix(probe_stack[p], gallery_stack[g], structure,
                                      metric, config.t_c)
            if arm == "no-global":
                scores.append(greedy_score(corr, config.kappa))
            else:
                scores.append(score_correlation(corr, config.kappa).score)
        ranks.append(_rank_of_owner(scores, owners, p))
    return ranks, len(gallery_stack)


def run_ablations(manifest: DatasetManifest, splits: SplitPlan, arms, config: RunConfig):
    """Per-arm averaged and per-split CMC curves over the split plan.

    Returns {arm: (averaged CmcCurve, [per-split CmcCurve])}.  All arms of a
    split share the same descriptors, metric, and trained structure.
    """
    for arm in arms:
        if arm not in ARMS:
            raise ValueError(f"unknown ablation arm {arm!r}")
    bank = DescriptorBank(manifest, config)
    need_structure = any(arm in ("no-global", "proposed") for arm in arms)
    need_binaries = "simple-average" in arms
    per_arm: dict[str, list[CmcCurve]] = {arm: [] for arm in arms}
    for train_ids, test_ids in splits.splits:
        artifacts = train_on_split(bank, train_ids, config, need_structure, need_binaries)
        for arm in arms:
            ranks, pool_size = _test_ranks(bank, test_ids, artifacts, arm, config)
            per_arm[arm].append(cmc_curve(ranks, pool_size))
    out = {}
    for arm in arms:
        curves = per_arm[arm]
        sizes = {c.gallery_size for c in curves}
        if len(sizes) != 1:
            raise ValueError(f"split test sizes differ: {sorted(sizes)}")
        mean_values = np.mean([c.values for c in curves], axis=0)
        out[arm] = (CmcCurve(values=mean_values, gallery_size=curves[0].gallery_size), curves)
    return out


def run_ablation(manifest: DatasetManifest, splits: SplitPlan, arm: str,
                 config: RunConfig):
    """Single-arm convenience wrapper around run_ablations."""
    return run_ablations(manifest, splits, [arm], config)[arm]
