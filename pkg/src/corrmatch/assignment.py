"""Globally constrained one-to-one patch assignment.

Maximizes the total correlation of a one-to-one pairing between probe rows
and gallery columns.  Excluded cells are non-assignable rather than merely
expensive; a probe row left unmatched (because its cells are all excluded,
or because better rows claim its columns) contributes the floor penalty
``kappa`` to the score.  Ties between optima are broken toward the
lexicographically smallest pair set.

The solver runs successive shortest augmenting paths over a sparse edge
list, with a private "skip" slot per row priced at ``kappa`` so a complete
row assignment always exists.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

DEFAULT_KAPPA = -50.0

_INF = float("inf")


@dataclass(frozen=True)
class Assignment:
    """One-to-one pairing (probe row, gallery column) plus its total score."""

    pairs: tuple[tuple[int, int], ...]
    score: float

    def __post_init__(self) -> None:
        rows = [i for i, _ in self.pairs]
        cols = [j for _, j in self.pairs]
        if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
            raise ValueError("assignment must be one-to-one")


def solve_assignment(values: np.ndarray, assignable: np.ndarray | None = None,
                     kappa: float = DEFAULT_KAPPA) -> Assignment:
    """Best one-to-one assignment for a correlation matrix.

    ``values`` is (n_rows, n_cols); cells where ``assignable`` is False (or
    where values are -inf when no mask is given) cannot be used.  The score
    sums chosen cell values plus ``kappa`` per unmatched row, accumulated in
    ascending row order.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {values.shape}")
    if assignable is None:
        assignable = ~np.isneginf(values)
    else:
        assignable = np.asarray(assignable, dtype=bool)
        if assignable.shape != values.shape:
            raise ValueError("assignable mask shape mismatch")
    if values.size and not np.all(np.isfinite(values[assignable])):
        raise ValueError("assignable values must be finite")

    n_rows, n_cols = values.shape
    row_cols = [np.flatnonzero(assignable[i]) for i in range(n_rows)]
    row_vals = [values[i, cols] for i, cols in enumerate(row_cols)]
    match = solve_sparse(row_cols, row_vals, n_cols, kappa)
    pairs = tuple((i, j) for i, j in enumerate(match) if j >= 0)
    score = 0.0
    for i, j in enumerate(match):
        score += kappa if j < 0 else float(values[i, j])
    return Assignment(pairs=pairs, score=score)


def solve_sparse(row_cols, row_vals, n_cols: int, kappa: float) -> list[int]:
    """Optimal assignment over sparse rows; returns a column per row (-1 = skip).

    ``row_cols[i]`` / ``row_vals[i]`` list the assignable columns of row i in
    ascending column order with their values.  Ties between optima resolve
    to the lexicographically smallest pair set; a skipped row sorts before
    any pair of that row only when the whole remaining suffix is skipped too.
    """
    rows = [[(int(c), float(x)) for c, x in zip(cols, vals)]
            for cols, vals in zip(row_cols, row_vals)]
    if not rows:
        return []
    match, u, v, shift = _shortest_path_matching(rows, n_cols, kappa)
    return _refine_lexicographic(rows, n_cols, kappa, match, u, v, shift)


def _shortest_path_matching(rows, n_cols, kappa, forced=None):
    """Min-cost complete matching of rows onto real or skip columns.

    Values are negated and shifted so all edge costs are non-negative, which
    keeps plain Dijkstra valid.  ``forced`` optionally pins a row to one
    column (or to its skip slot with -1); pinned columns must be distinct.
    Returns (match, u, v, shift): match[i] is a real column or -1 for skip,
    and u, v are dual potentials on rows and (real + skip) columns for the
    shifted costs.
    """
    n_rows = len(rows)
    hi = kappa
    for edges in rows:
        for _, val in edges:
            if val > hi:
                hi = val
    shift = hi  # cost = shift - value >= 0 for every slot
    skip_cost = shift - kappa

    total_cols = n_cols + n_rows  # skip slot of row i is column n_cols + i
    match_row = [-1] * total_cols
    match_col = [-1] * n_rows
    u = [0.0] * n_rows
    v = [0.0] * total_cols

    adj = []
    for r in range(n_rows):
        pin = None if forced is None else forced[r]
        if pin is None:
            edges = [(j, shift - val) for j, val in rows[r]]
            edges.append((n_cols + r, skip_cost))
        elif pin == -1:
            edges = [(n_cols + r, skip_cost)]
        else:
            edges = [(j, shift - val) for j, val in rows[r] if j == pin]
            if not edges:
                raise ValueError(f"row {r} cannot be pinned to column {pin}")
        adj.append(edges)

    for root in range(n_rows):
        dist = [_INF] * total_cols
        pred_row = [-1] * total_cols
        entry = {root: 0.0}
        done = []
        done_mask = [False] * total_cols
        heap = []
        u_root = u[root]
        for j, cost in adj[root]:
            d = cost - u_root - v[j]
            if d < dist[j]:
                dist[j] = d
                pred_row[j] = root
                heapq.heappush(heap, (d, j))
        sink = -1
        while heap:
            d, j = heapq.heappop(heap)
            if done_mask[j] or d > dist[j]:
                continue
            done_mask[j] = True
            done.append(j)
            r = match_row[j]
            if r == -1:
                sink = j
                break
            entry[r] = d
            u_r = u[r]
            for j2, cost in adj[r]:
                if done_mask[j2]:
                    continue
                nd = d + (cost - u_r - v[j2])
                if nd < dist[j2]:
                    dist[j2] = nd
                    pred_row[j2] = r
                    heapq.heappush(heap, (nd, j2))
        assert sink >= 0, "skip slots guarantee an augmenting path"
        delta = dist[sink]
        for r, d in entry.items():
            u[r] += delta - d
        for j in done:
            if j != sink:
                v[j] -= delta - dist[j]
        # Augment: walk predecessors back to the root.
        j = sink
        while True:
            r = pred_row[j]
            prev = match_col[r]
            match_row[j] = r
            match_col[r] = j
            if r == root:
                break
            j = prev

    return [j if j < n_cols else -1 for j in match_col], u, v, shift


def _refine_lexicographic(rows, n_cols, kappa, match, u, v, shift):
    """Rework an optimal matching into the lexicographically smallest one.

    Processes rows in order; a row prefers its smallest usable column, and
    prefers being skipped only when the entire remaining suffix can also be
    skipped at no cost to the score.  Candidate moves are prescreened with
    the dual potentials (a cell can join an optimum only if its reduced cost
    is zero), so re-solves only trigger on genuine ties.
    """
    n_rows = len(rows)
    tol = 1e-9 * max(1.0, abs(shift), abs(kappa))
    value_of = [dict(edges) for edges in rows]

    def score_of(m):
        total = 0.0
        for i, j in enumerate(m):
            total += kappa if j < 0 else value_of[i][j]
        return total

    # suffix_skippable[r]: every skip slot from row r on has zero reduced cost.
    skip_tight = [(shift - kappa) - u[t] - v[n_cols + t] <= tol for t in range(n_rows)]
    suffix_skippable = [False] * (n_rows + 1)
    suffix_skippable[n_rows] = True
    for t in range(n_rows - 1, -1, -1):
        suffix_skippable[t] = skip_tight[t] and suffix_skippable[t + 1]

    best = score_of(match)
    work = list(match)
    owner = [-1] * n_cols
    for t, j in enumerate(work):
        if j >= 0:
            owner[j] = t
    matched_after = sum(1 for j in work if j >= 0)
    for r in range(n_rows):
        if work[r] >= 0:
            matched_after -= 1
        suffix_has_match = matched_after > 0 or work[r] >= 0
        if not suffix_has_match:
            continue  # suffix already all-skip, nothing smaller exists
        if suffix_skippable[r]:
            candidate = work[:r] + [-1] * (n_rows - r)
            cand_score = score_of(candidate)
            if cand_score >= best:
                work = candidate
                break
        cur = work[r]
        cur_val = value_of[r][cur] if cur >= 0 else kappa
        cur_v = v[cur] if cur >= 0 else v[n_cols + r]
        limit = cur if cur >= 0 else n_cols
        for j, val in rows[r]:
            if j >= limit:
                break
            if owner[j] >= 0 and owner[j] < r:
                continue  # claimed by the fixed prefix
            if (shift - val) - u[r] - v[j] > tol:
                continue
            # Exact tied swap onto a free column: adopt without re-solving.
            if owner[j] == -1 and val == cur_val and abs(v[j]) <= tol and abs(cur_v) <= tol:
                if cur >= 0:
                    owner[cur] = -1
                owner[j] = r
                work[r] = j
                break
            forced = [None] * n_rows
            for t in range(r):
                forced[t] = work[t] if work[t] >= 0 else -1
            forced[r] = j
            candidate, _, _, _ = _shortest_path_matching(rows, n_cols, kappa, forced=forced)
            cand_score = score_of(candidate)
            if cand_score >= best:
                matched_after = sum(1 for t in range(r + 1, n_rows) if candidate[t] >= 0)
                work = candidate
                best = cand_score
                owner = [-1] * n_cols
                for t, jj in enumerate(work):
                    if jj >= 0:
                        owner[jj] = t
                break
    return work
