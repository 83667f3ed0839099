"""Temporal superpixel segmentation with seed propagation across frames.

Pixels are grouped to their closest seed under a joint chromatic/spatial
metric:

    d_total = ||lab_pixel - lab_seed||_2 + theta * ||xy_pixel - xy_seed||_2

with theta = 1 / compacity**2. Segmentation of one frame alternates
pixel-to-seed assignment and centroid updates until the mean seed
displacement drops below a threshold. Across frames, converged seeds are
re-used as the next frame's starting seeds, which keeps superpixel
identities stable over time and makes warm-started frames converge in one
or two iterations.

Coordinates are (x, y) = (column, row). Label maps are int32 arrays of
shape (height, width) holding seed ids in [0, k). UNASSIGNED (-1) never
survives a completed segmentation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from skimage.measure import label as _connected_components

from .color import rgb_to_yuv

UNASSIGNED = -1


@dataclass
class SegmentationParams:
    """Knobs for one segmentation run.

    theta = 1/compacity**2 weights spatial proximity against Lab similarity.
    max_motion limits how far a seed may travel per frame during temporal
    propagation (None = one grid cell).
    """

    k: int = 300
    compacity: float = 1.0
    max_iters: int = 5
    convergence_eps: float = 0.5
    search_radius_factor: float = 2.0
    max_motion: float | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.compacity <= 0:
            raise ValueError("compacity must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    @property
    def theta(self) -> float:
        return 1.0 / self.compacity**2


@dataclass
class Seeds:
    """Superpixel centers, stored as parallel arrays indexed by seed id.

    A seed whose region empties is marked not-alive and keeps its last
    position and color; ids are never recycled within a clip.
    """

    x: np.ndarray       # (k,) float64
    y: np.ndarray       # (k,) float64
    lab: np.ndarray     # (k, 3) float64
    alive: np.ndarray   # (k,) bool

    def __len__(self) -> int:
        return len(self.x)

    def copy(self) -> "Seeds":
        return Seeds(self.x.copy(), self.y.copy(), self.lab.copy(), self.alive.copy())


def grid_cell_size(height: int, width: int, k: int) -> float:
    """Nominal superpixel cell edge length in pixels."""
    return float(np.sqrt(height * width / k))


def init_seeds(frame_lab: np.ndarray, k: int) -> Seeds:
    """Place k seeds on a near-square grid over the frame.

    The grid has ceil(sqrt(k * aspect)) columns and ceil(sqrt(k / aspect))
    rows (aspect = width/height); surplus cells are dropped from the end in
    row-major order so exactly k seeds remain. Each seed takes the Lab color
    of its cell-center pixel. Ids run row-major.
    """
    height, width = frame_lab.shape[:2]
    if height * width == 0:
        raise ValueError("empty frame")
    if k > height * width:
        raise ValueError(
            f"over-segmentation request: k={k} exceeds pixel count {height * width}"
        )
    aspect = width / height
    cols = int(np.ceil(np.sqrt(k * aspect)))
    rows = int(np.ceil(np.sqrt(k / aspect)))
    while cols * rows < k:  # guard against ceil undershoot on extreme aspects
        if cols <= rows:
            cols += 1
        else:
            rows += 1
    cell_w = width / cols
    cell_h = height / rows
    cy, cx = np.divmod(np.arange(k), cols)
    xs = (cx + 0.5) * cell_w
    ys = (cy + 0.5) * cell_h
    px = np.clip(xs.astype(np.intp), 0, width - 1)
    py = np.clip(ys.astype(np.intp), 0, height - 1)
    lab = frame_lab[py, px].astype(np.float64)
    return Seeds(
        x=xs.astype(np.float64),
        y=ys.astype(np.float64),
        lab=lab,
        alive=np.ones(k, dtype=bool),
    )


def total_distance(
    pixel_xy: Sequence[float],
    pixel_lab: Sequence[float],
    seed_xy: Sequence[float],
    seed_lab: Sequence[float],
    compacity: float,
) -> float:
    """Joint color/space distance between one pixel and one seed.

    Both terms are Euclidean; the spatial term is weighted by
    theta = 1/compacity**2.
    """
    if compacity <= 0:
        raise ValueError("compacity must be positive")
    return float(
        _pair_distance(
            np.asarray(pixel_lab, dtype=np.float64),
            float(pixel_xy[0]),
            float(pixel_xy[1]),
            np.asarray(seed_lab, dtype=np.float64),
            float(seed_xy[0]),
            float(seed_xy[1]),
            1.0 / compacity**2,
        )
    )


def assign_pixels(
    frame_lab: np.ndarray, seeds: Seeds, params: SegmentationParams
) -> np.ndarray:
    """Label every pixel with its closest live seed under d_total.

    The search is restricted to seeds within search_radius_factor grid cells
    of the pixel; a pixel with no live seed in radius falls back to the
    globally closest live seed. Ties break toward the lowest seed id
    (argmin returns the first minimum), which makes the result independent
    of any internal chunking.
    """
    if not seeds.alive.any():
        raise ValueError("no live seeds")
    height, width = frame_lab.shape[:2]
    radius = params.search_radius_factor * grid_cell_size(height, width, params.k)
    theta = params.theta
    frame_lab = np.asarray(frame_lab, dtype=np.float64)

    col = np.arange(width, dtype=np.float64)
    row = np.arange(height, dtype=np.float64)
    best_d = np.full((height, width), np.inf)
    labels = np.full((height, width), UNASSIGNED, dtype=np.int32)

    # Scatter-min over each seed's local window. Visiting seeds in ascending
    # id order and replacing only on strict improvement reproduces argmin's
    # lowest-id tie-break exactly.
    for sid in range(len(seeds)):
        if not seeds.alive[sid]:
            continue
        sx, sy = seeds.x[sid], seeds.y[sid]
        x0 = max(0, int(np.ceil(sx - radius)))
        x1 = min(width, int(np.floor(sx + radius)) + 1)
        y0 = max(0, int(np.ceil(sy - radius)))
        y1 = min(height, int(np.floor(sy + radius)) + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        d = _pair_distance(
            frame_lab[y0:y1, x0:x1],
            col[x0:x1][None, :],
            row[y0:y1][:, None],
            seeds.lab[sid],
            sx,
            sy,
            theta,
        )
        d_sp = np.hypot(col[x0:x1][None, :] - sx, row[y0:y1][:, None] - sy)
        window_best = best_d[y0:y1, x0:x1]
        better = (d_sp <= radius) & (d < window_best)
        if better.any():
            window_best[better] = d[better]
            labels[y0:y1, x0:x1][better] = sid

    stranded = labels.ravel() == UNASSIGNED
    if stranded.any():
        # No live seed in radius: fall back to the globally closest live seed.
        flat_lab = frame_lab.reshape(-1, 3)[stranded]
        ys, xs = np.divmod(np.flatnonzero(stranded), width)
        d_all = np.full((flat_lab.shape[0], len(seeds)), np.inf)
        for sid in range(len(seeds)):
            if not seeds.alive[sid]:
                continue
            d_all[:, sid] = _pair_distance(
                flat_lab, xs.astype(np.float64), ys.astype(np.float64),
                seeds.lab[sid], seeds.x[sid], seeds.y[sid], theta,
            )
        labels.ravel()[stranded] = np.argmin(d_all, axis=1)
    return labels


def _pair_distance(lab, xs, ys, seed_lab, seed_x, seed_y, theta):
    """d_total for an array of pixels against one seed.

    Squares are summed in fixed channel order so results are bitwise
    reproducible and match a scalar reference evaluation.
    """
    d0 = lab[..., 0] - seed_lab[0]
    d1 = lab[..., 1] - seed_lab[1]
    d2 = lab[..., 2] - seed_lab[2]
    d_lab = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
    d_sp = np.hypot(xs - seed_x, ys - seed_y)
    return d_lab + theta * d_sp


def update_seeds(frame_lab: np.ndarray, labels: np.ndarray, seeds: Seeds) -> Seeds:
    """Move each seed to the centroid (position and mean Lab) of its pixels.

    Seeds with no assigned pixels are marked not-alive and keep their state.
    """
    k = len(seeds)
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=k).astype(np.float64)
    height, width = labels.shape
    ys, xs = np.divmod(np.arange(height * width, dtype=np.float64), width)
    lab = frame_lab.reshape(-1, 3)

    new = seeds.copy()
    occupied = counts > 0
    safe = np.where(occupied, counts, 1.0)
    new.x = np.where(occupied, np.bincount(flat, weights=xs, minlength=k) / safe, seeds.x)
    new.y = np.where(occupied, np.bincount(flat, weights=ys, minlength=k) / safe, seeds.y)
    mean_lab = np.stack(
        [np.bincount(flat, weights=lab[:, c], minlength=k) / safe for c in range(3)],
        axis=1,
    )
    new.lab = np.where(occupied[:, None], mean_lab, seeds.lab)
    new.alive = occupied
    return new


def _clamp_displacement(seeds: Seeds, anchor: Seeds, max_motion: float) -> Seeds:
    """Limit each seed's travel from its anchor position to max_motion pixels."""
    dx = seeds.x - anchor.x
    dy = seeds.y - anchor.y
    dist = np.hypot(dx, dy)
    scale = np.where(dist > max_motion, max_motion / np.maximum(dist, 1e-12), 1.0)
    out = seeds.copy()
    out.x = anchor.x + dx * scale
    out.y = anchor.y + dy * scale
    return out


def _enforce_connectivity(
    labels: np.ndarray, frame_lab: np.ndarray, seeds: Seeds
) -> np.ndarray:
    """Make every label's pixel set 4-connected.

    For each label, the largest connected component is kept; every other
    (orphan) component is merged into the neighboring label whose seed color
    is closest in Lab to the component's mean color. Merging repeats until
    no orphan remains (an orphan surrounded only by other orphans waits for
    a later pass).
    """
    # background=-1: label 0 is a real region, not background.
    comps = _connected_components(labels, connectivity=1, background=-1)
    n_comps = int(comps.max())
    if n_comps <= 0:
        return labels
    flat_comp = comps.ravel()
    flat_label = labels.ravel()
    order = np.argsort(flat_comp, kind="stable")
    boundaries = np.searchsorted(flat_comp[order], np.arange(1, n_comps + 2))
    comp_pixels = [order[boundaries[i]:boundaries[i + 1]] for i in range(n_comps)]
    comp_label = flat_label[[idx[0] for idx in comp_pixels]]
    comp_size = np.array([len(idx) for idx in comp_pixels])

    # Keep the largest component per label (ties: lowest component id).
    keep: dict[int, int] = {}
    for cid in range(n_comps):
        lbl = int(comp_label[cid])
        if lbl not in keep or comp_size[cid] > comp_size[keep[lbl]]:
            keep[lbl] = cid
    orphans = {cid for cid in range(n_comps) if keep[int(comp_label[cid])] != cid}
    if not orphans:
        return labels

    height, width = labels.shape
    lab_flat = frame_lab.reshape(-1, 3)
    out = labels.copy()
    out_flat = out.ravel()
    orphan_mask = np.zeros(n_comps + 1, dtype=bool)  # indexed by 1-based comp id
    orphan_mask[[cid + 1 for cid in orphans]] = True
    while orphans:
        fixed_any = False
        for cid in sorted(orphans):
            idx = comp_pixels[cid]
            ys, xs = np.divmod(idx, width)
            neighbors = []
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                ny, nx = ys + dy, xs + dx
                ok = (ny >= 0) & (ny < height) & (nx >= 0) & (nx < width)
                neighbors.append(ny[ok] * width + nx[ok])
            nidx = np.concatenate(neighbors)
            ncomp = flat_comp[nidx]
            valid = ~orphan_mask[ncomp] & (ncomp != cid + 1)
            # Any non-orphan neighbor is transitively connected to its label's
            # kept component, so every candidate label (including the orphan's
            # own, reached through an earlier merge) is safe to join.
            cand = {int(v) for v in np.unique(out_flat[nidx[valid]])}
            if not cand:
                continue
            mean_lab = lab_flat[idx].mean(axis=0)
            best = min(
                cand, key=lambda l: (float(np.linalg.norm(mean_lab - seeds.lab[l])), l)
            )
            out_flat[idx] = best
            orphans.discard(cid)
            orphan_mask[cid + 1] = False
            fixed_any = True
        if not fixed_any:
            # Unreachable: the orphan set always borders a non-orphan pixel,
            # so every pass merges at least one component.
            raise RuntimeError("connectivity enforcement made no progress")
    return out


def segment_frame(
    frame_lab: np.ndarray,
    seeds_in: Seeds,
    params: SegmentationParams,
    anchor: Seeds | None = None,
) -> tuple[np.ndarray, Seeds]:
    """Segment one frame starting from the given seeds.

    Alternates assignment and centroid updates until the mean displacement
    of live seeds falls below convergence_eps or max_iters is reached, then
    enforces 4-connectivity of every label region. When an anchor is given
    (temporal propagation), seed travel from the anchor is clamped to
    params.max_motion after every update.
    """
    if len(seeds_in) == 0:
        raise ValueError("seeds_in is empty")
    height, width = frame_lab.shape[:2]
    max_motion = params.max_motion
    if max_motion is None:
        max_motion = grid_cell_size(height, width, params.k)

    seeds = seeds_in.copy()
    labels = None
    for _ in range(params.max_iters):
        labels = assign_pixels(frame_lab, seeds, params)
        new = update_seeds(frame_lab, labels, seeds)
        if anchor is not None:
            new = _clamp_displacement(new, anchor, max_motion)
        both = seeds.alive & new.alive
        if both.any():
            disp = float(
                np.hypot(new.x[both] - seeds.x[both], new.y[both] - seeds.y[both]).mean()
            )
        else:
            disp = 0.0
        seeds = new
        if disp < params.convergence_eps:
            break
    labels = _enforce_connectivity(labels, frame_lab, seeds)
    # Centroids may shift slightly when orphan components are merged.
    seeds = update_seeds(frame_lab, labels, seeds)
    if anchor is not None:
        seeds = _clamp_displacement(seeds, anchor, max_motion)
    return labels, seeds


def propagate_and_segment(
    frames_lab: Sequence[np.ndarray] | np.ndarray,
    params: SegmentationParams,
) -> Iterator[tuple[np.ndarray, Seeds]]:
    """Segment a frame sequence with temporally propagated seed identities.

    Frame 0 starts from grid-initialized seeds; every later frame warm-starts
    from the previous frame's converged seeds, with per-frame seed travel
    clamped to params.max_motion (default one grid cell). Yields
    (label_map, seeds) per frame.
    """
    shape = None
    seeds: Seeds | None = None
    for t, frame in enumerate(frames_lab):
        frame = np.asarray(frame)
        if shape is None:
            shape = frame.shape
        elif frame.shape != shape:
            raise ValueError(
                f"frame {t} has shape {frame.shape[:2]}, expected {shape[:2]}"
            )
        if seeds is None:
            seeds = init_seeds(frame, params.k)
            labels, seeds = segment_frame(frame, seeds, params)
        else:
            labels, seeds = segment_frame(frame, seeds, params, anchor=seeds)
        yield labels, seeds


def extract_traces(
    frames_rgb: Sequence[np.ndarray] | np.ndarray,
    labelmaps: Sequence[np.ndarray],
    k: int,
) -> np.ndarray:
    """Per-superpixel mean color signal over time, encoded as YUV.

    Returns a (k, n_frames, 3) array where entry [p, t] is the YUV of the
    mean RGB over pixels labeled p in frame t. A seed with no pixels in a
    frame carries its last value forward (zeros if it never had pixels).
    """
    frames = list(frames_rgb)
    if len(frames) != len(labelmaps):
        raise ValueError("frames and labelmaps must have equal length")
    n = len(frames)
    traces = np.zeros((k, n, 3), dtype=np.float64)
    last = np.zeros((k, 3), dtype=np.float64)
    for t, (frame, labels) in enumerate(zip(frames, labelmaps)):
        flat = labels.ravel()
        counts = np.bincount(flat, minlength=k).astype(np.float64)
        rgb = frame.reshape(-1, 3).astype(np.float64)
        sums = np.stack(
            [np.bincount(flat, weights=rgb[:, c], minlength=k) for c in range(3)],
            axis=1,
        )
        occupied = counts > 0
        mean_rgb = sums / np.maximum(counts, 1.0)[:, None]
        yuv = rgb_to_yuv(mean_rgb)
        last = np.where(occupied[:, None], yuv, last)
        traces[:, t, :] = last
    return traces
