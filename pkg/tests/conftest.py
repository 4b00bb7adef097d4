import itertools

import numpy as np
import pytest

from segpaste.core import IGNORE, Raster, Sample, SemanticMask


def flood_fill_labels(values, connectivity):
    """Brute-force component labels via an explicit-stack flood fill.

    Labels are numbered from 1 in raster order of each component's first
    pixel; IGNORE pixels get 0.
    """
    values = np.asarray(values)
    h, w = values.shape
    out = np.zeros((h, w), dtype=np.int64)
    steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if connectivity == 8:
        steps += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    nxt = 0
    for r in range(h):
        for c in range(w):
            if values[r, c] == IGNORE or out[r, c]:
                continue
            nxt += 1
            cls = values[r, c]
            out[r, c] = nxt
            stack = [(r, c)]
            while stack:
                y, x = stack.pop()
                for dy, dx in steps:
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w and not out[yy, xx] and values[yy, xx] == cls:
                        out[yy, xx] = nxt
                        stack.append((yy, xx))
    return out


def canonical(labels):
    """Relabel so ids follow raster order of first appearance (0 stays 0)."""
    labels = np.asarray(labels)
    mapping = {0: 0}
    out = np.zeros_like(labels)
    for i, v in enumerate(labels.ravel()):
        if v not in mapping:
            mapping[v] = len(mapping)
        out.flat[i] = mapping[v]
    return out


def direct_iou(gt, pred, class_ids):
    """Per-class IoU from explicit pixel coordinate sets."""
    gt, pred = np.asarray(gt), np.asarray(pred)
    out = []
    for c in class_ids:
        a = {tuple(p) for p in np.argwhere(gt == c)}
        b = {tuple(p) for p in np.argwhere((pred == c) & (gt != IGNORE))}
        union = a | b
        out.append(len(a & b) / len(union) if union else float("nan"))
    return out


def random_mask(rng, max_side=32, n_classes=6, ignore_prob=0.1, blocky=True):
    h, w = rng.integers(1, max_side + 1, size=2)
    if blocky:
        # coarse blocks upsampled give larger, more interesting components
        bh, bw = rng.integers(1, 5, size=2)
        coarse = rng.integers(0, n_classes, size=(h // bh + 1, w // bw + 1))
        m = np.kron(coarse, np.ones((bh, bw), dtype=int))[:h, :w]
    else:
        m = rng.integers(0, n_classes, size=(h, w))
    m = m.astype(np.uint8)
    m[rng.random((h, w)) < ignore_prob] = IGNORE
    return m


def make_sample(mask, bands=3, seed=0, sample_id="s0", aoi_id="a0"):
    mask = np.asarray(mask, dtype=np.uint8)
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 1000, size=(bands, *mask.shape)).astype(np.float64)
    return Sample(Raster(img, "u16"), SemanticMask(mask), sample_id, aoi_id)


@pytest.fixture
def nprng():
    return np.random.default_rng(12345)


MASK_3X3 = np.array([[1, 1, 0], [0, 1, 0], [0, 0, 2]], dtype=np.uint8)


def split_feasible(groups, hist, val_fraction):
    """Exhaustive check for an AOI split meeting the size rule and class coverage.

    Returns ``(feasible, allowed_val_sizes)``.
    """
    keys = list(dict.fromkeys(groups))
    sizes = {k: groups.count(k) for k in keys}
    ghist = {k: hist[[i for i, g in enumerate(groups) if g == k]].sum(axis=0) for k in keys}
    n = len(groups)
    subsets = [s for r in range(1, len(keys)) for s in itertools.combinations(keys, r)]
    counts = {sum(sizes[k] for k in s) for s in subsets}
    counts = [c for c in counts if 0 < c < n]
    if not counts:
        return False, set()
    best = min(abs(c - val_fraction * n) for c in counts)
    allowed = {c for c in counts if abs(c - val_fraction * n) == best}
    present = hist.sum(axis=0) > 0
    for s in subsets:
        if sum(sizes[k] for k in s) not in allowed:
            continue
        val = sum(ghist[k] for k in s)
        train = hist.sum(axis=0) - val
        if not (present & ((val == 0) | (train == 0))).any():
            return True, allowed
    return False, allowed


ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
