"""Slow, independent reference implementations used only by the tests."""
from __future__ import annotations

import math

import numpy as np


def dbscan_reference(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """O(n^2) DBSCAN written as core-graph components plus border assignment.

    Clusters are the connected components of the core-point graph, ranked by
    their lowest core index; a border point joins the best-ranked component
    with a core point within ``eps``.  This matches an input-order
    expansion without sharing any of its code.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    diff = pts[:, None, :] - pts[None, :, :]
    near = np.sqrt((diff**2).sum(-1)) <= eps
    core = near.sum(1) >= min_pts

    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        if not core[i]:
            continue
        for j in range(i + 1, n):
            if core[j] and near[i, j]:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    rank: dict[int, int] = {}
    for i in range(n):
        if core[i] and find(i) not in rank:
            rank[find(i)] = len(rank)
    for i in range(n):
        if core[i]:
            labels[i] = rank[find(i)]
    for j in range(n):
        if core[j]:
            continue
        candidates = [rank[find(i)] for i in range(n) if core[i] and near[i, j]]
        if candidates:
            labels[j] = min(candidates)
    return labels


def partition(labels) -> tuple[frozenset, frozenset]:
    """(set of clusters as frozensets of indices, noise set) for label-free comparison."""
    labels = np.asarray(labels)
    clusters = frozenset(frozenset(np.flatnonzero(labels == k).tolist()) for k in set(labels.tolist()) - {-1})
    return clusters, frozenset(np.flatnonzero(labels == -1).tolist())


def naive_confusion(n_patches: int, predicted, positive) -> tuple[int, int, int, int]:
    tp = fp = fn = tn = 0
    for i in range(n_patches):
        p, g = i in predicted, i in positive
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def naive_metrics(tp, fp, fn, tn):
    def div(a, b):
        return None if b == 0 else a / b

    return (div(tp + tn, tp + fp + fn + tn), div(tp, tp + fp), div(tp, tp + fn), div(tn, tn + fp), div(tn, tn + fn))


def correlate_loops(template: np.ndarray, scene: np.ndarray) -> np.ndarray:
    """Quadruple-loop evaluation of the centered inner-product score."""
    a = np.asarray(template, dtype=np.float64)
    b = np.asarray(scene, dtype=np.float64)
    th, tw = a.shape
    h, w = b.shape
    px, py = tw // 2, th // 2
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            s = 0.0
            for ty in range(th):
                sy = y + ty - py
                if not 0 <= sy < h:
                    continue
                for tx in range(tw):
                    sx = x + tx - px
                    if 0 <= sx < w:
                        s += a[ty, tx] * b[sy, sx]
            out[y, x] = s
    return out


def nearest_neighbor_resize(bits: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Pick, for each destination pixel center, the closest source pixel center.

    Equidistant ties go to the higher source index.
    """
    h, w = bits.shape
    out = np.zeros((new_h, new_w), dtype=bits.dtype)
    for j in range(new_h):
        for i in range(new_w):
            u = (i + 0.5) * w / new_w
            v = (j + 0.5) * h / new_h
            src_x = min(range(w), key=lambda k: (abs(k + 0.5 - u), -k))
            src_y = min(range(h), key=lambda k: (abs(k + 0.5 - v), -k))
            out[j, i] = bits[src_y, src_x]
    return out


def disc_pixel_count(cx: float, cy: float, radius: float, width: int, height: int) -> int:
    return sum(
        1
        for y in range(height)
        for x in range(width)
        if math.hypot(x - cx, y - cy) <= radius
    )
