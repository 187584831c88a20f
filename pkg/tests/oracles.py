"""Independent brute-force oracles used to pin expected values.

Everything here is deliberately written as plain per-pixel Python loops,
independent of the vectorized implementations under test.
"""

from __future__ import annotations

from collections import deque

import numpy as np


def point_in_polygon(x: float, y: float, vertices) -> bool:
    """Even-odd rule by scalar crossing count along the +x ray."""
    inside = False
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_cross:
                inside = not inside
    return inside


def rasterize_by_loop(vertices, width: int, height: int) -> np.ndarray:
    bits = np.zeros((height, width), dtype=bool)
    for yy in range(height):
        for xx in range(width):
            bits[yy, xx] = point_in_polygon(xx + 0.5, yy + 0.5, vertices)
    return bits


def flood_fill_components(bits: np.ndarray, connectivity: int) -> list[set[tuple[int, int]]]:
    """BFS flood fill returning components as sets of (x, y) pixels."""
    if connectivity == 8:
        offsets = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0)]
    else:
        offsets = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    height, width = bits.shape
    seen = np.zeros_like(bits)
    components = []
    for yy in range(height):
        for xx in range(width):
            if not bits[yy, xx] or seen[yy, xx]:
                continue
            queue = deque([(xx, yy)])
            seen[yy, xx] = True
            pixels = set()
            while queue:
                px, py = queue.popleft()
                pixels.add((px, py))
                for dx, dy in offsets:
                    nx, ny = px + dx, py + dy
                    if 0 <= nx < width and 0 <= ny < height and bits[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        queue.append((nx, ny))
            components.append(pixels)
    return components


def majority_vote(mask_a: np.ndarray, mask_b: np.ndarray, mask_c: np.ndarray) -> np.ndarray:
    """Per-pixel >= 2-of-3 by triple loop."""
    height, width = mask_a.shape
    out = np.zeros_like(mask_a)
    for yy in range(height):
        for xx in range(width):
            votes = int(mask_a[yy, xx]) + int(mask_b[yy, xx]) + int(mask_c[yy, xx])
            out[yy, xx] = votes >= 2
    return out


def patch_label_by_counting(bits: np.ndarray, patch_size: int) -> np.ndarray:
    height, width = bits.shape
    rows = -(-height // patch_size)
    cols = -(-width // patch_size)
    labels = np.zeros((rows, cols), dtype=bool)
    for r in range(rows):
        for c in range(cols):
            count = 0
            for yy in range(r * patch_size, (r + 1) * patch_size):
                for xx in range(c * patch_size, (c + 1) * patch_size):
                    if yy < height and xx < width and bits[yy, xx]:
                        count += 1
            labels[r, c] = count > (patch_size * patch_size) / 2.0
    return labels


def dataset_scores_by_loop(predictions, ground_truths) -> dict[str, float]:
    """All six dataset metrics from one pixel-by-pixel pass."""
    tp = fp = fn = tn = 0
    img_tp = img_fp = img_fn = 0
    for pred, gt in zip(predictions, ground_truths):
        pred_any = False
        gt_any = False
        height, width = pred.shape
        for yy in range(height):
            for xx in range(width):
                p, g = bool(pred[yy, xx]), bool(gt[yy, xx])
                pred_any |= p
                gt_any |= g
                if p and g:
                    tp += 1
                elif p:
                    fp += 1
                elif g:
                    fn += 1
                else:
                    tn += 1
        if pred_any and gt_any:
            img_tp += 1
        elif pred_any:
            img_fp += 1
        elif gt_any:
            img_fn += 1

    def prf(tp_, fp_, fn_):
        precision = tp_ / (tp_ + fp_) if tp_ + fp_ else 1.0
        recall = tp_ / (tp_ + fn_) if tp_ + fn_ else 1.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return precision, recall, f1

    pixel = prf(tp, fp, fn)
    image = prf(img_tp, img_fp, img_fn)
    union = tp + fp + fn
    iou = tp / union if union else 1.0
    dice = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 1.0
    return {
        "pixel_precision": pixel[0], "pixel_recall": pixel[1], "pixel_f1": pixel[2],
        "iou": iou, "dice": dice,
        "image_precision": image[0], "image_recall": image[1], "image_f1": image[2],
    }


def bilinear_at(grid: np.ndarray, y: float, x: float, patch_size: int = 14) -> float:
    """Closed-form bilinear evaluation with nodes at (r + 0.5) * patch_size."""
    rows, cols = grid.shape

    def axis(coord: float, n: int) -> tuple[int, int, float]:
        if n == 1:
            return 0, 0, 0.0
        g = coord / patch_size - 0.5
        if g <= 0:
            return 0, 0, 0.0
        if g >= n - 1:
            return n - 1, n - 1, 0.0
        lo = int(np.floor(g))
        return lo, lo + 1, g - lo

    r0, r1, ty = axis(y, rows)
    c0, c1, tx = axis(x, cols)
    top = grid[r0, c0] * (1 - tx) + grid[r0, c1] * tx
    bottom = grid[r1, c0] * (1 - tx) + grid[r1, c1] * tx
    return float(top * (1 - ty) + bottom * ty)
