#!/usr/bin/env python3
"""Generate the bundled JSON fixtures used by the CLI integration tests."""

import json
import math
import os

OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "maskrend", "tests", "fixtures")


def rle_counts(bits, w, h):
    counts = []
    cur = 0
    run = 0
    for col in range(w):
        for row in range(h):
            b = bits[row * w + col]
            if b == cur:
                run += 1
            else:
                counts.append(run)
                cur = b
                run = 1
    counts.append(run)
    return counts


def rect_mask(w, h, x0, y0, x1, y1):
    bits = [0] * (w * h)
    for r in range(y0, y1):
        for c in range(x0, x1):
            bits[r * w + c] = 1
    return bits


def set_px(bits, w, pts, value):
    for (r, c) in pts:
        bits[r * w + c] = value


def flip_h(bits, w, h):
    return [bits[r * w + (w - 1 - c)] for r in range(h) for c in range(w)]


def ann(aid, image_id, cat, bits, w, h):
    return {
        "id": aid,
        "image_id": image_id,
        "category_id": cat,
        "segmentation": {"size": [h, w], "counts": rle_counts(bits, w, h)},
        "area": sum(bits),
    }


def pred(image_id, cat, score, bits, w, h):
    return {
        "image_id": image_id,
        "category_id": cat,
        "score": score,
        "segmentation": {"size": [h, w], "counts": rle_counts(bits, w, h)},
    }


IMAGES = [
    {"id": 1, "width": 24, "height": 24},
    {"id": 2, "width": 32, "height": 24},
    {"id": 3, "width": 20, "height": 20},
]
CATEGORIES = [
    {"id": 1, "name": "chair"},
    {"id": 2, "name": "table"},
    {"id": 3, "name": "sofa"},
]

# (image_id, w, h, cat, rect)
GT_RECTS = [
    (1, 24, 24, 1, (2, 2, 10, 12)),
    (1, 24, 24, 2, (14, 4, 22, 20)),
    (2, 32, 24, 1, (5, 3, 15, 13)),
    (2, 32, 24, 3, (18, 8, 30, 22)),
    (3, 20, 20, 2, (1, 1, 9, 9)),
    (3, 20, 20, 1, (12, 11, 19, 18)),
]


def main():
    os.makedirs(OUT, exist_ok=True)

    # --- ground truth -----------------------------------------------------
    gt = {"images": IMAGES, "categories": CATEGORIES, "annotations": []}
    for i, (img, w, h, cat, (x0, y0, x1, y1)) in enumerate(GT_RECTS, start=1):
        gt["annotations"].append(ann(i, img, cat, rect_mask(w, h, x0, y0, x1, y1), w, h))
    with open(os.path.join(OUT, "gt.json"), "w") as f:
        json.dump(gt, f, indent=1)
        f.write("\n")

    # --- dirty ground truth: speckles + holes, restorable exactly ---------
    dirty = {"images": IMAGES, "categories": CATEGORIES, "annotations": []}
    for i, (img, w, h, cat, (x0, y0, x1, y1)) in enumerate(GT_RECTS, start=1):
        bits = rect_mask(w, h, x0, y0, x1, y1)
        # 2-px hole strictly inside (rects are at least 7x7).
        set_px(bits, w, [(y0 + 2, x0 + 2), (y0 + 2, x0 + 3)], 0)
        # 2-px speckle well separated from the rect (area < 5% of rect).
        if y1 + 3 < h and x1 + 3 < w:
            set_px(bits, w, [(y1 + 2, x1 + 2), (y1 + 2, x1 + 1)], 1)
        else:
            set_px(bits, w, [(y0 - 2, x0 - 2), (y0 - 2, x0 - 1)], 1)
        dirty["annotations"].append(ann(i, img, cat, bits, w, h))
    with open(os.path.join(OUT, "gt_dirty.json"), "w") as f:
        json.dump(dirty, f, indent=1)
        f.write("\n")

    # --- two prediction "models": perturbed ground truth ------------------
    scores_a = [0.95, 0.90, 0.88, 0.80, 0.85, 0.70]
    preds_a = []
    for (img, w, h, cat, (x0, y0, x1, y1)), s in zip(GT_RECTS, scores_a):
        bits = rect_mask(w, h, x0, y0, min(x1 + 1, w), y1)  # one column wider
        preds_a.append(pred(img, cat, s, bits, w, h))
    preds_a.append(pred(1, 3, 0.30, rect_mask(24, 24, 0, 16, 4, 21), 24, 24))
    with open(os.path.join(OUT, "preds_a.json"), "w") as f:
        json.dump(preds_a, f, indent=1)
        f.write("\n")

    scores_b = [0.85, 0.92, 0.78, 0.83, 0.75]
    preds_b = []
    for (img, w, h, cat, (x0, y0, x1, y1)), s in zip(GT_RECTS[:5], scores_b):
        bits = rect_mask(w, h, x0, max(y0 - 1, 0), x1, y1)  # one row taller
        preds_b.append(pred(img, cat, s, bits, w, h))
    preds_b.append(pred(2, 2, 0.25, rect_mask(32, 24, 0, 0, 5, 4), 32, 24))
    with open(os.path.join(OUT, "preds_b.json"), "w") as f:
        json.dump(preds_b, f, indent=1)
        f.write("\n")

    # --- TTA pair: identity run + horizontally flipped run ----------------
    with open(os.path.join(OUT, "preds_tta_identity.json"), "w") as f:
        json.dump(preds_a, f, indent=1)
        f.write("\n")
    flipped = []
    for (img, w, h, cat, (x0, y0, x1, y1)), s in zip(GT_RECTS, scores_a):
        bits = flip_h(rect_mask(w, h, x0, y0, min(x1 + 1, w), y1), w, h)
        flipped.append(pred(img, cat, s, bits, w, h))
    flipped.append(pred(1, 3, 0.30, flip_h(rect_mask(24, 24, 0, 16, 4, 21), 24, 24), 24, 24))
    with open(os.path.join(OUT, "preds_tta_hflip.json"), "w") as f:
        json.dump(flipped, f, indent=1)
        f.write("\n")

    # --- refine inputs: coarse maps, feature grids, a small model ---------
    coarse = []
    features = []
    for inst, (cx, cy, rad) in enumerate([(0.45, 0.5, 0.32), (0.6, 0.4, 0.25)], start=1):
        side = 7
        probs = []
        for row in range(side):
            for col in range(side):
                u = col / (side - 1)
                v = row / (side - 1)
                d = math.hypot(u - cx, v - cy)
                probs.append(round(1.0 / (1.0 + math.exp(-8.0 * (rad - d))), 6))
        coarse.append(
            {
                "instance_id": inst,
                "image_id": 1,
                "category_id": 1,
                "score": 0.9 - 0.1 * (inst - 1),
                "width": side,
                "height": side,
                "probs": probs,
            }
        )
        fs = 14
        vals = []
        for row in range(fs):  # channel 0: signed distance to the ring
            for col in range(fs):
                u = col / (fs - 1)
                v = row / (fs - 1)
                vals.append(round(4.0 * (rad - math.hypot(u - cx, v - cy)), 6))
        for row in range(fs):  # channel 1: vertical ramp
            for col in range(fs):
                vals.append(round(row / (fs - 1) - 0.5, 6))
        features.append(
            {
                "instance_id": inst,
                "channels": 2,
                "width": fs,
                "height": fs,
                "values": vals,
            }
        )
    with open(os.path.join(OUT, "coarse.json"), "w") as f:
        json.dump(coarse, f, indent=1)
        f.write("\n")
    with open(os.path.join(OUT, "features.json"), "w") as f:
        json.dump(features, f, indent=1)
        f.write("\n")

    # A hand-written 3 -> 4 -> 1 point head that sharpens around the
    # signed-distance channel: logit = 12*ch0 via the hidden ReLU pair.
    model = {
        "in_dim": 3,
        "hidden_widths": [4],
        "layers": [
            {
                "w": [
                    [1.0, 0.0, 0.0],
                    [-1.0, 0.0, 0.0],
                    [0.0, 0.0, 1.0],
                    [0.0, 1.0, 0.2],
                ],
                "b": [0.0, 0.0, 0.0, 0.1],
            },
            {"w": [[12.0, -12.0, 0.5, 0.05]], "b": [-0.3]},
        ],
    }
    with open(os.path.join(OUT, "model.json"), "w") as f:
        json.dump(model, f, indent=1)
        f.write("\n")

    # --- pipeline config ---------------------------------------------------
    with open(os.path.join(OUT, "maskrend.conf"), "w") as f:
        f.write(
            "# bundled pipeline configuration for the integration tests\n"
            "tta = none, hflip\n"
            "seed = 11\n"
            "train_instances = 10\n"
            "eval_instances = 12\n"
            "train_epochs = 12\n"
            "points_per_instance = 49\n"
            "hidden_widths = 16, 16\n"
            "learning_rate = 0.3\n"
        )

    print(f"fixtures written to {os.path.normpath(OUT)}")


if __name__ == "__main__":
    main()
