"""Canonical segmentation label set, palette rendering and palette-PNG I/O.

The desk-scale label set has 9 canonical ids plus a reserved void id used
to mark destructed (to-be-inpainted) regions. Void never appears in
training targets; it is an input-only marker.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

BACKGROUND = 0
HEAD = 1
TORSO_SKIN = 2
LEFT_ARM = 3
RIGHT_ARM = 4
UPPER_CLOTHES = 5
LOWER_CLOTHES = 6
LEFT_LEG = 7
RIGHT_LEG = 8
VOID = 255

NUM_LABELS = 9

LABEL_NAMES = {
    BACKGROUND: "background",
    HEAD: "head",
    TORSO_SKIN: "torso-skin",
    LEFT_ARM: "left-arm",
    RIGHT_ARM: "right-arm",
    UPPER_CLOTHES: "upper-clothes",
    LOWER_CLOTHES: "lower-clothes",
    LEFT_LEG: "left-leg",
    RIGHT_LEG: "right-leg",
}

ROLE_LABELS = {"upper": UPPER_CLOTHES, "lower": LOWER_CLOTHES}

SKIN = (0.87, 0.72, 0.60)

# Render colors chosen so that skin/background regions of a rendered map
# match the synthetic person renderer, which keeps the stitched input close
# to the source image outside the garment regions.
PALETTE = {
    BACKGROUND: (1.0, 1.0, 1.0),
    HEAD: SKIN,
    TORSO_SKIN: SKIN,
    LEFT_ARM: SKIN,
    RIGHT_ARM: SKIN,
    UPPER_CLOTHES: (0.25, 0.35, 0.75),
    LOWER_CLOTHES: (0.75, 0.35, 0.25),
    LEFT_LEG: SKIN,
    RIGHT_LEG: SKIN,
    VOID: (0.0, 0.0, 0.0),
}


class LabelError(ValueError):
    """Raised for segmentation maps with out-of-range label ids."""


def validate_labels(labels: np.ndarray, allow_void: bool = True) -> np.ndarray:
    labels = np.asarray(labels)
    valid = labels < NUM_LABELS
    if allow_void:
        valid |= labels == VOID
    if not valid.all():
        bad = sorted(np.unique(labels[~valid]).tolist())
        raise LabelError(f"invalid label ids {bad}")
    return labels


def one_hot(labels: np.ndarray, include_void: bool = False) -> np.ndarray:
    """Expand an (H, W) label grid to (H, W, L[+1]) one-hot float32."""
    validate_labels(labels, allow_void=include_void)
    n = NUM_LABELS + (1 if include_void else 0)
    out = np.zeros(labels.shape + (n,), dtype=np.float32)
    canon = labels < NUM_LABELS
    out[canon, labels[canon]] = 1.0
    if include_void:
        out[labels == VOID, NUM_LABELS] = 1.0
    return out


def render(labels: np.ndarray) -> np.ndarray:
    """Render a label grid to an (H, W, 3) float image via the palette."""
    validate_labels(labels)
    out = np.zeros(labels.shape + (3,), dtype=np.float32)
    for lid, color in PALETTE.items():
        out[labels == lid] = color
    return out


def _pil_palette() -> list[int]:
    flat = [0] * (256 * 3)
    for lid, color in PALETTE.items():
        for c in range(3):
            flat[3 * lid + c] = int(round(color[c] * 255))
    return flat


def save_palette_png(labels: np.ndarray, path: str | Path):
    validate_labels(labels)
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    img.putpalette(_pil_palette())
    img.save(path)


def load_palette_png(path: str | Path) -> np.ndarray:
    img = Image.open(path)
    if img.mode != "P":
        raise LabelError(f"{path}: expected palette-indexed PNG, got mode {img.mode}")
    return validate_labels(np.asarray(img, dtype=np.int64))
