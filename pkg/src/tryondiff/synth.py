"""Procedural toy person/garment generator with exact ground truth, the
paired dataset directory layout, and label remapping.

Every generated pixel has a known label, so segmentation and texture
ground truth are available for free. Generation is a pure function of
(seed, params).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from tryondiff import labels as L


class DataError(ValueError):
    """Raised for malformed datasets or invalid generation parameters."""


PATTERNS = ("solid", "stripes", "checks")

# Garment color pool: saturated, far from skin/background.
COLOR_POOL = (
    (0.85, 0.15, 0.15),
    (0.15, 0.45, 0.85),
    (0.15, 0.65, 0.25),
    (0.90, 0.75, 0.10),
    (0.55, 0.20, 0.70),
    (0.10, 0.10, 0.15),
)

HAIR = (0.25, 0.15, 0.10)


@dataclass(frozen=True)
class GarmentSpec:
    """Shape and texture parameters of one synthetic garment."""

    role: str  # upper | lower
    sleeve: float = 0.5  # sleeve length fraction (upper only)
    width: float = 0.5  # flat-lay panel width fraction
    hem: float = 0.5  # hem height fraction
    pattern: str = "solid"
    color_a: tuple = (0.85, 0.15, 0.15)
    color_b: tuple = (0.15, 0.45, 0.85)
    period: int = 8

    def __post_init__(self):
        if self.role not in ("upper", "lower"):
            raise DataError(f"invalid garment role {self.role!r}")
        if self.pattern not in PATTERNS:
            raise DataError(f"invalid pattern {self.pattern!r}")
        if self.period < 2:
            raise DataError(f"stripe period must be >= 2, got {self.period}")
        if self.pattern != "solid" and tuple(self.color_a) == tuple(self.color_b):
            raise DataError("non-solid patterns need two distinct colors")

    @property
    def texture_class(self) -> int:
        return PATTERNS.index(self.pattern)


@dataclass
class PersonSample:
    """A toy person: image, pixel-exact segmentation and pose map."""

    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    seg: np.ndarray  # (H, W) int64 labels
    pose: np.ndarray  # (H, W, 3) float32 in [0, 1]
    id: str = ""


def random_garment_spec(rng: np.random.Generator, role: str) -> GarmentSpec:
    pattern = PATTERNS[int(rng.integers(len(PATTERNS)))]
    ia = int(rng.integers(len(COLOR_POOL)))
    ib = int(rng.integers(len(COLOR_POOL) - 1))
    if ib >= ia:
        ib += 1
    return GarmentSpec(
        role=role,
        sleeve=float(rng.uniform(0.0, 1.0)),
        width=float(rng.uniform(0.0, 1.0)),
        hem=float(rng.uniform(0.0, 1.0)),
        pattern=pattern,
        color_a=COLOR_POOL[ia],
        color_b=COLOR_POOL[ib],
        period=8,
    )


def texture_image(spec: GarmentSpec, H: int, W: int) -> np.ndarray:
    """Full-frame texture swatch for a garment spec."""
    return _texture(spec, H, W)


def _texture(spec: GarmentSpec, H: int, W: int) -> np.ndarray:
    """Full-frame texture image for a garment; masked later."""
    ys, xs = np.mgrid[0:H, 0:W]
    half = max(1, spec.period // 2)
    a = np.asarray(spec.color_a, dtype=np.float32)
    b = np.asarray(spec.color_b, dtype=np.float32)
    if spec.pattern == "solid":
        sel = np.zeros((H, W), dtype=bool)
    elif spec.pattern == "stripes":
        sel = (ys // half) % 2 == 1
    else:  # checks
        sel = ((ys // half) + (xs // half)) % 2 == 1
    out = np.where(sel[..., None], b, a)
    return out.astype(np.float32)


# Coverage fractions are capped below 1 so uncovered skin labels never
# disappear from a generated sample.
def _sleeve_rows(sleeve: float) -> float:
    return 0.15 + 0.75 * float(np.clip(sleeve, 0.0, 1.0))


def _upper_hem_rows(hem: float) -> float:
    return 0.65 + 0.30 * float(np.clip(hem, 0.0, 1.0))


def _lower_hem_rows(hem: float) -> float:
    return 0.30 + 0.60 * float(np.clip(hem, 0.0, 1.0))


def _body_layout(seed: int, H: int, W: int) -> dict:
    """Jittered body geometry; depends only on (seed, H, W)."""
    rng = np.random.default_rng(seed)
    j = lambda s: float(rng.uniform(-s, s))

    cx = 0.5 + j(0.02)
    head_cy = 0.13 + j(0.01)
    head_r = 0.075 + j(0.008)
    torso_y0 = 0.22 + j(0.01)
    torso_y1 = 0.55 + j(0.02)
    torso_hw = 0.16 + j(0.02)
    arm_w = 0.07 + j(0.01)
    arm_y0 = torso_y0 + 0.02
    arm_y1 = torso_y1 + j(0.02)
    leg_y1 = 0.95 + j(0.01)
    gap = 0.02

    ys, xs = np.mgrid[0:H, 0:W]
    fy, fx = ys / H, xs / W

    # Round head in pixel space: ((fx-cx)*W)^2 + ((fy-cy)*H)^2 <= (r*H)^2.
    head = ((fx - cx) * W) ** 2 + ((fy - head_cy) * H) ** 2 <= (head_r * H) ** 2
    torso = (fy >= torso_y0) & (fy < torso_y1) & (np.abs(fx - cx) <= torso_hw)
    left_arm = (
        (fy >= arm_y0)
        & (fy < arm_y1)
        & (fx < cx - torso_hw)
        & (fx >= cx - torso_hw - arm_w)
    )
    right_arm = (
        (fy >= arm_y0)
        & (fy < arm_y1)
        & (fx > cx + torso_hw)
        & (fx <= cx + torso_hw + arm_w)
    )
    legs_band = (fy >= torso_y1) & (fy < leg_y1)
    left_leg = legs_band & (fx >= cx - torso_hw) & (fx < cx - gap)
    right_leg = legs_band & (fx > cx + gap) & (fx <= cx + torso_hw)

    return {
        "head": head,
        "torso": torso,
        "left_arm": left_arm,
        "right_arm": right_arm,
        "left_leg": left_leg,
        "right_leg": right_leg,
        "torso_y0": torso_y0,
        "torso_y1": torso_y1,
        "arm_y0": arm_y0,
        "arm_y1": arm_y1,
        "leg_y1": leg_y1,
        "head_cy": head_cy,
        "fy": fy,
    }


def garment_body_mask(layout: dict, spec: GarmentSpec) -> np.ndarray:
    """Exact on-body coverage of a garment given the body layout."""
    fy = layout["fy"]
    if spec.role == "upper":
        hem_y = layout["torso_y0"] + _upper_hem_rows(spec.hem) * (
            layout["torso_y1"] - layout["torso_y0"]
        )
        sleeve_y = layout["arm_y0"] + _sleeve_rows(spec.sleeve) * (
            layout["arm_y1"] - layout["arm_y0"]
        )
        mask = layout["torso"] & (fy < hem_y)
        mask |= (layout["left_arm"] | layout["right_arm"]) & (fy < sleeve_y)
    else:
        hem_y = layout["torso_y1"] + _lower_hem_rows(spec.hem) * (
            layout["leg_y1"] - layout["torso_y1"]
        )
        mask = (layout["left_leg"] | layout["right_leg"]) & (fy < hem_y)
    return mask


def gen_person(
    seed: int,
    H: int,
    W: int,
    garment_up: GarmentSpec,
    garment_low: GarmentSpec,
    sample_id: str = "",
) -> PersonSample:
    """Render a toy person wearing the two garments, with exact ground truth."""
    if H % 8 or W % 8:
        raise DataError(f"H and W must be multiples of 8, got ({H}, {W})")
    if garment_up.role != "upper" or garment_low.role != "lower":
        raise DataError("gen_person needs one upper and one lower garment spec")
    layout = _body_layout(seed, H, W)

    seg = np.zeros((H, W), dtype=np.int64)
    parts = [
        ("head", L.HEAD),
        ("torso", L.TORSO_SKIN),
        ("left_arm", L.LEFT_ARM),
        ("right_arm", L.RIGHT_ARM),
        ("left_leg", L.LEFT_LEG),
        ("right_leg", L.RIGHT_LEG),
    ]
    for name, lid in parts:
        seg[layout[name]] = lid

    # Pose map reflects the bare body and ignores garments, so covered
    # limbs stay locatable.
    pose = np.zeros((H, W, 3), dtype=np.float32)
    for name, lid in parts:
        m = layout[name]
        if not m.any():
            continue
        ys, xs = np.nonzero(m)
        y0, y1 = ys.min(), ys.max()
        x0, x1 = xs.min(), xs.max()
        pose[m, 0] = lid / 8.0
        pose[m, 1] = (ys - y0) / max(1, y1 - y0)
        pose[m, 2] = (xs - x0) / max(1, x1 - x0)

    up_mask = garment_body_mask(layout, garment_up)
    low_mask = garment_body_mask(layout, garment_low)
    seg[low_mask] = L.LOWER_CLOTHES
    seg[up_mask] = L.UPPER_CLOTHES

    image = np.ones((H, W, 3), dtype=np.float32)
    skin = np.asarray(L.SKIN, dtype=np.float32)
    for name, _ in parts:
        image[layout[name]] = skin
    hair = layout["head"] & (layout["fy"] < layout["head_cy"] - 0.01)
    image[hair] = HAIR
    image[low_mask] = _texture(garment_low, H, W)[low_mask]
    image[up_mask] = _texture(garment_up, H, W)[up_mask]

    return PersonSample(image=image, seg=seg, pose=pose, id=sample_id or f"p{seed:06d}")


def gen_garment(spec: GarmentSpec, H: int, W: int, seed: int = 0) -> np.ndarray:
    """Flat-lay garment image on a white background.

    Shape parameters map to visible geometry (panel width, sleeve length,
    hem height) so they can be read back from the rendering.
    """
    rng = np.random.default_rng(seed)
    jx = float(rng.uniform(-0.01, 0.01))
    ys, xs = np.mgrid[0:H, 0:W]
    fy, fx = ys / H, xs / W
    cx = 0.5 + jx
    mask = np.zeros((H, W), dtype=bool)
    if spec.role == "upper":
        hw = 0.14 + 0.10 * spec.width
        top, bottom = 0.18, 0.18 + 0.60 * _upper_hem_rows(spec.hem)
        panel = (fy >= top) & (fy < bottom) & (np.abs(fx - cx) <= hw)
        sl_len = 0.06 + 0.16 * _sleeve_rows(spec.sleeve)
        sleeves = (
            (fy >= top)
            & (fy < top + 0.18)
            & (np.abs(fx - cx) > hw)
            & (np.abs(fx - cx) <= hw + sl_len)
        )
        mask = panel | sleeves
    else:
        hw = 0.12 + 0.08 * spec.width
        top = 0.15
        length = 0.70 * _lower_hem_rows(spec.hem)
        band = (fy >= top) & (fy < top + 0.12) & (np.abs(fx - cx) <= hw)
        leg_w = hw * 0.45
        left = (
            (fy >= top)
            & (fy < top + length)
            & (fx >= cx - hw)
            & (fx < cx - hw + 2 * leg_w)
        )
        right = (
            (fy >= top)
            & (fy < top + length)
            & (fx <= cx + hw)
            & (fx > cx + hw - 2 * leg_w)
        )
        mask = band | left | right
    image = np.ones((H, W, 3), dtype=np.float32)
    image[mask] = _texture(spec, H, W)[mask]
    return image


def remap_labels(seg: np.ndarray, table: dict[int, int]) -> np.ndarray:
    """Map every pixel through ``table``; the table must cover all labels
    present in ``seg``."""
    present = np.unique(seg)
    missing = [int(p) for p in present if int(p) not in table]
    if missing:
        raise DataError(f"remap table missing source labels {missing}")
    lut = np.zeros(256, dtype=np.int64)
    for src, dst in table.items():
        lut[src] = dst
    out = lut[seg]
    L.validate_labels(out)
    return out


# Default remap from the 24 DeepFashion-Multimodal category names onto the
# canonical desk-scale set; editable via config.
DEFAULT_REMAP_NAMES = {
    "background": "background",
    "top": "upper-clothes",
    "outer": "upper-clothes",
    "skirt": "lower-clothes",
    "dress": "upper-clothes",
    "pants": "lower-clothes",
    "leggings": "lower-clothes",
    "headwear": "head",
    "eyeglass": "head",
    "neckwear": "upper-clothes",
    "belt": "lower-clothes",
    "footwear": "background",
    "bag": "background",
    "hair": "head",
    "face": "head",
    "skin": "torso-skin",
    "ring": "background",
    "wrist wearing": "background",
    "socks": "background",
    "gloves": "background",
    "necklace": "upper-clothes",
    "rompers": "upper-clothes",
    "earrings": "head",
    "tie": "upper-clothes",
}


# ---------------------------------------------------------------------------
# Paired dataset directory layout


def _save_rgb(path: Path, image: np.ndarray):
    arr = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def _load_rgb(path: Path) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float32) / 255.0


def write_dataset(
    root: str | Path,
    seed: int,
    counts: dict[str, int],
    H: int,
    W: int,
) -> dict:
    """Generate a paired synthetic dataset tree.

    Layout: ``{train,test}_pairs.txt``, ``image/``, ``image-parse/``,
    ``pose/``, ``cloth/``. The upper flat-lay is the paired cloth; the
    lower flat-lay is stored alongside as ``<id>_lower.png``. Garment
    specs land in ``meta.json`` as generator ground truth.
    """
    root = Path(root)
    for sub in ("image", "image-parse", "pose", "cloth"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    meta: dict = {"seed": seed, "H": H, "W": W, "samples": {}}
    idx = 0
    for split, n in sorted(counts.items()):
        lines = []
        for _ in range(n):
            sseed = seed * 1000003 + idx
            rng = np.random.default_rng(sseed)
            up = random_garment_spec(rng, "upper")
            low = random_garment_spec(rng, "lower")
            sid = f"{split}_{idx:05d}"
            person = gen_person(sseed, H, W, up, low, sample_id=sid)
            _save_rgb(root / "image" / f"{sid}.png", person.image)
            L.save_palette_png(person.seg, root / "image-parse" / f"{sid}.png")
            _save_rgb(root / "pose" / f"{sid}.png", person.pose)
            _save_rgb(root / "cloth" / f"{sid}.png", gen_garment(up, H, W, seed=sseed))
            _save_rgb(
                root / "cloth" / f"{sid}_lower.png",
                gen_garment(low, H, W, seed=sseed + 1),
            )
            lines.append(f"{sid}.png {sid}.png")
            meta["samples"][sid] = {
                "seed": sseed,
                "split": split,
                "upper": asdict(up),
                "lower": asdict(low),
            }
            idx += 1
        (root / f"{split}_pairs.txt").write_text("".join(l + "\n" for l in lines))
    with open(root / "meta.json", "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
    return meta


def load_paired_dataset(
    root: str | Path, split: str = "train"
) -> Iterator[tuple[PersonSample, np.ndarray]]:
    """Yield (PersonSample, garment image) pairs in pairs-file order."""
    root = Path(root)
    pairs_file = root / f"{split}_pairs.txt"
    if not pairs_file.exists():
        raise DataError(f"missing pairs file {pairs_file}")
    for line_no, line in enumerate(pairs_file.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 2:
            raise DataError(f"{pairs_file}:{line_no}: expected two names, got {line!r}")
        person_name, cloth_name = fields
        paths = {
            "image": root / "image" / person_name,
            "parse": root / "image-parse" / person_name,
            "pose": root / "pose" / person_name,
            "cloth": root / "cloth" / cloth_name,
        }
        for kind, p in paths.items():
            if not p.exists():
                raise DataError(f"{pairs_file}:{line_no}: missing {kind} file {p}")
        sample = PersonSample(
            image=_load_rgb(paths["image"]),
            seg=L.load_palette_png(paths["parse"]),
            pose=_load_rgb(paths["pose"]),
            id=Path(person_name).stem,
        )
        yield sample, _load_rgb(paths["cloth"])


def load_meta(root: str | Path) -> dict:
    with open(Path(root) / "meta.json") as f:
        return json.load(f)


def spec_from_dict(d: dict) -> GarmentSpec:
    d = dict(d)
    d["color_a"] = tuple(d["color_a"])
    d["color_b"] = tuple(d["color_b"])
    return GarmentSpec(**d)
