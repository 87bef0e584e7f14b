"""Shape control stage: rewrites a person's segmentation so the clothing
region adopts the shape of a condition garment.

Two pyramid encoders (segmentation+pose, condition garment) feed a
decoder in which every stage starts with a gated convolution. The
condition selector routes the garment image to its role's channel slot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from tryondiff import labels as L
from tryondiff.blocks import GatedConv2d, PyramidEncoder, seeded_init


class RoleMismatchError(ValueError):
    """Condition garment role does not match the requested target slot."""


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; carries the last good weights."""

    def __init__(self, message: str, last_good: dict):
        super().__init__(message)
        self.last_good = last_good


@dataclass(frozen=True)
class GarmentCondition:
    """A garment image with its role tag."""

    image: np.ndarray  # (H, W, 3) float in [0, 1]
    role: str  # upper | lower

    def __post_init__(self):
        if self.role not in ("upper", "lower"):
            raise RoleMismatchError(f"invalid garment role {self.role!r}")


def destruct_segmentation(seg: np.ndarray, role: str) -> tuple[np.ndarray, np.ndarray]:
    """Remove the role's clothing labels, leaving a void region.

    Returns (body_seg, garment_mask); pasting the garment label back
    through the mask recovers the input exactly.
    """
    L.validate_labels(seg)
    label = L.ROLE_LABELS[role]
    garment_mask = seg == label
    body_seg = seg.copy()
    body_seg[garment_mask] = L.VOID
    return body_seg, garment_mask


def select_condition(cond: GarmentCondition, target: str) -> np.ndarray:
    """Route the garment image into its role's channel slot.

    Returns a (6, H, W) tensor: channels 0-2 are the upper slot, 3-5 the
    lower slot; the non-selected slot is zero.
    """
    if target not in L.ROLE_LABELS:
        raise RoleMismatchError(f"invalid target {target!r}")
    if cond.role != target:
        raise RoleMismatchError(
            f"cannot shape {target} clothing with a {cond.role}-role condition"
        )
    h, w, _ = cond.image.shape
    out = np.zeros((6, h, w), dtype=np.float32)
    slot = 0 if target == "upper" else 1
    out[3 * slot : 3 * slot + 3] = np.transpose(cond.image, (2, 0, 1))
    return out


class ShapeControlNet(nn.Module):
    """Two pyramid encoders and a gated-conv decoder over label logits."""

    def __init__(self, widths=(32, 48, 64, 96), num_labels: int = L.NUM_LABELS):
        super().__init__()
        widths = list(widths)
        self.num_labels = num_labels
        # seg one-hot (incl. void channel) + 3 pose channels
        self.enc_seg = PyramidEncoder(num_labels + 1 + 3, widths)
        self.enc_cond = PyramidEncoder(6, widths)
        decs = []
        up_ch = 0
        for w in reversed(widths):
            decs.append(
                nn.Sequential(
                    GatedConv2d(up_ch + 2 * w, w),
                    nn.Conv2d(w, w, 3, 1, 1),
                    nn.LeakyReLU(0.2),
                )
            )
            up_ch = w
        self.decoder = nn.ModuleList(decs)
        self.head = nn.Conv2d(up_ch, num_labels, 1)

    def forward(
        self, seg_pose: torch.Tensor, cond: torch.Tensor
    ) -> torch.Tensor:
        if seg_pose.shape[-2:] != cond.shape[-2:]:
            raise ValueError(
                f"spatially misaligned inputs: {tuple(seg_pose.shape)} vs {tuple(cond.shape)}"
            )
        pyr_a = self.enc_seg(seg_pose)
        pyr_b = self.enc_cond(cond)
        x = None
        for stage, a, b in zip(self.decoder, reversed(pyr_a), reversed(pyr_b)):
            parts = [a, b] if x is None else [x, a, b]
            x = stage(torch.cat(parts, dim=1))
            if a is not pyr_a[0]:  # upsample until full resolution is reached
                x = F.interpolate(x, scale_factor=2, mode="nearest")
        return self.head(x)


def build_scm(seed: int = 0, widths=(32, 48, 64, 96)) -> ShapeControlNet:
    return seeded_init(ShapeControlNet(widths), seed)


def _seg_pose_tensor(body_seg: np.ndarray, pose: np.ndarray) -> np.ndarray:
    onehot = L.one_hot(body_seg, include_void=True)  # (H, W, L+1)
    stacked = np.concatenate([onehot, pose.astype(np.float32)], axis=-1)
    return np.transpose(stacked, (2, 0, 1))


def scm_forward(
    model: ShapeControlNet,
    body_seg: np.ndarray,
    cond: np.ndarray,
    pose: np.ndarray,
) -> torch.Tensor:
    """Per-pixel label logits (H, W, L) for one sample."""
    if body_seg.shape != pose.shape[:2] or cond.shape[-2:] != body_seg.shape:
        raise ValueError("body_seg, cond and pose must be spatially aligned")
    inp = torch.from_numpy(_seg_pose_tensor(body_seg, pose)).unsqueeze(0)
    cnd = torch.as_tensor(cond, dtype=torch.float32).unsqueeze(0)
    with torch.no_grad():
        logits = model(inp, cnd)[0]
    return logits.permute(1, 2, 0)


def decode_segmentation(logits: torch.Tensor) -> np.ndarray:
    """Argmax decoding of (H, W, L) logits to a label grid."""
    return logits.argmax(dim=-1).numpy().astype(np.int64)


def scm_loss(logits: torch.Tensor, target: np.ndarray | torch.Tensor) -> torch.Tensor:
    """Pixelwise cross-entropy of (H, W, L) logits against target labels."""
    tgt = torch.as_tensor(np.asarray(target), dtype=torch.long)
    if logits.shape[:-1] != tgt.shape:
        raise ValueError(f"shape mismatch: {tuple(logits.shape)} vs {tuple(tgt.shape)}")
    n = logits.shape[-1]
    bad = (tgt < 0) | ((tgt >= n) & (tgt != L.VOID))
    if bad.any():
        raise L.LabelError(f"target labels out of range for {n} classes")
    return F.cross_entropy(logits.reshape(-1, n), tgt.reshape(-1), ignore_index=L.VOID)


def mean_iou(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean IoU over the labels present in the target."""
    ious = []
    for lab in np.unique(target):
        p, t = pred == lab, target == lab
        union = (p | t).sum()
        if union:
            ious.append((p & t).sum() / union)
    return float(np.mean(ious))


def binary_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = (a | b).sum()
    return float((a & b).sum() / union) if union else 1.0


@dataclass
class SCMTrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    widths: tuple = (32, 48, 64, 96)
    # Randomized enlargement of the void region during training, so the
    # network cannot copy the void outline and must read the condition
    # garment's shape instead.
    void_dilate_max: int = 4
    void_box_prob: float = 0.3


def _jitter_void(
    seg: np.ndarray, mask: np.ndarray, rng: np.random.Generator, cfg: SCMTrainConfig
) -> np.ndarray:
    from scipy.ndimage import binary_dilation

    if not mask.any():
        return seg
    out = seg.copy()
    if rng.random() < cfg.void_box_prob:
        ys, xs = np.nonzero(mask)
        m = int(rng.integers(0, cfg.void_dilate_max + 1))
        region = np.zeros_like(mask)
        region[
            max(0, ys.min() - m) : ys.max() + 1 + m,
            max(0, xs.min() - m) : xs.max() + 1 + m,
        ] = True
    else:
        r = int(rng.integers(0, cfg.void_dilate_max + 1))
        region = binary_dilation(mask, iterations=r) if r else mask
    out[region] = L.VOID
    return out


def _training_items(samples: list) -> list:
    """Expand (person, upper flat-lay, lower flat-lay) into per-role items."""
    items = []
    for person, cloth_up, cloth_low in samples:
        for role, cloth in (("upper", cloth_up), ("lower", cloth_low)):
            items.append((person, role, cloth))
    return items


def train_scm(
    samples: list, cfg: SCMTrainConfig | None = None, init_state: dict | None = None
) -> dict:
    """Identity-task training: the condition is the person's own garment
    flat-lay and the supervision target is the person's own segmentation.

    ``samples`` is a list of (PersonSample, upper flat-lay, lower flat-lay);
    ``init_state`` continues from earlier weights (progressive ladder).
    Returns {"model", "losses", "config"}.
    """
    cfg = cfg or SCMTrainConfig()
    if not samples:
        raise ConfigError("empty training dataset")
    torch.manual_seed(cfg.seed)
    model = build_scm(cfg.seed, cfg.widths)
    if init_state is not None:
        model.load_state_dict(init_state)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    items = _training_items(samples)
    losses = []
    last_good = {k: v.clone() for k, v in model.state_dict().items()}
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(items))
        epoch_loss = 0.0
        nb = 0
        for start in range(0, len(items), cfg.batch_size):
            batch = [items[i] for i in order[start : start + cfg.batch_size]]
            inps, cnds, tgts = [], [], []
            for person, role, cloth in batch:
                body_seg, mask = destruct_segmentation(person.seg, role)
                body_seg = _jitter_void(body_seg, mask, rng, cfg)
                inps.append(_seg_pose_tensor(body_seg, person.pose))
                cnds.append(select_condition(GarmentCondition(cloth, role), role))
                tgts.append(person.seg)
            inp = torch.from_numpy(np.stack(inps))
            cnd = torch.from_numpy(np.stack(cnds))
            tgt = torch.from_numpy(np.stack(tgts))
            logits = model(inp, cnd)
            loss = F.cross_entropy(logits, tgt)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}", last_good
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach())
            nb += 1
        losses.append(epoch_loss / nb)
        last_good = {k: v.clone() for k, v in model.state_dict().items()}
    return {"model": model, "losses": losses, "config": cfg}


def predict_segmentation(
    model: ShapeControlNet,
    seg: np.ndarray,
    pose: np.ndarray,
    cond: GarmentCondition,
) -> np.ndarray:
    """Full shape-control inference for one sample and one garment role."""
    body_seg, _ = destruct_segmentation(seg, cond.role)
    cnd = select_condition(cond, cond.role)
    logits = scm_forward(model, body_seg, cnd, pose)
    return decode_segmentation(logits)
