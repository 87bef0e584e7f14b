"""End-to-end orchestration: dataset generation, progressive-resolution
training of the three stages, and the try-on / edit / outfit procedures."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tryondiff import checkpoint as ckpt
from tryondiff import diffusion as dif
from tryondiff import labels as L
from tryondiff import synth, texture
from tryondiff.config import ConfigError, PipelineConfig
from tryondiff.shape_control import (
    GarmentCondition,
    RoleMismatchError,
    SCMTrainConfig,
    ShapeControlNet,
    predict_segmentation,
    train_scm,
)
from tryondiff.texture import (
    CodecTrainConfig,
    ConditionEncoder,
    ConditionalDenoiser,
    LatentCodec,
    TGMTrainConfig,
    encode_condition,
    neutral_garment,
    train_codec,
    train_tgm,
)

STAGES = ("scm", "codec", "tgm")


class PipelineError(RuntimeError):
    pass


def checkpoint_dir(cfg: PipelineConfig, stage: str, resolution: int | None = None) -> Path:
    name = stage if resolution is None else f"{stage}_r{resolution}"
    return Path(cfg.out_dir) / "checkpoints" / name


def generate_datasets(cfg: PipelineConfig) -> dict:
    """Write one synthetic dataset tree per ladder resolution."""
    info = {}
    for h in cfg.resolutions:
        H, W = cfg.rung_size(h)
        root = cfg.dataset_dir(h)
        synth.write_dataset(
            root, cfg.seed, {"train": cfg.train_count, "test": cfg.test_count}, H, W
        )
        info[str(h)] = str(root)
    return info


def load_synth_samples(root: str | Path, split: str = "train") -> list:
    """(PersonSample, upper flat-lay, lower flat-lay) triples from a tree."""
    root = Path(root)
    out = []
    for person, cloth_up in synth.load_paired_dataset(root, split):
        lower_path = root / "cloth" / f"{person.id}_lower.png"
        if not lower_path.exists():
            raise synth.DataError(f"missing lower flat-lay {lower_path}")
        out.append((person, cloth_up, synth._load_rgb(lower_path)))
    return out


def _require_dataset(cfg: PipelineConfig, h: int) -> Path:
    root = cfg.dataset_dir(h)
    if not (root / "train_pairs.txt").exists():
        raise ConfigError(f"dataset for resolution {h} not found at {root}; run gen-data first")
    return root


def _scm_cfg(cfg: PipelineConfig) -> SCMTrainConfig:
    return SCMTrainConfig(
        epochs=cfg.scm_epochs,
        batch_size=cfg.scm_batch_size,
        lr=cfg.scm_lr,
        seed=cfg.seed,
        widths=tuple(cfg.scm_widths),
        void_dilate_max=cfg.void_dilate_max,
        void_box_prob=cfg.void_box_prob,
    )


def _codec_cfg(cfg: PipelineConfig) -> CodecTrainConfig:
    return CodecTrainConfig(
        epochs=cfg.codec_epochs,
        lr=cfg.codec_lr,
        seed=cfg.seed,
        z_ch=cfg.codec_z_ch,
        width=cfg.codec_width,
    )


def _tgm_cfg(cfg: PipelineConfig) -> TGMTrainConfig:
    return TGMTrainConfig(
        steps=cfg.tgm_steps,
        pretrain_steps=cfg.tgm_pretrain_steps,
        batch_size=cfg.tgm_batch_size,
        lr=cfg.tgm_lr,
        seed=cfg.seed,
        d_cond=cfg.d_cond,
        n_rat=cfg.n_rat,
        widths=tuple(cfg.tgm_widths),
        T=cfg.T,
        beta_start=cfg.beta_start,
        beta_end=cfg.beta_end,
    )


def _load_codec(cfg: PipelineConfig) -> LatentCodec:
    path = checkpoint_dir(cfg, "codec")
    if not (path / "manifest.json").exists():
        raise PipelineError("missing prerequisite checkpoint for stage 'codec'")
    codec = LatentCodec(cfg.codec_z_ch, cfg.codec_width)
    ckpt.load_checkpoint(path, codec)
    codec.eval()
    return codec


def _split_tgm_state(state: dict) -> tuple[dict, dict]:
    model = {k[len("model."):]: v for k, v in state.items() if k.startswith("model.")}
    cond = {k[len("cond."):]: v for k, v in state.items() if k.startswith("cond.")}
    return model, cond


def train(cfg: PipelineConfig, stage: str) -> Path:
    """Train one stage across the resolution ladder, checkpointing at each
    rung; weights carry over between rungs (all stages are resolution
    agnostic). Returns the final checkpoint directory."""
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}, expected one of {STAGES}")
    cfgd = cfg.as_dict()
    state = None
    losses = []
    step = 0
    for h in cfg.resolutions:
        root = _require_dataset(cfg, h)
        samples = load_synth_samples(root, "train")
        if stage == "scm":
            result = train_scm(samples, _scm_cfg(cfg), init_state=state)
            state = result["model"].state_dict()
        elif stage == "codec":
            images = [p.image for p, _, _ in samples]
            images += [up for _, up, _ in samples] + [low for _, _, low in samples]
            images += [
                texture.build_stitched_input(p.image, p.seg) for p, _, _ in samples
            ]
            result = train_codec(images, _codec_cfg(cfg), init_state=state)
            state = result["codec"].state_dict()
        else:
            codec = _load_codec(cfg)
            if not cfg.teacher_forcing:
                samples = _scm_predicted_samples(cfg, samples)
            init = _split_tgm_state(state) if state else None
            result = train_tgm(samples, codec, _tgm_cfg(cfg), init_state=init)
            state = {f"model.{k}": v for k, v in result["model"].state_dict().items()}
            state.update(
                {f"cond.{k}": v for k, v in result["cond_encoder"].state_dict().items()}
            )
        losses.extend(result["losses"])
        step += len(result["losses"])
        ckpt.save_checkpoint(checkpoint_dir(cfg, stage, h), stage, state, cfgd, h, step)
    final = checkpoint_dir(cfg, stage)
    ckpt.save_checkpoint(final, stage, state, cfgd, cfg.resolutions[-1], step)
    return final


def _scm_predicted_samples(cfg: PipelineConfig, samples: list) -> list:
    """Replace ground-truth segmentations with shape-stage predictions."""
    models = load_models(cfg, stages=("scm",))
    out = []
    for person, up, low in samples:
        seg = predict_segmentation(
            models.scm, person.seg, person.pose, GarmentCondition(up, "upper")
        )
        person = synth.PersonSample(person.image, seg, person.pose, person.id)
        out.append((person, up, low))
    return out


@dataclass
class TryOnModels:
    scm: ShapeControlNet | None = None
    codec: LatentCodec | None = None
    denoiser: ConditionalDenoiser | None = None
    cond_encoder: ConditionEncoder | None = None
    schedule: dif.NoiseSchedule | None = None


def load_models(cfg: PipelineConfig, stages=STAGES) -> TryOnModels:
    models = TryOnModels()
    if "scm" in stages:
        path = checkpoint_dir(cfg, "scm")
        if not (path / "manifest.json").exists():
            raise PipelineError("missing prerequisite checkpoint for stage 'scm'")
        models.scm = ShapeControlNet(tuple(cfg.scm_widths))
        ckpt.load_checkpoint(path, models.scm)
        models.scm.eval()
    if "codec" in stages:
        models.codec = _load_codec(cfg)
    if "tgm" in stages:
        path = checkpoint_dir(cfg, "tgm")
        if not (path / "manifest.json").exists():
            raise PipelineError("missing prerequisite checkpoint for stage 'tgm'")
        loaded = ckpt.load_checkpoint(path)
        m_state, c_state = _split_tgm_state(loaded["state_dict"])
        models.denoiser = ConditionalDenoiser(
            cfg.codec_z_ch, cfg.d_cond, tuple(cfg.tgm_widths)
        )
        models.denoiser.load_state_dict(m_state)
        models.denoiser.eval()
        models.cond_encoder = ConditionEncoder(cfg.d_cond, cfg.n_rat)
        models.cond_encoder.load_state_dict(c_state)
        models.cond_encoder.eval()
        models.schedule = dif.make_schedule(
            cfg.T, cfg.beta_start, cfg.beta_end, cfg.schedule_kind
        )
    return models


def _condition_slots(
    edited: GarmentCondition, other: GarmentCondition | None, H: int, W: int
) -> tuple[np.ndarray, np.ndarray]:
    """Route garment images into the (top, down) embedding slots."""
    top = down = neutral_garment(H, W)
    if edited.role == "upper":
        top = edited.image
        if other is not None:
            down = other.image
    else:
        down = edited.image
        if other is not None:
            top = other.image
    return top, down


def edit(
    models: TryOnModels,
    person: synth.PersonSample,
    c_shape: GarmentCondition,
    c_texture: GarmentCondition,
    seed: int,
    other: GarmentCondition | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Decoupled shape/texture edit of one garment role.

    The shape stage sees only ``c_shape``; the condition embedding sees
    only ``c_texture`` (and the optional ``other`` garment for the
    untouched slot). Returns (generated image, refined segmentation).
    """
    if c_shape.role != c_texture.role:
        raise RoleMismatchError(
            f"shape condition is {c_shape.role} but texture condition is {c_texture.role}"
        )
    if other is not None and other.role == c_shape.role:
        raise RoleMismatchError("the untouched-slot garment must have the other role")
    s_t = compute_target_segmentation(models, person, c_shape)
    return render_with_texture(models, person, s_t, c_texture, seed, other), s_t


def compute_target_segmentation(
    models: TryOnModels, person: synth.PersonSample, c_shape: GarmentCondition
) -> np.ndarray:
    """Shape stage + boundary refinement; independent of any texture input."""
    raw = predict_segmentation(models.scm, person.seg, person.pose, c_shape)
    return texture.refine_boundary(raw)


def render_with_texture(
    models: TryOnModels,
    person: synth.PersonSample,
    s_t: np.ndarray,
    c_texture: GarmentCondition,
    seed: int,
    other: GarmentCondition | None = None,
) -> np.ndarray:
    """Texture stage on a fixed target segmentation; independent of the
    shape condition."""
    H, W = person.image.shape[:2]
    j_s = texture.stitch(
        person.image, L.render(s_t), texture.masks_from_segmentation(s_t)
    )
    top, down = _condition_slots(c_texture, other, H, W)
    cond = encode_condition(top, down, models.cond_encoder)
    return texture.generate(
        models.denoiser,
        models.codec,
        j_s,
        cond,
        models.schedule,
        seed,
        s_t,
        gen_labels=(L.ROLE_LABELS[c_texture.role],),
        keep_image=person.image,
    )


def try_on(
    models: TryOnModels,
    person: synth.PersonSample,
    garment: GarmentCondition,
    seed: int,
    other: GarmentCondition | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Traditional try-on: shape and texture share the same condition."""
    return edit(models, person, garment, garment, seed, other)


def full_outfit(
    models: TryOnModels,
    person: synth.PersonSample,
    c_top: GarmentCondition,
    c_bottom: GarmentCondition,
    seed: int,
    order: str = "top_first",
) -> tuple[np.ndarray, np.ndarray]:
    """Two forward passes: one garment per pass, the second applied to the
    first pass's output. The garment region settled in pass 1 survives
    pass 2 up to the codec's reconstruction error. ``order`` selects which
    garment goes first; the two orders agree at the segmentation level but
    not bit-for-bit in pixels."""
    if c_top.role != "upper" or c_bottom.role != "lower":
        raise RoleMismatchError("full_outfit needs an upper top and a lower bottom")
    if order not in ("top_first", "bottom_first"):
        raise ConfigError(f"unknown pass order {order!r}")
    first, second = (c_top, c_bottom) if order == "top_first" else (c_bottom, c_top)
    y1, s1 = edit(models, person, first, first, seed, other=second)
    person2 = synth.PersonSample(image=y1, seg=s1, pose=person.pose, id=person.id)
    return edit(models, person2, second, second, seed + 1, other=first)
