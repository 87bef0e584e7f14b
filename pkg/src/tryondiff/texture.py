"""Texture guidance stage: stitched conditioning input, boundary
relabeling, condition embedding, latent codec and the conditional latent
denoiser with mask shape control."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy import ndimage

from tryondiff import diffusion as dif
from tryondiff import labels as L
from tryondiff._kernels import mode_filter_pass
from tryondiff.blocks import (
    CrossAttentionInject,
    ResidualAttentionBlock,
    seeded_init,
    timestep_embedding,
)

CLOTHING_LABELS = (L.UPPER_CLOTHES, L.LOWER_CLOTHES)


# ---------------------------------------------------------------------------
# Stitching


@dataclass(frozen=True)
class StitchMasks:
    """Head / upper-clothes / under-clothes binary masks."""

    head: np.ndarray
    upper: np.ndarray
    under: np.ndarray

    def __post_init__(self):
        if not (self.head.shape == self.upper.shape == self.under.shape):
            raise ValueError("stitch masks must share shape")
        if (self.upper.astype(bool) & self.under.astype(bool)).any():
            raise ValueError("a pixel cannot be both upper and under clothes")


def masks_from_segmentation(seg: np.ndarray) -> StitchMasks:
    return StitchMasks(
        head=(seg == L.HEAD),
        upper=(seg == L.UPPER_CLOTHES),
        under=(seg == L.LOWER_CLOTHES),
    )


def stitch(image: np.ndarray, seg_render: np.ndarray, masks: StitchMasks) -> np.ndarray:
    """Stitched conditioning image.

    J = [I*Mk + S*(1-Mk)] * (1-Mup) * (1-Mun) + 0.5*Mun, elementwise: head
    pixels keep the source image, other body pixels take the rendered
    segmentation, upper clothes go to 0 and under clothes to 0.5.
    """
    if image.shape != seg_render.shape or image.shape[:2] != masks.head.shape:
        raise ValueError("image, rendered segmentation and masks must align")
    mk = masks.head.astype(np.float32)[..., None]
    mup = masks.upper.astype(np.float32)[..., None]
    mun = masks.under.astype(np.float32)[..., None]
    return (image * mk + seg_render * (1.0 - mk)) * (1.0 - mup) * (1.0 - mun) + 0.5 * mun


# ---------------------------------------------------------------------------
# Boundary relabeling (pixel discriminator)


def foreground_region(labels: np.ndarray) -> np.ndarray:
    """Filled person region: non-zero labels closed and hole-filled, so
    zero-label boundary artifacts inside the silhouette are covered while
    true background stays out."""
    fg = labels != 0
    fg = ndimage.binary_closing(fg, structure=np.ones((3, 3), bool))
    return ndimage.binary_fill_holes(fg)


def refine_boundary(
    labels: np.ndarray,
    neighborhood: int = 3,
    foreground: np.ndarray | None = None,
) -> np.ndarray:
    """Reassign zero labels inside the foreground to the neighborhood mode.

    Every zero-labeled pixel inside the (cropped) foreground takes the most
    frequent non-zero label in its neighborhood, ties to the lowest id.
    Passes repeat until no zero label remains inside the foreground, so a
    second application is a no-op.
    """
    if neighborhood < 3 or neighborhood % 2 == 0:
        raise ValueError(f"neighborhood must be odd and >= 3, got {neighborhood}")
    labels = L.validate_labels(np.asarray(labels)).astype(np.int32)
    if foreground is None:
        foreground = foreground_region(labels)
    out = labels.copy()
    for _ in range(labels.shape[0] + labels.shape[1]):
        relabel = (out == 0) & foreground
        if not relabel.any():
            break
        new = mode_filter_pass(out, relabel.astype(np.uint8), neighborhood)
        if np.array_equal(new, out):
            break  # isolated zero region with no labeled support
        out = new
    return out.astype(np.int64)


# ---------------------------------------------------------------------------
# Augmentation


def augment(
    image: np.ndarray,
    blur_sigma: float = 0.0,
    color_gain=1.0,
    rotate_deg: float = 0.0,
) -> np.ndarray:
    """Gaussian blur, per-channel gain (clipped to [0, 1]), then rotation
    with reflect padding. Identity parameters return the input bit-exact."""
    if blur_sigma < 0:
        warnings.warn(f"blur_sigma {blur_sigma} clamped to 0")
        blur_sigma = 0.0
    if not -180.0 <= rotate_deg <= 180.0:
        warnings.warn(f"rotate_deg {rotate_deg} clamped to [-180, 180]")
        rotate_deg = float(np.clip(rotate_deg, -180.0, 180.0))
    out = image
    if blur_sigma > 0:
        out = ndimage.gaussian_filter(out, sigma=(blur_sigma, blur_sigma, 0), mode="reflect")
    gain = np.asarray(color_gain, dtype=np.float32)
    if not np.all(gain == 1.0):
        out = np.clip(out * gain, 0.0, 1.0)
    if rotate_deg != 0.0:
        out = ndimage.rotate(
            out, rotate_deg, axes=(1, 0), reshape=False, order=1, mode="reflect"
        )
        out = np.clip(out, 0.0, 1.0)
    return out.astype(np.float32) if out is not image else image


# ---------------------------------------------------------------------------
# Condition embedding


class ConditionEncoder(nn.Module):
    """Maps two garment images to one averaged 1-D embedding.

    Each branch: conv trunk -> tokens -> residual attention stack ->
    LayerNorm -> token mean. The two branch embeddings are averaged, so
    the result is symmetric in its inputs.
    """

    def __init__(self, d_cond: int = 64, n_rat: int = 2):
        super().__init__()
        self.d_cond = d_cond
        self.trunk = nn.Sequential(
            nn.Conv2d(3, 32, 3, 2, 1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(32, 64, 3, 2, 1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(64, d_cond, 1),
        )
        self.rat = nn.ModuleList(ResidualAttentionBlock(d_cond) for _ in range(n_rat))
        self.ln = nn.LayerNorm(d_cond)

    def branch(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) garment image, got {tuple(x.shape)}")
        tokens = self.trunk(x).flatten(2).transpose(1, 2)  # (B, N, d)
        for block in self.rat:
            tokens = block(tokens)
        return self.ln(tokens).mean(dim=1)  # (B, d)

    def forward(self, top: torch.Tensor, down: torch.Tensor) -> torch.Tensor:
        return (self.branch(top) + self.branch(down)) / 2.0


def neutral_garment(H: int, W: int) -> np.ndarray:
    """Gray placeholder used when a garment slot is unconditioned."""
    return np.full((H, W, 3), 0.5, dtype=np.float32)


def _to_chw(image: np.ndarray) -> torch.Tensor:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
    return torch.from_numpy(np.transpose(image.astype(np.float32), (2, 0, 1)))


def encode_condition(
    t_top: np.ndarray, d_down: np.ndarray, encoder: ConditionEncoder
) -> torch.Tensor:
    """1-D condition embedding averaged over the two garment branches."""
    with torch.no_grad():
        return encoder(_to_chw(t_top).unsqueeze(0), _to_chw(d_down).unsqueeze(0))[0]


# ---------------------------------------------------------------------------
# Mask shape control


def _nearest_downsample(seg: np.ndarray, h: int, w: int) -> np.ndarray:
    H, W = seg.shape
    ys = np.minimum(((np.arange(h) + 0.5) * H / h).astype(int), H - 1)
    xs = np.minimum(((np.arange(w) + 0.5) * W / w).astype(int), W - 1)
    return seg[np.ix_(ys, xs)]


def clothing_mask(seg: np.ndarray, h: int | None = None, w: int | None = None) -> np.ndarray:
    """Binary clothing mask, optionally nearest-downsampled to (h, w)."""
    if h is not None:
        seg = _nearest_downsample(seg, h, w)
    return np.isin(seg, CLOTHING_LABELS)


def clothing_mask_latent(
    seg: np.ndarray, h: int, w: int, labels: tuple = CLOTHING_LABELS
) -> np.ndarray:
    """Clothing mask pooled to latent resolution: a latent cell counts as
    clothing when any pixel of its image patch is clothing."""
    m = np.isin(seg, labels).astype(np.float32)
    t = torch.from_numpy(m)[None, None]
    pooled = F.adaptive_max_pool2d(t, (h, w))[0, 0].numpy()
    return pooled > 0


def mask_clothing(x, seg: np.ndarray, fill: float):
    """Set the entries under clothing labels to ``fill``; all other
    entries are returned bit-exact. Works on (H', W', ...) numpy arrays or
    (..., H', W') torch tensors; the segmentation is nearest-downsampled
    when resolutions differ."""
    if isinstance(x, torch.Tensor):
        h, w = x.shape[-2], x.shape[-1]
        m = torch.from_numpy(clothing_mask(seg, h, w))
        out = x.clone()
        out[..., m] = fill
        return out
    x = np.asarray(x)
    h, w = x.shape[0], x.shape[1]
    m = clothing_mask(seg, h, w)
    out = x.copy()
    out[m] = fill
    return out


# ---------------------------------------------------------------------------
# Latent codec


class LatentCodec(nn.Module):
    """Small convolutional autoencoder with downsampling factor 4.

    ``latent_scale`` (set after training) normalizes latents to roughly
    unit variance for the diffusion chain; ``recon_tol`` records the mean
    absolute reconstruction error on the training set.
    """

    def __init__(self, z_ch: int = 8, width: int = 48):
        super().__init__()
        self.z_ch = z_ch
        self.factor = 4
        self.encoder = nn.Sequential(
            nn.Conv2d(3, width, 3, 2, 1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(width, 2 * width, 3, 2, 1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(2 * width, 2 * width, 3, 1, 1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(2 * width, z_ch, 1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(z_ch, 2 * width, 3, 1, 1),
            nn.LeakyReLU(0.2),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * width, 2 * width, 3, 1, 1),
            nn.LeakyReLU(0.2),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * width, width, 3, 1, 1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(width, 3, 3, 1, 1),
        )
        self.register_buffer("latent_scale", torch.ones(()))
        self.register_buffer("recon_tol", torch.zeros(()))

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x) / self.latent_scale

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.decoder(z * self.latent_scale))


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    return _to_chw(image).unsqueeze(0)


def tensor_to_image(x: torch.Tensor) -> np.ndarray:
    return np.transpose(x[0].detach().numpy(), (1, 2, 0)).astype(np.float32)


@dataclass
class CodecTrainConfig:
    epochs: int = 40
    batch_size: int = 16
    lr: float = 2e-3
    seed: int = 0
    z_ch: int = 8
    width: int = 48


def train_codec(
    images: list[np.ndarray],
    cfg: CodecTrainConfig | None = None,
    init_state: dict | None = None,
) -> dict:
    """Pixel-MSE autoencoder training; sets latent_scale and recon_tol."""
    cfg = cfg or CodecTrainConfig()
    if not images:
        raise ValueError("empty codec training set")
    torch.manual_seed(cfg.seed)
    codec = seeded_init(LatentCodec(cfg.z_ch, cfg.width), cfg.seed)
    if init_state is not None:
        codec.load_state_dict(init_state)
    opt = torch.optim.Adam(codec.parameters(), lr=cfg.lr)
    data = torch.stack([_to_chw(im) for im in images])
    rng = np.random.default_rng(cfg.seed)
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(images))
        total, nb = 0.0, 0
        for s in range(0, len(images), cfg.batch_size):
            x = data[order[s : s + cfg.batch_size]]
            rec = torch.sigmoid(codec.decoder(codec.encoder(x)))
            loss = F.mse_loss(rec, x)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
            nb += 1
        losses.append(total / nb)
    with torch.no_grad():
        z = codec.encoder(data)
        codec.latent_scale.fill_(float(z.std()))
        rec = torch.sigmoid(codec.decoder(z))
        codec.recon_tol.fill_(float((rec - data).abs().mean()))
    return {"codec": codec, "losses": losses, "config": cfg}


# ---------------------------------------------------------------------------
# Conditional latent denoiser


class _ResBlock(nn.Module):
    def __init__(self, ch: int, t_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, ch)
        self.conv1 = nn.Conv2d(ch, ch, 3, 1, 1)
        self.temb = nn.Linear(t_dim, ch)
        self.norm2 = nn.GroupNorm(8, ch)
        self.conv2 = nn.Conv2d(ch, ch, 3, 1, 1)

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class ConditionalDenoiser(nn.Module):
    """Noise predictor over latents: the stitched-input latent is
    concatenated channelwise and the condition embedding is injected by
    cross-attention at every resolution."""

    def __init__(
        self,
        z_ch: int = 8,
        d_cond: int = 64,
        widths=(64, 96, 128),
        t_dim: int = 128,
    ):
        super().__init__()
        widths = list(widths)
        self.t_dim = t_dim
        self.t_mlp = nn.Sequential(nn.Linear(t_dim, t_dim), nn.SiLU(), nn.Linear(t_dim, t_dim))
        # Positional Fourier features break translation equivariance:
        # garment patterns are anchored in absolute image coordinates, so
        # without position the model can only predict the phase-averaged
        # texture, and plain coordinate ramps are too low-frequency for a
        # small conv net to turn into cell-rate oscillations.
        self.n_octaves = 4
        n_pos = 2 * (1 + 2 * self.n_octaves)
        self.conv_in = nn.Conv2d(2 * z_ch + n_pos, widths[0], 3, 1, 1)
        self.down_blocks = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downs = nn.ModuleList()
        for i, w in enumerate(widths):
            self.down_blocks.append(_ResBlock(w, t_dim))
            self.down_attn.append(CrossAttentionInject(w, d_cond))
            if i + 1 < len(widths):
                self.downs.append(nn.Conv2d(w, widths[i + 1], 3, 2, 1))
        self.mid = _ResBlock(widths[-1], t_dim)
        self.mid_attn = CrossAttentionInject(widths[-1], d_cond)
        self.up_convs = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        for i in range(len(widths) - 1, 0, -1):
            self.up_convs.append(nn.Conv2d(widths[i] + widths[i - 1], widths[i - 1], 3, 1, 1))
            self.up_blocks.append(_ResBlock(widths[i - 1], t_dim))
            self.up_attn.append(CrossAttentionInject(widths[i - 1], d_cond))
        self.conv_out = nn.Conv2d(widths[0], z_ch, 3, 1, 1)

    def forward(self, x_t, t, cond, js_latent):
        if isinstance(t, int):
            t = torch.full((x_t.shape[0],), t, dtype=torch.long)
        temb = self.t_mlp(timestep_embedding(t, self.t_dim))
        b, _, hh, ww = x_t.shape
        pos = []
        for n, view in ((hh, (1, 1, hh, 1)), (ww, (1, 1, 1, ww))):
            u = torch.arange(n, dtype=torch.float32).view(view)
            feats = [u / max(n - 1, 1)]
            for k in range(self.n_octaves):
                feats += [torch.sin(math.pi * u / 2**k), torch.cos(math.pi * u / 2**k)]
            pos += [f.expand(b, 1, hh, ww) for f in feats]
        h = self.conv_in(torch.cat([x_t, js_latent, *pos], dim=1))
        skips = []
        for i, (block, attn) in enumerate(zip(self.down_blocks, self.down_attn)):
            h = attn(block(h, temb), cond)
            skips.append(h)
            if i < len(self.downs):
                h = self.downs[i](h)
        h = self.mid_attn(self.mid(h, temb), cond)
        for conv, block, attn, skip in zip(
            self.up_convs, self.up_blocks, self.up_attn, reversed(skips[:-1])
        ):
            h = F.interpolate(h, size=skip.shape[-2:], mode="nearest")
            h = conv(torch.cat([h, skip], dim=1))
            h = attn(block(h, temb), cond)
        return self.conv_out(h)


# ---------------------------------------------------------------------------
# Training and generation


def build_stitched_input(image: np.ndarray, seg: np.ndarray) -> np.ndarray:
    """Stitch + boundary refinement for one sample."""
    refined = refine_boundary(seg)
    return stitch(image, L.render(refined), masks_from_segmentation(refined))


def _batch_q_sample(x0, t_idx, eps, schedule):
    ab = schedule.alpha_bar[t_idx - 1].view(-1, 1, 1, 1)
    return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps


def tgm_batch_loss(model, x0_lat, js_lat, cond, t_idx, eps, schedule, mask):
    """Masked noise-prediction MSE over a batch of latents."""
    x_t = _batch_q_sample(x0_lat, t_idx, eps, schedule)
    pred = model(x_t, t_idx, cond, js_lat)
    sq = (pred - eps) ** 2 * mask
    loss = sq.sum() / mask.sum().clamp(min=1.0) / x0_lat.shape[1]
    if not torch.isfinite(loss):
        raise FloatingPointError("non-finite texture-stage loss")
    return loss


def suppress_garments(
    image: np.ndarray, seg: np.ndarray, labels: tuple = CLOTHING_LABELS
) -> np.ndarray:
    """Copy of the image with garment pixels replaced by the stitched-input
    palette (upper clothes 0, under clothes 0.5).

    The codec's receptive field smears garment texture into neighboring
    latent cells; latents used as clamped context therefore come from this
    garment-suppressed render, so the condition embedding, not boundary
    leakage, has to determine the generated texture.
    """
    out = image.copy()
    if L.UPPER_CLOTHES in labels:
        out[seg == L.UPPER_CLOTHES] = 0.0
    if L.LOWER_CLOTHES in labels:
        out[seg == L.LOWER_CLOTHES] = 0.5
    return out


def _hybrid_latent(codec: LatentCodec, image, seg, mask: torch.Tensor) -> torch.Tensor:
    """Garment cells from the true latent, context cells from the
    garment-suppressed latent."""
    x_true = codec.encode(image_to_tensor(image))
    x_ctx = codec.encode(image_to_tensor(suppress_garments(image, seg)))
    return mask * x_true + (1.0 - mask) * x_ctx


def tgm_train_step(
    model: ConditionalDenoiser,
    codec: LatentCodec,
    sample,
    cond: torch.Tensor,
    schedule: dif.NoiseSchedule,
    t: int,
    eps: torch.Tensor,
) -> torch.Tensor:
    """Single-sample training loss: the person image latent is noised at
    step t and the prediction error is restricted to the clothing region."""
    with torch.no_grad():
        js = codec.encode(image_to_tensor(build_stitched_input(sample.image, sample.seg)))
    h, w = js.shape[-2:]
    m = torch.from_numpy(
        clothing_mask_latent(sample.seg, h, w).astype(np.float32)
    )[None, None]
    with torch.no_grad():
        x0 = _hybrid_latent(codec, sample.image, sample.seg, m)
    t_idx = torch.tensor([t], dtype=torch.long)
    return tgm_batch_loss(model, x0, js, cond.unsqueeze(0), t_idx, eps, schedule, m)


@dataclass
class TGMTrainConfig:
    steps: int = 12000
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    d_cond: int = 64
    n_rat: int = 2
    widths: tuple = (96, 144, 192)
    T: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.3
    pretrain_steps: int = 1500
    freeze_cond: bool = True


def pretrain_condition_encoder(
    cond_enc: ConditionEncoder,
    steps: int,
    batch_size: int = 16,
    lr: float = 1e-3,
    seed: int = 0,
    size: tuple = (64, 48),
) -> ConditionEncoder:
    """Supervised warm start for the condition encoder.

    The averaged two-garment embedding of procedurally rendered flat-lay
    pairs is trained to expose the texture class and palette colors of
    *each* garment through throwaway linear heads, standing in for a large
    pretrained image encoder. Decoding both garments from the average
    forces the branches into role-separable subspaces; joint denoising
    training alone leaves the embedding nearly blind to pattern class, so
    the warm start is what makes texture conditioning work.
    """
    from tryondiff import synth

    heads = nn.ModuleDict(
        {
            "cls_up": nn.Linear(cond_enc.d_cond, len(synth.PATTERNS)),
            "cls_low": nn.Linear(cond_enc.d_cond, len(synth.PATTERNS)),
            "col_up": nn.Linear(cond_enc.d_cond, 6),
            "col_low": nn.Linear(cond_enc.d_cond, 6),
        }
    )
    opt = torch.optim.Adam(
        list(cond_enc.parameters()) + list(heads.parameters()), lr=lr
    )
    rng = np.random.default_rng(seed)
    h, w = size
    for _ in range(steps):
        tops, downs, y = [], [], {k: [] for k in ("cu", "cl", "ou", "ol")}
        for _ in range(batch_size):
            su = synth.random_garment_spec(rng, "upper")
            sl = synth.random_garment_spec(rng, "lower")
            tops.append(
                image_to_tensor(synth.gen_garment(su, h, w, seed=int(rng.integers(1 << 30))))
            )
            downs.append(
                image_to_tensor(synth.gen_garment(sl, h, w, seed=int(rng.integers(1 << 30))))
            )
            y["cu"].append(su.texture_class)
            y["cl"].append(sl.texture_class)
            y["ou"].append(np.concatenate([su.color_a, su.color_b]))
            y["ol"].append(np.concatenate([sl.color_a, sl.color_b]))
        emb = cond_enc(torch.cat(tops), torch.cat(downs))
        loss = (
            F.cross_entropy(heads["cls_up"](emb), torch.tensor(y["cu"]))
            + F.cross_entropy(heads["cls_low"](emb), torch.tensor(y["cl"]))
            + F.mse_loss(
                heads["col_up"](emb),
                torch.tensor(np.stack(y["ou"]), dtype=torch.float32),
            )
            + F.mse_loss(
                heads["col_low"](emb),
                torch.tensor(np.stack(y["ol"]), dtype=torch.float32),
            )
        )
        opt.zero_grad()
        loss.backward()
        opt.step()
    return cond_enc


def train_tgm(
    samples: list,
    codec: LatentCodec,
    cfg: TGMTrainConfig | None = None,
    init_state: tuple[dict, dict] | None = None,
) -> dict:
    """Train the conditional latent denoiser.

    ``samples`` is a list of (PersonSample, upper flat-lay, lower flat-lay);
    conditions come from the flat-lays of the worn garments. The condition
    encoder gets a supervised warm start (``pretrain_steps``) and is frozen
    by default (``freeze_cond``); with ``freeze_cond=False`` it is trained
    jointly with the denoiser. ``init_state`` is an optional (denoiser,
    condition-encoder) state pair to continue from; it skips the warm start.
    The learning rate follows a cosine decay and the returned denoiser
    carries exponential-moving-average weights.
    """
    cfg = cfg or TGMTrainConfig()
    if not samples:
        raise ValueError("empty texture-stage training set")
    torch.manual_seed(cfg.seed)
    schedule = dif.make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    model = seeded_init(
        ConditionalDenoiser(codec.z_ch, cfg.d_cond, cfg.widths), cfg.seed
    )
    cond_enc = seeded_init(ConditionEncoder(cfg.d_cond, cfg.n_rat), cfg.seed + 1)
    if init_state is not None:
        model.load_state_dict(init_state[0])
        cond_enc.load_state_dict(init_state[1])
    elif cfg.pretrain_steps > 0:
        pretrain_condition_encoder(
            cond_enc, cfg.pretrain_steps, lr=cfg.lr, seed=cfg.seed + 1
        )
    params = list(model.parameters())
    if cfg.freeze_cond:
        cond_enc.eval()
        for p in cond_enc.parameters():
            p.requires_grad_(False)
    else:
        params += list(cond_enc.parameters())
    opt = torch.optim.Adam(params, lr=cfg.lr)

    # Precompute latents and masks once; the codec is frozen.
    with torch.no_grad():
        js = torch.cat(
            [
                codec.encode(image_to_tensor(build_stitched_input(p.image, p.seg)))
                for p, _, _ in samples
            ]
        )
    h, w = js.shape[-2:]
    masks = torch.stack(
        [
            torch.from_numpy(clothing_mask_latent(p.seg, h, w).astype(np.float32))
            for p, _, _ in samples
        ]
    ).unsqueeze(1)
    with torch.no_grad():
        x0 = torch.cat(
            [
                _hybrid_latent(codec, p.image, p.seg, masks[i])
                for i, (p, _, _) in enumerate(samples)
            ]
        )
    tops = torch.stack([_to_chw(up) for _, up, _ in samples])
    downs = torch.stack([_to_chw(low) for _, _, low in samples])

    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    losses = []
    n = len(samples)
    # Oversample the mid-noise band: that is where the noisy latent is
    # ambiguous enough that the condition carries gradient signal, while at
    # very high noise the eps target barely depends on the clean latent.
    ab = schedule.alpha_bar.numpy()
    band = np.nonzero((ab >= 0.01) & (ab <= 0.6))[0] + 1
    if len(band) == 0:
        band = np.arange(1, cfg.T + 1)
    ema = {k: v.detach().clone() for k, v in model.state_dict().items()}
    ema_decay = 0.999
    base_lr = cfg.lr
    for step in range(cfg.steps):
        for group in opt.param_groups:
            group["lr"] = base_lr * 0.5 * (
                1.0 + math.cos(math.pi * step / max(cfg.steps, 1))
            )
        idx = rng.integers(0, n, size=min(cfg.batch_size, n))
        t_uni = rng.integers(1, cfg.T + 1, size=len(idx))
        t_band = rng.choice(band, size=len(idx))
        t_idx = torch.from_numpy(
            np.where(rng.random(len(idx)) < 0.5, t_band, t_uni)
        )
        eps = torch.randn(x0[idx].shape, generator=gen)
        cond = cond_enc(tops[idx], downs[idx])
        loss = tgm_batch_loss(
            model, x0[idx], js[idx], cond, t_idx, eps, schedule, masks[idx]
        )
        opt.zero_grad()
        loss.backward()
        opt.step()
        with torch.no_grad():
            for k, v in model.state_dict().items():
                if v.dtype.is_floating_point:
                    ema[k].mul_(ema_decay).add_(v, alpha=1.0 - ema_decay)
                else:
                    ema[k].copy_(v)
        losses.append(float(loss.detach()))
    # Averaged weights sample more cleanly than the last iterate.
    model.load_state_dict(ema)
    return {
        "model": model,
        "cond_encoder": cond_enc,
        "schedule": schedule,
        "losses": losses,
        "config": cfg,
    }


def generate(
    model: ConditionalDenoiser,
    codec: LatentCodec,
    j_s: np.ndarray,
    cond: torch.Tensor,
    schedule: dif.NoiseSchedule,
    seed: int,
    seg: np.ndarray,
    gen_labels: tuple = CLOTHING_LABELS,
    keep_image: np.ndarray | None = None,
) -> np.ndarray:
    """Sample the clothing region in latent space and decode.

    Latents outside the generated labels are clamped at every step (mask
    shape control) to the latent of ``keep_image`` (default: the stitched
    input), so preserved regions follow it up to the codec's
    reconstruction error. Pixels under the generated labels are suppressed
    in ``keep_image`` before encoding so their texture cannot leak into the
    clamped context through the codec's receptive field.
    """
    with torch.no_grad():
        js_lat = codec.encode(image_to_tensor(j_s))
        known_lat = (
            js_lat
            if keep_image is None
            else codec.encode(
                image_to_tensor(suppress_garments(keep_image, seg, gen_labels))
            )
        )
        h, w = js_lat.shape[-2:]
        gen_mask = torch.from_numpy(
            clothing_mask_latent(seg, h, w, gen_labels).astype(np.float32)
        )[None, None].expand_as(js_lat)
        known_mask = 1.0 - gen_mask

        def denoiser(x, t, _cond):
            return model(x, t, cond.unsqueeze(0), js_lat)

        z0 = dif.sample_loop(
            denoiser,
            None,
            js_lat.shape,
            schedule,
            seed,
            known=known_lat,
            known_mask=known_mask,
        )
        return np.clip(tensor_to_image(codec.decode(z0)), 0.0, 1.0)
