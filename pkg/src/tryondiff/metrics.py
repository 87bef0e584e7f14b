"""Evaluation metrics: SSIM / MS-SSIM, Inception Score with a toy texture
classifier, a perceptual-distance proxy, and the report writer.

The toy classifier stands in for a pretrained Inception network, so
absolute magnitudes are not comparable with published full-scale scores.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from PIL import Image
from scipy.ndimage import uniform_filter

from tryondiff import synth
from tryondiff.blocks import seeded_init

C1 = 0.01**2
C2 = 0.03**2

# Standard 5-scale weights, renormalized when fewer scales are used.
_MSSSIM_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])


class MetricsError(RuntimeError):
    pass


def _gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img @ np.array([0.299, 0.587, 0.114])
    return img


def _ssim_cs(a: np.ndarray, b: np.ndarray, window: int) -> tuple[float, float]:
    """Mean SSIM and mean contrast-structure term over local windows."""
    mu_a = uniform_filter(a, window, mode="reflect")
    mu_b = uniform_filter(b, window, mode="reflect")
    var_a = uniform_filter(a * a, window, mode="reflect") - mu_a**2
    var_b = uniform_filter(b * b, window, mode="reflect") - mu_b**2
    cov = uniform_filter(a * b, window, mode="reflect") - mu_a * mu_b
    lum = (2 * mu_a * mu_b + C1) / (mu_a**2 + mu_b**2 + C1)
    cs = (2 * cov + C2) / (var_a + var_b + C2)
    return float((lum * cs).mean()), float(cs.mean())


def ssim(a: np.ndarray, b: np.ndarray, window: int = 7, scales: int = 1) -> float:
    """Structural similarity; ``scales > 1`` gives the multi-scale variant
    (per-scale contrast terms multiplied into the final-scale SSIM)."""
    if np.asarray(a).shape != np.asarray(b).shape:
        raise MetricsError(f"shape mismatch: {np.asarray(a).shape} vs {np.asarray(b).shape}")
    if window < 3 or window % 2 == 0:
        raise MetricsError(f"window must be odd and >= 3, got {window}")
    ga, gb = _gray(a), _gray(b)
    if scales < 1:
        raise MetricsError("scales must be >= 1")
    if min(ga.shape) < window * 2 ** (scales - 1):
        raise MetricsError(
            f"image of shape {ga.shape} too small for {scales} scales with window {window}"
        )
    if scales == 1:
        return _ssim_cs(ga, gb, window)[0]
    weights = _MSSSIM_WEIGHTS[:scales]
    weights = weights / weights.sum()
    value = 1.0
    for s in range(scales):
        sim, cs = _ssim_cs(ga, gb, window)
        if s == scales - 1:
            value *= max(sim, 0.0) ** weights[s]
        else:
            value *= max(cs, 0.0) ** weights[s]
            h, w = (ga.shape[0] // 2) * 2, (ga.shape[1] // 2) * 2
            ga = ga[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
            gb = gb[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    return float(value)


def inception_score(images: list, classifier, splits: int = 2) -> tuple[float, float]:
    """exp(mean KL(p(y|x) || p(y))) per split, mean and std across splits.

    ``classifier`` is any object mapping an image to a probability vector:
    either a torch module (softmaxed internally) or anything exposing
    ``predict_probs(images)``.
    """
    if len(images) < splits:
        raise MetricsError(f"need at least {splits} images, got {len(images)}")
    probs = classify_probs(classifier, images)
    return inception_score_from_probs(probs, splits)


def inception_score_from_probs(probs: np.ndarray, splits: int = 2) -> tuple[float, float]:
    if len(probs) < splits:
        raise MetricsError(f"need at least {splits} probability rows, got {len(probs)}")
    scores = []
    for chunk in np.array_split(probs, splits):
        marginal = chunk.mean(axis=0, keepdims=True)
        kl = (chunk * (np.log(chunk + 1e-12) - np.log(marginal + 1e-12))).sum(axis=1)
        scores.append(float(np.exp(kl.mean())))
    return float(np.mean(scores)), float(np.std(scores))


def perceptual_distance(a: np.ndarray, b: np.ndarray, feature_net) -> float:
    """Mean squared distance between unit-normalized feature maps."""
    if np.asarray(a).shape != np.asarray(b).shape:
        raise MetricsError("shape mismatch")
    total = 0.0
    with torch.no_grad():
        fa = feature_net.features(_img_tensor(a))
        fb = feature_net.features(_img_tensor(b))
        for xa, xb in zip(fa, fb):
            na = xa / (xa.norm(dim=1, keepdim=True) + 1e-10)
            nb = xb / (xb.norm(dim=1, keepdim=True) + 1e-10)
            total += float(((na - nb) ** 2).mean())
    return total / len(fa)


# ---------------------------------------------------------------------------
# Toy texture classifier (Inception stand-in)


class TextureClassifier(nn.Module):
    def __init__(self, n_classes: int = 3, width: int = 16):
        super().__init__()
        self.conv1 = nn.Conv2d(3, width, 3, 2, 1)
        self.conv2 = nn.Conv2d(width, 2 * width, 3, 2, 1)
        self.conv3 = nn.Conv2d(2 * width, 4 * width, 3, 2, 1)
        self.fc = nn.Linear(4 * width, n_classes)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        f1 = F.leaky_relu(self.conv1(x), 0.2)
        f2 = F.leaky_relu(self.conv2(f1), 0.2)
        f3 = F.leaky_relu(self.conv3(f2), 0.2)
        return [f1, f2, f3]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        f = self.features(x)[-1]
        return self.fc(f.mean(dim=(2, 3)))


def _img_tensor(image: np.ndarray) -> torch.Tensor:
    image = np.asarray(image, dtype=np.float32)
    return torch.from_numpy(np.transpose(image, (2, 0, 1))).unsqueeze(0)


def _resize(image: np.ndarray, size: int = 32) -> np.ndarray:
    t = _img_tensor(image)
    out = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return np.transpose(out[0].numpy(), (1, 2, 0))


def classify_probs(classifier, images: list) -> np.ndarray:
    if hasattr(classifier, "predict_probs"):
        return np.asarray(classifier.predict_probs(images), dtype=np.float64)
    with torch.no_grad():
        batch = torch.cat([_img_tensor(_resize(im)) for im in images])
        return torch.softmax(classifier(batch), dim=1).numpy()


def train_texture_classifier(
    seed: int = 0, n_per_class: int = 600, size: int = 32, epochs: int = 12
) -> TextureClassifier:
    """Train the toy classifier on procedural texture swatches plus
    garment-region bounding-box crops from rendered people, so it works on
    the same crops ``classify_texture`` sees at evaluation time."""
    from tryondiff import labels as L

    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)

    def _spec(pattern, role):
        spec = synth.random_garment_spec(rng, role)
        while spec.pattern != pattern:
            spec = synth.random_garment_spec(rng, role)
        return spec

    xs, ys = [], []
    for ci, pattern in enumerate(synth.PATTERNS):
        for j in range(n_per_class):
            if j % 2 == 0:
                xs.append(synth.texture_image(_spec(pattern, "upper"), size, size))
            else:
                role = "upper" if j % 4 == 1 else "lower"
                spec = _spec(pattern, role)
                up = spec if role == "upper" else synth.random_garment_spec(rng, "upper")
                low = spec if role == "lower" else synth.random_garment_spec(rng, "lower")
                person = synth.gen_person(int(rng.integers(2**31)), 64, 48, up, low)
                region = person.seg == L.ROLE_LABELS[role]
                if not region.any():
                    xs.append(synth.texture_image(spec, size, size))
                else:
                    yy, xx = np.nonzero(region)
                    crop = person.image[
                        yy.min() : yy.max() + 1, xx.min() : xx.max() + 1
                    ]
                    xs.append(_resize(crop, size))
            ys.append(ci)
    data = torch.cat([_img_tensor(x) for x in xs])
    target = torch.tensor(ys)
    model = seeded_init(TextureClassifier(len(synth.PATTERNS)), seed)
    opt = torch.optim.Adam(model.parameters(), lr=2e-3)
    for _ in range(epochs):
        order = torch.from_numpy(rng.permutation(len(xs)))
        for s in range(0, len(xs), 32):
            idx = order[s : s + 32]
            loss = F.cross_entropy(model(data[idx]), target[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    model.eval()
    return model


def classify_texture(classifier, image: np.ndarray, mask: np.ndarray | None = None) -> int:
    """Predicted texture class of an image, optionally cropped to a mask's
    bounding box first."""
    if mask is not None:
        if not mask.any():
            raise MetricsError("empty region mask")
        ys, xs = np.nonzero(mask)
        image = image[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]
    return int(classify_probs(classifier, [image])[0].argmax())


# ---------------------------------------------------------------------------
# Directory evaluation and report


def _load_dir(path: Path) -> dict[str, np.ndarray]:
    out = {}
    for p in sorted(path.glob("*.png")):
        out[p.name] = np.asarray(Image.open(p).convert("RGB"), dtype=np.float32) / 255.0
    return out


def evaluate(pred_dir, ref_dir, config: dict | None = None) -> dict:
    """Paired SSIM / perceptual distance plus unpaired Inception Score.

    Returns the report dict and writes ``report.json`` and ``report.txt``
    into ``config['out']`` when given.
    """
    config = dict(config or {})
    window = int(config.get("window", 7))
    scales = int(config.get("scales", 3))
    splits = int(config.get("splits", 2))
    seed = int(config.get("seed", 0))
    pred = _load_dir(Path(pred_dir))
    ref = _load_dir(Path(ref_dir))
    if not pred or not ref:
        raise MetricsError(f"empty evaluation directory: {pred_dir if not pred else ref_dir}")
    missing_ref = sorted(set(pred) - set(ref))
    missing_pred = sorted(set(ref) - set(pred))
    if missing_ref or missing_pred:
        raise MetricsError(
            f"name mismatches: missing in ref {missing_ref}, missing in pred {missing_pred}"
        )
    classifier = config.get("classifier") or train_texture_classifier(seed)
    per_ssim, per_dist = {}, {}
    for name in sorted(pred):
        per_ssim[name] = ssim(pred[name], ref[name], window=window, scales=scales)
        per_dist[name] = perceptual_distance(pred[name], ref[name], classifier)
    is_mean, is_std = inception_score(
        [pred[n] for n in sorted(pred)], classifier, splits=splits
    )
    report = {
        "dataset": str(pred_dir),
        "checkpoint": config.get("checkpoint", ""),
        "metrics": {
            "ssim": {
                "mean": float(np.mean(list(per_ssim.values()))),
                "std": float(np.std(list(per_ssim.values()))),
                "per_image": per_ssim,
            },
            "perceptual_distance": {
                "mean": float(np.mean(list(per_dist.values()))),
                "std": float(np.std(list(per_dist.values()))),
                "per_image": per_dist,
            },
            "inception_score": {"mean": is_mean, "std": is_std, "per_image": {}},
        },
    }
    out = config.get("out")
    if out:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.json", "w") as f:
            json.dump(report, f, indent=1, sort_keys=True)
        lines = [f"{'metric':<22}{'mean':>12}{'std':>12}"]
        for m, vals in report["metrics"].items():
            lines.append(f"{m:<22}{vals['mean']:>12.6f}{vals['std']:>12.6f}")
        (out / "report.txt").write_text("\n".join(lines) + "\n")
    return report
