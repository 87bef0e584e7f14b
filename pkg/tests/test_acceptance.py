"""Release acceptance suite.

Each test covers one acceptance criterion end to end and prints a single
PASS/FAIL line with the measured numbers, so the tee'd pytest log doubles
as the acceptance report. Trained-model criteria reuse the session-scoped
training fixtures from conftest.
"""

import hashlib
import math
import sys
import time
from pathlib import Path

import numpy as np
import torch

from tryondiff import cli
from tryondiff import diffusion as dif
from tryondiff import labels as L
from tryondiff import metrics, pipeline, synth
from tryondiff import texture as tx
from tryondiff.blocks import GatedConv2d, ResidualAttentionBlock, seeded_init
from tryondiff.shape_control import (
    GarmentCondition,
    binary_iou,
    mean_iou,
    predict_segmentation,
    scm_loss,
)

from conftest import MICRO_INI


def _report(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    print(line, file=sys.__stderr__, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. Equation oracles: hand-derived examples within 1e-6 plus 1000-case
#    fuzz agreement with direct per-element reimplementations.


def _naive_mode_refine(labels: np.ndarray, k: int) -> np.ndarray:
    """Reference relabeling: synchronous passes assigning each zero pixel
    the most frequent nonzero neighbor (lowest id on ties)."""
    out = labels.copy()
    r = k // 2
    h, w = out.shape
    while (out == 0).any():
        new = out.copy()
        changed = False
        for y, x in np.argwhere(out == 0):
            neigh = out[max(0, y - r) : y + r + 1, max(0, x - r) : x + r + 1]
            vals = neigh[neigh != 0]
            if len(vals) == 0:
                continue
            counts = np.bincount(vals)
            new[y, x] = int(np.flatnonzero(counts == counts.max())[0])
            changed = True
        if not changed:
            break
        out = new
    return out


def test_criterion_1_equation_oracles():
    t0 = time.perf_counter()
    errs = []
    sch = dif.make_schedule(3, 0.1, 0.3, "linear")
    f64 = lambda v: torch.tensor(v, dtype=torch.float64)

    # hand-derived scalar examples
    errs.append(abs(float(dif.forward_step(f64(2.0), 2, f64(0.5), sch)) - 2.0124611797498106))
    errs.append(abs(float(dif.q_sample(f64(1.5), 2, f64(-1.0), sch)) - 0.7436419439228673))
    errs.append(abs(float(dif.reverse_step(f64(1.0), 2, f64(0.25), f64(2.0), sch)) - 1.8128122531873294))

    with torch.no_grad():
        gc = GatedConv2d(1, 1, kernel_size=1, padding=0).double()
        gc.feature.weight.fill_(1.0)
        gc.feature.bias.zero_()
        gc.gating.weight.zero_()
        gc.gating.bias.zero_()
        errs.append(abs(float(gc(f64(2.0).reshape(1, 1, 1, 1))) - 1.0))
        errs.append(abs(float(gc(f64(-0.5).reshape(1, 1, 1, 1))) - (-0.05)))

    # stitching hand example: one pixel per mask case
    img = np.arange(12, dtype=np.float32).reshape(2, 2, 3) / 12.0
    ren = 1.0 - img
    seg = np.array([[L.HEAD, L.TORSO_SKIN], [L.UPPER_CLOTHES, L.LOWER_CLOTHES]])
    j = tx.stitch(img, ren, tx.masks_from_segmentation(seg))
    errs.append(float(np.abs(j[0, 0] - img[0, 0]).max()))
    errs.append(float(np.abs(j[0, 1] - ren[0, 1]).max()))
    errs.append(float(np.abs(j[1, 0]).max()))
    errs.append(float(np.abs(j[1, 1] - 0.5).max()))

    # boundary refinement hand examples: fill-in and lowest-id tie break
    filled = tx.refine_boundary(
        np.array([[5, 5, 5], [5, 0, 5], [5, 5, 5]]), foreground=np.ones((3, 3), bool)
    )
    errs.append(float(filled[1, 1] != 5))
    tie = tx.refine_boundary(
        np.array([[1, 0, 2]]), foreground=np.ones((1, 3), bool)
    )
    errs.append(float(tie[0, 1] != 1))

    # condition embedding: averaged, symmetric two-branch encoding
    enc = seeded_init(tx.ConditionEncoder(8, 1), 0)
    rng = np.random.default_rng(0)
    a = rng.random((8, 8, 3)).astype(np.float32)
    b = rng.random((8, 8, 3)).astype(np.float32)
    with torch.no_grad():
        got = tx.encode_condition(a, b, enc)
        want = (enc.branch(tx.image_to_tensor(a)) + enc.branch(tx.image_to_tensor(b))) / 2
    errs.append(float((got - want).abs().max()))
    hand_err = max(errs)

    # fuzz: 1000 random cases per operation against direct oracles
    fuzz_err = 0.0
    for t in (1, 2, 3):
        n = 334
        x = torch.from_numpy(rng.standard_normal(n))
        e = torch.from_numpy(rng.standard_normal(n))
        z = torch.from_numpy(rng.standard_normal(n))
        beta = float(sch.beta_at(t))
        ab = float(sch.alpha_bar_at(t))
        want = np.sqrt(1 - beta) * x.numpy() + np.sqrt(beta) * e.numpy()
        fuzz_err = max(fuzz_err, float(np.abs(dif.forward_step(x, t, e, sch).numpy() - want).max()))
        want = np.sqrt(ab) * x.numpy() + np.sqrt(1 - ab) * e.numpy()
        fuzz_err = max(fuzz_err, float(np.abs(dif.q_sample(x, t, e, sch).numpy() - want).max()))
        sigma = math.sqrt(beta) if t > 1 else 0.0
        want = (x.numpy() - (beta / (1 - ab)) * e.numpy()) / math.sqrt(1 - beta) + sigma * z.numpy()
        fuzz_err = max(fuzz_err, float(np.abs(dif.reverse_step(x, t, e, z, sch).numpy() - want).max()))

    for i in range(10):  # 10 random 1x1 gated convs x 100 elements
        gc = seeded_init(GatedConv2d(1, 1, kernel_size=1, padding=0), i).double()
        x = torch.from_numpy(rng.standard_normal((1, 1, 10, 10)))
        with torch.no_grad():
            got = gc(x).numpy()
        wf = float(gc.feature.weight.detach())
        bf = float(gc.feature.bias.detach())
        wg = float(gc.gating.weight.detach())
        bg = float(gc.gating.bias.detach())
        pre = wf * x.numpy() + bf
        feat = np.where(pre >= 0, pre, 0.2 * pre)
        gate = 1.0 / (1.0 + np.exp(-(wg * x.numpy() + bg)))
        fuzz_err = max(fuzz_err, float(np.abs(got - feat * gate).max()))

    img = rng.random((20, 50, 3)).astype(np.float32)
    ren = rng.random((20, 50, 3)).astype(np.float32)
    seg = rng.integers(0, 9, (20, 50))
    j = tx.stitch(img, ren, tx.masks_from_segmentation(seg))
    for y in range(20):  # 1000 pixels, direct per-pixel oracle
        for x in range(50):
            if seg[y, x] == L.HEAD:
                want = img[y, x]
            elif seg[y, x] == L.UPPER_CLOTHES:
                want = np.zeros(3, np.float32)
            elif seg[y, x] == L.LOWER_CLOTHES:
                want = np.full(3, 0.5, np.float32)
            else:
                want = ren[y, x]
            fuzz_err = max(fuzz_err, float(np.abs(j[y, x] - want).max()))

    for i in range(1000):  # 1000 random grids vs the naive relabeler
        labels = rng.integers(0, 9, (5, 5))
        labels[rng.random((5, 5)) < 0.3] = 0
        fg = np.ones((5, 5), bool)
        got = tx.refine_boundary(labels, foreground=fg)
        if not np.array_equal(got, _naive_mode_refine(labels, 3)):
            fuzz_err = max(fuzz_err, 1.0)

    with torch.no_grad():
        for i in range(1000):  # averaged-branch property on random pairs
            a = rng.random((8, 8, 3)).astype(np.float32)
            b = rng.random((8, 8, 3)).astype(np.float32)
            got = tx.encode_condition(a, b, enc)
            want = (enc.branch(tx.image_to_tensor(a)) + enc.branch(tx.image_to_tensor(b))) / 2
            fuzz_err = max(fuzz_err, float((got - want).abs().max()))
            fuzz_err = max(fuzz_err, float((got - tx.encode_condition(b, a, enc)).abs().max()))

    dt = time.perf_counter() - t0
    ok = hand_err <= 1e-6 and fuzz_err <= 1e-6 and dt < 60
    _report(
        "criterion 1 equation oracles",
        ok,
        f"hand-example err {hand_err:.2e}, fuzz err {fuzz_err:.2e} (tol 1e-6), {dt:.1f}s (< 60s)",
    )


# ---------------------------------------------------------------------------
# 2. One-step inversion: with T=1 and a perfect denoiser the sampler
#    inverts the noising step exactly.


def test_criterion_2_one_step_inversion():
    t0 = time.perf_counter()
    sch = dif.make_schedule(1, 0.3, 0.3, "linear")
    gen = torch.Generator().manual_seed(0)
    x0 = torch.randn(2, 3, 8, 6, generator=gen, dtype=torch.float64)
    ab = float(sch.alpha_bar_at(1))

    def oracle(x, t, cond):
        return (x - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab)

    out = dif.sample_loop(oracle, None, x0.shape, sch, seed=7, dtype=torch.float64)
    err = float((out - x0).abs().max())

    # explicit roundtrip with the true noise
    eps = torch.randn(x0.shape, generator=gen, dtype=torch.float64)
    x1 = dif.q_sample(x0, 1, eps, sch)
    back = dif.reverse_step(x1, 1, math.sqrt(1.0 - ab) * eps, torch.zeros_like(x1), sch)
    err = max(err, float((back - x0).abs().max()))
    dt = time.perf_counter() - t0
    _report(
        "criterion 2 one-step inversion",
        err <= 1e-6,
        f"max abs err {err:.2e} (tol 1e-6), {dt:.1f}s",
    )


# ---------------------------------------------------------------------------
# 3. Gradient checks against central finite differences.


def _grad_check(params, loss_fn, h=1e-5):
    """Max relative error between autograd and central differences."""
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.detach().reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.numel()):
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + h
                up = float(loss_fn())
                flat[i] = orig - h
                down = float(loss_fn())
                flat[i] = orig
            num = (up - down) / (2 * h)
            auto = float(gflat[i])
            worst = max(worst, abs(num - auto) / max(abs(num), abs(auto), 1e-6))
    return worst


def test_criterion_3_gradient_checks():
    t0 = time.perf_counter()
    torch.manual_seed(0)
    worst = 0.0

    # denoising loss gradients through a tiny linear denoiser
    class TinyDenoiser(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.conv = torch.nn.Conv2d(2, 2, 1)

        def forward(self, x, t, cond):
            return self.conv(x)

    sch = dif.make_schedule(3, 0.1, 0.3, "linear")
    den = TinyDenoiser().double()
    x0 = torch.randn(1, 2, 4, 3, dtype=torch.float64)
    eps = torch.randn(1, 2, 4, 3, dtype=torch.float64)
    mask = (torch.rand(1, 2, 4, 3) > 0.4).double()
    worst = max(
        worst,
        _grad_check(
            list(den.parameters()),
            lambda: dif.ddpm_loss(den, x0, 2, eps, sch, mask=mask),
        ),
    )

    # segmentation loss gradients w.r.t. logits
    logits = torch.randn(4, 4, 9, dtype=torch.float64, requires_grad=True)
    target = np.random.default_rng(0).integers(0, 9, (4, 4))
    target[0, 0] = L.VOID
    worst = max(worst, _grad_check([logits], lambda: scm_loss(logits, target)))

    # gated convolution gradients w.r.t. all parameters and the input
    gc = GatedConv2d(2, 2, kernel_size=3).double()
    xin = torch.randn(1, 2, 4, 4, dtype=torch.float64, requires_grad=True)
    w = torch.randn(1, 2, 4, 4, dtype=torch.float64)
    worst = max(
        worst,
        _grad_check(list(gc.parameters()) + [xin], lambda: (gc(xin) * w).sum()),
    )

    # residual attention block gradients
    rat = ResidualAttentionBlock(6).double()
    tokens = torch.randn(1, 5, 6, dtype=torch.float64, requires_grad=True)
    wt = torch.randn(1, 5, 6, dtype=torch.float64)
    worst = max(
        worst,
        _grad_check(list(rat.parameters()) + [tokens], lambda: (rat(tokens) * wt).sum()),
    )

    dt = time.perf_counter() - t0
    ok = worst <= 1e-4 and dt < 120
    _report(
        "criterion 3 gradient checks",
        ok,
        f"max relative err {worst:.2e} (tol 1e-4), {dt:.1f}s (< 120s)",
    )


# ---------------------------------------------------------------------------
# 4. Shape-stage toy training: identity and garment-swap IoU held-out.


def test_criterion_4_shape_training(scm_result, test_samples, dataset_meta):
    model = scm_result["model"]
    ious = []
    for person, up, low in test_samples:
        for role, cloth in (("upper", up), ("lower", low)):
            pred = predict_segmentation(
                model, person.seg, person.pose, GarmentCondition(cloth, role)
            )
            ious.append(mean_iou(pred, person.seg))
    identity = float(np.mean(ious))

    specs = dataset_meta["samples"]
    swap_ious = []
    for i in range(len(test_samples)):
        person, _, _ = test_samples[i]
        donor, dup, _ = test_samples[(i + 1) % len(test_samples)]
        dspec = synth.spec_from_dict(specs[donor.id]["upper"])
        lspec = synth.spec_from_dict(specs[person.id]["lower"])
        gt = synth.gen_person(
            specs[person.id]["seed"], person.seg.shape[0], person.seg.shape[1], dspec, lspec
        )
        pred = predict_segmentation(
            model, person.seg, person.pose, GarmentCondition(dup, "upper")
        )
        pred = tx.refine_boundary(pred)
        swap_ious.append(binary_iou(pred == L.UPPER_CLOTHES, gt.seg == L.UPPER_CLOTHES))
    swap = float(np.mean(swap_ious))
    elapsed = scm_result["elapsed"]
    ok = identity >= 0.90 and swap >= 0.80 and elapsed <= 900
    _report(
        "criterion 4 shape-stage training",
        ok,
        f"identity mIoU {identity:.3f} (>= 0.90), swap IoU {swap:.3f} (>= 0.80), "
        f"train {elapsed / 60:.1f} min (<= 15)",
    )


# ---------------------------------------------------------------------------
# 5. Texture-stage toy training: reconstruction, head preservation and
#    texture-conditioning accuracy.


def test_criterion_5_texture_training(
    codec_result, tgm_result, test_samples, texture_classifier
):
    t0 = time.perf_counter()
    codec = codec_result["codec"]
    denoiser = tgm_result["model"]
    enc = tgm_result["cond_encoder"]
    schedule = tgm_result["schedule"]

    ssims, head_errs = [], []
    for i, (person, up, low) in enumerate(test_samples[:16]):
        j_s = tx.build_stitched_input(person.image, person.seg)
        cond = tx.encode_condition(up, low, enc)
        y = tx.generate(
            denoiser, codec, j_s, cond, schedule, seed=100 + i,
            seg=person.seg, keep_image=person.image,
        )
        ssims.append(metrics.ssim(y, person.image))
        head = person.seg == L.HEAD
        head_errs.append(float(np.abs(y - person.image)[head].mean()))
    recon = float(np.mean(ssims))
    head_err = float(np.mean(head_errs))
    head_budget = float(codec.recon_tol) + 0.05

    rng = np.random.default_rng(7)
    n_seeds = 50
    hits = {p: 0 for p in synth.PATTERNS}
    for ci, pattern in enumerate(synth.PATTERNS):
        for k in range(n_seeds):
            spec = synth.random_garment_spec(rng, "upper")
            while spec.pattern != pattern:
                spec = synth.random_garment_spec(rng, "upper")
            flat = synth.gen_garment(spec, 64, 48, seed=k)
            person, _, low = test_samples[k % len(test_samples)]
            j_s = tx.build_stitched_input(person.image, person.seg)
            cond = tx.encode_condition(flat, low, enc)
            y = tx.generate(
                denoiser, codec, j_s, cond, schedule, seed=500 + ci * n_seeds + k,
                seg=person.seg, gen_labels=(L.UPPER_CLOTHES,), keep_image=person.image,
            )
            pred = metrics.classify_texture(
                texture_classifier, y, person.seg == L.UPPER_CLOTHES
            )
            hits[pattern] += int(pred == ci)
    acc = sum(hits.values()) / (n_seeds * len(synth.PATTERNS))
    per_class = ", ".join(f"{p} {c}/{n_seeds}" for p, c in hits.items())

    elapsed = codec_result["elapsed"] + tgm_result["elapsed"] + (time.perf_counter() - t0)
    ok = recon >= 0.75 and head_err <= head_budget and acc >= 0.80 and elapsed <= 2700
    _report(
        "criterion 5 texture-stage training",
        ok,
        f"recon SSIM {recon:.3f} (>= 0.75), head err {head_err:.4f} "
        f"(<= {head_budget:.4f}), texture acc {acc:.2f} (>= 0.80; {per_class}), "
        f"total {elapsed / 60:.1f} min (<= 45)",
    )


# ---------------------------------------------------------------------------
# 6. Decoupling invariants.


def test_criterion_6_decoupling(micro_env):
    from tryondiff.config import load_config

    cfg = load_config(micro_env["config"])
    models = pipeline.load_models(cfg)
    samples = pipeline.load_synth_samples(cfg.dataset_dir(32), "test")
    person, up, low = samples[0]
    _, up2, _ = samples[1]

    # target segmentation is bitwise invariant to the texture condition
    shape_cond = GarmentCondition(up, "upper")
    _, seg_a = pipeline.edit(models, person, shape_cond, GarmentCondition(up, "upper"), seed=0)
    _, seg_b = pipeline.edit(models, person, shape_cond, GarmentCondition(up2, "upper"), seed=0)
    seg_invariant = np.array_equal(seg_a, seg_b)

    # condition embedding is bitwise invariant to the shape condition
    cond_a = tx.encode_condition(up, low, models.cond_encoder)
    pipeline.compute_target_segmentation(models, person, GarmentCondition(up2, "upper"))
    cond_b = tx.encode_condition(up, low, models.cond_encoder)
    cond_invariant = torch.equal(cond_a, cond_b)

    # mask shape control: non-generated latents come back bit-exact
    sch = dif.make_schedule(4, 1e-4, 0.05, "linear")
    gen = torch.Generator().manual_seed(3)
    known = torch.randn(1, 4, 8, 6, generator=gen)
    keep = (torch.rand(1, 4, 8, 6, generator=gen) > 0.5).float()
    out = dif.sample_loop(
        lambda x, t, c: torch.tanh(x), None, known.shape, sch, seed=11,
        known=known, known_mask=keep,
    )
    latents_exact = torch.equal(out[keep.bool()], known[keep.bool()])

    ok = seg_invariant and cond_invariant and latents_exact
    _report(
        "criterion 6 decoupling invariants",
        ok,
        f"segmentation invariant {seg_invariant}, condition invariant {cond_invariant}, "
        f"preserved latents bit-exact {latents_exact}",
    )


# ---------------------------------------------------------------------------
# 7. Metrics self-tests.


def test_criterion_7_metrics_self_tests(texture_classifier):
    rng = np.random.default_rng(0)
    img = rng.random((32, 32, 3)).astype(np.float32)
    ssim_err = abs(metrics.ssim(img, img) - 1.0)

    n = 5
    const = np.tile(np.full((1, n), 1.0 / n), (10, 1))
    is_const, _ = metrics.inception_score_from_probs(const, splits=2)
    onehot = np.tile(np.eye(n), (8, 1))
    is_onehot, _ = metrics.inception_score_from_probs(onehot, splits=2)
    is_err = max(abs(is_const - 1.0), abs(is_onehot - n))

    dists = []
    for level in (0.02, 0.05, 0.1, 0.2, 0.4):
        noisy = np.clip(img + rng.normal(0, level, img.shape), 0, 1).astype(np.float32)
        dists.append(metrics.perceptual_distance(img, noisy, texture_classifier))
    ladder_ok = all(b > a for a, b in zip(dists, dists[1:]))

    ok = ssim_err <= 1e-9 and is_err <= 1e-9 and ladder_ok
    _report(
        "criterion 7 metrics self-tests",
        ok,
        f"ssim(x,x) err {ssim_err:.1e}, IS err {is_err:.1e} (tol 1e-9), "
        f"noise ladder strictly increasing {ladder_ok}",
    )


# ---------------------------------------------------------------------------
# 8. Determinism sweep: every CLI subcommand twice, byte-identical artifacts.


def _tree_hashes(base: Path) -> dict:
    out = {}
    for p in sorted(base.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(base))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def test_criterion_8_determinism_sweep(tmp_path_factory):
    t0 = time.perf_counter()
    base = tmp_path_factory.mktemp("determinism")
    cfg_path = base / "pipeline.ini"
    cfg_path.write_text(MICRO_INI.format(root=base / "data", out=base / "out"))
    results = base / "out" / "results"
    cmds = [
        ["gen-data", "--config", str(cfg_path)],
        ["train", "--config", str(cfg_path), "--stage", "all"],
        ["try-on", "--config", str(cfg_path), "--person", "test_00000",
         "--garment", "test_00001", "--role", "upper"],
        ["edit", "--config", str(cfg_path), "--person", "test_00000",
         "--shape-garment", "test_00001", "--texture-garment", "test_00000",
         "--role", "upper"],
        ["outfit", "--config", str(cfg_path), "--person", "test_00000",
         "--top", "test_00001", "--bottom", "test_00000"],
        ["eval", "--config", str(cfg_path), "--pred", str(results),
         "--ref", str(results), "--scales", "1"],
    ]

    snapshots = []
    for _ in range(2):
        for cmd in cmds:
            assert cli.main(cmd) == 0, f"command failed: {cmd[0]}"
        snapshots.append(_tree_hashes(base / "data") | _tree_hashes(base / "out"))
    identical = snapshots[0] == snapshots[1]
    dt = time.perf_counter() - t0
    ok = identical and dt <= 300
    _report(
        "criterion 8 determinism sweep",
        ok,
        f"{len(snapshots[0])} artifacts byte-identical across reruns: {identical}, "
        f"{dt / 60:.1f} min (<= 5)",
    )
