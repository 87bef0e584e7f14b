"""Metric self-tests: SSIM, Inception Score, perceptual distance, report."""

import json

import numpy as np
import pytest
import torch

from tryondiff import metrics, synth


def _img(seed, h=32, w=32):
    return np.random.default_rng(seed).random((h, w, 3)).astype(np.float32)


class TestSSIM:
    def test_self_similarity_is_one(self):
        x = _img(0)
        assert metrics.ssim(x, x) == pytest.approx(1.0, abs=1e-9)
        assert metrics.ssim(x, x, scales=2) == pytest.approx(1.0, abs=1e-9)

    def test_constant_images_oracle(self):
        # means 0 and 1, zero variance: SSIM = C1 / (1 + C1)
        a = np.zeros((16, 16, 3), np.float32)
        b = np.ones((16, 16, 3), np.float32)
        want = metrics.C1 / (1.0 + metrics.C1)
        assert metrics.ssim(a, b) == pytest.approx(want, abs=1e-9)

    def test_symmetry(self):
        a, b = _img(1), _img(2)
        assert metrics.ssim(a, b) == pytest.approx(metrics.ssim(b, a), abs=1e-12)

    def test_noise_decreases_similarity(self):
        rng = np.random.default_rng(3)
        base = _img(4, 64, 64)
        prev = 1.0
        for scale in (0.05, 0.15, 0.4):
            noisy = np.clip(base + rng.normal(0, scale, base.shape), 0, 1)
            val = metrics.ssim(base, noisy.astype(np.float32))
            assert val < prev
            prev = val

    def test_multiscale_in_unit_range(self):
        a, b = _img(5, 64, 64), _img(6, 64, 64)
        v = metrics.ssim(a, b, scales=3)
        assert 0.0 <= v <= 1.0

    def test_bad_inputs(self):
        a = _img(7)
        with pytest.raises(metrics.MetricsError):
            metrics.ssim(a, a[:16])
        with pytest.raises(metrics.MetricsError):
            metrics.ssim(a, a, window=4)
        with pytest.raises(metrics.MetricsError):
            metrics.ssim(a, a, scales=0)
        with pytest.raises(metrics.MetricsError):
            metrics.ssim(a, a, window=7, scales=5)  # 32px too small


class TestInceptionScore:
    def test_constant_predictions_give_one(self):
        probs = np.tile([0.2, 0.5, 0.3], (40, 1))
        mean, std = metrics.inception_score_from_probs(probs, splits=2)
        assert abs(mean - 1.0) < 1e-9
        assert std < 1e-9

    def test_uniform_one_hot_gives_n(self):
        for n in (2, 3, 5):
            eye = np.eye(n)
            # each split sees every class equally often
            probs = np.tile(eye, (8, 1))
            mean, _ = metrics.inception_score_from_probs(probs, splits=2)
            assert abs(mean - n) < 1e-9

    def test_score_bounded_by_classes(self):
        rng = np.random.default_rng(0)
        raw = rng.random((50, 4))
        probs = raw / raw.sum(axis=1, keepdims=True)
        mean, _ = metrics.inception_score_from_probs(probs, splits=2)
        assert 1.0 - 1e-9 <= mean <= 4.0 + 1e-9

    def test_too_few_rows_rejected(self):
        with pytest.raises(metrics.MetricsError):
            metrics.inception_score_from_probs(np.eye(3)[:1], splits=2)

    def test_classifier_path(self):
        torch.manual_seed(0)
        clf = metrics.TextureClassifier()
        imgs = [_img(i) for i in range(4)]
        mean, std = metrics.inception_score(imgs, clf, splits=2)
        assert np.isfinite(mean) and np.isfinite(std)

    def test_predict_probs_duck_typing(self):
        class Stub:
            def predict_probs(self, images):
                return np.tile([1.0, 0.0], (len(images), 1))

        mean, _ = metrics.inception_score([_img(0)] * 6, Stub(), splits=2)
        assert abs(mean - 1.0) < 1e-9


class TestPerceptualDistance:
    def test_self_distance_zero(self):
        torch.manual_seed(1)
        net = metrics.TextureClassifier()
        x = _img(8)
        assert metrics.perceptual_distance(x, x, net) == pytest.approx(0.0, abs=1e-12)

    def test_noise_ladder_strictly_increasing(self):
        torch.manual_seed(2)
        net = metrics.TextureClassifier()
        rng = np.random.default_rng(9)
        base = _img(10, 64, 64)
        vals = []
        for scale in (0.02, 0.08, 0.2, 0.5):
            noisy = np.clip(
                base + rng.normal(0, scale, base.shape), 0, 1
            ).astype(np.float32)
            vals.append(metrics.perceptual_distance(base, noisy, net))
        assert all(a < b for a, b in zip(vals, vals[1:]))


class TestTextureClassifier:
    def test_trains_and_separates_patterns(self, texture_classifier):
        clf = texture_classifier
        rng = np.random.default_rng(11)
        correct = 0
        total = 0
        for _ in range(30):
            spec = synth.random_garment_spec(rng, "upper")
            img = synth.texture_image(spec, 32, 32)
            correct += metrics.classify_texture(clf, img) == spec.texture_class
            total += 1
        assert correct / total >= 0.8

    def test_classify_with_mask_crop(self):
        clf = metrics.train_texture_classifier(seed=0, n_per_class=20, epochs=2)
        img = np.ones((32, 32, 3), np.float32)
        img[8:24, 8:24] = synth.texture_image(
            synth.GarmentSpec(role="upper", pattern="solid", color_a=(0.85, 0.15, 0.15)),
            16, 16,
        )
        mask = np.zeros((32, 32), bool)
        mask[8:24, 8:24] = True
        cls = metrics.classify_texture(clf, img, mask)
        assert cls in (0, 1, 2)

    def test_empty_mask_rejected(self):
        clf = metrics.TextureClassifier()
        with pytest.raises(metrics.MetricsError):
            metrics.classify_texture(clf, _img(0), np.zeros((32, 32), bool))


class TestEvaluate:
    def _write_dir(self, path, names, seed0):
        from PIL import Image

        path.mkdir(parents=True, exist_ok=True)
        for i, name in enumerate(names):
            arr = (np.random.default_rng(seed0 + i).random((32, 32, 3)) * 255).astype(
                np.uint8
            )
            Image.fromarray(arr).save(path / name)

    def test_report_structure_and_files(self, tmp_path):
        names = [f"s{i}.png" for i in range(4)]
        self._write_dir(tmp_path / "pred", names, 0)
        self._write_dir(tmp_path / "ref", names, 100)
        torch.manual_seed(0)
        clf = metrics.TextureClassifier()
        report = metrics.evaluate(
            tmp_path / "pred",
            tmp_path / "ref",
            {"classifier": clf, "out": str(tmp_path / "eval"), "scales": 1},
        )
        for m in ("ssim", "perceptual_distance", "inception_score"):
            assert {"mean", "std", "per_image"} <= set(report["metrics"][m])
        assert set(report["metrics"]["ssim"]["per_image"]) == set(names)
        saved = json.loads((tmp_path / "eval" / "report.json").read_text())
        assert saved["metrics"]["ssim"]["mean"] == report["metrics"]["ssim"]["mean"]
        assert (tmp_path / "eval" / "report.txt").exists()

    def test_identical_dirs_ssim_one(self, tmp_path):
        names = ["a.png", "b.png"]
        self._write_dir(tmp_path / "pred", names, 5)
        self._write_dir(tmp_path / "ref", names, 5)
        torch.manual_seed(0)
        report = metrics.evaluate(
            tmp_path / "pred",
            tmp_path / "ref",
            {"classifier": metrics.TextureClassifier(), "scales": 1},
        )
        assert report["metrics"]["ssim"]["mean"] == pytest.approx(1.0, abs=1e-9)
        assert report["metrics"]["perceptual_distance"]["mean"] == pytest.approx(
            0.0, abs=1e-12
        )

    def test_name_mismatch_lists_files(self, tmp_path):
        self._write_dir(tmp_path / "pred", ["a.png", "b.png"], 0)
        self._write_dir(tmp_path / "ref", ["a.png", "c.png"], 0)
        with pytest.raises(metrics.MetricsError) as e:
            metrics.evaluate(tmp_path / "pred", tmp_path / "ref", {})
        assert "b.png" in str(e.value) and "c.png" in str(e.value)

    def test_empty_dir_rejected(self, tmp_path):
        (tmp_path / "pred").mkdir()
        self._write_dir(tmp_path / "ref", ["a.png"], 0)
        with pytest.raises(metrics.MetricsError):
            metrics.evaluate(tmp_path / "pred", tmp_path / "ref", {})
