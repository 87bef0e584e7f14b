"""Shared fixtures. Expensive trained models are session-scoped so the
unit suites and the acceptance suite share one training run each."""

import pytest

from tryondiff import metrics, pipeline, synth

# Toy-scale training geometry shared by the trainable suites.
H, W = 64, 48
TRAIN_COUNT, TEST_COUNT = 200, 32
DATA_SEED = 0


@pytest.fixture(scope="session")
def dataset_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("dataset") / "r64"
    synth.write_dataset(
        root, DATA_SEED, {"train": TRAIN_COUNT, "test": TEST_COUNT}, H, W
    )
    return root


@pytest.fixture(scope="session")
def train_samples(dataset_root):
    return pipeline.load_synth_samples(dataset_root, "train")


@pytest.fixture(scope="session")
def test_samples(dataset_root):
    return pipeline.load_synth_samples(dataset_root, "test")


@pytest.fixture(scope="session")
def dataset_meta(dataset_root):
    return synth.load_meta(dataset_root)


MICRO_INI = """\
[data]
root = {root}
train_count = 6
test_count = 2

[diffusion]
T = 4
beta_start = 0.0001
beta_end = 0.05

[scm]
epochs = 2
batch_size = 4
widths = 8 12 16

[tgm]
codec_epochs = 2
codec_z_ch = 4
codec_width = 8
steps = 6
pretrain_steps = 4
batch_size = 4
d_cond = 8
n_rat = 1
widths = 8 16

[train]
seed = 0
resolutions = 32
out_dir = {out}
"""


@pytest.fixture(scope="session")
def micro_env(tmp_path_factory):
    """A tiny but complete pipeline environment: config file, generated
    dataset and trained checkpoints for every stage."""
    from tryondiff import cli

    base = tmp_path_factory.mktemp("micro")
    cfg_path = base / "pipeline.ini"
    cfg_path.write_text(
        MICRO_INI.format(root=base / "data", out=base / "out")
    )
    assert cli.main(["gen-data", "--config", str(cfg_path)]) == 0
    assert cli.main(["train", "--config", str(cfg_path), "--stage", "all"]) == 0
    return {"config": cfg_path, "base": base}


@pytest.fixture(scope="session")
def texture_classifier():
    return metrics.train_texture_classifier(seed=0)


@pytest.fixture(scope="session")
def scm_result(train_samples):
    import time

    from tryondiff.shape_control import SCMTrainConfig, train_scm

    t0 = time.perf_counter()
    result = train_scm(train_samples, SCMTrainConfig(epochs=20, seed=0))
    result["elapsed"] = time.perf_counter() - t0
    return result


@pytest.fixture(scope="session")
def codec_result(train_samples):
    import time

    from tryondiff.texture import CodecTrainConfig, build_stitched_input, train_codec

    images = [p.image for p, _, _ in train_samples]
    images += [up for _, up, _ in train_samples]
    images += [low for _, _, low in train_samples]
    images += [build_stitched_input(p.image, p.seg) for p, _, _ in train_samples]
    t0 = time.perf_counter()
    result = train_codec(images, CodecTrainConfig(seed=0))
    result["elapsed"] = time.perf_counter() - t0
    return result


@pytest.fixture(scope="session")
def tgm_result(train_samples, codec_result):
    import time

    from tryondiff.texture import TGMTrainConfig, train_tgm

    t0 = time.perf_counter()
    result = train_tgm(train_samples, codec_result["codec"], TGMTrainConfig(seed=0))
    result["elapsed"] = time.perf_counter() - t0
    return result
