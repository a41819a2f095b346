import time

import numpy as np
import pytest
import torch

from eegvis.data import SyntheticSpec, make_synthetic
from eegvis.runtime import seed_everything

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(autouse=True)
def _seeded():
    seed_everything(0)
    yield


@pytest.fixture(scope="session")
def small_manifest(tmp_path_factory):
    """3 classes, 14 x 32, 100 records per class, well separated."""
    spec = SyntheticSpec(num_classes=3, channels=14, timesteps=32, records_per_class=100,
                         class_separation=5.0, noise_scale=0.1, seed=7)
    return make_synthetic(spec, tmp_path_factory.mktemp("small") / "data")


@pytest.fixture(scope="session")
def paired_manifest(tmp_path_factory):
    """5 classes with per-record rendered 32 x 32 images coupled to the EEG."""
    spec = SyntheticSpec(num_classes=5, records_per_class=200, class_separation=2.0, noise_scale=0.1,
                         attribute_scale=2.0, image_size=32, seed=3)
    return make_synthetic(spec, tmp_path_factory.mktemp("paired") / "data")


@pytest.fixture(scope="session")
def gan_run(paired_manifest):
    """One 2000-step EEG-conditioned GAN run shared by the GAN tests and the acceptance suite."""
    from eegvis.encoders import EncoderConfig, build_encoder
    from eegvis.gan import GanConfig, conditioning_data, train_gan
    from eegvis.metric import TrainConfig, TripletConfig, train_triplet

    seed_everything(0)
    start = time.perf_counter()
    encoder, _ = train_triplet(build_encoder(EncoderConfig(kind="lstm"), seed=0), paired_manifest,
                               TripletConfig(), TrainConfig(epochs=10, seed=0))
    config = GanConfig(steps=2000, eval_every=250, log_every=4, seed=0)
    G, D, history = train_gan(paired_manifest, encoder, config)
    return {"generator": G, "history": history, "config": config, "encoder": encoder,
            "val_data": conditioning_data(paired_manifest, config, encoder, "val"),
            "seconds": time.perf_counter() - start}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


torch.set_num_threads(1)
