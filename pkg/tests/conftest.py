import numpy as np
import pytest
import torch

from scoreforge import dataprep, synthetic
from scoreforge.dataprep import Domain, ImageCrop

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def write_crop_dir(directory, n, size, domain, seed, per_source=4):
    crops = [
        ImageCrop(px, Domain(domain), f"src{i // per_source:03d}", (i % per_source) * size)
        for i, px in enumerate(synthetic.crop_stack(n, size, domain, seed))
    ]
    dataprep.save_crops(crops, directory)
    manifest = dataprep.build_manifest(directory, domain)
    manifest.save(dataprep.manifest_path(directory, domain))
    return manifest


@pytest.fixture(scope="session")
def hw64(tmp_path_factory):
    """200 synthetic handwritten 64x64 crops."""
    return write_crop_dir(tmp_path_factory.mktemp("hw64"), 200, 64, "handwritten", seed=0)


@pytest.fixture(scope="session")
def pair64(tmp_path_factory):
    """50 printed + 50 handwritten 64x64 crops."""
    p = write_crop_dir(tmp_path_factory.mktemp("p64"), 50, 64, "printed", seed=1)
    h = write_crop_dir(tmp_path_factory.mktemp("h64"), 50, 64, "handwritten", seed=2)
    return p, h


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
