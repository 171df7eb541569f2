import numpy as np
import pytest

from aerialsr.imaging import ImageBuffer


def gaussian_scene(h=64, w=64, seed=0, n=6, sigma=6.0):
    """Smooth RGB test image: a few wide Gaussian bumps on a flat base."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.full((h, w, 3), 0.3)
    for _ in range(n):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        amp = rng.uniform(0.1, 0.4, size=3)
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        img += bump[:, :, None] * amp
    return ImageBuffer.from_float(np.clip(img, 0, 1))


def disk_patch(size, centers, radius, value=0.9, background=0.1, channels=3):
    yy, xx = np.mgrid[0:size, 0:size]
    img = np.full((size, size), background)
    for cx, cy in centers:
        img[(xx - cx) ** 2 + (yy - cy) ** 2 <= radius ** 2] = value
    return ImageBuffer.from_float(np.repeat(img[:, :, None], channels, axis=2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Six 256x256 SAVMAP-like frames written through the normal dataset path."""
    from aerialsr.synthgen import preset_configs, write_dataset

    root = tmp_path_factory.mktemp("small")
    configs = preset_configs("savmap", 6, seed=21, frame_w=256, frame_h=256)
    return write_dataset(root, configs)


def base_config(manifest, **kw):
    cfg = {"manifest": str(manifest), "tile_size": 128, "blob": {"threshold": 0.5, "min_area": 20}}
    cfg.update(kw)
    return cfg


ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
