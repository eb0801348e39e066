import numpy as np
import pytest

from predvision.hierarchy import HierarchySpec, build


def natural_images():
    from skimage import data

    names = ("astronaut", "coffee", "chelsea", "rocket", "immunohistochemistry")
    return [np.asarray(getattr(data, n)(), dtype=np.uint8) for n in names]


def natural_patches(n, size=10, seed=0):
    """Centered ``size x size`` RGB patches cut at random from stock photographs."""
    rng = np.random.default_rng(seed)
    images = natural_images()
    out = np.empty((n, size * size * 3))
    for i in range(n):
        img = images[rng.integers(len(images))]
        y = rng.integers(0, img.shape[0] - size)
        x = rng.integers(0, img.shape[1] - size)
        out[i] = img[y:y + size, x:x + size].reshape(-1).astype(np.float64) - 127.5
    return out


@pytest.fixture(scope="session")
def patches():
    return natural_patches(1000)


def small_spec(**options):
    kw = dict(field_size=16, tile_size=8, K=16, N=3, T=25)
    kw.update(options)
    return HierarchySpec.default(**kw)


@pytest.fixture
def small_model():
    return build(small_spec(), seed=0)


def random_frames(n, size, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8) for _ in range(n)]


# -- acceptance summary --------------------------------------------------------

ACCEPTANCE_LINES = []


def record_criterion(number, name, ok, detail):
    line = f"criterion {number:>2} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
