import os
import time

import numpy as np
import pytest

from vjcascade.boost import StrongClassifier, WeakClassifier
from vjcascade.cascade import Cascade, CascadeTrainConfig, Stage, train_cascade
from vjcascade.dataset import SynthSpec, synth_dataset
from vjcascade.haar import enumerate_features

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")

# lines printed at the end of the run by pytest_terminal_summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def pool24():
    return enumerate_features(24, 24)


def random_stage(rng, pool, n_weak, values_hint=None):
    """Stage with random pool features, thresholds and votes.

    Thresholds are drawn on the scale of normalised feature values so each
    stump fires on a fair share of windows; the stage threshold is a random
    fraction of the vote total.
    """
    weak = []
    for _ in range(n_weak):
        f = pool[int(rng.integers(len(pool)))]
        scale = 0.5 * np.sqrt(f.total_area())
        weak.append(WeakClassifier(f, float(rng.normal(0.0, scale)), int(rng.choice([-1, 1])),
                                   float(rng.uniform(0.1, 2.0))))
    total = sum(w.alpha for w in weak)
    return Stage(StrongClassifier(tuple(weak), float(rng.uniform(0.2, 0.7) * total)))


def random_cascade(rng, pool, n_stages=3, n_weak=(1, 5), base=24):
    stages = tuple(random_stage(rng, pool, int(rng.integers(n_weak[0], n_weak[1] + 1)))
                   for _ in range(n_stages))
    return Cascade(base, base, stages)


def window_set(rng, n, size=24):
    """Noise, smooth blobs and gradients, so decisions spread across stages."""
    out = []
    for i in range(n):
        kind = i % 3
        if kind == 0:
            arr = rng.integers(0, 256, size=(size, size))
        elif kind == 1:
            coarse = rng.integers(0, 256, size=(size // 4, size // 4))
            arr = np.kron(coarse, np.ones((4, 4), dtype=np.int64)) + rng.integers(-8, 9, (size, size))
        else:
            yy, xx = np.mgrid[0:size, 0:size]
            arr = 128 + rng.uniform(-5, 5) * (xx - size / 2) + rng.uniform(-5, 5) * (yy - size / 2)
            arr = arr + rng.normal(0, 3, (size, size))
        out.append(np.clip(np.rint(arr), 0, 255).astype(np.uint8))
    return out


@pytest.fixture(scope="session")
def small_synth():
    spec = SynthSpec(n_positives=80, n_negative_frames=40, n_scenes=12)
    return synth_dataset(spec, seed=7)


@pytest.fixture(scope="session")
def small_cascade(small_synth):
    """Quickly trained cascade over a thinned feature pool."""
    pool = enumerate_features(24, 24)[::23]
    cfg = CascadeTrainConfig(seed=3, max_stages=4, max_weak_per_stage=20, f_target=1e-3)
    return train_cascade(small_synth.positives, small_synth.negatives, cfg, feature_pool=pool)


@pytest.fixture(scope="session")
def benchmark():
    """The desk benchmark: seed-42 synthetic task, default training config."""
    t0 = time.perf_counter()
    data = synth_dataset(seed=42)
    stats = []
    cascade = train_cascade(data.positives, data.negatives, CascadeTrainConfig(seed=42),
                            stats_out=stats)
    return {"data": data, "cascade": cascade, "stats": stats,
            "train_seconds": time.perf_counter() - t0}
