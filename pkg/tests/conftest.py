import numpy as np
import pytest

from vaca.circuit import SynthSpec, synth_dataset, synth_generate

TINY = SynthSpec(H=4, W=4, C=5, nets=6, clusters=1)


@pytest.fixture
def tiny_example():
    return synth_generate(3, TINY, name="tiny")


@pytest.fixture
def tiny_batch():
    return [synth_generate(s, TINY, name=f"tiny{s}") for s in (3, 4)]


@pytest.fixture(scope="session")
def small_dataset():
    return synth_dataset(10, SynthSpec(H=8, W=8, C=24, nets=36), seed=5)


@pytest.fixture(scope="session")
def default_dataset():
    return synth_dataset(28, SynthSpec(), seed=0)


def brute_window(pred, j, k, a):
    """Slot values of bin (j, k) enumerated directly from the clamping rule."""
    H, W = pred.shape
    out = np.empty((2 * a + 1, 2 * a + 1))
    for h in range(2 * a + 1):
        for w in range(2 * a + 1):
            r, v = j + h - a, k + w - a
            out[h, w] = pred[r, v] if 0 <= r < H and 0 <= v < W else pred[j, k]
    return out
