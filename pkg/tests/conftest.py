import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from thermoresp.frames import SynthScenario, ThermalFrame, generate_synthetic
from thermoresp.track import GradientMap, Roi, klt_track, ncc_relocalize

# Invariant suites must hold on >= 500 generated cases each.
settings.register_profile(
    "invariants",
    max_examples=500,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.data_too_large, HealthCheck.too_slow],
)
settings.load_profile("invariants")


def frame_of(values, timestamp=0.0) -> ThermalFrame:
    return ThermalFrame(timestamp, np.asarray(values, dtype=np.float32))


def smooth_texture(shape, seed, lo=0.0, hi=150.0):
    """Band-limited random field, useful as a stand-in gradient map."""
    from scipy.ndimage import gaussian_filter

    rng = np.random.default_rng(seed)
    field = gaussian_filter(rng.normal(size=shape), 2.0)
    field -= field.min()
    field /= field.max()
    return lo + (hi - lo) * field


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the jitted kernels once so timed tests measure steady state."""
    tex = smooth_texture((48, 48), seed=0)
    a, b = GradientMap(tex), GradientMap(tex)
    klt_track(a, b, [(24.0, 24.0)])
    ncc_relocalize(tex[16:28, 16:28], a, (24.0, 24.0), 4)


@pytest.fixture(scope="session")
def small_scene():
    scn = SynthScenario(duration=10.0, fps=9.0, noise_sigma=0.05)
    meta, frames, truth = generate_synthetic(scn, seed=100)
    return scn, meta, frames, truth


def truth_roi(truth, i) -> Roi:
    x, y, size = truth.boxes[i]
    return Roi(float(x), float(y), float(size))
