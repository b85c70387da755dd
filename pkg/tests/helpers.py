"""Shared test utilities: finite-difference oracles and small datasets."""

import numpy as np

from ura.imaging import Image, PairedSample
from ura.rain_synth import SynthParams, synth_pair
from ura.seeding import derive_seed


def fd_gradient(fn, x: np.ndarray, step: float = 1e-3,
                indices=None) -> dict:
    """Central finite differences of a scalar fn at selected indices.

    fn is re-evaluated with the mutated array; x is restored afterwards.
    Returns {index: derivative}.
    """
    if indices is None:
        it = np.nditer(x, flags=["multi_index"])
        indices = []
        while not it.finished:
            indices.append(it.multi_index)
            it.iternext()
    grads = {}
    for idx in indices:
        orig = x[idx]
        x[idx] = orig + step
        fp = fn()
        x[idx] = orig - step
        fm = fn()
        x[idx] = orig
        grads[idx] = (fp - fm) / (2.0 * step)
    return grads


def max_rel_error(analytic: np.ndarray, fd: dict) -> float:
    """Max |analytic - fd| over the checked indices, relative to the
    largest finite-difference magnitude."""
    scale = max(max(abs(v) for v in fd.values()), 1e-12)
    return max(abs(analytic[idx] - v) for idx, v in fd.items()) / scale


def sample_indices(shape, count, seed=0):
    rng = np.random.default_rng(seed)
    return [tuple(int(rng.integers(0, s)) for s in shape)
            for _ in range(count)]


def random_image(seed: int, h: int = 16, w: int = 16) -> Image:
    rng = np.random.default_rng(seed)
    return Image(rng.random((3, h, w)))


def constant_image(value: float, h: int = 16, w: int = 16) -> Image:
    return Image(np.full((3, h, w), value))


def tiny_dataset(count: int, root_seed: int, label: str = "s",
                 size: int = 32, mode: str = "combined"):
    samples = []
    for i in range(count):
        seed = derive_seed(root_seed, f"{label}-{i}")
        obs, bg = synth_pair(SynthParams(seed=seed), mode, size, size)
        samples.append(PairedSample(obs, bg, identifier=f"{label}{i:04d}"))
    return samples
