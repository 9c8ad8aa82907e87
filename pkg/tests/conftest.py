import numpy as np
import pytest

from dgnn.core.dataset import ReactionSample, generate_manifest, load_library, normalize_labels, split
from dgnn.core.molgraph import Atom, MolecularGraph
from dgnn.core.settings import ModelConfig, TrainConfig


@pytest.fixture(scope="session")
def library():
    return load_library()


@pytest.fixture(scope="session")
def molecules(library):
    alcohols, halides = library
    return {m.name: m for m in alcohols + halides}


@pytest.fixture
def sample(molecules):
    return ReactionSample("butan-2-ol+benzoyl_chloride", molecules["butan-2-ol"], molecules["benzoyl_chloride"])


@pytest.fixture
def tiny_config():
    return ModelConfig(hidden=4, steps=2, net_width=6, seed=11)


@pytest.fixture
def fast_train():
    return TrainConfig(epochs=3, batch_size=16, lr=1e-3, patience=5, seed=0)


@pytest.fixture(scope="session")
def full_manifest(library):
    return generate_manifest(*library, seed=0)


@pytest.fixture(scope="session")
def split_manifest(full_manifest):
    return normalize_labels(split(full_manifest, "random", (0.8, 0.1, 0.1), seed=0))


def random_tree(rng, n, elements=("C", "N", "O"), name=None):
    """Random connected molecule on n atoms: a random tree with random bond orders."""
    atoms = [Atom(str(rng.choice(elements))) for _ in range(n)]
    bonds = [(int(rng.integers(0, i)), i, int(rng.integers(1, 3))) for i in range(1, n)]
    return MolecularGraph(atoms, bonds, name=name)


def random_pair(seed, max_atoms=3):
    rng = np.random.default_rng(seed)
    a = random_tree(rng, int(rng.integers(1, max_atoms + 1)), name="a")
    b = random_tree(rng, int(rng.integers(1, max_atoms + 1)), name="b")
    return ReactionSample(f"pair-{seed}", a, b)


def permuted(sample, rng):
    a = sample.alcohol.relabel(rng.permutation(sample.alcohol.num_atoms))
    h = sample.acyl_halide.relabel(rng.permutation(sample.acyl_halide.num_atoms))
    return ReactionSample(sample.id, a, h, sample.label, sample.split)
