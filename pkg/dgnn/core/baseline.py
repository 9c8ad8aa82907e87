"""
Circular (ECFP-style) fingerprints and an MLP on the concatenated alcohol and
acyl halide fingerprints.

Identifiers are 64-bit FNV-1a hashes of canonical byte strings, so bit
patterns are stable across runs and platforms but do not match RDKit's.
"""
import struct

import numpy as np

from dgnn.core import autodiff as ad
from dgnn.core.molgraph import MolecularGraph
from dgnn.core.settings import MlpConfig
from dgnn.utils.seeding import fnv1a64, rng as seeded_rng


class Fingerprint:
    __slots__ = ("bits", "identifiers")

    def __init__(self, bits, identifiers=()):
        self.bits = np.asarray(bits, dtype=np.uint8)
        self.identifiers = tuple(identifiers)

    @property
    def nbits(self):
        return self.bits.size

    @property
    def popcount(self):
        return int(self.bits.sum())

    def on_bits(self):
        return np.flatnonzero(self.bits).tolist()

    def __eq__(self, other):
        return isinstance(other, Fingerprint) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())

    def __repr__(self):
        return f"Fingerprint(nbits={self.nbits}, on={self.popcount})"


def _initial_identifier(g: MolecularGraph, i):
    atom = g.atoms[i]
    return fnv1a64(f"{atom.element}|{atom.formal_charge}|{int(g.degrees[i])}".encode("utf-8"))


def _round_identifier(radius, own, neighbor_pairs):
    data = struct.pack("<iQ", radius, own)
    for order, nbr in neighbor_pairs:
        data += struct.pack("<iQ", order, nbr)
    return fnv1a64(data)


def environment_identifiers(g: MolecularGraph, radius=3):
    """
    Every (identifier, environment) pair kept by the circular procedure.

    An environment is the frozenset of bond indices covered by an atom's
    neighbourhood at a given radius. Identifiers are dropped when the
    environment stopped growing or was already produced, keeping the smaller
    identifier on ties inside a round.
    """
    ids = [_initial_identifier(g, i) for i in range(g.num_atoms)]
    envs = [frozenset() for _ in range(g.num_atoms)]
    kept = [(ident, frozenset({("atom", i)})) for i, ident in enumerate(ids)]
    seen_envs = set()

    for r in range(1, radius + 1):
        new_ids, new_envs = [], []
        for i in range(g.num_atoms):
            pairs = sorted((order, ids[j]) for j, order, _ in g.neighbors[i])
            new_ids.append(_round_identifier(r, ids[i], pairs))
            env = set(envs[i])
            for j, _, bond in g.neighbors[i]:
                env.add(bond)
                env |= envs[j]
            new_envs.append(frozenset(env))

        candidates = {}
        for i in range(g.num_atoms):
            env = new_envs[i]
            if env == envs[i] or env in seen_envs:
                continue
            if env not in candidates or new_ids[i] < candidates[env]:
                candidates[env] = new_ids[i]
        for env, ident in sorted(candidates.items(), key=lambda kv: kv[1]):
            seen_envs.add(env)
            kept.append((ident, env))

        ids, envs = new_ids, new_envs
    return kept


def morgan_fingerprint(g: MolecularGraph, radius=3, nbits=1024) -> Fingerprint:
    identifiers = sorted({ident for ident, _ in environment_identifiers(g, radius)})
    bits = np.zeros(nbits, dtype=np.uint8)
    for ident in identifiers:
        bits[ident % nbits] = 1
    return Fingerprint(bits, identifiers)


def pair_fingerprint(sample, radius=3, nbits=1024):
    """Alcohol bits followed by acyl halide bits, as a float row of width 2 * nbits."""
    a = morgan_fingerprint(sample.alcohol, radius, nbits).bits
    h = morgan_fingerprint(sample.acyl_halide, radius, nbits).bits
    return np.concatenate([a, h]).astype(np.float64)


def init_mlp_params(config: MlpConfig, dtype=np.float64):
    rng = seeded_rng(config.seed, "mlp", "init")
    widths = [2 * config.nbits] + list(config.hidden_layers) + [1]
    params = {}
    for k in range(len(widths) - 1):
        params[f"mlp.W{k}"] = ad.glorot(rng, widths[k], widths[k + 1], name=f"mlp.W{k}", dtype=dtype)
        params[f"mlp.b{k}"] = ad.zeros(widths[k + 1], name=f"mlp.b{k}", dtype=dtype)
    return params


def mlp_forward(X, params):
    layers = len(params) // 2
    h = ad.as_tensor(X, dtype=params["mlp.W0"].dtype)
    for k in range(layers):
        activation = "relu" if k < layers - 1 else "none"
        h = ad.dense(h, params[f"mlp.W{k}"], params[f"mlp.b{k}"], activation)
    return h


def mlp_predict(sample, params, radius=3):
    nbits = params["mlp.W0"].shape[0] // 2
    X = pair_fingerprint(sample, radius, nbits)[None, :]
    return mlp_forward(X, params).item()


class MlpModel:
    kind = "mlp"
    normalizer = None

    def __init__(self, config: MlpConfig, params=None, label_mean=0.0, label_std=1.0, dtype=np.float64):
        self.config = config
        self.params = params if params is not None else init_mlp_params(config, dtype=dtype)
        self.label_mean = float(label_mean)
        self.label_std = float(label_std)

    @property
    def dtype(self):
        return self.params["mlp.W0"].dtype

    def fit_normalizer(self, train_samples):
        return None

    def prepare(self, samples):
        return [pair_fingerprint(s, self.config.radius, self.config.nbits) for s in samples]

    def forward(self, prepared, params=None):
        X = np.stack(prepared).astype(self.dtype) if prepared else np.zeros((0, 2 * self.config.nbits), self.dtype)
        return mlp_forward(X, params or self.params)

    def predict(self, sample):
        return mlp_predict(sample, self.params, self.config.radius)

    def config_dict(self):
        return self.config.model_dump()

    def describe(self):
        widths = [2 * self.config.nbits] + list(self.config.hidden_layers) + [1]
        return "MLP " + "->".join(str(w) for w in widths)
