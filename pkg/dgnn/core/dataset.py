"""
Reaction samples built combinatorially from an alcohol library and an acyl
halide library, a synthetic reaction-energy oracle, label normalization,
train/val/test split protocols and the JSONL manifest format.
"""
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field
from scipy.stats import skewnorm
from tqdm import tqdm

from dgnn.core.molgraph import HALOGENS, MolecularGraph, acyl_halide_carbons, halogen_of, hydroxyl_oxygens
from dgnn.errors import ConfigError, GraphValidationError, NormalizerError, SplitInfeasibleError
from dgnn.utils.logging_colors import logger
from dgnn.utils.seeding import rng as seeded_rng

SPLITS = ("train", "val", "test")
PROTOCOLS = ("random", "leave_alcohol_out", "leave_halide_out")

HALOGEN_MEANS = {"Cl": -12.0, "Br": -7.0, "I": -2.0}
NOISE_SKEW = 4.0
NOISE_SCALE = 0.3
DEFAULT_GAMMA = 8.0
# version of the optional {"meta": ...} header line of a manifest
MANIFEST_FORMAT = 1


@dataclass(frozen=True)
class ReactionSample:
    id: str
    alcohol: MolecularGraph
    acyl_halide: MolecularGraph
    label: Optional[float] = None
    split: Optional[str] = None
    label_norm: Optional[float] = field(default=None, compare=False)

    @property
    def halogen(self):
        return halogen_of(self.acyl_halide)


@dataclass
class DatasetManifest:
    samples: list
    label_mean: Optional[float] = None
    label_std: Optional[float] = None
    split_protocol: Optional[str] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.samples)

    def subset(self, split):
        return [s for s in self.samples if s.split == split]

    def split_sizes(self):
        return {name: sum(s.split == name for s in self.samples) for name in SPLITS}

    def ids(self):
        return [s.id for s in self.samples]

    def without(self, ids):
        """Copy with the given sample ids removed; statistics are kept until renormalized."""
        drop = set(ids)
        return dataclasses.replace(self, samples=[s for s in self.samples if s.id not in drop], meta=dict(self.meta))


class PairConstraints(BaseModel):
    alcohol_groups: Optional[list[int]] = None
    halide_groups: Optional[list[int]] = None
    alcohol_subgroups: int = Field(default=6, ge=1)
    halide_subgroups: int = Field(default=2, ge=1)


SUBSETS = {
    "full": PairConstraints(),
    "small": PairConstraints(alcohol_groups=[0, 1, 2], halide_groups=[0]),
}


# --- library ----------------------------------------------------------------


def check_role(g: MolecularGraph, role: str):
    """None when g fits its reaction role, otherwise the reason it does not."""
    has_oh = bool(hydroxyl_oxygens(g))
    has_acyl = bool(acyl_halide_carbons(g))
    if role == "alcohol":
        if not has_oh:
            return "no O-H group"
        if has_acyl:
            return "contains an acyl halide group"
    elif role == "acyl_halide":
        if not has_acyl:
            return "no C(=O)-X group with X in Cl, Br, I"
        if has_oh:
            return "contains an O-H group"
    else:
        return f"unknown role {role!r}"
    return None


def read_molecule(path, role=None):
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            obj = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise GraphValidationError(f"{path}: {e}")
    try:
        g = MolecularGraph.from_json(obj, name=path.stem)
    except GraphValidationError as e:
        raise GraphValidationError(f"{path}: {e.message}")
    if role is not None:
        if g.role == "unknown":
            g = dataclasses.replace(g, role=role)
        reason = check_role(g, role)
        if reason:
            raise GraphValidationError(f"{path}: not a valid {role}: {reason}")
    return g


def load_library(directory=None):
    """(alcohols, acyl halides) from <dir>/alcohols/*.json and <dir>/halides/*.json, sorted by name."""
    if directory is None:
        from dgnn.utils.config import LIBRARY_PATH
        directory = LIBRARY_PATH
    directory = Path(directory)
    alcohols = [read_molecule(p, "alcohol") for p in sorted((directory / "alcohols").glob("*.json"))]
    halides = [read_molecule(p, "acyl_halide") for p in sorted((directory / "halides").glob("*.json"))]
    if not alcohols or not halides:
        raise GraphValidationError(f"{directory}: library needs alcohols/*.json and halides/*.json")
    logger.info(f"Loaded library {directory}: {len(alcohols)} alcohols, {len(halides)} acyl halides")
    return alcohols, halides


def assign_subgroups(molecules, k):
    """Deal molecules round-robin by sorted name into k subgroups; returns {name: group}."""
    names = sorted(m.name for m in molecules)
    return {name: i % k for i, name in enumerate(names)}


# --- pairing ----------------------------------------------------------------


def enumerate_pairs(alcohols, halides, constraints: Optional[PairConstraints] = None, rejected=None):
    """
    Cartesian product of alcohols and halides in input order, filtered by role
    rules and subgroup constraints. Role violations are appended to rejected
    as (name, reason) when a list is given.
    """
    constraints = constraints or PairConstraints()

    def keep(molecules, role):
        ok = []
        for m in molecules:
            reason = check_role(m, role)
            if reason:
                logger.warning(f"Rejected {role} {m.name}: {reason}")
                if rejected is not None:
                    rejected.append((m.name, reason))
            else:
                ok.append(m)
        return ok

    alcohols = keep(alcohols, "alcohol")
    halides = keep(halides, "acyl_halide")

    if constraints.alcohol_groups is not None:
        groups = assign_subgroups(alcohols, constraints.alcohol_subgroups)
        alcohols = [a for a in alcohols if groups[a.name] in constraints.alcohol_groups]
    if constraints.halide_groups is not None:
        allowed = set()
        for x in HALOGENS:
            family = [h for h in halides if halogen_of(h) == x]
            groups = assign_subgroups(family, constraints.halide_subgroups)
            allowed |= {name for name, grp in groups.items() if grp in constraints.halide_groups}
        halides = [h for h in halides if h.name in allowed]

    return [(a, h) for a in alcohols for h in halides]


# --- synthetic labels -------------------------------------------------------


def graph_statistics(g: MolecularGraph):
    heavy = [i for i, a in enumerate(g.atoms) if a.element != "H"]
    heavy_set = set(heavy)
    heavy_degree = {i: sum(j in heavy_set for j, _, _ in g.neighbors[i]) for i in heavy}
    return {
        "n_heavy": len(heavy),
        "rings": len(g.bonds) - g.num_atoms + 1,
        "branching": sum(d >= 3 for d in heavy_degree.values()),
        "n_hetero": sum(g.atoms[i].element != "C" for i in heavy),
    }


def alcohol_term(g: MolecularGraph):
    s = graph_statistics(g)
    return 0.35 * (s["n_heavy"] - 4) - 0.6 * s["rings"] + 0.45 * s["branching"] - 0.3 * (s["n_hetero"] - 1)


def halide_term(g: MolecularGraph):
    s = graph_statistics(g)
    return 0.25 * (s["n_heavy"] - 5) - 0.4 * s["rings"] + 0.3 * s["branching"]


def cross_term(alcohol: MolecularGraph, halide: MolecularGraph):
    """
    Saturating product of the two molecule sizes, zero for a five heavy atom
    alcohol or a six heavy atom acyl halide and bounded by 1 in magnitude.
    No sum of a per-alcohol and a per-halide function reproduces it.
    """
    s_a = graph_statistics(alcohol)["n_heavy"] - 5
    s_h = graph_statistics(halide)["n_heavy"] - 6
    return float(np.tanh(s_a / 2.0) * np.tanh(s_h / 2.0))


def label_noise(seed, sample_id):
    """One skewed draw per sample, centred to zero mean."""
    r = seeded_rng(seed, "label", sample_id)
    draw = skewnorm.rvs(NOISE_SKEW, loc=0.0, scale=NOISE_SCALE, random_state=r)
    return float(draw - skewnorm.mean(NOISE_SKEW, loc=0.0, scale=NOISE_SCALE))


def synthetic_label(sample, seed=0, gamma=DEFAULT_GAMMA, noise=True):
    """Reaction energy in kcal/mol: halogen mean + per-molecule terms + gamma * cross term + skew noise."""
    halogen = halogen_of(sample.acyl_halide)
    if halogen not in HALOGEN_MEANS:
        raise GraphValidationError(f"{sample.id}: acyl halide has no Cl/Br/I leaving group")
    value = (
        HALOGEN_MEANS[halogen]
        + alcohol_term(sample.alcohol)
        + halide_term(sample.acyl_halide)
        + gamma * cross_term(sample.alcohol, sample.acyl_halide)
    )
    if noise:
        value += label_noise(seed, sample.id)
    return float(value)


def sample_id(alcohol, halide):
    return f"{alcohol.name}+{halide.name}"


def generate_manifest(alcohols, halides, seed=0, gamma=DEFAULT_GAMMA, constraints=None, noise=True,
                      progress=False):
    pairs = enumerate_pairs(alcohols, halides, constraints)
    samples = []
    for a, h in tqdm(pairs, desc="Labeling", disable=not progress):
        sample = ReactionSample(sample_id(a, h), a, h)
        samples.append(dataclasses.replace(sample, label=synthetic_label(sample, seed, gamma, noise)))

    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise GraphValidationError("duplicate sample ids; molecule names must be unique within each library")
    logger.info(f"Generated {len(samples)} labeled samples (gamma={gamma}, seed={seed})")
    return DatasetManifest(samples, meta={"seed": seed, "gamma": gamma})


# --- splits -----------------------------------------------------------------


def parse_fractions(fractions):
    if isinstance(fractions, str):
        try:
            fractions = [float(v) for v in fractions.split(",")]
        except ValueError:
            raise ConfigError(f"fractions must be three comma separated numbers, got {fractions!r}")
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ConfigError(f"fractions must be three non-negative numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {sum(fractions)}")
    return fractions


def _floor_counts(n, fractions):
    n_val = math.floor(fractions[1] * n + 1e-9)
    n_test = math.floor(fractions[2] * n + 1e-9)
    return n - n_val - n_test, n_val, n_test


def _group_counts(k, fractions, what):
    """Round the group counts, keeping at least one group in every split with a positive fraction."""
    counts = []
    for f in fractions[1:]:
        c = math.floor(f * k + 0.5)
        counts.append(max(c, 1) if f > 0 else 0)
    n_train = k - sum(counts)
    if n_train < 1:
        raise SplitInfeasibleError(f"{k} {what} cannot populate train, val and test with fractions {fractions}")
    return n_train, counts[0], counts[1]


def _deal(keys, counts, r):
    order = [keys[i] for i in r.permutation(len(keys))]
    n_train, n_val, _ = counts
    assignment = {}
    for pos, key in enumerate(order):
        assignment[key] = "train" if pos < n_train else ("val" if pos < n_train + n_val else "test")
    return assignment


def split(manifest: DatasetManifest, protocol="random", fractions=(0.8, 0.1, 0.1), seed=0) -> DatasetManifest:
    protocol = protocol.replace("-", "_")
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown split protocol {protocol!r}; expected one of {', '.join(PROTOCOLS)}")
    fractions = parse_fractions(fractions)
    r = seeded_rng(seed, "split", protocol)
    samples = manifest.samples

    if protocol == "random":
        counts = _floor_counts(len(samples), fractions)
        by_index = _deal(list(range(len(samples))), counts, r)
        splits = [by_index[i] for i in range(len(samples))]

    elif protocol == "leave_alcohol_out":
        keys = sorted({s.alcohol.canonical_key for s in samples})
        assignment = _deal(keys, _group_counts(len(keys), fractions, "alcohols"), r)
        splits = [assignment[s.alcohol.canonical_key] for s in samples]

    else:
        assignment = {}
        for x in HALOGENS:
            keys = sorted({s.acyl_halide.canonical_key for s in samples if s.halogen == x})
            if not keys:
                continue
            counts = [math.floor(f * len(keys) + 0.5) for f in fractions[1:]]
            n_train = len(keys) - sum(counts)
            if n_train < 1:
                raise SplitInfeasibleError(f"only {len(keys)} {x} halides; none left for train")
            assignment.update(_deal(keys, (n_train, counts[0], counts[1]), r))
        splits = [assignment[s.acyl_halide.canonical_key] for s in samples]
        for name, f in zip(SPLITS, fractions):
            if f > 0 and name not in splits:
                raise SplitInfeasibleError(f"too few halides per class to populate the {name} split")

    out = DatasetManifest(
        [dataclasses.replace(s, split=name, label_norm=None) for s, name in zip(samples, splits)],
        split_protocol=protocol,
        meta=dict(manifest.meta, split_seed=seed, fractions=list(fractions)),
    )
    check_split(out)
    sizes = out.split_sizes()
    logger.info(f"Split {len(samples)} samples ({protocol}): train={sizes['train']} val={sizes['val']} test={sizes['test']}")
    return out


def check_split(manifest: DatasetManifest):
    """Raise SplitInfeasibleError when the manifest violates its protocol's guarantees."""
    present = {s.halogen for s in manifest.samples}
    train_halogens = {s.halogen for s in manifest.subset("train")}
    missing = sorted(present - train_halogens)
    if missing:
        raise SplitInfeasibleError(f"halogen classes absent from train: {', '.join(missing)}")

    if manifest.split_protocol in ("leave_alcohol_out", "leave_halide_out"):
        attr = "alcohol" if manifest.split_protocol == "leave_alcohol_out" else "acyl_halide"
        owners = {}
        for s in manifest.samples:
            key = getattr(s, attr).canonical_key
            if owners.setdefault(key, s.split) != s.split:
                raise SplitInfeasibleError(f"{attr} {getattr(s, attr).name} appears in {owners[key]} and {s.split}")


# --- label normalization ----------------------------------------------------


def normalize_labels(manifest: DatasetManifest) -> DatasetManifest:
    train = [s.label for s in manifest.subset("train")]
    if not train:
        raise SplitInfeasibleError("no training samples; assign splits before normalizing labels")
    if any(s.label is None for s in manifest.samples):
        raise NormalizerError("every sample needs a label before normalization")
    mean = float(np.mean(train))
    std = float(np.std(train))
    if std < 1e-12:
        raise NormalizerError(f"training labels are constant (std={std:.3g}); cannot normalize")
    samples = [dataclasses.replace(s, label_norm=(s.label - mean) / std) for s in manifest.samples]
    return dataclasses.replace(manifest, samples=samples, label_mean=mean, label_std=std, meta=dict(manifest.meta))


def denormalize(values, mean, std):
    return np.asarray(values, dtype=np.float64) * std + mean


# --- JSONL ------------------------------------------------------------------


def sample_to_json(s: ReactionSample):
    return {
        "id": s.id,
        "alcohol": s.alcohol.to_json(),
        "halide": s.acyl_halide.to_json(),
        "label": s.label,
        "split": s.split,
    }


def sample_from_json(obj, lineno=None):
    where = f"line {lineno}: " if lineno is not None else ""
    try:
        sid = str(obj["id"]) if obj.get("id") is not None else f"sample-{lineno}"
        names = sid.split("+", 1) if "+" in sid else (None, None)
        alcohol = MolecularGraph.from_json(obj["alcohol"], name=names[0])
        halide = MolecularGraph.from_json(obj["halide"], name=names[1])
    except (KeyError, TypeError, AttributeError) as e:
        raise GraphValidationError(f"{where}malformed sample ({e})")
    except GraphValidationError as e:
        raise GraphValidationError(f"{where}{e.message}")
    for g, role in ((alcohol, "alcohol"), (halide, "acyl_halide")):
        reason = check_role(g, role)
        if reason:
            raise GraphValidationError(f"{where}{sid}: {role} {reason}")
    split_name = obj.get("split")
    if split_name is not None and split_name not in SPLITS:
        raise GraphValidationError(f"{where}unknown split {split_name!r}")
    label = obj.get("label")
    return ReactionSample(sid, alcohol, halide, None if label is None else float(label), split_name)


def save_manifest(manifest: DatasetManifest, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(manifest.meta)
    meta.update(format=MANIFEST_FORMAT, split_protocol=manifest.split_protocol, label_mean=manifest.label_mean,
                label_std=manifest.label_std)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"meta": meta}) + "\n")
        for s in manifest.samples:
            f.write(json.dumps(sample_to_json(s)) + "\n")
    logger.debug(f"Wrote {len(manifest.samples)} samples to {path}")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise GraphValidationError(f"cannot read manifest {path}: {e}")

    meta, samples = {}, []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise GraphValidationError(f"{path}:{lineno}: invalid JSON ({e})")
        if "meta" in obj and "alcohol" not in obj:
            meta = dict(obj["meta"] or {})
            version = meta.pop("format", MANIFEST_FORMAT)
            if version != MANIFEST_FORMAT:
                raise GraphValidationError(f"{path}:{lineno}: unsupported manifest format {version!r}")
            continue
        samples.append(sample_from_json(obj, lineno))

    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise GraphValidationError(f"{path}: duplicate sample ids")

    manifest = DatasetManifest(
        samples,
        label_mean=meta.pop("label_mean", None),
        label_std=meta.pop("label_std", None),
        split_protocol=meta.pop("split_protocol", None),
        meta=meta,
    )
    if manifest.label_mean is not None and manifest.label_std is not None:
        manifest.samples = [
            dataclasses.replace(s, label_norm=(s.label - manifest.label_mean) / manifest.label_std)
            if s.label is not None else s
            for s in manifest.samples
        ]
    return manifest


def apply_label_stats(manifest: DatasetManifest, mean, std) -> DatasetManifest:
    """Normalize labels with externally fixed statistics, e.g. those stored in a checkpoint."""
    if std is None or std < 1e-12:
        raise NormalizerError(f"invalid label std {std}")
    samples = [
        dataclasses.replace(s, label_norm=(s.label - mean) / std) if s.label is not None else s
        for s in manifest.samples
    ]
    return dataclasses.replace(manifest, samples=samples, label_mean=mean, label_std=std, meta=dict(manifest.meta))
