"""
Molecular graphs, node/edge featurization, the three ways of joining a pair of
disjoint graphs (DG, FC, GN) and the initial-embedding normalizer.

Undirected graphs are stored as symmetric directed edge lists: every bond or
virtual connection appears once per direction, so the message to node v is a
plain sum over the edges whose receiver is v.
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import networkx as nx
import numpy as np

from dgnn.errors import GraphValidationError, NormalizerError

ELEMENTS = ("H", "C", "N", "O", "F", "Cl", "Br", "I")
HALOGENS = ("Cl", "Br", "I")
ROLES = ("alcohol", "acyl_halide", "unknown")
STRATEGIES = ("DG", "FC", "GN")
MAX_DEGREE = 4

NODE_FEATURES = len(ELEMENTS) + 1 + MAX_DEGREE  # 13
# bond order one-hot (3) + virtual class (1) + edge kind one-hot (3) + distance (1)
EDGE_FEATURES = 8

EDGE_BOND, EDGE_VIRTUAL, EDGE_GLOBAL = 0, 1, 2
EDGE_KINDS = ("bond", "virtual", "global")

PART_FIRST, PART_SECOND, PART_GLOBAL = 0, 1, 2


@dataclass(frozen=True)
class Atom:
    element: str
    formal_charge: int = 0
    coords: Optional[tuple] = None

    def __post_init__(self):
        if self.element not in ELEMENTS:
            raise GraphValidationError(f"unknown element {self.element!r}; allowed {', '.join(ELEMENTS)}")
        if self.coords is not None:
            xyz = tuple(float(c) for c in self.coords)
            if len(xyz) != 3 or not all(np.isfinite(xyz)):
                raise GraphValidationError(f"atom coordinates must be 3 finite numbers, got {self.coords!r}")
            object.__setattr__(self, "coords", xyz)


@dataclass(frozen=True)
class MolecularGraph:
    atoms: tuple
    bonds: tuple
    role: str = "unknown"
    name: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "bonds", tuple(tuple(int(v) for v in b) for b in self.bonds))
        self._validate()

    def _validate(self):
        n = len(self.atoms)
        label = self.name or "molecule"
        if n == 0:
            raise GraphValidationError(f"{label}: a molecule needs at least one atom")
        if self.role not in ROLES:
            raise GraphValidationError(f"{label}: unknown role {self.role!r}")

        seen = set()
        for bond in self.bonds:
            if len(bond) != 3:
                raise GraphValidationError(f"{label}: bonds are (i, j, order) triples, got {bond!r}")
            i, j, order = bond
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise GraphValidationError(f"{label}: bad bond endpoints {bond!r} for {n} atoms")
            if order not in (1, 2, 3):
                raise GraphValidationError(f"{label}: bond order must be 1, 2 or 3, got {order}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise GraphValidationError(f"{label}: duplicate bond {key}")
            seen.add(key)

        with_coords = sum(a.coords is not None for a in self.atoms)
        if with_coords not in (0, n):
            raise GraphValidationError(f"{label}: either all atoms carry coordinates or none do")

        if not nx.is_connected(self.to_networkx()):
            raise GraphValidationError(f"{label}: graph is not connected")

    @property
    def num_atoms(self):
        return len(self.atoms)

    @property
    def has_coords(self):
        return self.atoms[0].coords is not None

    def to_networkx(self):
        g = nx.Graph()
        for i, atom in enumerate(self.atoms):
            g.add_node(i, element=atom.element, charge=atom.formal_charge)
        for i, j, order in self.bonds:
            g.add_edge(i, j, order=order)
        return g

    @cached_property
    def degrees(self):
        deg = np.zeros(self.num_atoms, dtype=np.int64)
        for i, j, _ in self.bonds:
            deg[i] += 1
            deg[j] += 1
        return deg

    @cached_property
    def neighbors(self):
        """Per atom, sorted list of (neighbor, bond order, bond index)."""
        nbrs = [[] for _ in self.atoms]
        for k, (i, j, order) in enumerate(self.bonds):
            nbrs[i].append((j, order, k))
            nbrs[j].append((i, order, k))
        return [sorted(n) for n in nbrs]

    @cached_property
    def hop_distances(self):
        n = self.num_atoms
        hops = np.zeros((n, n), dtype=np.int64)
        for i, lengths in nx.all_pairs_shortest_path_length(self.to_networkx()):
            for j, d in lengths.items():
                hops[i, j] = d
        return hops

    @cached_property
    def canonical_key(self):
        """Relabeling-invariant identity (Weisfeiler-Lehman hash)."""
        g = self.to_networkx()
        for i in g.nodes:
            g.nodes[i]["label"] = f"{g.nodes[i]['element']}{g.nodes[i]['charge']:+d}"
        for i, j in g.edges:
            g.edges[i, j]["label"] = str(g.edges[i, j]["order"])
        return nx.weisfeiler_lehman_graph_hash(g, node_attr="label", edge_attr="label", iterations=4)

    def relabel(self, perm):
        """Copy with atom i moved to position perm[i]."""
        perm = list(perm)
        atoms = [None] * self.num_atoms
        for old, new in enumerate(perm):
            atoms[new] = self.atoms[old]
        bonds = [(perm[i], perm[j], o) for i, j, o in self.bonds]
        return MolecularGraph(atoms, bonds, self.role, self.name)

    def to_json(self):
        return {
            "atoms": [
                {"el": a.element, "q": a.formal_charge, "xyz": list(a.coords) if a.coords is not None else None}
                for a in self.atoms
            ],
            "bonds": [list(b) for b in self.bonds],
            "role": self.role,
        }

    @classmethod
    def from_json(cls, obj, name=None):
        try:
            atoms = [Atom(a["el"], int(a.get("q", 0)), a.get("xyz")) for a in obj["atoms"]]
            bonds = obj.get("bonds", [])
            role = obj.get("role", "unknown")
        except (KeyError, TypeError) as e:
            raise GraphValidationError(f"{name or 'molecule'}: malformed graph JSON ({e})")
        return cls(atoms, bonds, role, name)


# --- role patterns ----------------------------------------------------------


def hydroxyl_oxygens(g: MolecularGraph):
    """Oxygens carrying a singly bonded hydrogen."""
    found = []
    for i, atom in enumerate(g.atoms):
        if atom.element != "O":
            continue
        if any(g.atoms[j].element == "H" and order == 1 for j, order, _ in g.neighbors[i]):
            found.append(i)
    return found


def acyl_halide_carbons(g: MolecularGraph):
    """Carbons of C(=O)-X groups with X in Cl, Br, I, as (carbon, halogen index) pairs."""
    found = []
    for i, atom in enumerate(g.atoms):
        if atom.element != "C":
            continue
        has_carbonyl = any(g.atoms[j].element == "O" and order == 2 for j, order, _ in g.neighbors[i])
        halogens = [j for j, order, _ in g.neighbors[i] if g.atoms[j].element in HALOGENS and order == 1]
        if has_carbonyl and halogens:
            found.append((i, halogens[0]))
    return found


def halogen_of(g: MolecularGraph):
    groups = acyl_halide_carbons(g)
    if not groups:
        return None
    return g.atoms[groups[0][1]].element


# --- featurization ----------------------------------------------------------


def featurize(g: MolecularGraph) -> np.ndarray:
    """
    n x 13 node features: element one-hot (8), formal charge (1) and degree
    one-hot for degrees 1..4 (degree 0 is all zeros, degrees above 4 share the
    last slot).
    """
    x = np.zeros((g.num_atoms, NODE_FEATURES), dtype=np.float64)
    for i, atom in enumerate(g.atoms):
        x[i, ELEMENTS.index(atom.element)] = 1.0
        x[i, len(ELEMENTS)] = float(atom.formal_charge)
        deg = int(g.degrees[i])
        if deg > 0:
            x[i, len(ELEMENTS) + 1 + min(deg, MAX_DEGREE) - 1] = 1.0
    return x


def edge_feature(kind, order=None, distance=0.0):
    e = np.zeros(EDGE_FEATURES, dtype=np.float64)
    if kind == EDGE_BOND:
        e[order - 1] = 1.0
    else:
        e[3] = 1.0
    e[4 + kind] = 1.0
    e[7] = distance
    return e


def _intra_distance(g: MolecularGraph, i, j):
    if g.has_coords:
        return float(np.linalg.norm(np.subtract(g.atoms[i].coords, g.atoms[j].coords)))
    return float(g.hop_distances[i, j]) / max(1, g.num_atoms - 1)


# --- joining ----------------------------------------------------------------


@dataclass(frozen=True)
class JoinedGraph:
    x: np.ndarray
    senders: np.ndarray
    receivers: np.ndarray
    edge_attr: np.ndarray
    edge_kind: np.ndarray
    node_part: np.ndarray
    strategy: str
    boundary: int
    global_node_index: Optional[int] = None

    @property
    def num_nodes(self):
        return self.x.shape[0]

    @property
    def num_edges(self):
        return self.senders.shape[0]

    @property
    def atom_mask(self):
        return self.node_part != PART_GLOBAL

    def undirected_edges(self):
        return {(min(s, r), max(s, r)) for s, r in zip(self.senders.tolist(), self.receivers.tolist())}

    def to_networkx(self):
        g = nx.Graph()
        for i in range(self.num_nodes):
            g.add_node(i, features=tuple(self.x[i].tolist()), part=int(self.node_part[i]))
        for k, (s, r) in enumerate(zip(self.senders.tolist(), self.receivers.tolist())):
            g.add_edge(s, r, features=tuple(self.edge_attr[k].tolist()))
        return g


def join_graphs(g1: MolecularGraph, g2: MolecularGraph, strategy: str) -> JoinedGraph:
    strategy = strategy.upper()
    if strategy not in STRATEGIES:
        raise GraphValidationError(f"unknown joining strategy {strategy!r}; expected one of {STRATEGIES}")

    a, b = g1.num_atoms, g2.num_atoms
    parts = [PART_FIRST] * a + [PART_SECOND] * b
    x = [featurize(g1), featurize(g2)]
    global_index = None
    if strategy == "GN":
        global_index = a + b
        parts.append(PART_GLOBAL)
        x.append(np.zeros((1, NODE_FEATURES)))
    x = np.concatenate(x, axis=0)

    def locate(node):
        return (g1, node) if node < a else (g2, node - a)

    bond_order = {}
    for offset, g in ((0, g1), (a, g2)):
        for i, j, order in g.bonds:
            bond_order[(offset + min(i, j), offset + max(i, j))] = order

    undirected = []  # (i, j, feature vector, kind)
    if strategy == "FC":
        for i in range(a + b):
            for j in range(i + 1, a + b):
                order = bond_order.get((i, j))
                same = (i < a) == (j < a)
                distance = 0.0
                if same:
                    g, li = locate(i)
                    distance = _intra_distance(g, li, locate(j)[1])
                if order is not None:
                    undirected.append((i, j, edge_feature(EDGE_BOND, order, distance), EDGE_BOND))
                else:
                    undirected.append((i, j, edge_feature(EDGE_VIRTUAL, None, distance), EDGE_VIRTUAL))
    else:
        for (i, j), order in bond_order.items():
            g, li = locate(i)
            undirected.append((i, j, edge_feature(EDGE_BOND, order, _intra_distance(g, li, locate(j)[1])), EDGE_BOND))
        if strategy == "GN":
            for i in range(a + b):
                undirected.append((i, global_index, edge_feature(EDGE_GLOBAL), EDGE_GLOBAL))

    senders, receivers, attrs, kinds = [], [], [], []
    for i, j, feat, kind in undirected:
        for s, r in ((i, j), (j, i)):
            senders.append(s)
            receivers.append(r)
            attrs.append(feat)
            kinds.append(kind)

    return JoinedGraph(
        x=x,
        senders=np.asarray(senders, dtype=np.int64),
        receivers=np.asarray(receivers, dtype=np.int64),
        edge_attr=np.asarray(attrs, dtype=np.float64).reshape(-1, EDGE_FEATURES),
        edge_kind=np.asarray(kinds, dtype=np.int64),
        node_part=np.asarray(parts, dtype=np.int64),
        strategy=strategy,
        boundary=a,
        global_node_index=global_index,
    )


def join(sample, strategy: str) -> JoinedGraph:
    """Join a reaction sample in fixed role order: alcohol first, acyl halide second."""
    return join_graphs(sample.alcohol, sample.acyl_halide, strategy)


# --- normalization ----------------------------------------------------------


class Normalizer:
    """
    Column-wise z-score with training statistics, then row-wise L2 scaling.

    Columns whose training std is below 1e-8 pass the column step unchanged;
    all-zero rows pass the row step unchanged.
    """

    STD_FLOOR = 1e-8

    def __init__(self, columns=True, rows=True):
        self.columns = columns
        self.rows = rows
        self.mean = None
        self.std = None

    @property
    def fitted(self):
        return self.mean is not None

    def fit(self, features):
        stacked = np.concatenate([np.asarray(f, dtype=np.float64) for f in features], axis=0)
        if stacked.shape[0] == 0:
            raise NormalizerError("cannot fit a normalizer on zero nodes")
        self.mean = stacked.mean(axis=0)
        self.std = stacked.std(axis=0)
        return self

    def apply(self, x):
        if not self.fitted:
            raise NormalizerError("normalizer applied before fit")
        out = np.array(x, dtype=np.float64)
        if self.columns:
            scaled = self.std >= self.STD_FLOOR
            out[:, scaled] = (out[:, scaled] - self.mean[scaled]) / self.std[scaled]
        if self.rows:
            norms = np.linalg.norm(out, axis=1)
            nonzero = norms > 0
            out[nonzero] = out[nonzero] / norms[nonzero, None]
        return out

    def apply_joined(self, jg: JoinedGraph):
        """Normalize atom rows only; a global node keeps its zero row."""
        x = np.array(jg.x, dtype=np.float64)
        mask = jg.atom_mask
        x[mask] = self.apply(x[mask])
        return x

    def to_dict(self):
        return {
            "columns": self.columns,
            "rows": self.rows,
            "mean": None if self.mean is None else self.mean.tolist(),
            "std": None if self.std is None else self.std.tolist(),
        }

    @classmethod
    def from_dict(cls, obj):
        norm = cls(columns=obj["columns"], rows=obj["rows"])
        if obj.get("mean") is not None:
            norm.mean = np.asarray(obj["mean"], dtype=np.float64)
            norm.std = np.asarray(obj["std"], dtype=np.float64)
        return norm


def normalize_features(train_features, columns=True, rows=True) -> Normalizer:
    return Normalizer(columns=columns, rows=rows).fit(train_features)
