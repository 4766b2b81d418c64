"""Label groups (D fine labels -> S semantic classes) and hypernym similarity."""

import csv
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np


class TaxonomyError(ValueError):
    pass


@dataclass(frozen=True)
class LabelTaxonomy:
    """Partition of ``D`` labels into ``S`` classes.

    ``class_of[i]`` is the class index of label ``i``; ``wnid`` is optional
    and only needed for word-similarity metrics.
    """

    class_of: np.ndarray
    class_names: tuple
    label_names: tuple
    wnid: tuple = field(default=())

    def __post_init__(self):
        class_of = np.asarray(self.class_of, dtype=np.int64)
        object.__setattr__(self, "class_of", class_of)
        if class_of.ndim != 1 or class_of.size == 0:
            raise TaxonomyError("taxonomy has no labels")
        if len(self.label_names) != class_of.size:
            raise TaxonomyError("label_names length does not match label count")
        if class_of.min() < 0 or class_of.max() >= len(self.class_names):
            raise TaxonomyError("class index out of range")
        if self.wnid and len(self.wnid) != class_of.size:
            raise TaxonomyError("wnid length does not match label count")

    @property
    def D(self):
        return int(self.class_of.size)

    @property
    def S(self):
        return len(self.class_names)

    @cached_property
    def matrix(self):
        """The D x S binary membership matrix."""
        W = np.zeros((self.D, self.S), dtype=np.int64)
        W[np.arange(self.D), self.class_of] = 1
        return W

    def class_sizes(self):
        return np.bincount(self.class_of, minlength=self.S)

    def membership_mask(self, s):
        if not 0 <= s < self.S:
            raise IndexError(f"class index {s} out of range [0, {self.S})")
        return (self.class_of == s).astype(np.int64)

    def complement_mask(self, s):
        return 1 - self.membership_mask(s)

    @classmethod
    def categorical(cls, D):
        """Every label is its own class."""
        names = tuple(str(i) for i in range(D))
        return cls(np.arange(D), names, names)

    @classmethod
    def from_groups(cls, groups, class_names=None, label_names=None):
        """Build from a list of label-index lists, one per class."""
        D = sum(len(g) for g in groups)
        class_of = np.full(D, -1, dtype=np.int64)
        for s, members in enumerate(groups):
            for i in members:
                if not 0 <= i < D or class_of[i] != -1:
                    raise TaxonomyError(f"label {i} missing or assigned twice")
                class_of[i] = s
        class_names = tuple(class_names or (str(s) for s in range(len(groups))))
        label_names = tuple(label_names or (str(i) for i in range(D)))
        return cls(class_of, class_names, label_names)


def membership_mask(tax, s):
    return tax.membership_mask(s)


def complement_mask(tax, s):
    return tax.complement_mask(s)


def _open_text(path):
    if path is None:
        raise TaxonomyError("no path given")
    return open(path, newline="", encoding="utf-8")


def load_taxonomy(path):
    """Read ``label_index,label_name,wnid,class_index,class_name`` CSV."""
    expected = ["label_index", "label_name", "wnid", "class_index", "class_name"]
    rows = {}
    class_names = {}
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TaxonomyError(f"{path}: empty file")
        if [h.strip() for h in header] != expected:
            raise TaxonomyError(f"{path}:1: bad header {header!r}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 5:
                raise TaxonomyError(f"{path}:{line}: expected 5 fields, got {len(row)}")
            try:
                i, s = int(row[0]), int(row[3])
            except ValueError:
                raise TaxonomyError(f"{path}:{line}: non-integer index") from None
            if i in rows:
                raise TaxonomyError(f"{path}:{line}: label {i} assigned to more than one class")
            if class_names.setdefault(s, row[4]) != row[4]:
                raise TaxonomyError(f"{path}:{line}: class {s} has conflicting names")
            rows[i] = (row[1], row[2], s)
    if not rows:
        raise TaxonomyError(f"{path}: no labels")
    D, S = len(rows), len(class_names)
    if sorted(rows) != list(range(D)):
        raise TaxonomyError(f"{path}: label indices must be 0..{D - 1}")
    if sorted(class_names) != list(range(S)):
        raise TaxonomyError(f"{path}: class indices must be 0..{S - 1}")
    wnids = tuple(rows[i][1] for i in range(D))
    return LabelTaxonomy(
        class_of=np.array([rows[i][2] for i in range(D)]),
        class_names=tuple(class_names[s] for s in range(S)),
        label_names=tuple(rows[i][0] for i in range(D)),
        wnid=wnids if all(wnids) else (),
    )


class HypernymGraph:
    """Directed acyclic is-a graph with a single root."""

    def __init__(self, parents):
        self.parents = {k: frozenset(v) for k, v in parents.items()}
        for ps in list(self.parents.values()):
            for p in ps:
                self.parents.setdefault(p, frozenset())
        roots = [n for n, ps in self.parents.items() if not ps]
        if len(roots) != 1:
            raise TaxonomyError(f"expected exactly one root, found {len(roots)}")
        self.root = roots[0]
        self._check_acyclic()
        self._paths = {}

    @property
    def nodes(self):
        return set(self.parents)

    def _check_acyclic(self):
        state = {}
        for start in self.parents:
            if start in state:
                continue
            stack = [(start, iter(self.parents[start]))]
            state[start] = 1
            while stack:
                node, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    state[node] = 2
                    stack.pop()
                elif state.get(nxt) == 1:
                    raise TaxonomyError(f"cycle through {nxt}")
                elif nxt not in state:
                    state[nxt] = 1
                    stack.append((nxt, iter(self.parents[nxt])))

    def _require(self, node):
        if node not in self.parents:
            raise KeyError(f"unknown node {node!r}")

    def paths_to_root(self, node):
        """All root-to-``node`` paths, each a tuple starting at the root."""
        self._require(node)
        if node not in self._paths:
            ps = self.parents[node]
            self._paths[node] = [(node,)] if not ps else [q + (node,) for p in ps for q in self.paths_to_root(p)]
        return self._paths[node]


def wu_palmer(g, a, b):
    """Wu-Palmer similarity 2*depth(lcs) / (depth(a) + depth(b)).

    Depths count nodes from the root (root = 1). With several hypernym paths
    per node, the pair of paths giving the highest score is used; the common
    subsumer is the deepest node shared by the two chosen paths.
    """
    g._require(a)
    g._require(b)
    if a == b:
        return 1.0
    best = 0.0
    paths_b = g.paths_to_root(b)
    for pa in g.paths_to_root(a):
        for pb in paths_b:
            shared = 0
            for x, y in zip(pa, pb):
                if x != y:
                    break
                shared += 1
            score = 2.0 * shared / (len(pa) + len(pb))
            if score > best:
                best = score
    return best


def load_hypernyms(path):
    """Read a ``child_wnid,parent_wnid`` CSV into a :class:`HypernymGraph`."""
    parents = {}
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TaxonomyError(f"{path}: empty file")
        if [h.strip() for h in header] != ["child_wnid", "parent_wnid"]:
            raise TaxonomyError(f"{path}:1: bad header {header!r}")
        for row in reader:
            if not row:
                continue
            if len(row) != 2 or not row[0] or not row[1]:
                raise TaxonomyError(f"{path}:{reader.line_num}: expected child,parent")
            parents.setdefault(row[0], set()).add(row[1])
    if not parents:
        raise TaxonomyError(f"{path}: no edges")
    return HypernymGraph(parents)


def _data_path(name):
    return Path(str(resources.files("filterfool") / "data" / name))


def imagenet_taxonomy():
    return load_taxonomy(_data_path("imagenet_taxonomy.csv"))


def imagenet_hypernyms():
    return load_hypernyms(_data_path("imagenet_hypernyms.csv"))


def save_taxonomy(tax, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["label_index", "label_name", "wnid", "class_index", "class_name"])
        for i in range(tax.D):
            wnid = tax.wnid[i] if tax.wnid else ""
            wr.writerow([i, tax.label_names[i], wnid, int(tax.class_of[i]), tax.class_names[tax.class_of[i]]])
