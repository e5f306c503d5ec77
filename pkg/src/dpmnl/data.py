"""Synthetic data generators, dataset files, and feature transforms.

Dataset file format
-------------------
Delimited text, one case per line.  The first field is the integer class
label (1..J); the remaining ``p`` fields are real covariates.  Fields are
separated by tabs, commas, or runs of whitespace.  A first line that does not
parse as numbers is treated as a header.  Lines starting with ``#`` and blank
lines are ignored.

Hierarchy file format
---------------------
One line per leaf: ``leaf_id<TAB>path/of/internal/nodes``.  The path lists
the internal nodes from just below the root down to the leaf's parent,
separated by ``/``.  An empty path (or ``.``) puts the leaf directly under
the root.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass

import numpy as np

from .model import ClassHierarchy, Dataset, ModelError


class DataFormatError(ValueError):
    """A dataset or hierarchy file could not be parsed."""


# ---------------------------------------------------------------------------
# Simulations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimSpec:
    which: str = "sim1"
    n_total: int = 10000
    n_train: int = 100
    n_test: int | None = None
    seed: int = 0
    # sim1
    n_components: int = 2
    p: int = 5
    n_classes: int = 4
    mu_sd: float = 1.0
    logvar_sd: float = 2.0
    log_tau2_sd: float = 0.1
    log_nu2_sd: float = 2.0
    # sim2 exponent constants and coefficient distribution
    power: float = 1.04
    shift1: float = 1.2
    shift2: float = 0.7
    offset: float = 2.0
    a_mean: float = 1.0
    a_sd: float = 0.5
    x_high: float = 5.0

    def __post_init__(self):
        if self.which not in ("sim1", "sim2"):
            raise ValueError(f"unknown simulation {self.which!r}")
        if not 0 < self.n_train < self.n_total:
            raise ValueError("need 0 < n_train < n_total")
        if self.n_test is not None and not 0 < self.n_test <= self.n_total - self.n_train:
            raise ValueError("n_test must be positive and at most n_total - n_train")
        if self.which == "sim1" and self.n_total % self.n_components:
            raise ValueError("n_total must split evenly across components")


def _split(spec: SimSpec, rng, x, y, n_classes, extra=None):
    perm = rng.permutation(x.shape[0])
    train = perm[: spec.n_train]
    rest = perm[spec.n_train :]
    test = rest if spec.n_test is None else rest[: spec.n_test]
    groups = None if extra is None else (extra[train], extra[test])
    return Dataset(x[train], y[train], n_classes), Dataset(x[test], y[test], n_classes), groups


def sample_mnl_labels(rng, x, alpha, beta) -> np.ndarray:
    """Draw 1-based labels from the MNL model row by row."""
    logits = alpha + x @ beta
    logits -= logits.max(axis=1, keepdims=True)
    prob = np.exp(logits)
    prob /= prob.sum(axis=1, keepdims=True)
    u = rng.random(x.shape[0])
    labels = (prob.cumsum(axis=1) < u[:, None]).sum(axis=1)
    return np.minimum(labels, alpha.size - 1) + 1


def generate_sim1(spec: SimSpec, rng=None):
    """Data from a two-component mixture of Gaussian-covariate MNL models.

    Component parameters come from the fixed generating prior
    ``mu_l ~ N(0, 1)``, ``log sigma_l^2 ~ N(0, 2^2)``, ``log tau^2 ~ N(0, 0.1^2)``,
    ``log nu^2 ~ N(0, 2^2)``, ``alpha_j ~ N(0, tau^2)``, ``beta_jl ~ N(0, nu^2)``.

    Returns
    -------
    train, test : Dataset
    truth : dict
        ``components`` (list of dicts with mu, sigma, alpha, beta (p x J),
        tau, nu), and per-row component ids ``train_component`` /
        ``test_component``.
    """
    if spec.which != "sim1":
        raise ValueError("spec.which must be 'sim1'")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    p, J = spec.p, spec.n_classes
    per = spec.n_total // spec.n_components
    comps = []
    xs, ys, groups = [], [], []
    for c in range(spec.n_components):
        mu = rng.normal(0.0, spec.mu_sd, p)
        sigma = np.exp(0.5 * rng.normal(0.0, spec.logvar_sd, p))
        tau = math.exp(0.5 * rng.normal(0.0, spec.log_tau2_sd))
        nu = math.exp(0.5 * rng.normal(0.0, spec.log_nu2_sd))
        alpha = rng.normal(0.0, tau, J)
        beta = rng.normal(0.0, nu, (p, J))
        comps.append(dict(mu=mu, sigma=sigma, alpha=alpha, beta=beta, tau=tau, nu=nu))
        x = mu + sigma * rng.standard_normal((per, p))
        xs.append(x)
        ys.append(sample_mnl_labels(rng, x, alpha, beta))
        groups.append(np.full(per, c))
    x = np.vstack(xs)
    y = np.concatenate(ys)
    train, test, (g_train, g_test) = _split(spec, rng, x, y, J, np.concatenate(groups))
    truth = dict(components=comps, train_component=g_train, test_component=g_test)
    return train, test, truth


def sim2_prob_class1(x, a, spec: SimSpec | None = None) -> np.ndarray:
    """``P(y = 1 | x)`` of the smooth nonlinear generator; ``x`` has 3 columns."""
    spec = spec or SimSpec(which="sim2")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if np.any(x[:, 0] < 0):
        raise ValueError("first covariate must be non-negative (fractional power)")
    a1, a2, a3 = a
    expo = (
        a1 * np.sin(x[:, 0] ** spec.power + spec.shift1)
        + x[:, 0] * np.cos(a2 * x[:, 1] + spec.shift2)
        + a3 * x[:, 2]
        - spec.offset
    )
    return 1.0 / (1.0 + np.exp(expo))


def generate_sim2(spec: SimSpec, rng=None):
    """Binary data from a smooth nonlinear function of three uniform covariates.

    Returns ``(train, test, truth)`` with ``truth = {"a": (a1, a2, a3)}``.
    """
    if spec.which != "sim2":
        raise ValueError("spec.which must be 'sim2'")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    a = rng.normal(spec.a_mean, spec.a_sd, 3)
    x = rng.uniform(0.0, spec.x_high, (spec.n_total, 3))
    prob1 = sim2_prob_class1(x, a, spec)
    y = np.where(rng.random(spec.n_total) < prob1, 1, 2)
    train, test, _ = _split(spec, rng, x, y, 2)
    return train, test, dict(a=tuple(float(v) for v in a))


def generate(spec: SimSpec, rng=None):
    return (generate_sim1 if spec.which == "sim1" else generate_sim2)(spec, rng)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

_SPLIT = re.compile(r"[,\t ]+")


def _fields(line: str):
    return [f for f in _SPLIT.split(line.strip()) if f]


def load_dataset(
    path,
    n_classes: int | None = None,
    sources=None,
    hierarchy_path=None,
) -> Dataset:
    """Read a dataset file (see module docstring).

    Parameters
    ----------
    n_classes : int, optional
        Number of classes; defaults to the largest label present.
    sources : list of (start, stop), optional
        0-based half-open covariate blocks.
    hierarchy_path : path, optional
        Class hierarchy file, attached to the returned dataset.
    """
    rows, labels = [], []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = _fields(stripped)
            try:
                values = [float(f) for f in fields]
            except ValueError:
                if not rows and width is None:
                    width = len(fields)  # header
                    continue
                raise DataFormatError(f"{path}:{lineno}: non-numeric field in {fields!r}")
            if len(values) < 2:
                raise DataFormatError(f"{path}:{lineno}: need a label and at least one covariate")
            if rows and len(values) != len(rows[0]) + 1:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(rows[0]) + 1} fields, got {len(values)}"
                )
            label = values[0]
            if label != int(label) or label < 1:
                raise DataFormatError(f"{path}:{lineno}: label {fields[0]!r} is not a positive integer")
            if n_classes is not None and label > n_classes:
                raise DataFormatError(f"{path}:{lineno}: label {int(label)} outside 1..{n_classes}")
            if not all(math.isfinite(v) for v in values[1:]):
                raise DataFormatError(f"{path}:{lineno}: non-finite covariate")
            labels.append(int(label))
            rows.append(values[1:])
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    J = n_classes if n_classes is not None else max(labels)
    hierarchy = load_hierarchy(hierarchy_path, J) if hierarchy_path else None
    return Dataset(np.array(rows), np.array(labels), J, sources, hierarchy)


def save_dataset(data: Dataset, path) -> None:
    """Write ``data`` in the dataset file format (tab separated, exact floats)."""
    with open(path, "w") as fh:
        for label, row in zip(data.y, data.x):
            fh.write("\t".join([str(int(label))] + [repr(float(v)) for v in row]) + "\n")


def data_checksum(data: Dataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(data.x, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(data.y, dtype="<i8").tobytes())
    h.update(str(data.n_classes).encode())
    return h.hexdigest()


def load_hierarchy(path, n_classes: int) -> ClassHierarchy:
    """Parse a hierarchy file into a :class:`ClassHierarchy` with ``n_classes``
    leaves.  Branches are numbered in order of first appearance, scanning leaves
    by label and each path from the root down."""
    leaf_paths = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.rstrip("\n")
            if not stripped.strip() or stripped.lstrip().startswith("#"):
                continue
            parts = stripped.split("\t")
            if len(parts) == 1:
                parts = stripped.split(None, 1)
            leaf_text = parts[0].strip()
            path_text = parts[1].strip() if len(parts) > 1 else ""
            try:
                leaf = int(leaf_text)
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: leaf id {leaf_text!r} is not an integer")
            if not 1 <= leaf <= n_classes:
                raise DataFormatError(f"{path}:{lineno}: leaf {leaf} outside 1..{n_classes}")
            if leaf in leaf_paths:
                raise DataFormatError(f"{path}:{lineno}: leaf {leaf} listed twice")
            nodes = [] if path_text in ("", ".", "/") else [n for n in path_text.strip("/").split("/")]
            if any(not n.strip() for n in nodes):
                raise DataFormatError(f"{path}:{lineno}: empty node name in path {path_text!r}")
            nodes = [n.strip() for n in nodes]
            if len(set(nodes)) != len(nodes) or "root" in nodes:
                raise DataFormatError(f"{path}:{lineno}: cycle in path {path_text!r}")
            leaf_paths[leaf] = nodes
    if len(leaf_paths) != n_classes:
        missing = sorted(set(range(1, n_classes + 1)) - set(leaf_paths))
        raise DataFormatError(f"{path}: expected {n_classes} leaves, missing {missing}")
    return hierarchy_from_paths([leaf_paths[j] for j in range(1, n_classes + 1)], source=path)


def hierarchy_from_paths(node_paths, source="<paths>") -> ClassHierarchy:
    """Build a tree from per-leaf lists of internal node names (root excluded)."""
    parent_of = {}
    branch_index = {}
    branches = []
    paths = []
    leaf_to_parent = {}
    leaf_names = {str(j + 1) for j in range(len(node_paths))}
    for j, nodes in enumerate(node_paths):
        chain = ["root"] + list(nodes) + [str(j + 1)]
        for node in nodes:
            if node in leaf_names:
                raise DataFormatError(f"{source}: node {node!r} is both a leaf and internal")
        path = []
        for parent, child in zip(chain[:-1], chain[1:]):
            known = parent_of.get(child)
            if known is not None and known != parent:
                raise DataFormatError(
                    f"{source}: node {child!r} has two parents ({known!r}, {parent!r})"
                )
            parent_of[child] = parent
            edge = (parent, child)
            if edge not in branch_index:
                branch_index[edge] = len(branches)
                branches.append(edge)
            path.append(branch_index[edge])
        paths.append(path)
        leaf_to_parent[j + 1] = chain[-2]
    return ClassHierarchy(branches=branches, paths=paths, leaf_to_parent=leaf_to_parent)


def save_hierarchy(h: ClassHierarchy, path) -> None:
    parent_of = {child: parent for parent, child in h.branches}
    with open(path, "w") as fh:
        for j in range(1, h.n_classes + 1):
            nodes = []
            node = parent_of[str(j)]
            while node != h.root:
                nodes.append(node)
                node = parent_of[node]
            fh.write(f"{j}\t{'/'.join(reversed(nodes))}\n")


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------


def center_covariates(train: Dataset, test: Dataset | None = None):
    """Subtract training column means from train (and test).

    Returns ``(train', test', means)``; ``test'`` is ``None`` when no test set
    is given.
    """
    if train.n == 0:
        raise ValueError("cannot center an empty training set")
    means = train.x.mean(axis=0)
    new_train = train.subset(slice(None))
    new_train.x = train.x - means
    new_test = None
    if test is not None:
        new_test = test.subset(slice(None))
        new_test.x = test.x - means
    return new_train, new_test, means


def quadratic_pairs(p: int):
    """Column order of the appended products: ``(l, k)`` for ``l <= k``, row-major."""
    return [(l, k) for l in range(p) for k in range(l, p)]


def expand_quadratic(data: Dataset) -> Dataset:
    """Append every product ``x_l * x_k`` with ``l <= k``.

    Existing source blocks are kept and the products form one extra block.
    """
    if data.p < 1:
        raise ValueError("need at least one covariate")
    pairs = quadratic_pairs(data.p)
    left = np.array([l for l, _ in pairs])
    right = np.array([k for _, k in pairs])
    products = data.x[:, left] * data.x[:, right]
    sources = None
    if data.sources:
        sources = list(data.sources) + [(data.p, data.p + len(pairs))]
    return Dataset(
        np.hstack([data.x, products]), data.y, data.n_classes, sources, data.hierarchy
    )


def assemble_sources(datasets) -> Dataset:
    """Concatenate feature sets for the same cases, one source block each."""
    datasets = list(datasets)
    if not datasets:
        raise ValueError("need at least one dataset")
    first = datasets[0]
    for s, d in enumerate(datasets[1:], start=1):
        if d.n != first.n:
            raise ValueError(f"source {s} has {d.n} cases, expected {first.n}")
        bad = np.flatnonzero(d.y != first.y)
        if bad.size:
            raise ValueError(
                f"source {s}: label mismatch at case {int(bad[0])} "
                f"({int(d.y[bad[0]])} vs {int(first.y[bad[0]])})"
            )
    blocks, start = [], 0
    for d in datasets:
        blocks.append((start, start + d.p))
        start += d.p
    J = max(d.n_classes for d in datasets)
    return Dataset(
        np.hstack([d.x for d in datasets]), first.y, J, blocks, first.hierarchy
    )
