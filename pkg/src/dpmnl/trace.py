"""Line-delimited JSON persistence of posterior samples.

Layout (version 1)
------------------
Line 1 is a header object::

    {"format": "dpmnl-trace", "version": 1, "model": "dpmnl" | "mnl",
     "chain": int, "seed": int, "features": "linear" | "quadratic",
     "config": {...ChainConfig...}, "prior": {...PriorSpec...},
     "data": {"n": int, "p": int, "n_classes": int, "sources": [[start, stop], ...] | null,
              "sha256": hex digest of the training data},
     "hierarchy": {"branches": [[parent, child], ...], "paths": [[int, ...], ...],
                   "leaf_to_parent": {"1": name, ...}} | null}

Every following line is one retained sample::

    {"chain": int, "iteration": int, "log_lik": float,
     "hyper": {"mu0": [...], "sigma0": [...], "m_sigma": [...], "v_sigma": [...],
               "eta": float, "xi": [...], "ard": [...], "gamma": float,
               "source_of": [...]},
     "components": [{"id": int, "count": int, "mu": [...], "sigma": [...],
                     "phi": [[...], ...], "nu_c": float, "tau_c": float}, ...],
     "assign": [int, ...]}

Keys are sorted and floats are written with shortest round-trip precision,
so identical runs produce identical bytes and reading a trace restores every
value exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .data import data_checksum
from .engine import ChainConfig, PosteriorSample
from .model import ClassHierarchy, ComponentParams, Dataset, HyperState, MixtureState, PriorSpec
from .samplers import HmcConfig, SliceConfig

FORMAT = "dpmnl-trace"
VERSION = 1


class TraceFormatError(ValueError):
    pass


@dataclass(eq=False)
class TraceHeader:
    model: str
    chain: int
    seed: int
    config: ChainConfig
    prior: PriorSpec
    n: int
    p: int
    n_classes: int
    sources: list | None
    sha256: str
    hierarchy: ClassHierarchy | None
    features: str = "linear"

    def composition(self) -> np.ndarray:
        if self.hierarchy is None:
            return np.eye(self.n_classes)
        return self.hierarchy.composition_matrix()


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def header_dict(header: TraceHeader) -> dict:
    h = header.hierarchy
    return {
        "format": FORMAT,
        "version": VERSION,
        "model": header.model,
        "chain": header.chain,
        "seed": header.seed,
        "features": header.features,
        "config": asdict(header.config),
        "prior": asdict(header.prior),
        "data": {
            "n": header.n,
            "p": header.p,
            "n_classes": header.n_classes,
            "sources": [list(s) for s in header.sources] if header.sources else None,
            "sha256": header.sha256,
        },
        "hierarchy": None
        if h is None
        else {
            "branches": [list(b) for b in h.branches],
            "paths": h.paths,
            "leaf_to_parent": {str(k): v for k, v in h.leaf_to_parent.items()},
        },
    }


def make_header(data: Dataset, config: ChainConfig, prior: PriorSpec, chain: int, model: str, hierarchy=None, features="linear") -> TraceHeader:
    return TraceHeader(
        model=model,
        chain=chain,
        seed=config.seed,
        config=config,
        prior=prior,
        n=data.n,
        p=data.p,
        n_classes=data.n_classes,
        sources=data.sources,
        sha256=data_checksum(data),
        hierarchy=hierarchy,
        features=features,
    )


def sample_dict(sample: PosteriorSample) -> dict:
    st, hy = sample.state, sample.hyper
    return {
        "chain": sample.chain,
        "iteration": sample.iteration,
        "log_lik": sample.log_lik,
        "hyper": {
            "mu0": hy.mu0.tolist(),
            "sigma0": hy.sigma0.tolist(),
            "m_sigma": hy.m_sigma.tolist(),
            "v_sigma": hy.v_sigma.tolist(),
            "eta": float(hy.eta),
            "xi": hy.xi.tolist(),
            "ard": hy.ard.tolist(),
            "gamma": float(hy.gamma),
            "source_of": hy.source_of.tolist(),
        },
        "components": [
            {
                "id": int(cid),
                "count": int(st.counts[cid]),
                "mu": theta.mu.tolist(),
                "sigma": theta.sigma.tolist(),
                "phi": theta.phi.tolist(),
                "nu_c": float(theta.nu_c),
                "tau_c": float(theta.tau_c),
            }
            for cid, theta in st.components.items()
        ],
        "assign": st.assign.tolist(),
    }


class TraceWriter:
    """Context manager writing one chain's trace file."""

    def __init__(self, path, header: TraceHeader):
        self.path = path
        self.header = header
        self._fh = None

    def __enter__(self):
        self._fh = open(self.path, "w")
        self._fh.write(_dumps(header_dict(self.header)) + "\n")
        return self

    def write(self, sample: PosteriorSample):
        self._fh.write(_dumps(sample_dict(sample)) + "\n")

    def __exit__(self, *exc):
        self._fh.close()
        self._fh = None


def write_trace(path, header: TraceHeader, samples) -> None:
    with TraceWriter(path, header) as w:
        for s in samples:
            w.write(s)


def _from_fields(cls, d: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise TraceFormatError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**d)


def parse_header(d: dict) -> TraceHeader:
    if d.get("format") != FORMAT:
        raise TraceFormatError("not a dpmnl trace file")
    if d.get("version") != VERSION:
        raise TraceFormatError(f"unsupported trace version {d.get('version')}")
    cfg = dict(d["config"])
    cfg["slice"] = _from_fields(SliceConfig, cfg["slice"])
    cfg["hmc"] = _from_fields(HmcConfig, cfg["hmc"])
    config = _from_fields(ChainConfig, cfg)
    prior = _from_fields(PriorSpec, d["prior"])
    h = d.get("hierarchy")
    hierarchy = None
    if h is not None:
        hierarchy = ClassHierarchy(
            branches=[tuple(b) for b in h["branches"]],
            paths=h["paths"],
            leaf_to_parent={int(k): v for k, v in h["leaf_to_parent"].items()},
        )
    data = d["data"]
    return TraceHeader(
        model=d["model"],
        chain=d["chain"],
        seed=d["seed"],
        config=config,
        prior=prior,
        n=data["n"],
        p=data["p"],
        n_classes=data["n_classes"],
        sources=[tuple(s) for s in data["sources"]] if data["sources"] else None,
        sha256=data["sha256"],
        hierarchy=hierarchy,
        features=d.get("features", "linear"),
    )


def parse_sample(d: dict, composition) -> PosteriorSample:
    hy = d["hyper"]
    hyper = HyperState(
        mu0=np.array(hy["mu0"], dtype=float),
        sigma0=np.array(hy["sigma0"], dtype=float),
        m_sigma=np.array(hy["m_sigma"], dtype=float),
        v_sigma=np.array(hy["v_sigma"], dtype=float),
        eta=hy["eta"],
        xi=np.array(hy["xi"], dtype=float),
        ard=np.array(hy["ard"], dtype=float),
        gamma=hy["gamma"],
        source_of=np.array(hy["source_of"], dtype=np.int64),
    )
    p = hyper.mu0.size
    components, counts = {}, {}
    for c in d["components"]:
        phi = np.array(c["phi"], dtype=float).reshape(composition.shape[1], p + 1)
        components[c["id"]] = ComponentParams(
            mu=np.array(c["mu"], dtype=float),
            sigma=np.array(c["sigma"], dtype=float),
            phi=phi,
            nu_c=c["nu_c"],
            tau_c=c["tau_c"],
            composition=composition,
        )
        counts[c["id"]] = c["count"]
    state = MixtureState(
        assign=np.array(d["assign"], dtype=np.int64),
        components=components,
        counts=counts,
        next_id=max(components, default=-1) + 1,
    )
    return PosteriorSample(state, hyper, d["iteration"], d["chain"], d["log_lik"])


def read_trace(path):
    """Returns ``(header, samples)``."""
    with open(path) as fh:
        first = fh.readline()
        if not first:
            raise TraceFormatError(f"{path}: empty trace file")
        try:
            header = parse_header(json.loads(first))
        except (KeyError, json.JSONDecodeError) as exc:
            raise TraceFormatError(f"{path}: bad header ({exc})") from exc
        composition = header.composition()
        samples = []
        for lineno, line in enumerate(fh, start=2):
            try:
                samples.append(parse_sample(json.loads(line), composition))
            except (KeyError, ValueError) as exc:
                raise TraceFormatError(f"{path}:{lineno}: bad sample ({exc})") from exc
    return header, samples
