"""Repeated train/test experiments and their summary tables.

Every repetition fits each requested model on the same split, evaluates it
on the test cases, and the per-model metrics are aggregated into a table of
means and standard deviations with paired t-test p-values against dpMNL.
Simulations regenerate data in every repetition; the protein experiments
reuse one fixed split and vary only the chain seeds.

Outputs written to the output directory:

``results.txt``
    Aligned plain-text table.
``results.tsv``
    The same table, tab separated.
``runs.tsv``
    One line per (repetition, model) with the raw metrics.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import baseline_majority, fit_bayes_mnl, fit_mnl_ml, mnl_predict
from .config import EXPERIMENTS, MODELS, Config
from .data import (
    SimSpec,
    assemble_sources,
    center_covariates,
    expand_quadratic,
    generate,
    load_dataset,
    load_hierarchy,
)
from .engine import ChainConfig, run_chains
from .metrics import MetricsReport, evaluate, paired_t_test
from .model import Dataset, PriorSpec
from .predict import posterior_predictive
from .samplers import make_rng

logger = logging.getLogger(__name__)

MODEL_LABELS = {
    "baseline": "Baseline",
    "mnl-ml": "MNL (ML)",
    "mnl": "MNL",
    "qmnl": "qMNL",
    "cormnl": "corMNL",
    "dpmnl": "dpMNL",
    "dpcormnl": "dpCorMNL",
}

DEFAULT_MODELS = {
    "sim1": ("baseline", "mnl-ml", "mnl", "qmnl", "dpmnl"),
    "sim2": ("baseline", "mnl-ml", "mnl", "qmnl", "dpmnl"),
    "protein": ("baseline", "mnl", "dpmnl"),
    "protein-hier": ("mnl", "cormnl", "dpmnl", "dpcormnl"),
    "protein-multisource": ("mnl", "dpmnl"),
}

PROTEIN_FORMAT = (
    "protein fold data (Ding and Dubchak feature files, not shipped) must be "
    "supplied as dataset files: one case per line, fold label 1..27 then the "
    "covariates, tab/comma/space separated"
)


class ExperimentError(RuntimeError):
    pass


@dataclass
class ExperimentSpec:
    id: str = "sim1"
    repetitions: int = 10
    models: tuple = ()
    chain: ChainConfig = field(default_factory=ChainConfig)
    prior: PriorSpec = field(default_factory=PriorSpec.simulation)
    sim: SimSpec = field(default_factory=SimSpec)
    out_dir: str | None = None
    seed: int = 0
    ml_ridge: float = 1e-4
    n_jobs: int = 1
    train_path: str | None = None
    test_path: str | None = None
    n_classes: int | None = None
    center: bool = False
    hierarchy_path: str | None = None
    sources: list = field(default_factory=list)

    def __post_init__(self):
        if self.id not in EXPERIMENTS:
            raise ExperimentError(f"unknown experiment {self.id!r}")
        if self.repetitions < 1:
            raise ExperimentError("repetitions must be at least 1")
        if not self.models:
            self.models = DEFAULT_MODELS[self.id]
        bad = [m for m in self.models if m not in MODELS]
        if bad:
            raise ExperimentError(f"unknown models {bad}")
        if len(set(self.models)) != len(self.models):
            raise ExperimentError("duplicate models")
        if self.is_simulation:
            self.sim = replace(self.sim, which=self.id)

    @property
    def is_simulation(self) -> bool:
        return self.id in ("sim1", "sim2")

    @classmethod
    def from_config(cls, cfg: Config, out_dir=None, seed=None, chains=None) -> "ExperimentSpec":
        """Fill the experiment-specific defaults left open by the config file.

        Simulations use the simulation prior preset, uncentered covariates and
        the desk-scale chain (2000 iterations, 200 burn-in).  Protein runs use
        the protein prior, centered covariates and 4 chains of 10000
        iterations with 1000 burn-in.
        """
        exp = cfg.experiment
        sim_like = exp.id in ("sim1", "sim2")
        prior = cfg.prior or (PriorSpec.simulation() if sim_like else PriorSpec())
        chain = cfg.chain or (
            ChainConfig() if sim_like else ChainConfig(n_iterations=10000, burn_in=1000, n_chains=4)
        )
        if chains is not None:
            chain = replace(chain, n_chains=chains)
        center = cfg.center if cfg.center is not None else not sim_like
        return cls(
            id=exp.id,
            repetitions=exp.repetitions,
            models=tuple(exp.models or ()),
            chain=chain,
            prior=prior,
            sim=cfg.sim,
            out_dir=out_dir,
            seed=exp.seed if seed is None else seed,
            ml_ridge=exp.ml_ridge,
            n_jobs=exp.n_jobs,
            train_path=cfg.train_path,
            test_path=cfg.test_path,
            n_classes=cfg.n_classes,
            center=center,
            hierarchy_path=cfg.hierarchy_path,
            sources=list(cfg.sources),
        )


def repetition_seed(seed: int, rep: int) -> int:
    """Chain seed for one repetition, shared by every model of that repetition."""
    return int(np.random.SeedSequence([seed, rep]).generate_state(1)[0])


def _require(path, what):
    if not path:
        raise ExperimentError(f"missing {what}: {PROTEIN_FORMAT}")
    if not os.path.exists(path):
        raise ExperimentError(f"{what} not found at {path}: {PROTEIN_FORMAT}")


def load_protein(spec: ExperimentSpec):
    """Load the fixed protein split, assembling sources and centering as configured."""
    if spec.id == "protein-multisource":
        if not spec.sources:
            raise ExperimentError(f"missing [sources] entries: {PROTEIN_FORMAT}")
        trains, tests = [], []
        for name, tr_path, te_path in spec.sources:
            _require(tr_path, f"training file for source {name!r}")
            _require(te_path, f"test file for source {name!r}")
            trains.append(load_dataset(tr_path, spec.n_classes))
            tests.append(load_dataset(te_path, spec.n_classes))
        J = max(d.n_classes for d in trains + tests)
        train = assemble_sources([replace_classes(d, J) for d in trains])
        test = assemble_sources([replace_classes(d, J) for d in tests])
    else:
        _require(spec.train_path, "training file ([data] train)")
        _require(spec.test_path, "test file ([data] test)")
        train = load_dataset(spec.train_path, spec.n_classes)
        test = load_dataset(spec.test_path, spec.n_classes)
        J = max(train.n_classes, test.n_classes)
        train, test = replace_classes(train, J), replace_classes(test, J)
    if spec.hierarchy_path:
        h = load_hierarchy(spec.hierarchy_path, train.n_classes)
        train.hierarchy = h
        test.hierarchy = h
    elif spec.id == "protein-hier" or {"cormnl", "dpcormnl"} & set(spec.models):
        raise ExperimentError("hierarchical models need a [hierarchy] path")
    if spec.center:
        train, test, _ = center_covariates(train, test)
    return train, test


def replace_classes(data: Dataset, n_classes: int) -> Dataset:
    return Dataset(data.x, data.y, n_classes, data.sources, data.hierarchy)


def fit_and_evaluate(model: str, train: Dataset, test: Dataset, spec: ExperimentSpec, seed: int) -> MetricsReport:
    """Fit one model on ``train`` and score its predictions on ``test``."""
    h = test.hierarchy
    if model == "baseline":
        return baseline_majority(train, test)
    if model == "mnl-ml":
        fit = fit_mnl_ml(train, reg=spec.ml_ridge)
        probs = mnl_predict(test.x, fit.alpha, fit.beta)
        return evaluate(np.argmax(probs, axis=1) + 1, test.y, test.n_classes, h)

    config = replace(spec.chain, seed=seed)
    hierarchy = train.hierarchy if model in ("cormnl", "dpcormnl") else None
    if model in ("cormnl", "dpcormnl") and hierarchy is None:
        raise ExperimentError(f"model {model!r} needs a class hierarchy")
    if model == "qmnl":
        train, test = expand_quadratic(train), expand_quadratic(test)
    conditional = model in ("mnl", "qmnl", "cormnl")
    if conditional:
        chains = fit_bayes_mnl(train, spec.prior, config, hierarchy, n_jobs=1)
    else:
        chains = run_chains(train, config, spec.prior, hierarchy, n_jobs=1)
    samples = [s for chain in chains for s in chain]
    composition = np.eye(train.n_classes) if hierarchy is None else hierarchy.composition_matrix()
    report = posterior_predictive(
        test.x,
        samples,
        spec.prior,
        composition,
        n_g0_draws=config.n_g0_draws,
        rng=make_rng(seed, stream=config.n_chains),
        conditional=conditional,
    )
    return evaluate(report.labels, test.y, test.n_classes, h)


def run_repetition(spec: ExperimentSpec, rep: int, fixed=None) -> dict:
    """Metrics of every model for repetition ``rep`` (0-based)."""
    if fixed is None:
        sim = replace(spec.sim, seed=spec.seed + rep)
        train, test, _ = generate(sim)
        if spec.center:
            train, test, _ = center_covariates(train, test)
    else:
        train, test = fixed
    seed = repetition_seed(spec.seed, rep)
    out = {}
    for model in spec.models:
        logger.info("repetition %d: fitting %s", rep + 1, model)
        out[model] = fit_and_evaluate(model, train, test, spec, seed)
    return out


def _run_repetition_args(args):
    return run_repetition(*args)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    runs: list  # one {model: MetricsReport} per repetition

    def metric_names(self) -> list:
        names = ["accuracy", "f1"]
        if any(r.parent_accuracy is not None for run in self.runs for r in run.values()):
            names.append("parent_accuracy")
        return names

    def values(self, model: str, metric: str) -> np.ndarray:
        return np.array([getattr(run[model], metric) for run in self.runs], dtype=float)


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    fixed = None if spec.is_simulation else load_protein(spec)
    jobs = [(spec, rep, fixed) for rep in range(spec.repetitions)]
    if spec.n_jobs > 1 and spec.repetitions > 1:
        with ProcessPoolExecutor(max_workers=spec.n_jobs) as pool:
            runs = list(pool.map(_run_repetition_args, jobs))
    else:
        runs = [_run_repetition_args(job) for job in jobs]
    result = ExperimentResult(spec, runs)
    if spec.out_dir is not None:
        write_results(result, spec.out_dir)
    return result


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

METRIC_LABELS = {"accuracy": "Accuracy", "f1": "F1", "parent_accuracy": "Parent acc."}


def _fmt(v, digits=2) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{v:.{digits}f}"


def _fmt_p(v) -> str:
    if v is None or math.isnan(v):
        return ""
    return f"{v:.3g}" if v >= 1e-4 else f"{v:.1e}"


def summary_rows(result: ExperimentResult) -> tuple:
    """Header and rows of the summary table (strings only).

    Standard deviations and p-values are blank for a single repetition; the
    p-value column compares accuracy with dpMNL and is blank on its own row.
    """
    reps = result.spec.repetitions
    metrics = result.metric_names()
    header = ["Model"]
    for m in metrics:
        header += [METRIC_LABELS[m], "sd"]
    header.append("p (vs dpMNL)")
    ref = result.values("dpmnl", "accuracy") if "dpmnl" in result.spec.models else None
    rows = []
    for model in result.spec.models:
        row = [MODEL_LABELS[model]]
        for m in metrics:
            v = result.values(model, m)
            if np.isnan(v).all():
                row += ["", ""]
                continue
            row.append(_fmt(float(v.mean())))
            row.append(_fmt(float(v.std(ddof=1))) if reps > 1 else "")
        p = None
        if ref is not None and model != "dpmnl" and reps > 1:
            p = paired_t_test(ref, result.values(model, "accuracy"))
        row.append(_fmt_p(p))
        rows.append(row)
    return header, rows


def format_table(header, rows, title=None) -> str:
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]

    def line(r):
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        return "  ".join(cells).rstrip()

    out = []
    if title:
        out.append(title)
    out.append(line(header))
    out.append("  ".join("-" * w for w in widths))
    out += [line(r) for r in rows]
    return "\n".join(out) + "\n"


def table_title(spec: ExperimentSpec) -> str:
    c = spec.chain
    parts = [
        f"experiment={spec.id}",
        f"repetitions={spec.repetitions}",
        f"seed={spec.seed}",
        f"iterations={c.n_iterations}",
        f"burn_in={c.burn_in}",
        f"chains={c.n_chains}",
    ]
    if "mnl-ml" in spec.models:
        parts.append(f"ml_ridge={spec.ml_ridge:g}")
    return "# " + " ".join(parts)


def write_results(result: ExperimentResult, out_dir) -> dict:
    """Write the three output files; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    header, rows = summary_rows(result)
    paths = {
        "text": os.path.join(out_dir, "results.txt"),
        "tsv": os.path.join(out_dir, "results.tsv"),
        "runs": os.path.join(out_dir, "runs.tsv"),
    }
    with open(paths["text"], "w") as fh:
        fh.write(format_table(header, rows, table_title(result.spec)))
    with open(paths["tsv"], "w") as fh:
        for r in [header] + rows:
            fh.write("\t".join(r) + "\n")
    metrics = result.metric_names()
    with open(paths["runs"], "w") as fh:
        fh.write("\t".join(["repetition", "model"] + metrics) + "\n")
        for rep, run in enumerate(result.runs, start=1):
            for model in result.spec.models:
                vals = [_fmt(getattr(run[model], m), 4) for m in metrics]
                fh.write("\t".join([str(rep), model] + vals) + "\n")
    return paths
