"""Experiment driver: datasets, ambiguity-set construction, solving and reporting."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ambiguity import (BuildTrace, Inequality, ShapeMode, build_ambiguity_set, empirical_model)
from .bayes import (RNG_ALGORITHM, DirichletPosterior, PosteriorSamples, TransitionDataset,
                    dirichlet_posterior, iter_posterior_chunks, policy_returns, sample_posterior,
                    set_membership, uniform_prior)
from .domains import GENERATORS, DomainSpec
from .mdp import TabularMdp, _fmt, _read_header, solve_nominal
from .norms import NormKind
from .robust import (AmbiguitySet, RobustSolution, read_ambiguity_csv, robust_value_iteration,
                     write_ambiguity_csv)

logger = logging.getLogger(__name__)

STREAM_DATASET = 0
STREAM_CONSTRUCTION = 1
STREAM_VALIDATION = 2
GUARANTEE_MARGIN = 0.02
DEFAULT_METHODS = (("l1", "uniform"), ("l1", "analytic"), ("linf", "uniform"), ("linf", "analytic"))


def method_label(norm, shape_mode) -> str:
    norm = NormKind.parse(norm)
    shape = {"uniform": "Uniform", "analytic": "Optimized", "socp": "SOCP"}[ShapeMode(shape_mode).value]
    return f"{shape}-{'L1' if norm is NormKind.L1 else 'Linf'}"


def parse_method(text: str):
    """Inverse of :func:`method_label`, also accepting ``shape-norm`` spellings."""
    shape, _, norm = text.strip().lower().partition("-")
    shape = {"optimized": "analytic", "unif": "uniform"}.get(shape, shape)
    return NormKind.parse(norm).value, ShapeMode(shape).value


@dataclass
class ExperimentConfig:
    """Every knob of one experiment; defaults follow the benchmark setup.

    ``norm`` and ``shape_mode`` select the method for single runs;
    ``methods`` lists the ``(norm, shape_mode)`` grid used by
    :func:`run_experiment`.
    """

    domain: str = "riverswim"
    domain_params: dict = field(default_factory=dict)
    mode: str = "bayesian"
    norm: str = "l1"
    shape_mode: str = "analytic"
    delta: float = 0.05
    n_samples: int = 20
    dataset_size: int = 20
    seeds: tuple = (0,)
    output_dir: str | None = None
    validation_samples: int = 1000
    validate: bool = False
    inequality: str | None = None
    split_data: bool = False
    tol: float = 1e-6
    dataset_mode: str = "per_pair"
    prior_concentration: float = 1.0
    methods: tuple = DEFAULT_METHODS
    jobs: int = 1

    def __post_init__(self):
        self.domain = DomainSpec(self.domain).name
        self.mode = self.mode.lower()
        self.norm = NormKind.parse(self.norm).value
        self.shape_mode = ShapeMode(self.shape_mode).value
        self.seeds = tuple(int(s) for s in self.seeds)
        self.methods = tuple((NormKind.parse(n).value, ShapeMode(m).value) for n, m in self.methods)
        if self.mode not in ("bayesian", "frequentist"):
            raise ValueError(f"mode must be 'bayesian' or 'frequentist', got {self.mode!r}")
        if not 0.0 < self.delta < 0.5:
            raise ValueError(f"delta must lie in (0, 0.5), got {self.delta}")
        if self.n_samples < 1 or self.dataset_size < 1 or self.validation_samples < 1:
            raise ValueError("sample counts must be positive")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.dataset_mode not in ("per_pair", "trajectory"):
            raise ValueError(f"unknown dataset_mode {self.dataset_mode!r}")
        if self.mode == "frequentist" and self.domain == "example1":
            raise ValueError("example1 has no true model to sample data from")

    @property
    def domain_spec(self) -> DomainSpec:
        return DomainSpec(self.domain, dict(self.domain_params))

    def with_method(self, norm, shape_mode) -> "ExperimentConfig":
        return dataclasses.replace(self, norm=norm, shape_mode=shape_mode)


# -- configuration files ------------------------------------------------------

def _parse_value(key, text):
    if key in ("seeds",):
        return tuple(int(x) for x in text.replace(",", " ").split())
    if key == "methods":
        return tuple(parse_method(x) for x in text.split(",") if x.strip())
    if key == "domain_params":
        out = {}
        for item in text.split(","):
            if item.strip():
                k, _, v = item.partition("=")
                v = v.strip()
                out[k.strip()] = float(v) if any(c in v for c in ".e") else int(v)
        return out
    if key in ("delta", "tol", "prior_concentration"):
        return float(text)
    if key in ("n_samples", "dataset_size", "validation_samples", "jobs"):
        return int(text)
    if key in ("validate", "split_data"):
        return text.strip().lower() in ("1", "true", "yes", "on")
    if key in ("output_dir", "inequality") and text.strip().lower() in ("", "none"):
        return None
    return text.strip()


# written by config_to_ini for provenance, ignored on load
_INFORMATIONAL_KEYS = ("discount", "rng")


def load_config(path) -> ExperimentConfig:
    """Read the ``[experiment]`` section of an INI file."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(path)
    if "experiment" not in parser:
        raise ValueError(f"{path} has no [experiment] section")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for key, text in parser["experiment"].items():
        if key in _INFORMATIONAL_KEYS:
            continue
        if key not in known:
            raise ValueError(f"unknown configuration key {key!r}")
        values[key] = _parse_value(key, text)
    return ExperimentConfig(**values)


def config_to_ini(config: ExperimentConfig) -> str:
    parser = configparser.ConfigParser()
    entries = {}
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if f.name == "seeds":
            text = ", ".join(str(s) for s in value)
        elif f.name == "methods":
            text = ", ".join(method_label(n, m) for n, m in value)
        elif f.name == "domain_params":
            text = ", ".join(f"{k}={v!r}" for k, v in value.items())
        else:
            text = str(value)
        entries[f.name] = text
    entries["discount"] = str(config.domain_spec.discount)
    entries["rng"] = RNG_ALGORITHM
    parser["experiment"] = entries
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in parser[section].items())
    return "\n".join(lines) + "\n"


# -- data generation ----------------------------------------------------------

def seed_sequence(seed: int, domain: str, stream: int) -> np.random.SeedSequence:
    """Independent stream per (seed, domain, purpose)."""
    return np.random.SeedSequence([int(seed), sorted(GENERATORS).index(domain), int(stream)])


def _row_sampler(model):
    cdf = np.cumsum(model, axis=-1)
    last = model.shape[-1] - 1 - np.argmax(model[..., ::-1] > 0, axis=-1)
    cdf[np.arange(model.shape[-1]) >= last[..., None]] = np.inf
    return cdf


def generate_dataset(mdp: TabularMdp, model, size: int, rng, mode: str = "per_pair"):
    """Simulate transitions from ``model``.

    ``per_pair`` draws ``size`` successors for every state-action pair.
    ``trajectory`` follows a uniformly random behavior policy from the
    initial distribution for ``size * S * A`` steps.
    """
    n_states, n_actions, _ = mdp.shape
    cdf = _row_sampler(np.asarray(model, dtype=float))
    if mode == "per_pair":
        u = rng.random((n_states, n_actions, size))
        nxt = np.empty(u.shape, dtype=np.int64)
        for s in range(n_states):
            for a in range(n_actions):
                nxt[s, a] = np.searchsorted(cdf[s, a], u[s, a], side="right")
        states = np.repeat(np.arange(n_states), n_actions * size)
        actions = np.tile(np.repeat(np.arange(n_actions), size), n_states)
        return TransitionDataset(states, actions, nxt.reshape(-1), n_states, n_actions)
    if mode != "trajectory":
        raise ValueError(f"unknown dataset mode {mode!r}")
    steps = size * n_states * n_actions
    init_cdf = np.cumsum(mdp.initial)
    state = int(np.searchsorted(init_cdf, rng.random() * init_cdf[-1], side="right"))
    triples = np.empty((steps, 3), dtype=np.int64)
    actions = rng.integers(n_actions, size=steps)
    draws = rng.random(steps)
    for t in range(steps):
        a = actions[t]
        nxt = int(np.searchsorted(cdf[state, a], draws[t], side="right"))
        triples[t] = (state, a, nxt)
        state = nxt
    return TransitionDataset.from_triples(triples, n_states, n_actions)


@dataclass
class SeedContext:
    """Everything shared by all methods for one seed."""

    seed: int
    mdp: TabularMdp
    true_model: np.ndarray | None
    dataset: TransitionDataset | None
    posterior: DirichletPosterior | None
    samples: PosteriorSamples | None
    nominal_model: np.ndarray
    nominal_return: float


def prepare_seed(config: ExperimentConfig, seed: int) -> SeedContext:
    """Dataset, posterior and construction samples for one seed."""
    built = config.domain_spec.build()
    mdp = built[0]
    dataset = posterior = samples = true_model = None
    if isinstance(built[1], DirichletPosterior):
        posterior = built[1]
    else:
        true_model = built[1]
        rng = np.random.default_rng(seed_sequence(seed, config.domain, STREAM_DATASET))
        dataset = generate_dataset(mdp, true_model, config.dataset_size, rng, config.dataset_mode)
    if config.mode == "bayesian":
        if posterior is None:
            prior = uniform_prior(mdp, config.prior_concentration)
            posterior = dirichlet_posterior(dataset, prior)
        samples = sample_posterior(
            posterior, config.n_samples, seed_sequence(seed, config.domain, STREAM_CONSTRUCTION))
        nominal_model = posterior.mean()
    else:
        nominal_model = empirical_model(mdp, dataset)
    values, _ = solve_nominal(mdp, nominal_model, tol=config.tol)
    return SeedContext(seed, mdp, true_model, dataset, posterior, samples, nominal_model,
                       float(mdp.initial @ values))


# -- Algorithm driver ---------------------------------------------------------

@dataclass
class RunRecord:
    config: ExperimentConfig
    seed: int
    ambiguity: AmbiguitySet
    solution: RobustSolution
    trace: BuildTrace
    seconds: float
    directory: Path | None = None


def _construct(config: ExperimentConfig, ctx: SeedContext) -> RunRecord:
    start = time.perf_counter()
    data = ctx.samples if config.mode == "bayesian" else ctx.dataset
    amb, trace = build_ambiguity_set(ctx.mdp, data, config.delta, config.norm, config.shape_mode,
                                     inequality=config.inequality, split_data=config.split_data,
                                     tol=config.tol, return_trace=True)
    solution = robust_value_iteration(ctx.mdp, amb, tol=config.tol)
    record = RunRecord(config, ctx.seed, amb, solution, trace, time.perf_counter() - start)
    if config.output_dir is not None:
        record.directory = persist_run(record)
    return record


def run_algorithm1(config: ExperimentConfig, seed: int | None = None,
                   context: SeedContext | None = None):
    """Build the ambiguity set for ``config`` and solve the robust MDP.

    Returns
    -------
    ambiguity : AmbiguitySet
    solution : RobustSolution
    """
    seed = config.seeds[0] if seed is None else seed
    ctx = context if context is not None else prepare_seed(config, seed)
    record = _construct(config, ctx)
    return record.ambiguity, record.solution


# -- artifacts ----------------------------------------------------------------

def run_directory(config: ExperimentConfig, seed: int) -> Path:
    name = f"{config.domain}-{config.mode}-{method_label(config.norm, config.shape_mode)}-seed{seed}"
    return Path(config.output_dir) / name


def _write_table(path, header, rows, meta=None):
    with Path(path).open("w", newline="") as fh:
        for key, value in (meta or {}).items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def persist_run(record: RunRecord) -> Path:
    """Write the set, the intermediate artifacts and the solution as CSV."""
    directory = run_directory(record.config, record.seed)
    directory.mkdir(parents=True, exist_ok=True)
    mdp_shape = record.ambiguity.shape
    states = range(mdp_shape[0])
    pairs = [(s, a) for s in states for a in range(mdp_shape[1])]
    write_ambiguity_csv(directory / "ambiguity.csv", record.ambiguity)
    _write_table(directory / "nominal_values.csv", ["state", "value"],
                 [[s, _fmt(record.trace.nominal_values[s])] for s in states])
    _write_table(directory / "z.csv", ["idstatefrom", "idaction", "idstateto", "z"],
                 [[s, a, t, _fmt(record.trace.z[s, a, t])] for s, a in pairs
                  for t in np.nonzero(np.isfinite(record.ambiguity.weights[s, a]))[0]])
    _write_table(directory / "uniform_budgets.csv", ["idstatefrom", "idaction", "budget"],
                 [[s, a, _fmt(record.trace.uniform_budgets[s, a])] for s, a in pairs])
    sol = record.solution
    _write_table(directory / "solution.csv", ["state", "value", "action"],
                 [[s, _fmt(sol.value[s]), int(sol.policy[s])] for s in states],
                 meta={"robust_return": _fmt(sol.robust_return), "iterations": sol.iterations,
                       "residual": _fmt(sol.residual)})
    # output_dir is left out so identical runs give identical files
    config = dataclasses.replace(record.config, output_dir=None)
    (directory / "config.ini").write_text(config_to_ini(config))
    return directory


def read_solution_csv(path) -> RobustSolution:
    meta, body = _read_header(Path(path).read_text().splitlines())
    rows = list(csv.DictReader(body))
    return RobustSolution(value=np.array([float(r["value"]) for r in rows]),
                          policy=np.array([int(r["action"]) for r in rows]),
                          robust_return=float(meta["robust_return"]),
                          iterations=int(meta["iterations"]), residual=float(meta["residual"]))


def read_run(directory):
    """Load ``(ambiguity, solution, uniform_budgets, nominal_values)`` from a run directory."""
    directory = Path(directory)
    amb = read_ambiguity_csv(directory / "ambiguity.csv")
    sol = read_solution_csv(directory / "solution.csv")
    with (directory / "uniform_budgets.csv").open(newline="") as fh:
        psi = np.zeros(amb.budgets.shape)
        for r in csv.DictReader(fh):
            psi[int(r["idstatefrom"]), int(r["idaction"])] = float(r["budget"])
    with (directory / "nominal_values.csv").open(newline="") as fh:
        values = np.array([float(r["value"]) for r in csv.DictReader(fh)])
    return amb, sol, psi, values


# -- validation ---------------------------------------------------------------

@dataclass
class ValidationReport:
    """Monte-Carlo check of the return guarantee on fresh posterior draws."""

    fraction: float
    coverage: float
    threshold: float
    n_samples: int

    @property
    def passed(self) -> bool:
        return self.fraction >= self.threshold


def _validate_many(config, ctx, records):
    if ctx.posterior is None:
        raise ValueError("guarantee validation needs a posterior (Bayesian mode)")
    seq = seed_sequence(ctx.seed, config.domain, STREAM_VALIDATION)
    hits = np.zeros(len(records))
    covered = np.zeros(len(records))
    for chunk in iter_posterior_chunks(ctx.posterior, config.validation_samples, seq):
        for k, rec in enumerate(records):
            returns = policy_returns(ctx.mdp, chunk.models, rec.solution.policy)
            hits[k] += np.sum(returns >= rec.solution.robust_return - 1e-9)
            inside = set_membership(chunk, rec.ambiguity).reshape(len(chunk), -1).all(axis=1)
            covered[k] += inside.sum()
    n = config.validation_samples
    threshold = 1.0 - config.delta - GUARANTEE_MARGIN
    return [ValidationReport(float(h / n), float(c / n), threshold, n)
            for h, c in zip(hits, covered)]


def validate_guarantee(config: ExperimentConfig, ambiguity: AmbiguitySet,
                       solution: RobustSolution, seed: int | None = None,
                       context: SeedContext | None = None) -> ValidationReport:
    """Fraction of fresh posterior models under which the policy beats ``rho_hat``."""
    seed = config.seeds[0] if seed is None else seed
    ctx = context if context is not None else prepare_seed(config, seed)
    record = RunRecord(config, seed, ambiguity, solution, None, 0.0)
    return _validate_many(config, ctx, [record])[0]


# -- experiment grid ----------------------------------------------------------

@dataclass
class ResultRow:
    domain: str
    mode: str
    method: str
    delta: float
    seed: int
    rho_hat: float
    rho_bar: float
    loss: float
    seconds: float
    discount: float
    guarantee: float | None = None
    coverage: float | None = None
    error: str | None = None


def normalized_loss(rho_bar: float, rho_hat: float) -> float:
    return (rho_bar - rho_hat) / abs(rho_bar) if rho_bar != 0 else float("nan")


def _run_seed(config: ExperimentConfig, seed: int):
    ctx = prepare_seed(config, seed)
    rows, records = [], []
    for norm, shape in config.methods:
        cfg = config.with_method(norm, shape)
        label = method_label(norm, shape)
        base = dict(domain=config.domain, mode=config.mode, method=label, delta=config.delta,
                    seed=seed, rho_bar=ctx.nominal_return, discount=ctx.mdp.discount)
        try:
            rec = _construct(cfg, ctx)
        except Exception as exc:  # one failing cell must not stop the grid
            logger.warning("cell %s seed %d failed: %s", label, seed, exc)
            rows.append(ResultRow(rho_hat=float("nan"), loss=float("nan"), seconds=0.0,
                                  error=f"{type(exc).__name__}: {exc}", **base))
            continue
        rows.append(ResultRow(rho_hat=rec.solution.robust_return, seconds=rec.seconds,
                              loss=normalized_loss(ctx.nominal_return, rec.solution.robust_return),
                              **base))
        records.append((len(rows) - 1, rec))
    if config.validate and config.mode == "bayesian" and records:
        reports = _validate_many(config, ctx, [r for _, r in records])
        for (i, _), rep in zip(records, reports):
            rows[i].guarantee, rows[i].coverage = rep.fraction, rep.coverage
    return rows


def run_experiment(config: ExperimentConfig) -> list:
    """Run every method in ``config.methods`` for every seed.

    All methods of a seed share its dataset, posterior samples and fresh
    validation draws. Failures are recorded in ``ResultRow.error``.
    """
    if config.jobs > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            chunks = list(pool.map(_run_seed, [config] * len(config.seeds), config.seeds))
    else:
        chunks = [_run_seed(config, seed) for seed in config.seeds]
    rows = [row for chunk in chunks for row in chunk]
    if config.output_dir is not None:
        write_results(rows, config.output_dir)
    return rows


def summarize(rows) -> list:
    """Median loss and robust return per (domain, mode, method, delta)."""
    groups = {}
    for row in rows:
        groups.setdefault((row.domain, row.mode, row.method, row.delta), []).append(row)
    out = []
    for (domain, mode, method, delta), group in groups.items():
        ok = [r for r in group if r.error is None]
        guar = [r.guarantee for r in ok if r.guarantee is not None]
        out.append({
            "domain": domain, "mode": mode, "method": method, "delta": delta,
            "median_loss": float(np.median([r.loss for r in ok])) if ok else float("nan"),
            "median_rho_hat": float(np.median([r.rho_hat for r in ok])) if ok else float("nan"),
            "median_rho_bar": float(np.median([r.rho_bar for r in ok])) if ok else float("nan"),
            "min_guarantee": min(guar) if guar else None,
            "discount": group[0].discount,
            "seeds": " ".join(str(r.seed) for r in group),
            "failures": len(group) - len(ok),
        })
    return out


def format_table(summary) -> str:
    """Aligned text rendering of :func:`summarize` output."""
    header = ["domain", "mode", "method", "delta", "discount", "median_loss", "median_rho_hat",
              "min_guarantee", "failures"]
    lines = [header]
    for item in summary:
        guar = item["min_guarantee"]
        lines.append([item["domain"], item["mode"], item["method"], f"{item['delta']:g}",
                      f"{item['discount']:g}", f"{item['median_loss']:.4f}",
                      f"{item['median_rho_hat']:.4g}", "-" if guar is None else f"{guar:.3f}",
                      str(item["failures"])])
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                     for row in lines) + "\n"


RESULT_COLUMNS = [f.name for f in dataclasses.fields(ResultRow)]


def write_results(rows, output_dir) -> None:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "results.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow(["" if v is None else (repr(float(v)) if isinstance(v, float) else v)
                             for v in dataclasses.astuple(row)])
    summary = summarize(rows)
    text = format_table(summary)
    seeds = sorted({r.seed for r in rows})
    (out / "summary.txt").write_text(text + f"seeds: {' '.join(map(str, seeds))}\n"
                                     f"rng: {RNG_ALGORITHM}\n")


def read_results(path) -> list:
    types = {f.name: f.type for f in dataclasses.fields(ResultRow)}
    rows = []
    with Path(path).open(newline="") as fh:
        for raw in csv.DictReader(fh):
            values = {}
            for key, text in raw.items():
                if text == "":
                    values[key] = None
                elif "float" in str(types[key]):
                    values[key] = float(text)
                elif "int" in str(types[key]):
                    values[key] = int(text)
                else:
                    values[key] = text
            rows.append(ResultRow(**values))
    return rows
