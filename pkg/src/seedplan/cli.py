"""Command-line front end: one JSON run config drives every subcommand.

Every output file carries the sha256 of the resolved config and the seeds
in use (a ``run`` field in JSON, a leading ``#`` line in CSV and text), so
two runs with equal hashes must produce byte-identical files.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import clustering, dataset, decision, forest, hierarchy, scenario
from .clustering import ClusterAssignment
from .dataset import GeneratorConfig, SplitSpec
from .decision import PortfolioConstraints, SweepRow, SweepTable
from .errors import BudgetExceeded, ConfigError, DataError, InfeasibleError, SeedplanError
from .forest import ForestConfig
from .hierarchy import AugmentationPolicy

log = logging.getLogger("seedplan")

MODELS = ("utility", "riskcap", "robust")
# (exact solver, heuristic solver) per decision model
SOLVER_PAIRS = {
    "utility": ("utility", "utility_heuristic"),
    "riskcap": ("riskcap", "riskcap_heuristic"),
    "robust": ("robust_exact", "robust"),
}


# -- run config -----------------------------------------------------------

@dataclass(frozen=True)
class DataSection:
    csv: Optional[str] = None
    # overrides applied to GeneratorConfig.standard(); {} means the standard benchmark
    synthetic: Optional[dict] = None
    seed: int = 0
    top_varieties: Optional[int] = None
    # CSV attribute columns in model order; None means dataset.DEFAULT_SCHEMA
    attributes: Optional[list] = None

    def __post_init__(self):
        if (self.csv is None) == (self.synthetic is None):
            raise ConfigError("data needs exactly one of 'csv' or 'synthetic'")
        if self.attributes is not None:
            if self.csv is None:
                raise ConfigError("data.attributes applies to csv input only")
            missing = [w for w in dataset.WEATHER_RANDOM if w not in self.attributes]
            if missing or len(set(self.attributes)) != len(self.attributes):
                raise ConfigError(f"data.attributes must be distinct and include {list(dataset.WEATHER_RANDOM)}")

    def schema(self) -> tuple:
        return dataset.DEFAULT_SCHEMA if self.attributes is None else tuple(self.attributes)

    def generator(self) -> GeneratorConfig:
        opts = dict(self.synthetic)
        for key in ("samples_per_variety", "variety_groups"):
            if key in opts:
                opts[key] = tuple(opts[key])
        try:
            return GeneratorConfig.standard(**opts)
        except TypeError as exc:
            raise ConfigError(f"data.synthetic: {exc}") from None


@dataclass(frozen=True)
class ClusterSection:
    k: int = 5
    restarts: int = 20
    seed: int = 0
    k_max: int = 10


@dataclass(frozen=True)
class SiteSection:
    latitude: float = 40.0
    longitude: float = -90.0
    climate_type: str = "C1"
    n_neighbors: int = scenario.DEFAULT_NEIGHBORS
    # attribute overrides on top of the nearest site's medians
    fixed_attributes: dict = field(default_factory=dict)

    def query(self) -> scenario.SiteQuery:
        return scenario.SiteQuery(float(self.latitude), float(self.longitude), str(self.climate_type))


@dataclass(frozen=True)
class ScenarioSection:
    n: int = scenario.DEFAULT_SAMPLES
    seed: int = 0


@dataclass(frozen=True)
class DecisionSection:
    solver: str = "all"
    increment: float = 0.1
    max_varieties: int = 5
    node_budget: int = decision.DEFAULT_NODE_BUDGET
    exact: str = "auto"  # "auto" falls back to the heuristic when the budget runs out
    lambdas: tuple = (0.03, 0.06, 0.1)
    betas: tuple = (100.0, 80.0, 60.0)
    alphas: tuple = (0.2, 0.5, 0.8)

    def __post_init__(self):
        if self.solver not in MODELS + ("all",):
            raise ConfigError(f"decision.solver must be one of {MODELS + ('all',)}")
        if self.exact not in ("auto", "exact", "heuristic"):
            raise ConfigError("decision.exact must be auto, exact or heuristic")

    def constraints(self) -> PortfolioConstraints:
        return PortfolioConstraints(self.increment, self.max_varieties, self.node_budget)

    def models(self) -> tuple:
        return MODELS if self.solver == "all" else (self.solver,)

    def parameters(self, model: str) -> tuple:
        return {"utility": self.lambdas, "riskcap": self.betas, "robust": self.alphas}[model]


def _section(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    raw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid {name!r} section: {exc}") from None


_SECTIONS = {
    "data": DataSection,
    "split": SplitSpec,
    "forest": ForestConfig,
    "augmentation": AugmentationPolicy,
    "cluster": ClusterSection,
    "site": SiteSection,
    "scenario": ScenarioSection,
    "decision": DecisionSection,
}


@dataclass(frozen=True)
class RunConfig:
    data: DataSection
    split: SplitSpec = SplitSpec()
    forest: ForestConfig = ForestConfig()
    augmentation: AugmentationPolicy = AugmentationPolicy()
    cluster: ClusterSection = ClusterSection()
    site: SiteSection = SiteSection()
    scenario: ScenarioSection = ScenarioSection()
    decision: DecisionSection = DecisionSection()
    output_dir: str = "out"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = set(d) - set(_SECTIONS) - {"output_dir"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "data" not in d:
            raise ConfigError("config needs a 'data' section")
        kwargs = {name: _section(c, d.get(name), name) for name, c in _SECTIONS.items()}
        return cls(output_dir=str(d.get("output_dir", "out")), **kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        out = {name: _plain(asdict(getattr(self, name))) for name in _SECTIONS}
        out["output_dir"] = self.output_dir
        return out

    def with_seed(self, seed: int) -> "RunConfig":
        """Every seed in the config replaced by ``seed``."""
        return replace(
            self,
            data=replace(self.data, seed=seed),
            split=replace(self.split, seed=seed),
            forest=replace(self.forest, seed=seed),
            augmentation=replace(self.augmentation, seed=seed),
            cluster=replace(self.cluster, seed=seed),
            scenario=replace(self.scenario, seed=seed),
        )

    def seeds(self) -> dict:
        return {
            "data": self.data.seed,
            "split": self.split.seed,
            "forest": self.forest.seed,
            "augmentation": self.augmentation.seed,
            "cluster": self.cluster.seed,
            "scenario": self.scenario.seed,
        }

    def sha256(self) -> str:
        # where outputs go does not change what they contain
        content = {k: v for k, v in self.to_dict().items() if k != "output_dir"}
        text = json.dumps(content, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


# -- output helpers -------------------------------------------------------

class Run:
    """Resolved config plus the provenance stamp written into outputs."""

    def __init__(self, cfg: RunConfig, out: str):
        self.cfg = cfg
        self.out = out
        self.hash = cfg.sha256()
        self.stage = "setup"
        os.makedirs(out, exist_ok=True)

    @property
    def stamp(self) -> dict:
        return {"config_sha256": self.hash, "seeds": self.cfg.seeds()}

    def comment(self) -> str:
        seeds = " ".join(f"{k}={v}" for k, v in sorted(self.cfg.seeds().items()))
        return f"config_sha256={self.hash} {seeds}"

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def write_json(self, name_or_path: str, payload: dict, indent=2) -> str:
        path = name_or_path if os.sep in name_or_path else self.path(name_or_path)
        doc = dict(_plain(payload))
        doc["run"] = self.stamp
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=indent, sort_keys=True)
            fh.write("\n")
        return path

    def stamp_text(self, path: str) -> None:
        """Prefix an already written CSV or text file with the provenance line."""
        with open(path) as fh:
            body = fh.read()
        with open(path, "w") as fh:
            fh.write(f"# {self.comment()}\n{body}")

    def stamp_json(self, path: str, indent=None) -> None:
        with open(path) as fh:
            doc = json.load(fh)
        doc["run"] = self.stamp
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=indent, sort_keys=indent is not None)


# -- pipeline stages ------------------------------------------------------

def load_data(run: Run, impute: bool = True):
    """Dataset named by the config, filtered and RM_BAND-imputed."""
    cfg = run.cfg.data
    run.stage = "data"
    truth = None
    if cfg.csv is not None:
        d, report = dataset.read_csv(cfg.csv, cfg.schema())
        if report.parse_errors:
            log.warning("%d rows skipped with parse errors", len(report.parse_errors))
    else:
        d, truth = dataset.generate_synthetic(cfg.generator(), cfg.seed)
    if len(d) == 0:
        raise DataError("dataset has no usable records")
    if cfg.top_varieties is not None:
        d = dataset.filter_top_varieties(d, cfg.top_varieties)
    if impute:
        d = hierarchy.impute_rm_band(d, run.cfg.forest)
    return d, truth


def fit_clusters(run: Run, train: dataset.Dataset):
    """Correlation rows, elbow curve and the k-means categorization."""
    run.stage = "cluster"
    c = run.cfg.cluster
    corr = clustering.correlation_matrix(train)
    n = len(corr.varieties)
    if n == 0:
        raise DataError("no variety has enough records to cluster")
    if not 1 <= c.k <= n:
        raise ConfigError(f"cluster.k={c.k} must be between 1 and the {n} clusterable varieties")
    elbow = clustering.elbow_curve(corr.values, range(1, min(c.k_max, n) + 1), c.seed, c.restarts)
    assignment = clustering.kmeans(corr.values, c.k, seed=c.seed, restarts=c.restarts, ids=corr.varieties)

    corr.to_csv(run.path("correlation.csv"))
    run.stamp_text(run.path("correlation.csv"))
    with open(run.path("elbow.csv"), "w") as fh:
        fh.write(f"# {run.comment()}\nK,WGSS\n")
        for k, w in elbow:
            fh.write(f"{k},{w!r}\n")
    run.write_json("clusters.json", assignment.to_dict())
    return corr, assignment, elbow


def save_model(run: Run, model: hierarchy.HierarchicalModel, directory: str) -> None:
    model.save(directory)
    for name in sorted(os.listdir(directory)):
        if name.endswith(".json"):
            run.stamp_json(os.path.join(directory, name), indent=2 if name == "manifest.json" else None)


MSE_ROWS = (
    ("baseline", "Baseline (test mean)"),
    ("check", "Check yield only"),
    ("one_layer", "One-layer forest"),
    ("two_layer", "Two-layer"),
    ("two_layer_da", "Two-layer with augmentation"),
)


def format_mse_table(mses: dict) -> str:
    width = max(len(label) for _, label in MSE_ROWS)
    lines = [f"{'Model'.ljust(width)}  Test MSE", f"{'-' * width}  --------"]
    for key, label in MSE_ROWS:
        lines.append(f"{label.ljust(width)}  {mses[key]:.4f}")
    return "\n".join(lines) + "\n"


def cmd_train(run: Run, args) -> int:
    d, truth = load_data(run)
    run.stage = "split"
    train, valid, test = dataset.split(d, run.cfg.split)
    if len(test) == 0:
        raise DataError("split left the test set empty")
    _, assignment, _ = fit_clusters(run, train)

    run.stage = "train"
    fc = run.cfg.forest
    policy = run.cfg.augmentation
    with_da = hierarchy.train(train, valid, assignment, policy, fc)
    no_da_policy = replace(policy, min_samples=0)
    without_da = with_da if not policy.enabled else hierarchy.train(train, valid, assignment, no_da_policy, fc)
    one_layer = hierarchy.train_one_layer(train, fc)

    run.stage = "evaluate"
    plain = hierarchy.evaluate(without_da, test, one_layer)
    augmented = hierarchy.evaluate(with_da, test)
    mses = {
        "baseline": plain.mse_baseline,
        "check": plain.mse_check,
        "one_layer": plain.mse_one_layer,
        "two_layer": plain.mse_two_layer,
        "two_layer_da": augmented.mse_two_layer,
    }
    report = {
        "mse": mses,
        "n_train": len(train),
        "n_validation": len(valid),
        "n_test": len(test),
        "median_abs_error": augmented.median_abs_err,
        "mean_abs_error": augmented.mean_abs_err,
        "per_variety_mse": {v: {"n": n, "two_layer": plain.per_variety_mse[v][1], "two_layer_da": m}
                            for v, (n, m) in sorted(augmented.per_variety_mse.items())},
        "augmentation": with_da.augmentation_log,
        "residual_mse": with_da.residual_mse,
        "residual_source": with_da.residual_source,
    }

    run.stage = "write"
    save_model(run, with_da, args.model or run.path("model"))
    run.write_json("report.json", report)
    with open(run.path("per_variety_mse.csv"), "w") as fh:
        fh.write(f"# {run.comment()}\nVARIETY,N,MSE_TWO_LAYER,MSE_TWO_LAYER_DA\n")
        for v, row in report["per_variety_mse"].items():
            fh.write(f"{v},{row['n']},{row['two_layer']!r},{row['two_layer_da']!r}\n")
    if truth is not None:
        run.write_json("ground_truth.json", truth.to_dict())
    table = format_mse_table(mses)
    with open(run.path("mse_table.txt"), "w") as fh:
        fh.write(f"# {run.comment()}\n{table}")
    print(table, end="")
    return 0


def _load_model(run: Run, args) -> hierarchy.HierarchicalModel:
    run.stage = "load model"
    path = args.model or run.path("model")
    if not os.path.isdir(path):
        raise ConfigError(f"model directory not found: {path}")
    return hierarchy.HierarchicalModel.load(path)


def cmd_importance(run: Run, args) -> int:
    model = _load_model(run, args)
    d, _ = load_data(run)
    _, _, test = dataset.split(d, run.cfg.split)
    run.stage = "importance"
    if tuple(test.attribute_names) != tuple(model.attribute_names):
        raise ConfigError("model attributes do not match the dataset")
    scores = forest.permutation_importance(model.check_model, test.X, test.check_yield, run.cfg.forest.seed)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    with open(run.path("importance.csv"), "w") as fh:
        fh.write(f"# {run.comment()}\nATTRIBUTE,MSE_INCREASE_PCT\n")
        for i in order:
            fh.write(f"{model.attribute_names[i]},{float(scores[i])!r}\n")
    for i in order[:5]:
        print(f"{model.attribute_names[i]:<12} {scores[i]:8.2f}%")
    return 0


def cmd_cluster(run: Run, args) -> int:
    d, _ = load_data(run, impute=False)
    train, _, _ = dataset.split(d, run.cfg.split)
    _, assignment, elbow = fit_clusters(run, train)
    for k, w in elbow:
        print(f"k={k:<3d} wgss={w:.4f}")
    for lab in range(1, assignment.k + 1):
        print(f"cluster {lab}: {', '.join(assignment.members(lab))}")
    return 0


def cmd_ingest(run: Run, args) -> int:
    if run.cfg.data.csv is None:
        raise ConfigError("ingest needs data.csv in the config")
    d, report = dataset.read_csv(run.cfg.data.csv, run.cfg.data.schema())
    if run.cfg.data.top_varieties is not None:
        d = dataset.filter_top_varieties(d, run.cfg.data.top_varieties)
    dataset.write_csv(d, run.path("dataset.csv"), comment=run.comment())
    run.write_json("ingest_report.json", {
        "rows_read": report.rows_read,
        "rows_kept": report.rows_kept,
        "records_written": len(d),
        "dropped_missing_conus_ph": report.dropped_missing_conus_ph,
        "dropped_missing_other": report.dropped_missing_other,
        "dropped_invalid_yield": report.dropped_invalid_yield,
        "parse_errors": [list(e) for e in report.parse_errors],
    })
    print(f"{len(d)} records written to {run.path('dataset.csv')}")
    return 0


def cmd_generate(run: Run, args) -> int:
    if run.cfg.data.synthetic is None:
        raise ConfigError("generate needs data.synthetic in the config")
    gen = run.cfg.data.generator()
    d, truth = dataset.generate_synthetic(gen, run.cfg.data.seed)
    dataset.write_csv(d, run.path("dataset.csv"), comment=run.comment())
    run.write_json("ground_truth.json", truth.to_dict())
    run.write_json("generator.json", gen.to_dict())
    print(f"{len(d)} records written to {run.path('dataset.csv')}")
    return 0


def _fixed_attributes(run: Run, d, query) -> dict:
    site = scenario.nearest_site(d, query)
    fixed = scenario.site_attributes(d, site)
    extra = run.cfg.site.fixed_attributes
    unknown = set(extra) - set(d.attribute_names)
    if unknown:
        raise ConfigError(f"site.fixed_attributes names unknown attributes: {sorted(unknown)}")
    fixed.update({k: float(v) for k, v in extra.items()})
    return fixed, site


def simulate(run: Run, args):
    """Scenario matrix for the configured site; writes scenarios and mean-variance CSVs."""
    model = _load_model(run, args)
    d, _ = load_data(run)
    run.stage = "sample"
    query = run.cfg.site.query()
    sites = scenario.similar_sites(d, query, run.cfg.site.n_neighbors)
    try:
        weather = scenario.sample_weather(d, sites, run.cfg.scenario.n, run.cfg.scenario.seed)
    except DataError as exc:
        raise DataError(f"{exc} (site query: {query})") from None
    fixed, anchor = _fixed_attributes(run, d, query)
    matrix = scenario.build_scenarios(model, fixed, weather, run.cfg.scenario.seed)
    st = scenario.stats(matrix)
    matrix.to_csv(run.path("scenarios.csv"), extra={"run": run.stamp, "anchor_site": anchor,
                                                    "similar_sites": sorted(sites)},
                  comment=run.comment())
    st.to_csv(run.path("mean_variance.csv"))
    run.stamp_text(run.path("mean_variance.csv"))
    return matrix, st


def cmd_sample(run: Run, args) -> int:
    matrix, st = simulate(run, args)
    print(f"{matrix.n_scenarios} scenarios for {len(matrix.varieties)} varieties "
          f"({matrix.n_floored} yields floored at 0)")
    return 0


def _solve(model: str, mode: str, data, value, c: PortfolioConstraints):
    exact, heuristic = SOLVER_PAIRS[model]
    if mode == "heuristic":
        return decision.SOLVERS[heuristic](data, value, c)
    try:
        return decision.SOLVERS[exact](data, value, c)
    except BudgetExceeded:
        if mode == "exact":
            raise
        log.warning("%s at %s exceeded the node budget; using the heuristic", model, value)
        return decision.SOLVERS[heuristic](data, value, c)


def run_decisions(run: Run, matrix, st) -> list:
    run.stage = "optimize"
    dc = run.cfg.decision
    c = dc.constraints()
    tables = []
    for model in dc.models():
        data = matrix if model == "robust" else st
        table = SweepTable(model)
        for value in dc.parameters(model):
            try:
                table.rows.append(SweepRow(value, _solve(model, dc.exact, data, value, c)))
            except InfeasibleError as exc:
                table.rows.append(SweepRow(value, error=str(exc)))
        tables.append(table)
        run.write_json(f"plan_{model}.json", table.to_dict())
        text = table.render()
        with open(run.path(f"plan_{model}.txt"), "w") as fh:
            fh.write(f"# {run.comment()}\n{text}")
        print(f"[{model}]\n{text}")
    return tables


def cmd_plan(run: Run, args) -> int:
    matrix, st = simulate(run, args)
    run_decisions(run, matrix, st)
    return 0


def cmd_sweep(run: Run, args) -> int:
    if not args.scenarios:
        raise ConfigError("sweep needs --scenarios <csv>")
    run.stage = "load scenarios"
    matrix = scenario.ScenarioMatrix.from_csv(args.scenarios)
    st = scenario.stats(matrix)
    run_decisions(run, matrix, st)
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "generate": cmd_generate,
    "train": cmd_train,
    "importance": cmd_importance,
    "cluster": cmd_cluster,
    "sample": cmd_sample,
    "plan": cmd_plan,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seedplan", description="Seed variety yield modeling and portfolio planning.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--seed", type=int, help="override every seed in the config")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--model", help="model directory (default <out>/model)")
        p.add_argument("--solver", choices=MODELS + ("all",), help="decision model(s) to run")
        p.add_argument("--scenarios", help="scenario CSV for sweep")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = None
    try:
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.solver is not None:
            cfg = replace(cfg, decision=replace(cfg.decision, solver=args.solver))
        run = Run(cfg, args.out or cfg.output_dir)
        return COMMANDS[args.command](run, args)
    except SeedplanError as exc:
        stage = run.stage if run is not None else "config"
        print(f"seedplan {args.command}: {stage} failed: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        stage = run.stage if run is not None else "config"
        print(f"seedplan {args.command}: {stage} failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
