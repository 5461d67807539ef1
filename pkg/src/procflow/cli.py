"""Command line interface: ``procflow extract | simulate | eval | batch``.

Settings resolve as command-line flag, then ``PROCFLOW_<KEY>`` environment
variable, then the JSON file given with ``--config``, then the default.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import click

from . import prompts
from .backends import BackendConfig, HttpBackend
from .dsl import serialize
from .evaluator import aggregate, evaluate, load_graph, reports_csv, reports_json, reports_table
from .mock import MockBackend
from .orchestrator import RunConfig, RunResult, run
from .prioritizer import PrioritizerConfig
from .simulator import (SimulationConfig, aggregate_issue_counts, branch_frequencies,
                        detect_static_issues, dump_traces, simulate)

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2
ENV_PREFIX = "PROCFLOW_"


@dataclass
class CliConfig:
    backend: str = "mock"
    endpoint: str = BackendConfig.endpoint
    model: str = BackendConfig.model
    api_key_env: str = BackendConfig.api_key_env
    timeout: float = BackendConfig.timeout
    retries: int = BackendConfig.retries
    rounds: int = 2
    trials: int = 10_000
    max_steps: int = 512
    seed: int = 0
    budget: int = 400
    max_items: int = 3
    shots: int = 3
    workers: int = 1
    out: str = "procflow-out"

    def __post_init__(self):
        if self.backend not in ("mock", "http"):
            raise ValueError(f"backend must be 'mock' or 'http', not {self.backend!r}")
        if self.trials < 1 or self.rounds < 1 or self.budget < 1 or self.workers < 1:
            raise ValueError("trials, rounds, budget and workers must be >= 1")
        if not 0 <= self.shots <= 3:
            raise ValueError("shots must be between 0 and 3")

    def run_config(self) -> RunConfig:
        return RunConfig(max_rounds=self.rounds,
                         simulation=SimulationConfig(self.trials, self.max_steps, self.seed),
                         prioritizer=PrioritizerConfig(self.budget, self.max_items),
                         workers=self.workers)

    def make_backend(self):
        if self.backend == "mock":
            return MockBackend()
        return HttpBackend(BackendConfig(self.endpoint, self.model, self.api_key_env,
                                         self.timeout, self.retries))

    def examples(self):
        return prompts.default_examples()[:self.shots]


def _coerce(value, typ):
    if typ in (int, "int"):
        return int(value)
    if typ in (float, "float"):
        return float(value)
    return str(value)


def load_config(path: Optional[str] = None, env: Optional[dict] = None, flags: Optional[dict] = None) -> CliConfig:
    """Merge defaults, config file, environment and flags (later wins)."""
    types = {f.name: f.type for f in fields(CliConfig)}
    values: dict = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise click.UsageError(f"cannot read config file {path}: {exc.strerror or exc}")
        except json.JSONDecodeError as exc:
            raise click.UsageError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(data, dict):
            raise click.UsageError(f"config file {path} must hold a JSON object")
        for key, value in data.items():
            if key not in types:
                raise click.UsageError(f"unknown config key {key!r} in {path}")
            values[key] = value
    env = os.environ if env is None else env
    for key in types:
        if ENV_PREFIX + key.upper() in env:
            values[key] = env[ENV_PREFIX + key.upper()]
    for key, value in (flags or {}).items():
        if value is not None:
            values[key] = value
    try:
        return CliConfig(**{k: _coerce(v, types[k]) for k, v in values.items()})
    except (TypeError, ValueError) as exc:
        raise click.UsageError(f"invalid configuration: {exc}")


def common_options(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON config file."),
        click.option("--seed", type=int, help="Master random seed."),
        click.option("--trials", type=click.IntRange(min=1), help="Simulation trials per graph."),
        click.option("--rounds", type=click.IntRange(min=1), help="Maximum refinement rounds."),
        click.option("--budget", type=click.IntRange(min=1), help="Feedback token budget per round."),
        click.option("--backend", type=click.Choice(["mock", "http"]), help="Agent backend."),
        click.option("--out", type=click.Path(file_okay=False), help="Output directory."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _config(config_path, **flags) -> CliConfig:
    return load_config(config_path, None, flags)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log warnings and progress to stderr.")
def main(verbose: bool):
    """Extract, diagnose and score procedural graphs."""
    logging.basicConfig(level=logging.INFO if verbose else logging.ERROR, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _extract_one(document_path: Path, cfg: CliConfig, out: Path) -> tuple[int, str]:
    try:
        document = document_path.read_text(encoding="utf-8")
    except OSError as exc:
        return EXIT_ERROR, f"cannot read {document_path}: {exc.strerror or exc}"
    if not document.strip():
        return EXIT_ERROR, f"{document_path} is empty"
    result: RunResult = run(document, cfg.run_config(), cfg.make_backend(), journal=out,
                            examples=cfg.examples())
    if result.error and not result.graph.edges:
        return EXIT_ERROR, f"{document_path}: no graph produced ({result.error})"
    stop = result.records[-1].stop_reason if result.records else None
    msg = f"{document_path}: {len(result.records)} round(s), stop={stop}, graph in {out / 'final.flow.txt'}"
    if result.error:
        return EXIT_PARTIAL, f"{msg}; backend failure, earlier graph kept: {result.error}"
    return EXIT_OK, msg


@main.command()
@click.argument("document", type=click.Path(dir_okay=False))
@common_options
def extract(document, config_path, **flags):
    """Extract a procedural graph from DOCUMENT."""
    cfg = _config(config_path, **flags)
    out = Path(cfg.out)
    code, msg = _extract_one(Path(document), cfg, out)
    click.echo(msg, err=code != EXIT_OK)
    sys.exit(code)


@main.command("simulate")
@click.argument("graph", type=click.Path(dir_okay=False))
@click.option("--traces", "traces_path", type=click.Path(dir_okay=False), help="Write traces as JSON lines.")
@common_options
def simulate_cmd(graph, traces_path, config_path, **flags):
    """Simulate GRAPH (DSL or JSON) and report structural issues."""
    cfg = _config(config_path, **flags)
    try:
        g, diags = load_graph(graph)
    except (FileNotFoundError, ValueError, KeyError) as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_ERROR)
    for d in diags:
        click.echo(f"{graph}: {d}", err=True)
    if not g.nodes:
        click.echo(f"{graph}: graph is empty", err=True)
        sys.exit(EXIT_ERROR)
    traces = simulate(g, SimulationConfig(cfg.trials, cfg.max_steps, cfg.seed))
    counts = aggregate_issue_counts(traces)
    failing = sum(1 for t in traces if not t.ok)
    click.echo(f"trials: {len(traces)}  failing: {failing}")
    click.echo("issues:")
    if not counts:
        click.echo("  none")
    for sig, n in sorted(counts.items(), key=lambda kv: (-kv[1], sig_str(kv[0], g))):
        click.echo(f"  {n:>7}  {sig_str(sig, g)}")
    static = detect_static_issues(g)
    click.echo("static issues:")
    if not static:
        click.echo("  none")
    for issue in static:
        names = ", ".join(g.nodes[n].label for n in issue.nodes)
        click.echo(f"  {issue.kind.value}({names}) {issue.detail}")
    click.echo("branch frequencies:")
    for (gw, targets), share in branch_frequencies(traces).items():
        click.echo(f"  {share:.4f}  {g.nodes[gw].label} -> {' + '.join(g.nodes[t].label for t in targets)}")
    if traces_path:
        with open(traces_path, "w", encoding="utf-8") as fp:
            dump_traces(traces, fp)
    sys.exit(EXIT_OK)


def sig_str(sig, graph) -> str:
    return sig.render(graph)


def _graph_files(directory: Path) -> dict:
    out = {}
    for p in sorted(directory.iterdir()) if directory.is_dir() else []:
        if p.is_file() and p.suffix in (".txt", ".json", ".flow"):
            out.setdefault(p.name.split(".")[0], p)
    return out


@main.command("eval")
@click.argument("pred_dir", type=click.Path(file_okay=False))
@click.argument("gold_dir", type=click.Path(file_okay=False))
@click.option("--format", "fmt", type=click.Choice(["table", "csv", "json"]), default="table")
@click.option("--ledger", "ledger_path", type=click.Path(dir_okay=False), help="Dump match ledgers as JSON.")
@common_options
def eval_cmd(pred_dir, gold_dir, fmt, ledger_path, config_path, **flags):
    """Score predicted graphs in PRED_DIR against gold graphs in GOLD_DIR (paired by name)."""
    _config(config_path, **flags)
    pred, gold = _graph_files(Path(pred_dir)), _graph_files(Path(gold_dir))
    for name in sorted(set(pred) ^ set(gold)):
        side = "prediction" if name in pred else "gold graph"
        click.echo(f"warning: unpaired {side} {name!r} skipped", err=True)
    names = sorted(set(pred) & set(gold))
    if not names:
        click.echo("no prediction/gold pairs found", err=True)
        sys.exit(EXIT_ERROR)
    reports = []
    for name in names:
        p, pd = load_graph(pred[name])
        g, gd = load_graph(gold[name])
        for d in gd:
            click.echo(f"{gold[name]}: {d}", err=True)
        reports.append(evaluate(p, g, name))
    reports.append(aggregate(reports[:], "corpus"))
    if fmt == "table":
        click.echo(reports_table(reports))
    elif fmt == "csv":
        click.echo(reports_csv(reports), nl=False)
    else:
        click.echo(reports_json(reports))
    if ledger_path:
        Path(ledger_path).write_text(reports_json(reports[:-1], with_ledger=True) + "\n", encoding="utf-8")
    sys.exit(EXIT_OK)


@main.command()
@click.argument("doc_dir", type=click.Path(file_okay=False))
@click.option("--workers", type=click.IntRange(min=1), help="Documents processed concurrently.")
@common_options
def batch(doc_dir, config_path, **flags):
    """Extract every *.txt document in DOC_DIR into per-document journals under --out."""
    cfg = _config(config_path, **flags)
    docs = sorted(Path(doc_dir).glob("*.txt")) if Path(doc_dir).is_dir() else []
    if not docs:
        click.echo(f"no .txt documents in {doc_dir}", err=True)
        sys.exit(EXIT_ERROR)
    out = Path(cfg.out)
    one = dataclasses.replace(cfg, workers=1)

    def job(p: Path):
        return _extract_one(p, one, out / p.stem)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(job, docs))
    else:
        results = [job(p) for p in docs]
    for code, msg in results:
        click.echo(msg, err=code != EXIT_OK)
    codes = {c for c, _ in results}
    if codes == {EXIT_ERROR}:
        sys.exit(EXIT_ERROR)
    sys.exit(EXIT_PARTIAL if codes - {EXIT_OK} else EXIT_OK)


@main.command("fmt")
@click.argument("graph", type=click.Path(dir_okay=False))
def fmt_cmd(graph):
    """Print GRAPH in canonical line format with its parse diagnostics."""
    try:
        g, diags = load_graph(graph)
    except FileNotFoundError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_ERROR)
    for d in diags:
        click.echo(f"{graph}: {d}", err=True)
    click.echo(serialize(g))


def entry(argv=None):
    """Console entry point; argument errors exit with 1, not click's 2 (2 means partial)."""
    try:
        rv = main.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        sys.exit(EXIT_ERROR)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_ERROR)
    except click.Abort:
        click.echo("aborted", err=True)
        sys.exit(EXIT_ERROR)
    sys.exit(rv or 0)


if __name__ == "__main__":
    entry()
