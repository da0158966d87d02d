"""Main entry point for edge_offload_sim."""

import os
import time
from collections.abc import Iterator
from contextlib import contextmanager, nullcontext
from pathlib import Path
from typing import Annotated

import pandas as pd
import typer
from dotenv import load_dotenv
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

from edge_offload_sim import __application_title__, __version__
from edge_offload_sim.config import ExperimentConfig, config_hash, load_config
from edge_offload_sim.exceptions import ConfigError, EdgeOffloadError
from edge_offload_sim.experiment import RunResult, generate_artifacts, run_experiment
from edge_offload_sim.manifest import RunManifest, write_manifest
from edge_offload_sim.metrics import accumulate, classify, non_ideal_fraction, write_report
from edge_offload_sim.privacy import epsilon_label, parse_epsilon
from edge_offload_sim.sim_logging import console_out

# Load the .env file from the project folder
load_dotenv(dotenv_path=".env")
# Load the .env file from the users home folder
load_dotenv(dotenv_path=Path("~/.edge_offload_sim.env").expanduser())

app = typer.Typer(help="Privacy-aware MEC offloading simulator")

ConfigOption = Annotated[
    Path | None,
    typer.Option("--config", "-c", envvar="EDGE_OFFLOAD_CONFIG", help="TOML config file; defaults apply without one"),
]
SeedsOption = Annotated[str | None, typer.Option("--seeds", "-s", help="Seeds, e.g. '0,1,2' or '0-29'")]
EpsilonsOption = Annotated[
    str | None, typer.Option("--epsilons", "-e", help="Privacy levels per meter, e.g. 'inf,0.1,0.01'")
]
OutDirOption = Annotated[
    Path | None, typer.Option("--out-dir", "-o", envvar="EDGE_OFFLOAD_OUT_DIR", help="Output folder")
]
OverwriteOption = Annotated[bool, typer.Option("--overwrite", help="Replace prior outputs")]
ThreadsOption = Annotated[
    int | None,
    typer.Option("--threads", "-t", envvar="EDGE_OFFLOAD_THREADS", min=1, help="Worker processes (default: CPUs)"),
]
QuietOption = Annotated[bool, typer.Option("--quiet", "-q", help="Suppress progress output")]


def version_callback(value: bool) -> None:
    """Print version and exit."""
    if value:
        print(f"{__application_title__}: {__version__}")
        raise typer.Exit()


@app.callback()
def main(
    version: Annotated[  # pylint: disable=unused-argument
        bool | None,
        typer.Option("--version", "-v", callback=version_callback, is_eager=True),
    ] = None,
) -> None:
    """Generate topologies and traces, run the offloading grid and report on it."""


def parse_seeds(text: str) -> list[int]:
    """Parse '0,1,2', '0-29' or a mix of both."""
    seeds: list[int] = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        try:
            if "-" in part:
                low, high = (int(v) for v in part.split("-", 1))
                if high < low:
                    raise ValueError
                seeds.extend(range(low, high + 1))
            else:
                seeds.append(int(part))
        except ValueError as e:
            raise ConfigError(f"Invalid seed list: {text!r}") from e
    if not seeds:
        raise ConfigError("Seed list is empty")
    return seeds


def parse_epsilons(text: str) -> list[float]:
    levels = [parse_epsilon(p) for p in text.split(",") if p.strip()]
    if not levels:
        raise ConfigError("Privacy level list is empty")
    return levels


@contextmanager
def exit_codes() -> Iterator[None]:
    """Map failures to exit codes: 1 for configuration errors, 2 for anything else."""
    try:
        yield
    except ConfigError as e:
        console_out.print(f"[bold red]Configuration error:[/bold red] {e}")
        raise typer.Exit(1) from e
    except (EdgeOffloadError, OSError) as e:
        console_out.print(f"[bold red]Error:[/bold red] {e}")
        raise typer.Exit(2) from e


def resolve(
    config_file: Path | None,
    seeds: str | None,
    epsilons: str | None,
    out_dir: Path | None,
    threads: int | None,
) -> tuple[ExperimentConfig, Path, int]:
    """Load the config with the command-line overrides applied."""
    overrides: dict = {}
    if seeds is not None:
        overrides["seeds"] = parse_seeds(seeds)
    if epsilons is not None:
        overrides["privacy"] = {"epsilon_per_meter": parse_epsilons(epsilons)}
    config = load_config(config_file, overrides)
    workers = threads or config.threads or os.cpu_count() or 1
    return config, out_dir or config.output.out_dir, workers


def show_config(config: ExperimentConfig, out_dir: Path, threads: int) -> None:
    console_out.print(
        Panel.fit(
            Text.assemble(
                ("Seeds: ", "cyan"),
                (f"{len(config.seeds)} ({config.seeds[0]}..{config.seeds[-1]})", "green"),
                "\n",
                ("Privacy levels: ", "cyan"),
                (", ".join(epsilon_label(e) for e in config.epsilons), "green"),
                "\n",
                ("Mechanism: ", "cyan"),
                (f"{config.privacy.mechanism.value}", "green"),
                "\n",
                ("Users: ", "cyan"),
                (f"{config.population.total}", "green"),
                "\n",
                ("Duration: ", "cyan"),
                (f"{config.duration_s:g} s at {config.resolution_s:g} s", "green"),
                "\n",
                ("BSs / MHs: ", "cyan"),
                (f"{config.topology.bs_count} / {config.topology.mh_count}", "green"),
                "\n",
                ("Mobility: ", "cyan"),
                (f"{config.mobility.source.value}", "green"),
                "\n",
                ("Output folder: ", "cyan"),
                (f"{out_dir}", "green"),
                "\n",
                ("Workers: ", "cyan"),
                (f"{threads}", "green"),
            ),
            title="[bold]Experiment Configuration",
            border_style="bold",
        )
    )


def _manifest(command: str, config: ExperimentConfig) -> RunManifest:
    return RunManifest(
        command=command,
        config_hash=config_hash(config),
        seeds=config.seeds,
        epsilons=[epsilon_label(e) for e in config.epsilons],
    )


def do_generate(config: ExperimentConfig, out_dir: Path, overwrite: bool) -> Path:
    start = time.perf_counter()
    manifest = _manifest("generate", config)
    with console_out.status("[bold green]Generating topology and traces..."):
        written = generate_artifacts(config, out_dir, config.seeds, overwrite=overwrite)
    manifest.add(written, out_dir)
    manifest.wall_clock_s = time.perf_counter() - start
    console_out.print(f"[bold green]Wrote {len(written)} artifact files")
    return write_manifest(manifest, out_dir)


def do_run(config: ExperimentConfig, out_dir: Path, threads: int, overwrite: bool) -> Path:
    start = time.perf_counter()
    manifest = _manifest("run", config)
    total = len(config.seeds) * len(config.epsilons)
    with console_out.status(f"[bold green]Running {total} simulations...") as status:
        done: list[RunResult] = []

        def on_result(result: RunResult) -> None:
            done.append(result)
            status.update(f"[bold cyan]Completed [green]{len(done)}[/green] of {total} simulations")
            console_out.print(
                f"[green]seed={result.seed} eps={epsilon_label(result.epsilon)}[/green] "
                f"{result.rows} requests in {result.wall_clock_s:.1f} s"
            )

        results, generated = run_experiment(config, out_dir, threads=threads, overwrite=overwrite, on_result=on_result)
    manifest.add(generated, out_dir)
    manifest.add([r.path for r in results], out_dir)
    clipped = sum(r.clipped_reports for r in results)
    capacity = sum(r.capacity_denials for r in results)
    if clipped:
        console_out.print(f"[yellow]{clipped} reported locations clipped to the area boundary")
    if capacity:
        console_out.print(f"[yellow]{capacity} requests hit an exhausted MH")
    manifest.wall_clock_s = time.perf_counter() - start
    console_out.print(f"[bold green]Wrote {sum(r.rows for r in results)} outcome rows")
    return write_manifest(manifest, out_dir)


def _fmt(value: float | None) -> str:
    return "-" if value is None or pd.isna(value) else f"{value:.4f}"


def do_report(config: ExperimentConfig, out_dir: Path) -> Path:
    start = time.perf_counter()
    manifest = _manifest("report", config)
    with console_out.status("[bold green]Aggregating outcomes..."):
        acc = accumulate(out_dir, config.seeds, config.epsilons)
        manifest.add(write_report(acc, out_dir, manifest.config_hash), out_dir)

    table = Table(title="Request classes")
    for column in ("class", "fraction", "mean", "95% CI ±"):
        table.add_column(column)
    for row in classify(acc).itertuples():
        table.add_row(row[1], _fmt(row.fraction), _fmt(row.mean), _fmt(row.ci_half_width))
    console_out.print(table)

    table = Table(title="Non-ideal MH selections")
    for column in ("mobility", "epsilon", "fraction", "95% CI ±"):
        table.add_column(column)
    for row in non_ideal_fraction(acc).itertuples():
        table.add_row(row.mobility, row.epsilon, _fmt(row.fraction), _fmt(row.ci_half_width))
    console_out.print(table)

    manifest.wall_clock_s = time.perf_counter() - start
    return write_manifest(manifest, out_dir)


@app.command()
def generate(
    config_file: ConfigOption = None,
    seeds: SeedsOption = None,
    epsilons: EpsilonsOption = None,
    out_dir: OutDirOption = None,
    overwrite: OverwriteOption = False,
    threads: ThreadsOption = None,
    quiet: QuietOption = False,
) -> None:
    """Deploy the topology and write the mobility traces of every seed."""
    with exit_codes():
        config, out, workers = resolve(config_file, seeds, epsilons, out_dir, threads)
        with console_out.capture() if quiet else nullcontext():
            show_config(config, out, workers)
            do_generate(config, out, overwrite or config.output.overwrite)


@app.command()
def run(
    config_file: ConfigOption = None,
    seeds: SeedsOption = None,
    epsilons: EpsilonsOption = None,
    out_dir: OutDirOption = None,
    overwrite: OverwriteOption = False,
    threads: ThreadsOption = None,
    quiet: QuietOption = False,
) -> None:
    """Run one simulation per (seed, privacy level); missing artifacts are generated first."""
    with exit_codes():
        config, out, workers = resolve(config_file, seeds, epsilons, out_dir, threads)
        with console_out.capture() if quiet else nullcontext():
            show_config(config, out, workers)
            do_run(config, out, workers, overwrite or config.output.overwrite)


@app.command()
def report(
    config_file: ConfigOption = None,
    seeds: SeedsOption = None,
    epsilons: EpsilonsOption = None,
    out_dir: OutDirOption = None,
    quiet: QuietOption = False,
) -> None:
    """Aggregate the outcome files into report.json, report.md and the per-analysis CSVs."""
    with exit_codes():
        config, out, _ = resolve(config_file, seeds, epsilons, out_dir, 1)
        with console_out.capture() if quiet else nullcontext():
            do_report(config, out)


@app.command(name="all")
def run_all(
    config_file: ConfigOption = None,
    seeds: SeedsOption = None,
    epsilons: EpsilonsOption = None,
    out_dir: OutDirOption = None,
    overwrite: OverwriteOption = False,
    threads: ThreadsOption = None,
    quiet: QuietOption = False,
) -> None:
    """Generate, run and report in one go."""
    with exit_codes():
        config, out, workers = resolve(config_file, seeds, epsilons, out_dir, threads)
        overwrite = overwrite or config.output.overwrite
        with console_out.capture() if quiet else nullcontext():
            show_config(config, out, workers)
            do_generate(config, out, overwrite)
            do_run(config, out, workers, overwrite)
            do_report(config, out)


if __name__ == "__main__":
    app()
