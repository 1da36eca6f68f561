"""Command-line interface for ffdconv."""

import csv
import logging
from collections.abc import Callable
from dataclasses import replace
from pathlib import Path
from typing import Any

import click
import numpy as np
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn
from rich.table import Table

from . import __version__
from .activations import dump_activations, load_clip
from .bench import BENCH_KERNEL, BENCH_SHAPE, bench_axis
from .blocks import param_count
from .config import (
    BLOCK_KINDS,
    FILTER_AXES,
    MODEL_PRESETS,
    ModelConfig,
    RunConfig,
)
from .configfile import ConfigSet, apply_overrides, dump_record, load_config_set
from .datapackage import validate_package
from .exceptions import EXIT_OK, EXIT_USAGE, ConfigError, DataError, FFDConvError, NumericError
from .features import featurize_file
from .gradcheck import SUITE, GradCheckResult, run_check
from .model import init_model, load_checkpoint, model_param_count
from .synth import Dataset, read_dataset, synth_dataset, write_dataset
from .tensor import resolve_dtype
from .tensorio import write_tensor
from .train import (
    CHECKPOINT_FILE,
    METRICS_FILE,
    TRAIN_LOG_FILE,
    EpochRecord,
    Evaluation,
    evaluate_model,
    train_loop,
    write_evaluation,
)

console = Console()
logger = logging.getLogger(__name__)

DTYPE_CHOICES = ["f32", "f64", "float32", "float64"]
RUN_CONFIG_FILE = "config.txt"


class CommandError(click.ClickException):
    """Library error surfaced with its own exit code."""

    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code

    def show(self, file: Any = None) -> None:
        console.print(f"[red]Error:[/red] {self.format_message()}", highlight=False)


class FFDConvGroup(click.Group):
    """Maps usage errors to exit code 1 and library errors to their own codes."""

    def parse_args(self, ctx: click.Context, args: list[str]) -> list[str]:
        try:
            return super().parse_args(ctx, args)
        except click.UsageError as e:
            e.exit_code = EXIT_USAGE
            raise

    def invoke(self, ctx: click.Context) -> Any:
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.exit_code = EXIT_USAGE
            raise
        except FFDConvError as e:
            raise CommandError(str(e), e.exit_code) from e


def setup_logging(verbose: bool) -> None:
    package_logger = logging.getLogger("ffdconv")
    for handler in list(package_logger.handlers):
        package_logger.removeHandler(handler)
    package_logger.addHandler(
        RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=False)
    )
    package_logger.setLevel(logging.DEBUG if verbose else logging.WARNING)


# -----------------------------------------------------------------------------
# Shared options and config resolution
# -----------------------------------------------------------------------------


CONFIG_OPTIONS = [
    click.option(
        "--config",
        "-c",
        "config_path",
        type=click.Path(path_type=Path),
        default=None,
        help="key = value config file (sections: features, model, train, synth)",
    ),
    click.option(
        "--preset",
        type=click.Choice(sorted(MODEL_PRESETS)),
        default="desk",
        show_default=True,
        help="Model size preset the config file and flags apply on top of",
    ),
    click.option(
        "--variant",
        type=click.Choice(BLOCK_KINDS),
        default=None,
        help="Kind of conv blocks 2..n (block 1 stays static)",
    ),
    click.option("--window", type=int, default=None, help="Generating-conv window W (odd)"),
    click.option(
        "--attention",
        type=click.Choice(["on", "off"]),
        default=None,
        help="Softmax constraint on spatial filters",
    ),
    click.option(
        "--dtype", type=click.Choice(DTYPE_CHOICES), default=None, help="Model precision"
    ),
]


def config_options(func: Callable) -> Callable:
    """--config, --preset and the ablation switches shared by model-building commands."""
    for option in reversed(CONFIG_OPTIONS):
        func = option(func)
    return func


def resolve_configs(
    config_path: Path | None,
    preset: str = "desk",
    variant: str | None = None,
    window: int | None = None,
    attention: str | None = None,
    dtype: str | None = None,
    epochs: int | None = None,
    seed: int | None = None,
    feature_config: Path | None = None,
    run_config_path: Path | None = None,
) -> ConfigSet:
    """Defaults < preset < saved run config < config file < flags."""
    configs = load_config_set(run_config_path, ConfigSet(model=MODEL_PRESETS[preset]))
    configs = load_config_set(config_path, configs)
    if feature_config is not None:
        configs = load_config_set(feature_config, configs, default_section="features")

    model = configs.model
    if variant is not None:
        model = model.with_variant(variant)
    model_flags: dict[str, Any] = {}
    if window is not None:
        model_flags["window"] = window
    if attention is not None:
        model_flags["use_attention"] = attention == "on"
    if dtype is not None:
        model_flags["dtype"] = resolve_dtype(dtype).name
    configs.model = apply_overrides(model, model_flags, "<flags>")

    train_flags: dict[str, Any] = {}
    if epochs is not None:
        train_flags["epochs"] = epochs
    if seed is not None:
        train_flags["seed"] = seed
    configs.train = apply_overrides(configs.train, train_flags, "<flags>")
    return configs


def run_config(
    command: str, configs: ConfigSet, config_path: Path | None, out: Path
) -> RunConfig:
    """The effective run switches, for the header line and the run record."""
    model = configs.model
    return RunConfig(
        command=command,
        config_path=str(config_path) if config_path else None,
        seed=configs.train.seed,
        out_dir=str(out),
        variant=model.kinds[-1],
        window=model.window,
        attention=model.use_attention,
    )


def align_model(model: ModelConfig, dataset: Dataset) -> ModelConfig:
    """Match the model's input extents and class count to a dataset."""
    _, frames, bands = dataset.features.shape
    if (model.frames, model.bands, model.n_classes) != (frames, bands, dataset.n_classes):
        logger.debug(
            "aligning model %dx%d/%d to data %dx%d/%d",
            model.frames, model.bands, model.n_classes, frames, bands, dataset.n_classes,
        )
        try:
            model = replace(model, frames=frames, bands=bands, n_classes=dataset.n_classes)
        except ConfigError as e:
            raise ConfigError(f"model does not fit {frames}x{bands} features: {e}")
    label_frames = dataset.labels.shape[1]
    if model.output_frames != label_frames:
        raise ConfigError(
            f"model emits {model.output_frames} frames but labels have {label_frames}; "
            f"adjust model.time_pool or synth.label_frames"
        )
    return model


def load_split(path: Path, split: str) -> Dataset:
    """A dataset directory, or the `split` subdirectory of a synth-data output."""
    path = Path(path)
    if (path / "clips.csv").exists():
        return read_dataset(path)
    if (path / split / "clips.csv").exists():
        return read_dataset(path / split)
    raise DataError(f"no dataset found at {path} (or {path / split})")


def synthesize_splits(configs: ConfigSet) -> tuple[Dataset, Dataset]:
    train = configs.train
    return (
        synth_dataset(configs.synth, train.n_train, train.seed),
        synth_dataset(configs.synth, train.n_val, train.seed, offset=train.n_train),
    )


def write_run_config(out: Path, configs: ConfigSet) -> None:
    """All effective sections as a config file that reproduces the run."""
    text = "".join(
        dump_record(getattr(configs, section), section)
        for section in ("features", "model", "train", "synth")
    )
    (out / RUN_CONFIG_FILE).write_text(text, encoding="utf-8")


def print_evaluation(evaluation: Evaluation, title: str) -> None:
    table = Table(title=title)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="green", justify="right")
    for name in ("eb_precision", "eb_recall", "eb_f1", "ib_f1", "frame_f1"):
        table.add_row(name, f"{getattr(evaluation, name):.4f}")
    console.print(table)


def parse_list(kind: type) -> Callable[[click.Context, click.Parameter, str], list]:
    """click callback for comma-separated option values."""

    def callback(ctx: click.Context, param: click.Parameter, value: str) -> list:
        items = [item.strip() for item in value.split(",") if item.strip()]
        if not items:
            raise click.BadParameter("expected a comma-separated list")
        try:
            return [kind(item) for item in items]
        except ValueError:
            raise click.BadParameter(f"cannot parse '{value}' as {kind.__name__} values")

    return callback


# -----------------------------------------------------------------------------
# Commands
# -----------------------------------------------------------------------------


@click.group(cls=FFDConvGroup, context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(version=__version__)
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
def main(verbose: bool) -> None:
    """ffdconv - Full-frequency dynamic convolution for sound event detection."""
    setup_logging(verbose)


@main.command()
@click.argument("wav_dir", type=click.Path(path_type=Path))
@click.option(
    "--out", "-o", type=click.Path(path_type=Path), default=Path("features"), show_default=True
)
@click.option(
    "--feature-config",
    type=click.Path(path_type=Path),
    default=None,
    help="key = value file of feature parameters (bare keys target 'features')",
)
@click.option("--config", "-c", "config_path", type=click.Path(path_type=Path), default=None)
def featurize(
    wav_dir: Path, out: Path, feature_config: Path | None, config_path: Path | None
) -> None:
    """Turn a directory of WAV clips into FFDT log-mel feature files."""
    if not wav_dir.is_dir():
        raise DataError(f"WAV directory not found: {wav_dir}")
    configs = resolve_configs(config_path, feature_config=feature_config)
    wavs = sorted(wav_dir.glob("*.wav"))
    if not wavs:
        raise DataError(f"no .wav files in {wav_dir}")
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    with Progress(
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        console=console,
    ) as progress:
        task = progress.add_task("Featurizing...", total=len(wavs))
        for wav in wavs:
            progress.update(task, description=wav.name)
            mel = featurize_file(wav, configs.features)
            write_tensor(out / f"{wav.stem}.ffdt", mel.values)
            rows.append((wav.stem, mel.values.shape[0], mel.values.shape[1]))
            progress.advance(task)

    with open(out / "features.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["filename", "frames", "bands"])
        writer.writerows(rows)

    console.print(f"[green]Featurized {len(rows)} clips[/green]")
    console.print(f"[dim]Location:[/dim] {out.absolute()}")


@main.command("synth-data")
@click.option("--config", "-c", "config_path", type=click.Path(path_type=Path), default=None)
@click.option("--seed", type=int, default=None, help="Dataset seed (default: train.seed)")
@click.option(
    "--out", "-o", type=click.Path(path_type=Path), default=Path("data"), show_default=True
)
@click.option("--n-train", type=int, default=None, help="Training clips (default: train.n_train)")
@click.option("--n-val", type=int, default=None, help="Validation clips (default: train.n_val)")
def synth_data(
    config_path: Path | None,
    seed: int | None,
    out: Path,
    n_train: int | None,
    n_val: int | None,
) -> None:
    """Generate the synthetic frequency-banded benchmark (train/ and val/)."""
    configs = resolve_configs(config_path, seed=seed)
    overrides = {k: v for k, v in (("n_train", n_train), ("n_val", n_val)) if v is not None}
    configs.train = apply_overrides(configs.train, overrides, "<flags>")
    train_set, val_set = synthesize_splits(configs)
    write_dataset(train_set, out / "train")
    write_dataset(val_set, out / "val")

    table = Table(title="Synthetic Dataset")
    table.add_column("Split", style="cyan")
    table.add_column("Clips", style="green", justify="right")
    table.add_column("Events", style="green", justify="right")
    table.add_column("Location", style="dim")
    for name, dataset in (("train", train_set), ("val", val_set)):
        table.add_row(name, str(len(dataset)), str(len(dataset.annotations)), str(out / name))
    console.print(table)


@main.command()
@click.option("--dtype", type=click.Choice(DTYPE_CHOICES), default="f64", show_default=True)
@click.option("--instances", type=int, default=20, show_default=True, help="Instances per op")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option(
    "--op", "ops", multiple=True, type=click.Choice(list(SUITE)), help="Only these checks"
)
def gradcheck(dtype: str, instances: int, seed: int, ops: tuple[str, ...]) -> None:
    """Run the central finite-difference gradient suite."""
    if instances < 1:
        raise click.BadParameter("must be at least 1", param_hint="--instances")
    selected = list(ops) or list(SUITE)
    results: list[GradCheckResult] = []
    with Progress(
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        console=console,
    ) as progress:
        task = progress.add_task("Gradient checks...", total=len(selected))
        for op in selected:
            progress.update(task, description=op)
            results.append(run_check(op, dtype, instances, seed))
            progress.advance(task)

    table = Table(title=f"Gradient Checks ({resolve_dtype(dtype).name})")
    table.add_column("Op", style="cyan")
    table.add_column("Instances", justify="right")
    table.add_column("Max rel err", justify="right")
    table.add_column("Tolerance", justify="right", style="dim")
    table.add_column("Status")
    for result in results:
        status = "[green]pass[/green]" if result.passed else "[red]FAIL[/red]"
        table.add_row(
            result.op,
            str(result.instances),
            f"{result.max_rel_error:.2e}",
            f"{result.tolerance:.0e}",
            status,
        )
    console.print(table)

    failed = [r.op for r in results if not r.passed]
    if failed:
        raise NumericError(f"gradient check failed for {', '.join(failed)}")
    console.print(f"[green]All {len(results)} gradient checks passed[/green]")


@main.command()
@config_options
@click.option("--seed", type=int, default=None, help="Training seed (default: train.seed)")
@click.option("--epochs", type=int, default=None, help="Epochs (default: train.epochs)")
@click.option(
    "--out", "-o", type=click.Path(path_type=Path), default=Path("runs"), show_default=True
)
@click.option(
    "--data",
    type=click.Path(path_type=Path),
    default=None,
    help="synth-data output (train/ and val/); synthesized in memory when omitted",
)
def train(
    config_path: Path | None,
    preset: str,
    variant: str | None,
    window: int | None,
    attention: str | None,
    dtype: str | None,
    seed: int | None,
    epochs: int | None,
    out: Path,
    data: Path | None,
) -> None:
    """Train a detector and write checkpoint, metrics.csv and train_log.jsonl."""
    configs = resolve_configs(config_path, preset, variant, window, attention, dtype, epochs, seed)
    if data is not None:
        train_set, val_set = load_split(data, "train"), load_split(data, "val")
    else:
        train_set, val_set = synthesize_splits(configs)
    configs.model = align_model(configs.model, train_set)
    run = run_config("train", configs, config_path, out)

    console.print(
        f"[bold]Training[/bold] variant={run.variant} W={run.window} "
        f"attention={'on' if run.attention else 'off'} seed={run.seed} "
        f"({len(train_set)} train / {len(val_set)} val clips)"
    )
    state = init_model(configs.model, configs.train.seed)
    out.mkdir(parents=True, exist_ok=True)
    write_run_config(out, configs)

    with Progress(
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        console=console,
    ) as progress:
        task = progress.add_task("Training...", total=configs.train.epochs)

        def on_epoch(record: EpochRecord) -> None:
            progress.update(
                task,
                advance=1,
                description=f"epoch {record.epoch}: loss {record.loss:.4f} eb {record.eb_f1:.3f}",
            )

        result = train_loop(state, train_set, val_set, configs.train, out, on_epoch)

    table = Table(title="Training History")
    table.add_column("Epoch", justify="right")
    table.add_column("Loss", justify="right")
    table.add_column("LR", justify="right", style="dim")
    table.add_column("EB-F1", justify="right", style="green")
    table.add_column("IB-F1", justify="right", style="green")
    for record in result.history:
        table.add_row(
            str(record.epoch),
            f"{record.loss:.5f}",
            f"{record.lr:.2e}",
            f"{record.eb_f1:.4f}",
            f"{record.ib_f1:.4f}",
        )
    console.print(table)
    console.print("[green]Training complete![/green]")
    console.print(f"[dim]Checkpoint:[/dim] {out / CHECKPOINT_FILE}")
    console.print(f"[dim]Metrics:[/dim] {out / METRICS_FILE}")
    console.print(f"[dim]Log:[/dim] {out / TRAIN_LOG_FILE}")


@main.command()
@click.argument("checkpoint", type=click.Path(path_type=Path))
@click.option("--config", "-c", "config_path", type=click.Path(path_type=Path), default=None)
@click.option("--seed", type=int, default=None, help="Seed of the synthesized validation split")
@click.option(
    "--data",
    type=click.Path(path_type=Path),
    default=None,
    help="Dataset directory or synth-data output (val/ is used)",
)
@click.option(
    "--out", "-o", type=click.Path(path_type=Path), default=Path("eval"), show_default=True
)
def evaluate(
    checkpoint: Path, config_path: Path | None, seed: int | None, data: Path | None, out: Path
) -> None:
    """Score a checkpoint on a dataset; writes metrics.csv and class_counts.csv.

    Settings start from the config.txt saved next to the checkpoint, so without
    --data the training run's validation split is synthesized again. -c and
    --seed still override it.
    """
    run_file = checkpoint.parent / RUN_CONFIG_FILE
    run_config_path = run_file if run_file.exists() else None
    if run_config_path is not None:
        logger.info("Using run config %s", run_config_path)
    configs = resolve_configs(config_path, seed=seed, run_config_path=run_config_path)
    state = load_checkpoint(checkpoint)
    if data is not None:
        dataset = load_split(data, "val")
    else:
        _, dataset = synthesize_splits(configs)
    evaluation = evaluate_model(state, dataset, configs.train)
    write_evaluation(out, evaluation, dataset.class_names)
    print_evaluation(evaluation, f"Evaluation ({len(dataset)} clips)")
    console.print(f"[dim]Metrics:[/dim] {out / METRICS_FILE}")


@main.command()
@click.option(
    "--axis",
    "axes",
    multiple=True,
    type=click.Choice(FILTER_AXES),
    help="Spatial bank axis (default: frequency)",
)
@click.option("--batch", type=int, default=BENCH_SHAPE[0], show_default=True)
@click.option("--channels", type=int, default=BENCH_SHAPE[1], show_default=True)
@click.option("--frames", type=int, default=BENCH_SHAPE[2], show_default=True)
@click.option("--bands", type=int, default=BENCH_SHAPE[3], show_default=True)
@click.option("--kernel", type=int, default=BENCH_KERNEL, show_default=True)
@click.option("--repeats", type=int, default=3, show_default=True, help="Fused-path repeats")
@click.option("--seed", type=int, default=0, show_default=True)
def bench(
    axes: tuple[str, ...],
    batch: int,
    channels: int,
    frames: int,
    bands: int,
    kernel: int,
    repeats: int,
    seed: int,
) -> None:
    """Time the fused dynamic filter against the brute-force reference."""
    shape = (batch, channels, frames, bands)
    table = Table(title=f"Dynamic Filtering {shape} K={kernel}")
    table.add_column("Axis", style="cyan")
    table.add_column("Fused ns/elem", justify="right")
    table.add_column("Reference ns/elem", justify="right")
    table.add_column("Speedup", justify="right", style="green")
    table.add_column("Fused working MiB", justify="right")
    table.add_column("Combined kernel MiB", justify="right", style="dim")
    table.add_column("Combined buffer", justify="center")
    table.add_column("Max |diff|", justify="right", style="dim")
    for axis in axes or ("frequency",):
        with console.status(f"Benchmarking {axis}..."):
            result = bench_axis(axis, shape, kernel, repeats=repeats, seed=seed)
        table.add_row(
            axis,
            f"{result.fused_ns_per_element:.1f}",
            f"{result.reference_ns_per_element:.1f}",
            f"{result.speedup:.1f}x",
            f"{result.fused_working_bytes / 2**20:.2f}",
            f"{result.combined_bytes / 2**20:.2f}",
            "[red]yes[/red]" if result.allocates_combined else "[green]no[/green]",
            f"{result.max_abs_diff:.1e}",
        )
    console.print(table)


@main.command("dump-activations")
@click.argument("checkpoint", type=click.Path(path_type=Path))
@click.argument("clip", type=click.Path(path_type=Path))
@click.option(
    "--out", "-o", type=click.Path(path_type=Path), default=Path("activations"), show_default=True
)
@click.option(
    "--feature-config",
    type=click.Path(path_type=Path),
    default=None,
    help="Feature parameters used when CLIP is a WAV file",
)
def dump_activations_cmd(
    checkpoint: Path, clip: Path, out: Path, feature_config: Path | None
) -> None:
    """Write per-layer FFDT activations, band traces and coherence for one clip."""
    configs = resolve_configs(None, feature_config=feature_config)
    state = load_checkpoint(checkpoint)
    features = load_clip(clip, configs.features)
    written = dump_activations(state, features, out)
    console.print(f"[green]Wrote {len(written)} files[/green]")
    console.print(f"[dim]Location:[/dim] {out.absolute()}")


@main.command()
@click.option("--config", "-c", "config_path", type=click.Path(path_type=Path), default=None)
@click.option(
    "--preset", type=click.Choice(sorted(MODEL_PRESETS)), default="desk", show_default=True
)
@click.option(
    "--variants",
    default="static,ffd,ftd",
    show_default=True,
    callback=parse_list(str),
    help="Comma-separated block kinds",
)
@click.option(
    "--windows", default="3", show_default=True, callback=parse_list(int), help="Window sizes W"
)
@click.option(
    "--attention",
    "attention_grid",
    default="on",
    show_default=True,
    callback=parse_list(str),
    help="Comma-separated on/off",
)
@click.option("--seeds", default="0,1,2", show_default=True, callback=parse_list(int))
@click.option("--epochs", type=int, default=None)
@click.option(
    "--out", "-o", type=click.Path(path_type=Path), default=Path("sweep"), show_default=True
)
def sweep(
    config_path: Path | None,
    preset: str,
    variants: list[str],
    windows: list[int],
    attention_grid: list[str],
    seeds: list[int],
    epochs: int | None,
    out: Path,
) -> None:
    """Train and score every variant x window x attention x seed combination."""
    for variant in variants:
        if variant not in BLOCK_KINDS:
            raise click.BadParameter(f"unknown variant '{variant}'", param_hint="--variants")
    for setting in attention_grid:
        if setting not in ("on", "off"):
            raise click.BadParameter(f"expected on/off, got '{setting}'", param_hint="--attention")

    base = resolve_configs(config_path, preset, epochs=epochs)
    grid = [
        (variant, window, setting)
        for variant in variants
        for window in windows
        for setting in attention_grid
        if variant != "static" or (window, setting) == (windows[0], attention_grid[0])
    ]
    rows = []
    with Progress(
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        console=console,
    ) as progress:
        task = progress.add_task("Sweeping...", total=len(grid) * len(seeds))
        for seed in seeds:
            configs = resolve_configs(config_path, preset, epochs=epochs, seed=seed)
            train_set, val_set = synthesize_splits(configs)
            for variant, window, setting in grid:
                progress.update(task, description=f"{variant} W={window} att={setting} s={seed}")
                model = align_model(
                    resolve_configs(
                        config_path, preset, variant, window, setting, epochs=epochs, seed=seed
                    ).model,
                    train_set,
                )
                state = init_model(model, seed)
                result = train_loop(state, train_set, val_set, configs.train)
                final = result.history[-1] if result.history else None
                rows.append(
                    {
                        "variant": variant,
                        "window": window,
                        "attention": setting,
                        "seed": seed,
                        "params": state.param_count(),
                        "eb_f1": final.eb_f1 if final else 0.0,
                        "ib_f1": final.ib_f1 if final else 0.0,
                    }
                )
                progress.advance(task)

    out.mkdir(parents=True, exist_ok=True)
    write_sweep(out, rows)
    write_run_config(out, base)

    table = Table(title=f"Sweep ({len(seeds)} seeds)")
    table.add_column("Variant", style="cyan")
    table.add_column("W", justify="right")
    table.add_column("Attention")
    table.add_column("Params", justify="right", style="dim")
    table.add_column("Mean EB-F1", justify="right", style="green")
    table.add_column("Mean IB-F1", justify="right", style="green")
    table.add_column("EB-F1 vs static", justify="right")
    for summary in summarize_sweep(rows):
        table.add_row(
            summary["variant"],
            str(summary["window"]),
            summary["attention"],
            str(summary["params"]),
            f"{summary['mean_eb_f1']:.4f}",
            f"{summary['mean_ib_f1']:.4f}",
            _format_delta(summary["eb_f1_vs_static"], 4),
        )
    console.print(table)
    console.print(f"[dim]Results:[/dim] {out / 'sweep.csv'}")


def summarize_sweep(rows: list[dict]) -> list[dict]:
    """Mean scores per (variant, window, attention), in first-seen order.

    `eb_f1_vs_static` is the mean EB-F1 minus the static baseline's, or None
    when the sweep has no static run.
    """
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault((row["variant"], row["window"], row["attention"]), []).append(row)
    summaries = [
        {
            "variant": variant,
            "window": window,
            "attention": setting,
            "params": members[0]["params"],
            "seeds": len(members),
            "mean_eb_f1": float(np.mean([m["eb_f1"] for m in members])),
            "mean_ib_f1": float(np.mean([m["ib_f1"] for m in members])),
        }
        for (variant, window, setting), members in groups.items()
    ]
    static = [s["mean_eb_f1"] for s in summaries if s["variant"] == "static"]
    for summary in summaries:
        summary["eb_f1_vs_static"] = summary["mean_eb_f1"] - static[0] if static else None
    return summaries


def _format_delta(delta: float | None, digits: int) -> str:
    return "" if delta is None else f"{delta:+.{digits}f}"


def write_sweep(out: Path, rows: list[dict]) -> None:
    """sweep.csv (per seed) and sweep_summary.csv (means)."""
    columns = ["variant", "window", "attention", "seed", "params", "eb_f1", "ib_f1"]
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            scores = {"eb_f1": f"{row['eb_f1']:.6f}", "ib_f1": f"{row['ib_f1']:.6f}"}
            writer.writerow({**row, **scores})
    summary_columns = [
        "variant", "window", "attention", "params", "seeds", "mean_eb_f1", "mean_ib_f1",
        "eb_f1_vs_static",
    ]
    with open(out / "sweep_summary.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=summary_columns, lineterminator="\n")
        writer.writeheader()
        for summary in summarize_sweep(rows):
            writer.writerow(
                {
                    **summary,
                    "mean_eb_f1": f"{summary['mean_eb_f1']:.6f}",
                    "mean_ib_f1": f"{summary['mean_ib_f1']:.6f}",
                    "eb_f1_vs_static": _format_delta(summary["eb_f1_vs_static"], 6),
                }
            )


@main.command("validate")
@click.argument("path", type=click.Path(path_type=Path))
def validate_cmd(path: Path) -> None:
    """Validate a dataset directory or report against its datapackage.json."""
    if not path.exists():
        raise DataError(f"path not found: {path}")
    console.print(f"[bold]Validating:[/bold] {path}")
    errors = validate_package(path)
    if not errors:
        console.print("[green]Datapackage is valid![/green]")
        return
    console.print("[red]Validation errors found:[/red]")
    for error in errors:
        console.print(f"  - {error}")
    raise DataError(f"{len(errors)} validation errors in {path}")


@main.command()
@config_options
def info(
    config_path: Path | None,
    preset: str,
    variant: str | None,
    window: int | None,
    attention: str | None,
    dtype: str | None,
) -> None:
    """Show the layer table and parameter counts of a model config."""
    model = resolve_configs(config_path, preset, variant, window, attention, dtype).model
    table = Table(title=f"Model ({model.frames}x{model.bands}, {model.n_classes} classes)")
    table.add_column("Block", justify="right")
    table.add_column("Kind", style="cyan")
    table.add_column("Channels")
    table.add_column("Input TxF")
    table.add_column("Pool")
    table.add_column("Params", justify="right", style="green")
    for i, block in enumerate(model.block_configs()):
        table.add_row(
            str(i + 1),
            block.kind,
            f"{block.c_in} -> {block.c_out}",
            f"{block.frames}x{block.bands}",
            f"{model.time_pool[i]}x{model.freq_pool[i]}",
            f"{param_count(block):,}",
        )
    table.add_section()
    total = f"[bold]{model_param_count(model):,}[/bold]"
    table.add_row("", "[bold]Total[/bold]", "", "", "", total)
    console.print(table)
    console.print(
        f"[dim]GRU:[/dim] {model.gru_layers} x Bi-GRU({model.gru_hidden}), "
        f"[dim]output frames:[/dim] {model.output_frames}"
    )


def run(argv: list[str] | None = None) -> int:
    """Console-script entry point; returns the process exit code."""
    try:
        result = main.main(args=argv, prog_name="ffdconv", standalone_mode=False)
    except click.exceptions.Abort:
        console.print("[yellow]Aborted[/yellow]")
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return e.exit_code
    return result if isinstance(result, int) else EXIT_OK
