"""
Top level script to generate data, train and evaluate MPNS models, and run the ablation grid.
"""
import os
from dataclasses import replace

import click
import yaml

from mpns_lab.config import parse_config
from mpns_lab.evaluation import ACCURACY_COLUMNS, DCOR_COLUMNS, accuracy_report, evaluate_dcor
from mpns_lab.files.checkpoint import load_checkpoint, save_checkpoint
from mpns_lab.files.dataset import DATASET_SPLITS, dataset_path, read_dataset, write_dataset
from mpns_lab.files.results import result_path, write_result_table
from mpns_lab.fixtures.scms import SCM_FIXTURES
from mpns_lab.harness import run_grid, verify_trends
from mpns_lab.pns_oracle import PNS_REPORT_COLUMNS, load_scm, pns_report
from mpns_lab.synthgen import generate_split
from mpns_lab.trainer import inference_model, train
from mpns_lab.utils import ConfigurationError, DegenerateVarianceError, DivergenceError, LogTimer, setup_timing

TREND_FAILURE_EXIT_CODE = 2
OPERATIONAL_ERRORS = (ConfigurationError, DegenerateVarianceError, DivergenceError, RuntimeError, ValueError)


def get_config(config_file):
    """
    Wrap around config loading.

    We override this in tests so that we can use temp dirs for logs etc.
    """
    return parse_config(config_file)


def _load(config_file):
    try:
        config = get_config(config_file)
    except ConfigurationError as e:
        raise click.ClickException(str(e)) from e
    setup_timing(config.grid.log_dir)
    return config


config_option = click.option(
    "--config_file",
    help="Configuration file.",
    required=True,
    default="default_config.yaml",
    type=click.Path(
        exists=True,
        dir_okay=False,
        file_okay=True,
        writable=False
    )
)


@click.group()
def cli():
    """
    Top level group of command objects.
    """


@click.command()
@config_option
@click.option("--s", "s", type=float, default=None, help="Spurious correlation strength, defaults to the configured s.")
@click.option("--n-train", "n_train", type=int, default=None, help="Training samples, defaults to n_train.")
@click.option("--n-eval", "n_eval", type=int, default=None, help="Evaluation samples, defaults to n_eval.")
@click.option("--seed", "seed", type=int, default=None,
              help="Data seed, defaults to data_seed. Train and eval come from disjoint substreams of it.")
@click.option("--out", "out_dir", required=True, help="Directory for train.csv.gz and eval.csv.gz.")
def generate(config_file, s, n_train, n_eval, seed, out_dir):
    """
    Generate a train/eval pair of synthetic two-modality datasets.
    """
    config = _load(config_file)
    s = config.gen.s if s is None else s
    n_train = config.grid.n_train if n_train is None else n_train
    n_eval = config.grid.n_eval if n_eval is None else n_eval
    seed = config.gen.seed if seed is None else seed
    try:
        with LogTimer("generate", out_dir):
            datasets = generate_split(replace(config.gen, s=s, seed=seed), n_train, n_eval)
            for split, dataset in zip(DATASET_SPLITS, datasets):
                write_dataset(dataset, dataset_path(out_dir, split))
    except ValueError as e:
        raise click.ClickException(str(e)) from e
    print(f"Wrote {n_train} training and {n_eval} evaluation samples with s={s} and seed {seed} to {out_dir}")
    print("Done.")


@click.command(name="train")
@config_option
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, help="Checkpoint file to write.")
@click.option("--log", "log_path", default=None, help="Optional per-epoch training log CSV.")
@click.option("--inference-only", is_flag=True, help="Save the prediction-only model.")
def train_model(config_file, data_path, out_path, log_path, inference_only):
    """
    Train one model on a dataset file and save its checkpoint.
    """
    config = _load(config_file)
    try:
        dataset = read_dataset(data_path)
        print(f"Training {config.train.mode} on {len(dataset)} samples", flush=True)
        record = train(config.model, config.train, dataset, log_path=log_path)
    except OPERATIONAL_ERRORS as e:
        raise click.ClickException(str(e)) from e

    bundle = inference_model(record) if inference_only else record.bundle
    save_checkpoint(bundle, out_path)
    print(f"Final total loss {record.final_loss:.6f} after {record.wall_clock:.1f}s")
    print(f"Saved checkpoint to {out_path}")
    print("Done.")


@click.command(name="eval")
@config_option
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", default=None, help="Directory for dcor.csv and accuracy.csv.")
def evaluate(config_file, checkpoint_path, data_path, out_dir):
    """
    Score a checkpoint on a dataset file: distance correlations, accuracies and the modality probe.
    """
    config = _load(config_file)
    try:
        bundle = load_checkpoint(checkpoint_path)
        dataset = read_dataset(data_path)
        with LogTimer("eval", checkpoint_path):
            dcor = evaluate_dcor(bundle, dataset)
            accuracy = accuracy_report(
                bundle,
                dataset,
                imputation=config.grid.imputation,
                probe_epochs=config.grid.probe_epochs,
                probe_batch_size=config.grid.probe_batch_size,
                seed=config.train.seed,
            )
    except OPERATIONAL_ERRORS as e:
        raise click.ClickException(str(e)) from e

    s = dataset.params.s
    mode = bundle.metadata.get("mode", "")
    seed = bundle.metadata.get("seed", "")
    for modality, variable, part in sorted(dcor.entries):
        print(f"   modality {modality} {variable} {part}: {dcor.entries[(modality, variable, part)]:.4f}")
    for (eval_mode, head), value in sorted(accuracy.entries.items()):
        print(f"   {eval_mode} {head}: {value:.4f}")

    if out_dir:
        write_result_table(result_path(out_dir, "dcor"), DCOR_COLUMNS, dcor.rows(s, mode, seed))
        write_result_table(result_path(out_dir, "accuracy"), ACCURACY_COLUMNS, accuracy.rows(s, mode, seed))
        print(f"Wrote evaluation results to {out_dir}")
    print("Done.")


def _scalar(value):
    return yaml.safe_load(value)


@click.command()
@click.option("--scm", "scm_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="SCM description file.")
@click.option("--fixture", type=click.Choice(sorted(SCM_FIXTURES)), default=None, help="Built-in SCM.")
@click.option("--z", "z", required=True, help="Value of the cause.")
@click.option("--zbar", "zbar", required=True, help="Contrast value of the cause.")
@click.option("--y", "y", required=True, help="Value of the outcome.")
@click.option("--csv", "csv_path", default=None, help="Also write the report as a one-row result table.")
def oracle(scm_path, fixture, z, zbar, y, csv_path):
    """
    Compute exact PNS quantities for a finite SCM.
    """
    if bool(scm_path) == bool(fixture):
        raise click.UsageError("Pass exactly one of --scm and --fixture.")
    try:
        scm = load_scm(scm_path) if scm_path else SCM_FIXTURES[fixture]()
        report = pns_report(scm, _scalar(z), _scalar(zbar), _scalar(y))
    except OPERATIONAL_ERRORS as e:
        raise click.ClickException(str(e)) from e

    for column, value in zip(PNS_REPORT_COLUMNS, report.to_row()):
        print(f"{column}: {value}")
    if csv_path:
        write_result_table(csv_path, PNS_REPORT_COLUMNS, [report.to_row()])
        print(f"Wrote the PNS report to {csv_path}")


@click.command()
@config_option
@click.option("--out", "out_dir", required=True, help="Directory for dcor.csv, accuracy.csv and cells.csv.")
def ablation(config_file, out_dir):
    """
    Run the full grid of spurious correlation levels, ablation modes and seeds.
    """
    config = _load(config_file)
    try:
        result = run_grid(config.grid, out_dir)
    except RuntimeError as e:
        raise click.ClickException(str(e)) from e
    print(f"{len(result.cells)} cells, {len(result.failed_cells)} failed.")
    print("Done.")


@click.command()
@click.option("--results", "results_dir", required=True, type=click.Path(exists=True, file_okay=False))
def verify(results_dir):
    """
    Check the expected trends on stored grid results.

    Exits with status 2 when a check fails.
    """
    try:
        report = verify_trends(os.path.abspath(results_dir))
    except ValueError as e:
        raise click.ClickException(str(e)) from e
    print(report.to_text())
    if not report.passed:
        raise SystemExit(TREND_FAILURE_EXIT_CODE)


cli.add_command(generate)
cli.add_command(train_model)
cli.add_command(evaluate)
cli.add_command(oracle)
cli.add_command(ablation)
cli.add_command(verify)

if __name__ == "__main__":
    cli()
