"""
Runs the ablation grid (spurious correlation levels x training modes x seeds) and checks the expected trends.

Each cell generates its own train and eval sets from the cell seed, trains one model and scores it. Cells are
independent and may run in a process pool; a failing cell is recorded and the rest of the grid carries on.
"""
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import pandas as pd
from smart_open import open as smart

from mpns_lab.evaluation import (
    ACCURACY_COLUMNS,
    DCOR_COLUMNS,
    HEADLINE_PART,
    IMPUTATIONS,
    accuracy_report,
    evaluate_dcor,
)
from mpns_lab.files.results import CELL_COLUMNS, RESULT_FILES, result_path, write_grid_results
from mpns_lab.losses import ABLATION_MODES
from mpns_lab.model import ModelConfig
from mpns_lab.synthgen import GenParams, generate_split
from mpns_lab.trainer import TrainConfig, train, with_mode
from mpns_lab.utils import LogTimer

DEFAULT_MODES = ("full_mpns", "wo_pns", "wo_inv_pns", "wo_spec_pns", "no_grl")
PROBE_CEILING = 0.60


@dataclass(frozen=True)
class ExperimentGrid:
    """
    Axes of the grid plus the shared generator, model, training and evaluation settings.
    """

    s_values: tuple = (0.0, 0.3, 0.7)
    modes: tuple = DEFAULT_MODES
    seeds: int = 5
    base_seed: int = 0
    n_train: int = 15000
    n_eval: int = 5000
    workers: int = 4
    imputation: str = "zero"
    probe_epochs: int = 20
    probe_batch_size: int = 128
    log_dir: str = "logs"
    gen_params: GenParams = field(default_factory=GenParams)
    model_config: ModelConfig = field(default_factory=ModelConfig)
    train_config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        object.__setattr__(self, "s_values", tuple(float(s) for s in self.s_values))
        object.__setattr__(self, "modes", tuple(self.modes))
        if not self.s_values:
            raise ValueError("s_values must not be empty.")
        for s in self.s_values:
            if not 0.0 <= s < 1.0:
                raise ValueError(f"Every s value must lie in [0, 1), got {s}.")
        if not self.modes:
            raise ValueError("modes must not be empty.")
        for mode in self.modes:
            if mode not in ABLATION_MODES:
                raise ValueError(f"Unknown ablation mode {mode}; choose from {ABLATION_MODES}.")
        if self.seeds < 1:
            raise ValueError(f"seeds must be at least 1, got {self.seeds}.")
        if self.n_train < 2 or self.n_eval < 2:
            raise ValueError("n_train and n_eval must be at least 2.")
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}.")
        if self.probe_epochs < 1 or self.probe_batch_size < 2:
            raise ValueError("probe_epochs must be at least 1 and probe_batch_size at least 2.")
        if self.imputation not in IMPUTATIONS:
            raise ValueError(f"imputation must be one of {IMPUTATIONS}, got {self.imputation}.")

    @property
    def seed_values(self):
        return tuple(range(self.base_seed, self.base_seed + self.seeds))

    def cells(self):
        return [(s, mode, seed) for s in self.s_values for mode in self.modes for seed in self.seed_values]

    def cell_datasets(self, s, seed):
        """
        Train and eval sets of a cell; they depend on (s, seed) only, never on the mode.
        """
        return generate_split(replace(self.gen_params, s=s, seed=seed), self.n_train, self.n_eval)


@dataclass
class CellOutcome:
    s: float
    mode: str
    seed: int
    status: str
    error: str = ""
    seconds: float = 0.0
    dcor_rows: list = field(default_factory=list)
    accuracy_rows: list = field(default_factory=list)


@dataclass
class GridResult:
    """
    Result tables of a grid run: distance correlations, accuracies and the status of every cell.
    """

    dcor: pd.DataFrame
    accuracy: pd.DataFrame
    cells: pd.DataFrame

    @classmethod
    def from_outcomes(cls, outcomes):
        return cls(
            dcor=pd.DataFrame([r for o in outcomes for r in o.dcor_rows], columns=list(DCOR_COLUMNS)),
            accuracy=pd.DataFrame([r for o in outcomes for r in o.accuracy_rows], columns=list(ACCURACY_COLUMNS)),
            cells=pd.DataFrame(
                [(o.s, o.mode, o.seed, o.status, o.error, o.seconds) for o in outcomes], columns=list(CELL_COLUMNS)
            ),
        )

    @property
    def failed_cells(self):
        return self.cells[self.cells["status"] != "ok"]

    def summary(self):
        """
        Seed mean and standard deviation of every distance correlation.
        """
        keys = ["s", "mode", "modality", "variable", "rep_part"]
        return self.dcor.groupby(keys)["dcor"].agg(["mean", "std", "count"]).reset_index()


def run_cell(grid, s, mode, seed):
    """
    Generate, train and evaluate one cell; exceptions are captured in the outcome.
    """
    outcome = CellOutcome(s=s, mode=mode, seed=seed, status="ok")
    print(f"Starting cell s={s} mode={mode} seed={seed}", flush=True)
    with LogTimer("grid", f"s={s} {mode} seed {seed}") as timer:
        try:
            train_set, eval_set = grid.cell_datasets(s, seed)
            record = train(grid.model_config, with_mode(grid.train_config, mode, seed), train_set, progress=False)
            outcome.dcor_rows = evaluate_dcor(record.bundle, eval_set).rows(s, mode, seed)
            outcome.accuracy_rows = accuracy_report(
                record.bundle,
                eval_set,
                imputation=grid.imputation,
                probe_epochs=grid.probe_epochs,
                probe_batch_size=grid.probe_batch_size,
                seed=seed,
            ).rows(s, mode, seed)
        except Exception as e:  # pylint: disable=broad-exception-caught
            outcome.status = "failed"
            outcome.error = f"{type(e).__name__}: {e}"
            print(f"Cell s={s} mode={mode} seed={seed} failed:\n{traceback.format_exc()}", flush=True)
    outcome.seconds = timer.duration
    print(f"Finished cell s={s} mode={mode} seed={seed}: {outcome.status} in {outcome.seconds:.1f}s", flush=True)
    return outcome


def run_grid(grid, output_destination=None):
    """
    Run every cell of the grid and collect the results, in grid order regardless of completion order.

    Raises RuntimeError when every cell failed.
    """
    cells = grid.cells()
    print(f"Running {len(cells)} grid cells with {grid.workers} worker(s)", flush=True)
    with LogTimer("grid", "total"):
        if grid.workers == 1:
            outcomes = [run_cell(grid, *cell) for cell in cells]
        else:
            with ProcessPoolExecutor(max_workers=grid.workers) as pool:
                futures = [pool.submit(run_cell, grid, *cell) for cell in cells]
                outcomes = [f.result() for f in futures]

    result = GridResult.from_outcomes(outcomes)
    if output_destination:
        write_grid_results(output_destination, result)
    failed = result.failed_cells
    if len(failed) == len(cells):
        raise RuntimeError(f"All {len(cells)} grid cells failed:\n" + "\n".join(failed["error"]))
    if len(failed):
        print(f"{len(failed)} of {len(cells)} cells failed.", flush=True)
    return result


def read_grid_results(input_destination):
    """
    Load the tables written by ``run_grid`` back into a GridResult.
    """
    frames = {}
    for file_type in RESULT_FILES:
        path = result_path(input_destination, file_type)
        if not os.path.exists(path):
            raise ValueError(f"Missing result file {path}.")
        with smart(path, "r") as handle:
            frames[file_type] = pd.read_csv(handle, comment="#", keep_default_na=False)
    return GridResult(**frames)


@dataclass
class TrendCheck:
    name: str
    passed: bool
    detail: str


@dataclass
class TrendReport:
    checks: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def add(self, name, passed, detail):
        self.checks.append(TrendCheck(name=name, passed=bool(passed), detail=detail))

    def to_text(self):
        lines = [f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}" for c in self.checks]
        lines.extend(f"[WARN] {w}" for w in self.warnings)
        lines.append("Trend verification " + ("passed." if self.passed else "failed."))
        return "\n".join(lines)


def _missing_cells(dcor):
    s_values = sorted(dcor["s"].unique())
    seeds = sorted(dcor["seed"].unique())
    modes = sorted(set(dcor["mode"].unique()) | {"full_mpns", "wo_pns"})
    present = set(zip(dcor["s"], dcor["mode"], dcor["seed"]))
    return [(s, m, seed) for s in s_values for m in modes for seed in seeds if (s, m, seed) not in present]


def verify_trends(result):
    """
    Check the directional claims on seed-averaged headline distance correlations.

    ``result`` is a GridResult or a directory written by ``run_grid``. Raises ValueError when cells are missing. A
    comparison whose mode the grid does not include fails with a "missing mode" detail.
    """
    if not isinstance(result, GridResult):
        result = read_grid_results(result)
    dcor = result.dcor
    if dcor.empty:
        raise ValueError("The grid result holds no distance correlations.")

    missing = _missing_cells(dcor)
    if missing:
        listed = ", ".join(f"(s={s}, {m}, seed={seed})" for s, m, seed in missing)
        raise ValueError(f"Grid is incomplete, missing cells: {listed}")

    report = TrendReport()
    if dcor["seed"].nunique() < 2:
        report.warnings.append("Only one seed per cell, no spread statistics available.")

    headline = dcor[dcor["rep_part"] == HEADLINE_PART]
    means = headline.groupby(["s", "mode", "modality", "variable"])["dcor"].mean()
    s_values = sorted(headline["s"].unique())
    modalities = sorted(headline["modality"].unique())
    modes = set(headline["mode"].unique())

    for s in s_values:
        for m in modalities:
            full = means[(s, "full_mpns", m, "NS")]
            ablated = means[(s, "wo_pns", m, "NS")]
            report.add(
                f"NS full_mpns > wo_pns (s={s}, modality {m})", full > ablated, f"{full:.4f} vs {ablated:.4f}"
            )

    ordering = "NS wo_inv_pns <= wo_spec_pns"
    absent = sorted({"wo_inv_pns", "wo_spec_pns"} - modes)
    if absent:
        report.add(ordering, False, f"missing mode {', '.join(absent)}")
    else:
        by_mode = headline[headline["variable"] == "NS"].groupby(["s", "mode"])["dcor"].mean()
        for s in s_values:
            wo_inv = by_mode[(s, "wo_inv_pns")]
            wo_spec = by_mode[(s, "wo_spec_pns")]
            report.add(f"{ordering} (s={s})", wo_inv <= wo_spec, f"{wo_inv:.4f} vs {wo_spec:.4f}")

    sc = headline[headline["variable"] == "SC"].groupby(["mode", "s"])["dcor"].mean()
    for mode in sorted(modes):
        values = [sc[(mode, s)] for s in s_values]
        rising = all(b >= a for a, b in zip(values, values[1:]))
        report.add(f"SC rises with s ({mode})", rising, " -> ".join(f"{v:.4f}" for v in values))

    probe = result.accuracy
    if not probe.empty:
        probe = probe[(probe["eval_mode"] == "probe") & (probe["head"] == "discriminator")]
    probe_means = probe.groupby("mode")["accuracy"].mean() if not probe.empty else pd.Series(dtype=float)

    ceiling = f"Modality probe on full_mpns <= {PROBE_CEILING}"
    versus = "Modality probe full_mpns < no_grl"
    if "full_mpns" not in probe_means:
        report.add(ceiling, False, "no probe accuracy for full_mpns")
        report.add(versus, False, "no probe accuracy for full_mpns")
        return report
    full_probe = probe_means["full_mpns"]
    report.add(ceiling, full_probe <= PROBE_CEILING, f"{full_probe:.4f}")
    if "no_grl" not in probe_means:
        report.add(versus, False, "missing mode no_grl")
    else:
        report.add(versus, full_probe < probe_means["no_grl"], f"{full_probe:.4f} vs {probe_means['no_grl']:.4f}")
    return report
