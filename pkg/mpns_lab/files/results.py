"""
Output handles and CSV writers for training logs and grid results.

Paths ending in .gz are compressed transparently by smart_open.
"""
import csv
import os
from datetime import datetime

from smart_open import open as smart

from mpns_lab.losses import training_log_columns

RESULT_FILES = ("dcor", "accuracy", "cells")
CELL_COLUMNS = ("s", "mode", "seed", "status", "error", "seconds")


def open_output(out_filepath):
    """
    Open ``out_filepath`` for text writing through smart_open, creating its local directory first.
    """
    directory = os.path.dirname(out_filepath)
    if directory:
        os.makedirs(directory, exist_ok=True)
    return smart(out_filepath, "w", newline="")


def get_csv_handle(out_filepath):
    """
    Open ``out_filepath`` for writing and return (handle, csv writer).
    """
    file_handle = open_output(out_filepath)
    return file_handle, csv.writer(file_handle, lineterminator="\n")


def result_path(output_destination, file_type):
    return os.path.join(output_destination, f"{file_type}.csv")


class TrainingLogWriter:
    """
    One row per epoch: the epoch number followed by every loss term.
    """

    def __init__(self, out_filepath, n_modalities):
        self.handle, self.writer = get_csv_handle(out_filepath)
        self.writer.writerow(training_log_columns(n_modalities))
        self.row_count = 0

    def write(self, epoch, breakdown):
        self.writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in breakdown.to_row(epoch)])
        self.row_count += 1

    def close(self):
        self.handle.close()


def write_result_table(out_filepath, columns, rows):
    """
    Write a result table headed by a ``# generated <timestamp>`` line.
    """
    handle, writer = get_csv_handle(out_filepath)
    try:
        handle.write(f"# generated {datetime.now().isoformat()}\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    finally:
        handle.close()


def write_grid_results(output_destination, result):
    """
    Write dcor.csv, accuracy.csv and cells.csv for a GridResult into ``output_destination``.
    """
    paths = {}
    for file_type in RESULT_FILES:
        frame = getattr(result, file_type)
        paths[file_type] = result_path(output_destination, file_type)
        write_result_table(paths[file_type], list(frame.columns), frame.itertuples(index=False, name=None))
    print(f"Wrote grid results to {output_destination}", flush=True)
    return paths
