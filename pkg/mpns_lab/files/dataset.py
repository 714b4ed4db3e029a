"""
Text format for generated datasets.

The file starts with ``# key=value`` lines holding the generator parameters, then a header row and one row per sample:
the X1 columns, the X2 columns, y and the four latents. Floats are written with repr so a round trip is exact.
"""
import csv
import os

import numpy as np
from smart_open import open as smart

from mpns_lab.files.results import get_csv_handle
from mpns_lab.synthgen import LATENT_NAMES, GenParams, LatentRecord, MultimodalDataset

DATASET_SPLITS = ("train", "eval")


def dataset_path(output_destination, split):
    return os.path.join(output_destination, f"{split}.csv.gz")


def dataset_columns(dataset):
    return (
        [f"x1_{i + 1}" for i in range(dataset.x1.shape[1])]
        + [f"x2_{i + 1}" for i in range(dataset.x2.shape[1])]
        + ["y"]
        + list(LATENT_NAMES)
    )


def write_dataset(dataset, out_filepath):
    handle, writer = get_csv_handle(out_filepath)
    try:
        for line in dataset.params.to_header():
            handle.write(f"# {line}\n")
        writer.writerow(dataset_columns(dataset))
        latents = dataset.latents
        for i in range(len(dataset)):
            writer.writerow(
                [repr(float(v)) for v in dataset.x1[i]]
                + [repr(float(v)) for v in dataset.x2[i]]
                + [int(dataset.y[i]), int(latents.ns[i]), int(latents.sf[i]), int(latents.nc[i]),
                   repr(float(latents.sc[i]))]
            )
    finally:
        handle.close()


def read_dataset(in_filepath):
    """
    Read a dataset written by ``write_dataset``.
    """
    header = []
    with smart(in_filepath, "r", newline="") as handle:
        line = handle.readline()
        while line.startswith("#"):
            header.append(line[1:].strip())
            line = handle.readline()
        if not header:
            raise ValueError(f"{in_filepath} has no generator parameter header.")

        columns = next(csv.reader([line]))
        rows = list(csv.reader(handle))

    params = GenParams.from_header(header)
    if not rows:
        raise ValueError(f"{in_filepath} holds no samples.")
    data = np.array(rows, dtype=np.float64)
    n_x1 = sum(1 for c in columns if c.startswith("x1_"))
    n_x2 = sum(1 for c in columns if c.startswith("x2_"))
    if data.shape[1] != n_x1 + n_x2 + 5:
        raise ValueError(f"{in_filepath} has {data.shape[1]} columns, expected {n_x1 + n_x2 + 5}.")

    tail = data[:, n_x1 + n_x2:]
    y = tail[:, 0].astype(np.int64)
    latents = LatentRecord(
        ns=tail[:, 1].astype(np.int64),
        sf=tail[:, 2].astype(np.int64),
        nc=tail[:, 3].astype(np.int64),
        sc=tail[:, 4].copy(),
        y=y.copy(),
    )
    return MultimodalDataset(
        params=params,
        x1=data[:, :n_x1].copy(),
        x2=data[:, n_x1:n_x1 + n_x2].copy(),
        y=y,
        latents=latents,
    )
