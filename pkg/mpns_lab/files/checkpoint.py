"""
Checkpoint files for model bundles.

Layout: a magic line, one JSON line with the model config, metadata and inference flag, then one block per array:
``<kind> <name> <rows> <cols>`` followed by the rows as space-separated repr floats.
"""
import json
from dataclasses import asdict

import numpy as np
from smart_open import open as smart

from mpns_lab.files.results import open_output
from mpns_lab.model import ModelBundle, ModelConfig

MAGIC = "MPNS-CHECKPOINT v1"


def save_checkpoint(bundle, out_filepath):
    handle = open_output(out_filepath)
    try:
        handle.write(MAGIC + "\n")
        handle.write(json.dumps({
            "config": asdict(bundle.config),
            "metadata": bundle.metadata,
            "inference_only": bundle.inference_only,
        }) + "\n")
        for kind, arrays in (("param", bundle.params), ("buffer", bundle.buffers)):
            for name in sorted(arrays):
                value = arrays[name]
                handle.write(f"{kind} {name} {value.shape[0]} {value.shape[1]}\n")
                for row in value:
                    handle.write(" ".join(repr(float(v)) for v in row) + "\n")
    finally:
        handle.close()


def load_checkpoint(in_filepath):
    """
    Rebuild a ModelBundle from a checkpoint file; values are bit-identical to the saved ones.
    """
    with smart(in_filepath, "r") as handle:
        lines = handle.read().splitlines()

    if not lines or lines[0] != MAGIC:
        raise ValueError(f"{in_filepath} is not a model checkpoint.")
    head = json.loads(lines[1])
    arrays = {"param": {}, "buffer": {}}

    i = 2
    while i < len(lines):
        kind, name, rows, cols = lines[i].split()
        rows, cols = int(rows), int(cols)
        if kind not in arrays:
            raise ValueError(f"{in_filepath}:{i + 1}: unknown block kind {kind}.")
        block = lines[i + 1:i + 1 + rows]
        if len(block) != rows:
            raise ValueError(f"{in_filepath}: block {name} is truncated.")
        value = np.array([[float(v) for v in line.split()] for line in block], dtype=np.float64)
        arrays[kind][name] = value.reshape(rows, cols)
        i += 1 + rows

    return ModelBundle(
        config=ModelConfig(**head["config"]),
        params=arrays["param"],
        buffers=arrays["buffer"],
        metadata=head["metadata"],
        inference_only=head["inference_only"],
    )
