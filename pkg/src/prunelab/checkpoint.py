"""Single-file checkpoint container.

Layout: 4-byte magic ``PLCK``, u32 LE format version, u64 LE manifest length,
UTF-8 JSON manifest, then the weight payload as raw little-endian float64 in
flat-view order. The payload must be exactly 8 * param_count bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .network import LayerSpec, Network
from .training import ModelRecord, TrainConfig

MAGIC = b"PLCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _manifest_for(record):
    return {
        "schema_version": VERSION,
        "model_id": record.model_id,
        "input_shape": list(record.network.input_shape),
        "layer_specs": [s.to_dict() for s in record.network.specs],
        "hyperparams": record.hyperparams,
        "train_config": record.config.to_dict(),
        "seed": record.seed,
        "epochs": record.config.epochs,
        "epoch_losses": [float(v) for v in record.epoch_losses],
        "final": {
            "train_ce": record.final_train_ce,
            "test_ce": record.final_test_ce,
            "train_err01": record.final_train_err01,
            "test_err01": record.final_test_err01,
            "gap": record.gap,
        },
    }


def save_checkpoint(path, record):
    manifest = json.dumps(_manifest_for(record), sort_keys=True).encode("utf-8")
    payload = record.network.flatten().astype("<f8").tobytes()
    blob = MAGIC + struct.pack("<IQ", VERSION, len(manifest)) + manifest + payload
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Rebuild a ModelRecord (network + metadata) from a checkpoint file."""
    blob = open(path, "rb").read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    version, mlen = struct.unpack_from("<IQ", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    manifest = json.loads(blob[16 : 16 + mlen].decode("utf-8"))
    payload = blob[16 + mlen :]
    specs = tuple(LayerSpec.from_dict(d) for d in manifest["layer_specs"])
    input_shape = tuple(manifest["input_shape"])
    params = []
    for spec in specs:
        if spec.kind == "dense":
            params.append(
                {
                    "W": np.zeros((spec.in_dim, spec.out_dim)),
                    "b": np.zeros(spec.out_dim if spec.use_bias else 0),
                }
            )
        elif spec.kind == "conv2d":
            params.append(
                {
                    "W": np.zeros(
                        (spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size)
                    ),
                    "b": np.zeros(spec.out_channels if spec.use_bias else 0),
                }
            )
    net = Network(specs, params, input_shape)
    expected = 8 * net.param_count
    if len(payload) != expected:
        raise CheckpointError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    net.set_flat(np.frombuffer(payload, dtype="<f8"))
    final = manifest["final"]
    return ModelRecord(
        network=net,
        config=TrainConfig.from_dict(manifest["train_config"]),
        epoch_losses=np.asarray(manifest["epoch_losses"]),
        final_train_ce=final["train_ce"],
        final_test_ce=final["test_ce"],
        final_train_err01=final["train_err01"],
        final_test_err01=final["test_err01"],
        gap=final["gap"],
        seed=manifest["seed"],
        hyperparams=manifest["hyperparams"],
        model_id=manifest["model_id"],
    )


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
