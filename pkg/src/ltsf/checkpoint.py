"""Model checkpoint files.

Layout (little-endian), sharing the LTSF-TENSOR preamble::

    b"LTSF"  u16 version=1  u32 metadata_len  metadata (key=value lines,
             format=checkpoint, model=<kind>, hyperparameters)
    u32 n_groups
    per group, in sorted name order:
        u16 name_len, name (UTF-8), u8 ndim, ndim x u64 dims,
        prod(dims) x f64 values (row-major)

Groups are the model's named parameter arrays plus, optionally,
``scaler.mean`` and ``scaler.std``.
"""
from __future__ import annotations

import struct

import numpy as np

from . import dataio
from .baselines import LatentNLinearModel, NLinearModel, PersistenceModel
from .dataio import FormatError, StandardScaler
from .linode import LatentLinearODEModel


def _tuple_str(t) -> str:
    return ",".join(str(int(v)) for v in t)


def _tuple_parse(s: str) -> tuple:
    return tuple(int(v) for v in s.split(",") if v.strip())


def model_state(model) -> tuple[dict, dict]:
    if isinstance(model, LatentLinearODEModel):
        meta = {
            "model": "linode", "lookback": model.lookback, "obs_dim": model.obs_dim,
            "latent_dim": model.latent_dim, "matrix_class": model.matrix_class.value,
            "encoder_hidden": _tuple_str(model.encoder_hidden), "decoder_hidden": _tuple_str(model.decoder_hidden),
            "delay": "none" if model.delay is None else repr(float(model.delay)),
            "step_unit": repr(float(model.step_unit)),
        }
        return meta, dict(model.params)
    if isinstance(model, NLinearModel):
        meta = {"model": "nlinear", "lookback": model.lookback, "horizon": model.horizon,
                "obs_dim": model.obs_dim, "variant": model.variant.value}
        return meta, {"W": model.W, "b": model.b}
    if isinstance(model, LatentNLinearModel):
        meta = {"model": "latent-nlinear", "lookback": model.lookback, "horizon": model.horizon,
                "obs_dim": model.obs_dim, "latent_dim": model.latent_dim,
                "encoder_hidden": _tuple_str(model.encoder_hidden), "decoder_hidden": _tuple_str(model.decoder_hidden)}
        return meta, dict(model.params)
    if isinstance(model, PersistenceModel):
        return {"model": "persistence"}, {}
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def model_from_state(meta: dict, params: dict):
    kind = meta.get("model")
    if kind == "linode":
        delay = None if meta["delay"] == "none" else float(meta["delay"])
        model = LatentLinearODEModel(
            int(meta["lookback"]), int(meta["obs_dim"]), int(meta["latent_dim"]), meta["matrix_class"],
            _tuple_parse(meta["encoder_hidden"]), _tuple_parse(meta["decoder_hidden"]), delay, float(meta["step_unit"]),
        )
        model.params = params
        return model
    if kind == "nlinear":
        return NLinearModel(int(meta["lookback"]), int(meta["horizon"]), int(meta["obs_dim"]), meta["variant"], params["W"], params["b"])
    if kind == "latent-nlinear":
        model = LatentNLinearModel(int(meta["lookback"]), int(meta["horizon"]), int(meta["obs_dim"]), int(meta["latent_dim"]),
                                   _tuple_parse(meta["encoder_hidden"]), _tuple_parse(meta["decoder_hidden"]))
        model.params = params
        return model
    if kind == "persistence":
        return PersistenceModel()
    raise FormatError(f"unknown model kind {kind!r} in checkpoint")


def save_model(model, path, scaler: StandardScaler | None = None, extra: dict | None = None) -> None:
    meta, params = model_state(model)
    meta = {"name": meta["model"], "format": "checkpoint", **meta, **(extra or {})}
    groups = dict(params)
    if scaler is not None:
        groups["scaler.mean"] = scaler.mean
        groups["scaler.std"] = scaler.std
    with open(path, "wb") as fh:
        fh.write(dataio.encode_header(meta))
        fh.write(struct.pack("<I", len(groups)))
        for name in sorted(groups):
            arr = np.ascontiguousarray(groups[name], dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_model(path):
    """Return ``(model, scaler_or_None, metadata)``."""
    with open(path, "rb") as fh:
        meta = dataio._read_preamble(fh)
        if meta.get("format") != "checkpoint":
            raise FormatError(f"{path} is not a model checkpoint")
        (n_groups,) = struct.unpack("<I", dataio._read_exact(fh, 4, "group count"))
        groups = {}
        for _ in range(n_groups):
            (nlen,) = struct.unpack("<H", dataio._read_exact(fh, 2, "group name"))
            name = dataio._read_exact(fh, nlen, "group name").decode("utf-8")
            (ndim,) = struct.unpack("<B", dataio._read_exact(fh, 1, name))
            dims = struct.unpack(f"<{ndim}Q", dataio._read_exact(fh, 8 * ndim, name))
            count = int(np.prod(dims)) if ndim else 1
            values = np.frombuffer(dataio._read_exact(fh, 8 * count, name), dtype="<f8")
            groups[name] = values.reshape(dims).astype(np.float64)
        if fh.read(1):
            raise FormatError("trailing bytes after the last parameter group")
    scaler = None
    if "scaler.mean" in groups:
        scaler = StandardScaler(groups.pop("scaler.mean"), groups.pop("scaler.std"))
    return model_from_state(meta, groups), scaler, meta
