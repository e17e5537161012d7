"""Bit-exact binary containers for channel realizations and designs.

Everything is stored in a single .npz archive: complex128 arrays hold the
matrices (row-major, interleaved re/im 64-bit floats) and a JSON string
carries dims, seed, and structure, so a load reproduces the saved object
exactly.
"""

from __future__ import annotations

import json
import zipfile

import numpy as np
from numpy.lib import format as npformat

from .channel import ChannelSet, LargeScaleMap, LinkSet, SystemDims
from .sum_mse import PrecoderSet, ReceiverSet


def save_arrays(path, arrays: dict) -> None:
    """np.savez with pinned zip timestamps so identical inputs give
    byte-identical files."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(name + ".npy",
                                   date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w") as fid:
                npformat.write_array(fid, np.asanyarray(arr),
                                     allow_pickle=False)


def _dims_meta(dims: SystemDims) -> dict:
    return {
        "n_bs": dims.n_bs, "n_sc": dims.n_sc, "n_ue": dims.n_ue,
        "n_s": dims.n_s, "k_mue": dims.k_mue, "s_cells": dims.s_cells,
        "l_sue": list(dims.l_sue),
    }


def _dims_from_meta(meta: dict) -> SystemDims:
    return SystemDims(meta["n_bs"], meta["n_sc"], meta["n_ue"], meta["n_s"],
                      meta["k_mue"], meta["s_cells"], tuple(meta["l_sue"]))


def _pack_linkset(prefix: str, ls: LinkSet, arrays: dict):
    arrays[f"{prefix}_bm"] = ls.bm
    arrays[f"{prefix}_sm"] = ls.sm
    for s, a in enumerate(ls.bs):
        arrays[f"{prefix}_bs_{s}"] = a
    for t, row in enumerate(ls.ss):
        for s, a in enumerate(row):
            arrays[f"{prefix}_ss_{t}_{s}"] = a


def _unpack_linkset(prefix: str, dims: SystemDims, data) -> LinkSet:
    S = dims.s_cells
    return LinkSet(
        dims,
        data[f"{prefix}_bm"],
        tuple(data[f"{prefix}_bs_{s}"] for s in range(S)),
        data[f"{prefix}_sm"],
        tuple(tuple(data[f"{prefix}_ss_{t}_{s}"] for s in range(S))
              for t in range(S)),
    )


def save_channel_set(path, ch: ChannelSet) -> None:
    meta = {
        "kind": "channel_set",
        "dims": _dims_meta(ch.dims),
        "seed": ch.seed,
        "has_g": ch.g is not None,
    }
    arrays: dict = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    arrays["beta_bm"] = ch.ls.beta_bm
    arrays["beta_sm"] = ch.ls.beta_sm
    for s, a in enumerate(ch.ls.beta_bs):
        arrays[f"beta_bs_{s}"] = a
    for t, row in enumerate(ch.ls.beta_ss):
        for s, a in enumerate(row):
            arrays[f"beta_ss_{t}_{s}"] = a
    _pack_linkset("h", ch.h, arrays)
    if ch.g is not None:
        _pack_linkset("g", ch.g, arrays)
    save_arrays(path, arrays)


def load_channel_set(path) -> ChannelSet:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("kind") != "channel_set":
            raise ValueError(f"{path} is not a channel container")
        dims = _dims_from_meta(meta["dims"])
        S = dims.s_cells
        ls = LargeScaleMap(
            data["beta_bm"],
            tuple(data[f"beta_bs_{s}"] for s in range(S)),
            data["beta_sm"],
            tuple(tuple(data[f"beta_ss_{t}_{s}"] for s in range(S))
                  for t in range(S)),
        )
        h = _unpack_linkset("h", dims, data)
        g = _unpack_linkset("g", dims, data) if meta["has_g"] else None
        return ChannelSet(dims, meta["seed"], ls, h, g)


def save_design(path, w: PrecoderSet, r: ReceiverSet) -> None:
    meta = {
        "kind": "design",
        "n_s": w.n_s,
        "s_cells": len(w.w_sc),
        "k_mue": len(r.r_bs),
        "l_sue": [len(row) for row in r.r_sc],
    }
    arrays: dict = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    arrays["w_bs"] = w.w_bs
    for s, a in enumerate(w.w_sc):
        arrays[f"w_sc_{s}"] = a
    for i, a in enumerate(r.r_bs):
        arrays[f"r_bs_{i}"] = a
    for s, row in enumerate(r.r_sc):
        for j, a in enumerate(row):
            arrays[f"r_sc_{s}_{j}"] = a
    save_arrays(path, arrays)


def load_design(path) -> tuple[PrecoderSet, ReceiverSet]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("kind") != "design":
            raise ValueError(f"{path} is not a design container")
        w = PrecoderSet(
            data["w_bs"],
            [data[f"w_sc_{s}"] for s in range(meta["s_cells"])],
            meta["n_s"],
        )
        r = ReceiverSet(
            [data[f"r_bs_{i}"] for i in range(meta["k_mue"])],
            [[data[f"r_sc_{s}_{j}"] for j in range(l)]
             for s, l in enumerate(meta["l_sue"])],
        )
        return w, r
