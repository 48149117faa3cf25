"""On-disk formats.

Matrix container (``.lqmx``), little-endian::

    offset  size  field
    0       4     magic b"LQMX"
    4       2     version (u16, currently 1)
    6       2     dtype code (u16: 1 = f32, 2 = f64)
    8       8     rows (u64)
    16      8     cols (u64)
    24      ...   row-major payload

A bundle is a zip archive with ``manifest.json`` plus, per layer, the
mantissas and scales as ``.npy`` arrays and the low-rank factors as matrix
containers. A calibration profile is a JSON document; floats are written
with ``repr`` so they round-trip exactly.
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration import CalibrationProfile
from .errors import ArgumentError, FormatError
from .formats import QuantConfig, QuantizedMatrix
from .linalg import as_matrix
from .reconstruction import LowRankCorrection
from .runtime import LqerLayer

MAGIC = b"LQMX"
VERSION = 1
HEADER = struct.Struct("<4sHHQQ")
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
DTYPE_CODES = {"f32": 1, "f64": 2}

BUNDLE_VERSION = 1
PROFILE_VERSION = 1


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_matrix(m, dtype: str = "f64") -> bytes:
    m = as_matrix(m)
    if dtype not in DTYPE_CODES:
        raise ArgumentError(f"dtype must be 'f32' or 'f64', got {dtype!r}")
    code = DTYPE_CODES[dtype]
    rows, cols = m.shape
    return HEADER.pack(MAGIC, VERSION, code, rows, cols) + np.ascontiguousarray(m, dtype=DTYPES[code]).tobytes()


def decode_matrix(buf: bytes) -> np.ndarray:
    if len(buf) < HEADER.size:
        raise FormatError(f"truncated header: {len(buf)} of {HEADER.size} bytes", offset=len(buf))
    magic, version, code, rows, cols = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}", offset=6)
    if rows < 1 or cols < 1:
        raise FormatError(f"invalid shape {rows}x{cols}", offset=8)
    dt = DTYPES[code]
    expected = rows * cols * dt.itemsize
    payload = len(buf) - HEADER.size
    if payload != expected:
        raise FormatError(
            f"payload is {payload} bytes, expected {expected}", offset=HEADER.size + min(payload, expected)
        )
    data = np.frombuffer(buf, dtype=dt, offset=HEADER.size).reshape(rows, cols).astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise FormatError("payload contains NaN or Inf", offset=HEADER.size)
    return data


def save_matrix(path, m, dtype: str = "f64") -> None:
    atomic_write(path, encode_matrix(m, dtype))


def load_matrix(path) -> np.ndarray:
    return decode_matrix(Path(path).read_bytes())


# profiles -------------------------------------------------------------------


def profile_to_dict(p: CalibrationProfile) -> dict:
    return {
        "format": "lqer-profile",
        "version": PROFILE_VERSION,
        "channels": p.channels,
        "sample_count": p.sample_count,
        "dead_channel_policy": p.dead_channel_policy,
        "floored_channels": list(p.floored_channels),
        "a_bar": [float(v) for v in p.a_bar],
        "s_diag": [float(v) for v in p.s_diag],
    }


def profile_from_dict(d: dict) -> CalibrationProfile:
    try:
        if d.get("format") != "lqer-profile" or d.get("version") != PROFILE_VERSION:
            raise FormatError("not a version-1 lqer profile")
        a_bar = np.array(d["a_bar"], dtype=np.float64)
        s_diag = np.array(d["s_diag"], dtype=np.float64)
        if a_bar.shape != (d["channels"],) or s_diag.shape != (d["channels"],):
            raise FormatError("channel count does not match array lengths")
        return CalibrationProfile(
            a_bar=a_bar,
            s_diag=s_diag,
            sample_count=int(d["sample_count"]),
            dead_channel_policy=d["dead_channel_policy"],
            floored_channels=tuple(d.get("floored_channels", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed profile: {exc}") from exc


def save_profile(path, p: CalibrationProfile) -> None:
    text = json.dumps(profile_to_dict(p), indent=2) + "\n"
    atomic_write(path, text.encode())


def load_profile(path) -> CalibrationProfile:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"profile is not valid JSON: {exc.msg}", offset=exc.pos) from exc
    return profile_from_dict(d)


# bundles --------------------------------------------------------------------


@dataclass
class BundleLayer:
    layer: LqerLayer
    nonlinearity: str = "none"
    name: str = ""


@dataclass
class Bundle:
    layers: list[BundleLayer]
    metadata: dict = field(default_factory=dict)


def _npy(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, arr, allow_pickle=False)
    return buf.getvalue()


def _read_npy(zf: zipfile.ZipFile, name: str) -> np.ndarray:
    return np.load(io.BytesIO(zf.read(name)), allow_pickle=False)


def encode_bundle(bundle: Bundle) -> bytes:
    buf = io.BytesIO()
    manifest = {"format": "lqer-bundle", "version": BUNDLE_VERSION, "metadata": bundle.metadata, "layers": []}
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for i, bl in enumerate(bundle.layers):
            lq = bl.layer
            prefix = f"layer{i:03d}/"
            entry = {
                "name": bl.name,
                "nonlinearity": bl.nonlinearity,
                "shape": list(lq.shape),
                "weight_quant": lq.w_q.config.to_dict(),
                "act_quant": None if lq.act_quant is None else lq.act_quant.to_dict(),
                "method": lq.method,
                "k": 0 if lq.correction is None else lq.correction.rank,
                "factor_quant": None,
            }
            _write(zf, prefix + "mantissas.npy", _npy(lq.w_q.mantissas.astype(np.int8)))
            _write(zf, prefix + "scales.npy", _npy(lq.w_q.scales))
            if lq.correction is not None:
                fq = lq.correction.factor_quant
                entry["factor_quant"] = None if fq is None else fq.to_dict()
                _write(zf, prefix + "a_k.lqmx", encode_matrix(lq.correction.a_k))
                _write(zf, prefix + "b_k.lqmx", encode_matrix(lq.correction.b_k))
            if lq.reference_w is not None:
                _write(zf, prefix + "reference_w.lqmx", encode_matrix(lq.reference_w))
            manifest["layers"].append(entry)
        _write(zf, "manifest.json", (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return buf.getvalue()


def _write(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    # fixed timestamp keeps archives byte-identical across runs
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, data)


def decode_bundle(data: bytes) -> Bundle:
    try:
        zf = zipfile.ZipFile(io.BytesIO(data))
    except zipfile.BadZipFile as exc:
        raise FormatError(f"bundle is not a zip archive: {exc}", offset=0) from exc
    with zf:
        try:
            manifest = json.loads(zf.read("manifest.json"))
            if manifest.get("format") != "lqer-bundle" or manifest.get("version") != BUNDLE_VERSION:
                raise FormatError("not a version-1 lqer bundle")
            layers = []
            names = set(zf.namelist())
            for i, entry in enumerate(manifest["layers"]):
                prefix = f"layer{i:03d}/"
                cfg = QuantConfig.from_dict(entry["weight_quant"])
                mant = _read_npy(zf, prefix + "mantissas.npy")
                scales = _read_npy(zf, prefix + "scales.npy")
                if list(mant.shape) != entry["shape"]:
                    raise FormatError(f"layer {i}: mantissa shape {mant.shape} does not match manifest")
                w_q = QuantizedMatrix(cfg, mant, scales)
                act = None if entry["act_quant"] is None else QuantConfig.from_dict(entry["act_quant"])
                corr = None
                if entry["method"] != "plain":
                    fq = None if entry["factor_quant"] is None else QuantConfig.from_dict(entry["factor_quant"])
                    corr = LowRankCorrection(
                        decode_matrix(zf.read(prefix + "a_k.lqmx")),
                        decode_matrix(zf.read(prefix + "b_k.lqmx")),
                        entry["method"],
                        fq,
                    )
                ref = None
                if prefix + "reference_w.lqmx" in names:
                    ref = decode_matrix(zf.read(prefix + "reference_w.lqmx"))
                layers.append(BundleLayer(LqerLayer(w_q, corr, act, ref), entry["nonlinearity"], entry["name"]))
            return Bundle(layers, manifest.get("metadata", {}))
        except (KeyError, TypeError, ValueError, zipfile.BadZipFile) as exc:
            raise FormatError(f"malformed bundle: {exc}") from exc


def save_bundle(path, bundle: Bundle) -> None:
    atomic_write(path, encode_bundle(bundle))


def load_bundle(path) -> Bundle:
    return decode_bundle(Path(path).read_bytes())
