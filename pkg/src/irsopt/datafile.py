"""IRSD1 container: magic, JSON header, column-major little-endian arrays.

Layout::

    bytes 0..4    b"IRSD1"
    bytes 5..8    header length L, uint32 little-endian
    bytes 9..9+L  UTF-8 JSON header
    payload       arrays in manifest order

The header holds ``role``, ``dims`` ({"K", "M", "N"}), free-form ``meta``
and the ``arrays`` manifest; each entry has ``name``, ``shape``, ``dtype``
(``c128``, ``i8`` or ``f64``) and ``offset``, the byte offset of the array
relative to the start of the payload. Arrays are stored column-major;
complex values as (real, imaginary) float64 pairs.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import AffineChannelModel, SystemDims
from .estimator import ChannelEstimate
from .simulator import GroundTruthScenario, PilotDataset, ScenarioConfig

MAGIC = b"IRSD1"
PREFIX_SIZE = len(MAGIC) + 4
ROLES = ("scenario", "pilots", "estimate", "submission", "report")
DTYPES = {"c128": np.dtype("<c16"), "i8": np.dtype("i1"), "f64": np.dtype("<f8")}
_NAMES = {v: k for k, v in DTYPES.items()}


class FormatError(ValueError):
    """Malformed container; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass
class DatasetFile:
    role: str
    dims: SystemDims
    arrays: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    # Absolute byte offset of each array in the file it was read from.
    offsets: dict[str, int] = field(default_factory=dict, repr=False)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]


def _dtype_code(arr: np.ndarray) -> str:
    if np.iscomplexobj(arr):
        return "c128"
    if arr.dtype.kind in "iub":
        return "i8"
    return "f64"


def _layout(ds: DatasetFile) -> tuple[bytes, list[np.ndarray]]:
    """Header bytes (magic included) and the payload arrays as flat chunks."""
    if ds.role not in ROLES:
        raise ValueError(f"unknown role {ds.role!r}")
    manifest, chunks, offset = [], [], 0
    for name, arr in ds.arrays.items():
        arr = np.asarray(arr)
        code = _dtype_code(arr)
        if code == "i8" and arr.size and (arr.min() < -128 or arr.max() > 127):
            raise ValueError(f"array {name!r} does not fit int8")
        # ravel(order="F") is a view for Fortran-ordered inputs
        flat = np.asarray(arr, dtype=DTYPES[code]).ravel(order="F")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": code, "offset": offset})
        chunks.append(flat)
        offset += flat.nbytes
    header = {
        "role": ds.role,
        "dims": {"K": ds.dims.K, "M": ds.dims.M, "N": ds.dims.N},
        "meta": ds.meta,
        "arrays": manifest,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(head)) + head, chunks


def encode(ds: DatasetFile) -> bytes:
    head, chunks = _layout(ds)
    return head + b"".join(c.tobytes() for c in chunks)


def decode(buf: bytes, pow2: bool = True) -> DatasetFile:
    if len(buf) < PREFIX_SIZE or buf[:len(MAGIC)] != MAGIC:
        raise FormatError("bad magic, expected b'IRSD1'", 0)
    (hlen,) = struct.unpack_from("<I", buf, len(MAGIC))
    payload_start = PREFIX_SIZE + hlen
    if payload_start > len(buf):
        raise FormatError(f"header length {hlen} runs past end of file ({len(buf)} bytes)", len(MAGIC))
    try:
        header = json.loads(buf[PREFIX_SIZE:payload_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not UTF-8 JSON: {exc}", PREFIX_SIZE) from None
    if not isinstance(header, dict):
        raise FormatError("header is not a JSON object", PREFIX_SIZE)
    role = header.get("role")
    if role not in ROLES:
        raise FormatError(f"unknown role {role!r}", PREFIX_SIZE)
    try:
        d = header["dims"]
        dims = SystemDims(int(d["K"]), int(d["M"]), int(d["N"]), require_power_of_two=pow2)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid dims: {exc}", PREFIX_SIZE) from None
    manifest = header.get("arrays")
    if not isinstance(manifest, list):
        raise FormatError("missing array manifest", PREFIX_SIZE)

    arrays, offsets = {}, {}
    payload_len = len(buf) - payload_start
    end_prev = 0
    for entry in manifest:
        try:
            name = entry["name"]
            shape = tuple(int(s) for s in entry["shape"])
            dtype = DTYPES[entry["dtype"]]
            offset = int(entry["offset"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad manifest entry {entry!r}: {exc}", PREFIX_SIZE) from None
        if any(s < 0 for s in shape):
            raise FormatError(f"array {name!r} has negative shape {shape}", PREFIX_SIZE)
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if offset < end_prev:
            raise FormatError(f"array {name!r} overlaps the previous array", payload_start + offset)
        if offset + nbytes > payload_len:
            raise FormatError(
                f"array {name!r} ({nbytes} bytes) runs past end of file", payload_start + offset
            )
        if name in arrays:
            raise FormatError(f"duplicate array name {name!r}", PREFIX_SIZE)
        start = payload_start + offset
        arrays[name] = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize,
                                     offset=start).reshape(shape, order="F")
        offsets[name] = start
        end_prev = offset + nbytes
    return DatasetFile(role, dims, arrays, header.get("meta") or {}, offsets)


def write_dataset(path, ds: DatasetFile) -> str:
    """Atomically write ``ds`` to ``path``; returns the file's SHA-256 digest."""
    head, chunks = _layout(ds)
    digest = hashlib.sha256(head)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(head)
            for chunk in chunks:
                view = np.ascontiguousarray(chunk).view(np.uint8)
                digest.update(view)
                fh.write(view)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return digest.hexdigest()


def read_dataset(path, role: str | None = None, pow2: bool = True) -> DatasetFile:
    buf = Path(path).read_bytes()
    ds = decode(buf, pow2=pow2)
    if role is not None and ds.role != role:
        raise FormatError(f"expected role {role!r}, file has {ds.role!r}", PREFIX_SIZE)
    check_role(ds)
    return ds


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# name -> (dtype code, shape template); letters resolve against dims,
# "U"/"T" must be consistent across arrays of the file.
SCHEMAS = {
    "scenario": {"direct": ("c128", "MU"), "elements": ("c128", "NMU")},
    "pilots": {
        "pilotMatrix": ("i8", "NT"),
        "transmitSignal": ("c128", "K1"),
        "receivedSignal": ("c128", "KTU"),
    },
    "estimate": {
        "directTaps": ("c128", "MU"),
        "elementTaps": ("c128", "NMU"),
        "noiseVariance": ("f64", "U"),
    },
    "submission": {"theta": ("i8", "NU")},
    "report": {"trueRate": ("f64", "U"), "predictedRate": ("f64", "U"), "weight": ("f64", "U")},
}


def check_role(ds: DatasetFile) -> None:
    """Check required arrays, dtypes and shapes against the role's schema."""
    bound = {"K": ds.dims.K, "M": ds.dims.M, "N": ds.dims.N, "1": 1}
    for name, (code, template) in SCHEMAS[ds.role].items():
        if name not in ds.arrays:
            raise FormatError(f"{ds.role} file lacks array {name!r}", PREFIX_SIZE)
        arr = ds.arrays[name]
        at = ds.offsets.get(name, PREFIX_SIZE)
        if _NAMES.get(arr.dtype) != code:
            raise FormatError(f"array {name!r} has dtype {arr.dtype}, expected {code}", at)
        if arr.ndim != len(template):
            raise FormatError(f"array {name!r} has {arr.ndim} dims, expected {len(template)}", at)
        for axis, (letter, size) in enumerate(zip(template, arr.shape)):
            expected = bound.setdefault(letter, size)
            if size != expected:
                raise FormatError(
                    f"array {name!r} axis {axis} has size {size}, expected {letter}={expected}",
                    at,
                )
    if ds.role == "pilots":
        bad = np.flatnonzero(np.abs(ds.arrays["pilotMatrix"].ravel(order="F").astype(np.int16)) != 1)
        if bad.size:
            raise FormatError("pilotMatrix has entries other than +1/-1",
                              ds.offsets.get("pilotMatrix", PREFIX_SIZE) + int(bad[0]))


# Conversions between library objects and files.

def scenario_to_file(scenario: GroundTruthScenario) -> DatasetFile:
    return DatasetFile(
        "scenario",
        scenario.dims,
        {
            "direct": np.stack([m.direct for m in scenario.models], axis=1),
            "elements": np.stack([m.elements for m in scenario.models], axis=2),
        },
        {"config": scenario.config.to_dict(), "los_flags": [bool(f) for f in scenario.los_flags]},
    )


def scenario_from_file(ds: DatasetFile) -> GroundTruthScenario:
    config = ScenarioConfig.from_dict(ds.meta["config"])
    direct, elements = ds["direct"], ds["elements"]
    models = tuple(AffineChannelModel(direct[:, u], elements[:, :, u]) for u in range(direct.shape[1]))
    return GroundTruthScenario(config, models, np.array(ds.meta["los_flags"], dtype=bool))


def pilots_to_file(dataset: PilotDataset) -> DatasetFile:
    return DatasetFile(
        "pilots",
        dataset.dims,
        {
            "pilotMatrix": dataset.pilot_matrix,
            "transmitSignal": dataset.transmit_signal[:, None],
            "receivedSignal": dataset.received,
        },
        {"seed": dataset.seed},
    )


def pilots_from_file(ds: DatasetFile) -> PilotDataset:
    return PilotDataset(ds.dims, ds["pilotMatrix"], ds["transmitSignal"][:, 0], ds["receivedSignal"],
                        seed=ds.meta.get("seed"))


def estimates_to_file(estimates) -> DatasetFile:
    estimates = list(estimates)
    first = estimates[0]
    return DatasetFile(
        "estimate",
        first.dims,
        {
            "directTaps": np.stack([e.direct_taps for e in estimates], axis=1),
            "elementTaps": np.stack([e.element_taps for e in estimates], axis=2),
            "noiseVariance": np.array([e.noise_variance_estimate or 0.0 for e in estimates]),
        },
        {
            "aliasing_resolved": [bool(e.aliasing_resolved) for e in estimates],
            "num_measurements": [int(e.num_measurements) for e in estimates],
            "pilot_power": [float(e.pilot_power) for e in estimates],
        },
    )


def estimates_from_file(ds: DatasetFile) -> list[ChannelEstimate]:
    out = []
    for u in range(ds["noiseVariance"].shape[0]):
        est = ChannelEstimate.from_taps(ds.dims, ds["directTaps"][:, u], ds["elementTaps"][:, :, u],
                                        aliasing_resolved=ds.meta["aliasing_resolved"][u])
        est.noise_variance_estimate = float(ds["noiseVariance"][u])
        est.num_measurements = ds.meta["num_measurements"][u]
        est.pilot_power = ds.meta["pilot_power"][u]
        out.append(est)
    return out


def submission_to_file(dims: SystemDims, theta: np.ndarray, results=None, meta=None) -> DatasetFile:
    arrays = {"theta": np.asarray(theta, dtype=np.int8)}
    meta = dict(meta or {})
    if results is not None:
        arrays["predictedRate"] = np.array([r.predicted_rate for r in results])
        meta["methods"] = [r.method for r in results]
        meta["flips"] = [int(r.flips_performed) for r in results]
    return DatasetFile("submission", dims, arrays, meta)


def report_to_file(dims: SystemDims, report) -> DatasetFile:
    return DatasetFile(
        "report",
        dims,
        {
            "trueRate": np.array([u.true_rate for u in report.per_user]),
            "predictedRate": np.array([np.nan if u.predicted_rate is None else u.predicted_rate
                                       for u in report.per_user]),
            "weight": np.array([1.0 if u.los else 2.0 for u in report.per_user]),
        },
        {"report": report.to_dict()},
    )


def validate_submission(path, num_users: int = 50, num_elements: int | None = None) -> list[str]:
    """All contract violations of a submission file; an empty list means valid."""
    try:
        ds = decode(Path(path).read_bytes())
    except FormatError as exc:
        return [f"format error: {exc}"]
    except OSError as exc:
        return [f"cannot read {path}: {exc}"]
    if ds.role != "submission":
        return [f"role is {ds.role!r}, expected 'submission'"]
    if "theta" not in ds.arrays:
        return ["missing array 'theta'"]
    theta = ds["theta"]
    N = ds.dims.N if num_elements is None else num_elements
    problems = []
    if theta.ndim != 2 or theta.shape != (N, num_users):
        problems.append(f"shape error: theta is {theta.shape}, expected ({N}, {num_users})")
    if theta.dtype != DTYPES["i8"]:
        problems.append(f"dtype error: theta is {theta.dtype}, expected int8")
    bad = np.argwhere((theta != 1) & (theta != -1))
    for idx in bad:
        coords = ", ".join(str(int(i)) for i in idx)
        problems.append(f"entry ({coords}) is {int(theta[tuple(idx)])}, not +1/-1")
    return problems
