"""Scan, weight and configuration files."""
from __future__ import annotations

import csv
import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .decoder import DecoderConfig, DecoderWeights
from .geometry import SensorPose, cartesian_to_spherical, spherical_to_cartesian
from .rfs import PointCloud

__all__ = ["SCAN_FIELDS", "RadarScanRecord", "ScanFormatError", "read_scan_file",
           "read_scan_records", "write_scan_file", "write_scan_records", "save_weights", "load_weights",
           "WEIGHTS_MAGIC", "MODE_RANGE_CAP", "write_curve_csv", "fmt_float"]

log = logging.getLogger(__name__)

SCAN_FIELDS = ("timestamp_us", "range_m", "azimuth_rad", "elevation_rad", "range_rate_mps",
               "amplitude", "validity", "mode", "quality")
MODE_RANGE_CAP = {0: 102.0, 1: 178.5, 2: 250.0}
MAX_AZIMUTH = math.radians(50.0)
WEIGHTS_MAGIC = b"NRDR1"


class ScanFormatError(ValueError):
    """Malformed scan data or a record that breaks a sensor invariant."""


def fmt_float(v):
    """Shortest repr that round-trips; rejects non-finite values."""
    v = float(v)
    if not math.isfinite(v):
        raise ValueError("refusing to serialise a non-finite value")
    return repr(v)


@dataclass(frozen=True)
class RadarScanRecord:
    timestamp_us: int
    range_m: float
    azimuth_rad: float
    elevation_rad: float
    range_rate_mps: float = 0.0
    amplitude: float = 0.0
    validity: bool = True
    mode: int = 0
    quality: int = 2

    def __post_init__(self):
        vals = (self.range_m, self.azimuth_rad, self.elevation_rad, self.range_rate_mps,
                self.amplitude)
        if not all(math.isfinite(v) for v in vals):
            raise ScanFormatError("scan record fields must be finite")
        if self.mode not in MODE_RANGE_CAP:
            raise ScanFormatError(f"mode must be one of {sorted(MODE_RANGE_CAP)}")
        if not 0 <= self.quality <= 2:
            raise ScanFormatError("quality must lie in 0..2")
        if self.range_m < 0:
            raise ScanFormatError("range must be non-negative")
        if self.range_m > MODE_RANGE_CAP[self.mode]:
            raise ScanFormatError(
                f"range {self.range_m} m exceeds the {MODE_RANGE_CAP[self.mode]} m cap of mode {self.mode}")
        if abs(self.azimuth_rad) > MAX_AZIMUTH:
            raise ScanFormatError("azimuth outside +-50 degrees")

    def as_row(self):
        return [str(int(self.timestamp_us)), fmt_float(self.range_m), fmt_float(self.azimuth_rad),
                fmt_float(self.elevation_rad), fmt_float(self.range_rate_mps),
                fmt_float(self.amplitude), str(int(bool(self.validity))), str(int(self.mode)),
                str(int(self.quality))]

    def as_json(self):
        return {"timestamp_us": int(self.timestamp_us), "range_m": float(self.range_m),
                "azimuth_rad": float(self.azimuth_rad), "elevation_rad": float(self.elevation_rad),
                "range_rate_mps": float(self.range_rate_mps), "amplitude": float(self.amplitude),
                "validity": bool(self.validity), "mode": int(self.mode),
                "quality": int(self.quality)}


def _parse_bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true"):
        return True
    if s in ("0", "false"):
        return False
    raise ValueError(f"bad boolean {v!r}")


def _record(d):
    return RadarScanRecord(int(d["timestamp_us"]), float(d["range_m"]), float(d["azimuth_rad"]),
                           float(d["elevation_rad"]), float(d["range_rate_mps"]),
                           float(d["amplitude"]), _parse_bool(d["validity"]), int(d["mode"]),
                           int(d["quality"]))


def _fmt_from_path(path, fmt):
    if fmt is not None:
        return fmt
    return "jsonl" if str(path).endswith(".jsonl") else "csv"


def read_scan_records(path, fmt=None):
    """Parse a scan file into records; returns (valid records, dropped count)."""
    fmt = _fmt_from_path(path, fmt)
    records, dropped = [], 0
    with open(path, newline="") as fh:
        if fmt == "csv":
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise ScanFormatError(f"{path}: empty file")
            if tuple(header) != SCAN_FIELDS:
                raise ScanFormatError(f"{path}:1: unexpected header {header}")
            rows = ((n, dict(zip(SCAN_FIELDS, row)), len(row)) for n, row in enumerate(reader, 2))
        elif fmt == "jsonl":
            def gen():
                for n, line in enumerate(fh, 1):
                    if line.strip():
                        try:
                            obj = json.loads(line)
                        except json.JSONDecodeError as exc:
                            raise ScanFormatError(f"{path}:{n}: {exc}") from exc
                        if set(obj) != set(SCAN_FIELDS):
                            raise ScanFormatError(f"{path}:{n}: fields must be {SCAN_FIELDS}")
                        yield n, obj, len(SCAN_FIELDS)
            rows = gen()
        else:
            raise ValueError(f"unknown scan format {fmt!r}")
        seen_any = False
        for lineno, row, width in rows:
            seen_any = True
            if width != len(SCAN_FIELDS):
                raise ScanFormatError(f"{path}:{lineno}: expected {len(SCAN_FIELDS)} fields")
            try:
                rec = _record(row)
            except ScanFormatError as exc:
                raise ScanFormatError(f"{path}:{lineno}: {exc}") from exc
            except (ValueError, TypeError, KeyError) as exc:
                raise ScanFormatError(f"{path}:{lineno}: malformed record ({exc})") from exc
            if not rec.validity:
                dropped += 1
                continue
            records.append(rec)
    if fmt == "jsonl" and not seen_any:
        raise ScanFormatError(f"{path}: empty file")
    if dropped:
        log.info("%s: dropped %d invalid records", path, dropped)
    return records, dropped


def read_scan_file(path, fmt=None):
    """Scans grouped by exact timestamp, in file order of first appearance.

    Returns a list of (SensorPose, PointCloud); points are sensor-frame
    Cartesian and the pose is the identity at the scan time.
    """
    records, _ = read_scan_records(path, fmt)
    groups = {}
    for rec in records:
        groups.setdefault(rec.timestamp_us, []).append(rec)
    scans = []
    for ts, recs in groups.items():
        rng = np.array([r.range_m for r in recs])
        az = np.array([r.azimuth_rad for r in recs])
        el = np.array([r.elevation_rad for r in recs])
        cloud = PointCloud(spherical_to_cartesian(rng, az, el), {
            "range_rate": np.array([r.range_rate_mps for r in recs]),
            "amplitude": np.array([r.amplitude for r in recs]),
            "mode": np.array([r.mode for r in recs]),
            "quality": np.array([r.quality for r in recs]),
        })
        scans.append((SensorPose(time=ts * 1e-6), cloud))
    return scans


def _scan_records(pose, cloud):
    ts = int(round(pose.time * 1e6))
    rng, az, el = cartesian_to_spherical(cloud.points)
    n = len(cloud)
    attr = cloud.attributes

    def col(name, default):
        return attr[name] if name in attr else np.full(n, default)

    rr, amp = col("range_rate", 0.0), col("amplitude", 0.0)
    mode, quality = col("mode", 0), col("quality", 2)
    return [RadarScanRecord(ts, float(rng[i]), float(az[i]), float(el[i]), float(rr[i]),
                            float(amp[i]), True, int(mode[i]), int(quality[i]))
            for i in range(n)]


def write_scan_records(records, path, fmt=None):
    """Write records verbatim; reading them back returns identical values."""
    fmt = _fmt_from_path(path, fmt)
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unknown scan format {fmt!r}")
    try:
        with open(path, "w", newline="") as fh:
            if fmt == "csv":
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(SCAN_FIELDS)
                for rec in records:
                    w.writerow(rec.as_row())
            else:
                for rec in records:
                    fh.write(json.dumps(rec.as_json()) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write scan file {path}: {exc}") from exc


def write_scan_file(scans, path, fmt=None):
    """Write (pose, cloud) scans with a canonical column order."""
    for _, cloud in scans:
        if not np.all(np.isfinite(cloud.points)):
            raise ValueError("refusing to write non-finite coordinates")
    records = [rec for pose, cloud in scans for rec in _scan_records(pose, cloud)]
    write_scan_records(records, path, fmt)


# -- decoder weights --------------------------------------------------------

def save_weights(weights, path):
    """Binary container plus a JSON sidecar (``<path>.json``) with the config.

    Layout: b"NRDR1", uint32 tensor count, then per tensor: uint16 name
    length, UTF-8 name, uint8 ndim, uint32 dims, float64 payload (all
    little-endian).
    """
    path = Path(path)
    names = sorted(weights.tensors)
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            arr = np.ascontiguousarray(weights.tensors[name], dtype="<f8")
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())
    sidecar = {"format": "NRDR1", "config": weights.config.to_dict(),
               "num_rays": weights.num_rays, "seed": weights.seed, "tensors": names}
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_weights(path):
    path = Path(path)
    with open(str(path) + ".json") as fh:
        side = json.load(fh)
    cfg = DecoderConfig(**side["config"])
    tensors = {}
    with open(path, "rb") as fh:
        if fh.read(5) != WEIGHTS_MAGIC:
            raise ValueError(f"{path}: not an NRDR1 weights file")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            tensors[name] = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape).copy()
    return DecoderWeights(cfg, tensors, int(side["num_rays"]), int(side["seed"]))


def write_curve_csv(curve, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss"])
        for i, v in enumerate(curve):
            w.writerow([i, fmt_float(v)])
