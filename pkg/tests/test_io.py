import json
import math
import struct
from pathlib import Path

import numpy as np
import pytest

from radarfield.decoder import DecoderConfig, init_weights
from radarfield.geometry import SensorPose, spherical_to_cartesian
from radarfield.io import (MODE_RANGE_CAP, SCAN_FIELDS, WEIGHTS_MAGIC, RadarScanRecord,
                           ScanFormatError, fmt_float, load_weights, read_scan_file,
                           read_scan_records, save_weights, write_scan_records, write_curve_csv,
                           write_scan_file)
from radarfield.rfs import PointCloud

DATA = Path(__file__).parent / "data"
HEADER = ",".join(SCAN_FIELDS)


def test_golden_csv():
    scans = read_scan_file(DATA / "golden_scans.csv")
    assert len(scans) == 2
    assert [len(c) for _, c in scans] == [3, 3]
    pose, cloud = scans[0]
    assert pose.time == pytest.approx(1650000000.0)
    np.testing.assert_allclose(cloud.points[0], spherical_to_cartesian(12.5, 0.1, 0.02))
    np.testing.assert_array_equal(cloud.attributes["mode"], [0, 0, 1])


def _write(tmp_path, rows, name="s.csv"):
    p = tmp_path / name
    p.write_text(HEADER + "\n" + "\n".join(rows) + ("\n" if rows else ""))
    return p


def test_mode_range_cap_rejected_with_line_number(tmp_path):
    p = _write(tmp_path, ["1,10.0,0.0,0.0,0.0,1.0,1,0,2", "1,150.0,0.0,0.0,0.0,1.0,1,0,2"])
    with pytest.raises(ScanFormatError, match=r":3:.*102"):
        read_scan_file(p)
    for mode, cap in MODE_RANGE_CAP.items():
        RadarScanRecord(0, cap, 0.0, 0.0, mode=mode)
        with pytest.raises(ScanFormatError):
            RadarScanRecord(0, cap + 0.01, 0.0, 0.0, mode=mode)


@pytest.mark.parametrize("row", [
    "1,10.0,0.0,0.0,0.0,1.0,1,0",          # missing field
    "1,ten,0.0,0.0,0.0,1.0,1,0,2",         # not a number
    "1,10.0,1.2,0.0,0.0,1.0,1,0,2",        # azimuth beyond 50 degrees
    "1,-1.0,0.0,0.0,0.0,1.0,1,0,2",        # negative range
    "1,10.0,0.0,0.0,0.0,1.0,maybe,0,2",    # bad validity flag
    "1,10.0,0.0,0.0,0.0,1.0,1,3,2",        # unknown mode
    "1,10.0,0.0,0.0,0.0,1.0,1,0,5",        # quality out of range
])
def test_malformed_rows(tmp_path, row):
    p = _write(tmp_path, ["1,10.0,0.0,0.0,0.0,1.0,1,0,2", row])
    with pytest.raises(ScanFormatError, match=":3:"):
        read_scan_records(p)


def test_invalid_records_dropped_and_counted(tmp_path):
    p = _write(tmp_path, ["1,10.0,0.0,0.0,0.0,1.0,1,0,2", "1,11.0,0.0,0.0,0.0,1.0,0,0,2",
                          "2,12.0,0.0,0.0,0.0,1.0,false,0,2"])
    recs, dropped = read_scan_records(p)
    assert len(recs) == 1 and dropped == 2


def test_empty_files_rejected(tmp_path):
    for name in ("e.csv", "e.jsonl"):
        p = tmp_path / name
        p.write_text("")
        with pytest.raises(ScanFormatError, match="empty"):
            read_scan_file(p)


def _random_scans(seed, n_scans=3):
    rng = np.random.default_rng(seed)
    scans = []
    for k in range(n_scans):
        n = int(rng.integers(1, 6))
        r = rng.uniform(0.5, 100.0, n)
        az = rng.uniform(-0.8, 0.8, n)
        el = rng.uniform(-0.3, 0.3, n)
        pts = spherical_to_cartesian(r, az, el)
        attrs = {"range_rate": rng.normal(size=n), "amplitude": rng.uniform(0, 50, n),
                 "mode": rng.integers(0, 2, n), "quality": rng.integers(0, 3, n)}
        scans.append((SensorPose(time=1.5 + 0.06 * k), PointCloud(pts, attrs)))
    return scans


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
def test_scan_round_trip(tmp_path, fmt):
    scans = _random_scans(0)
    path = tmp_path / f"scans.{fmt}"
    write_scan_file(scans, path)
    back = read_scan_file(path)
    assert len(back) == len(scans)
    for (p0, c0), (p1, c1) in zip(scans, back):
        assert p1.time == pytest.approx(p0.time, abs=1e-6)
        np.testing.assert_allclose(c1.points, c0.points, rtol=0, atol=1e-12 * 100)
        assert np.abs(c1.points - c0.points).max() <= 1e-12 * np.abs(c0.points).max()
        for k in ("range_rate", "amplitude"):
            assert c1.attributes[k].tobytes() == np.asarray(c0.attributes[k], float).tobytes()


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
def test_scan_records_round_trip_bit_exact(tmp_path, fmt):
    path = tmp_path / f"scans.{fmt}"
    write_scan_file(_random_scans(2), path)
    recs, _ = read_scan_records(path)
    again = tmp_path / f"again.{fmt}"
    write_scan_records(recs, again)
    assert again.read_bytes() == path.read_bytes()
    assert read_scan_records(again)[0] == recs


def test_write_empty_and_non_finite(tmp_path):
    p = tmp_path / "empty.csv"
    write_scan_file([], p)
    assert p.read_text() == HEADER + "\n"
    bad = PointCloud(np.zeros((1, 3)))
    bad.points[0, 0] = np.inf
    with pytest.raises(ValueError):
        write_scan_file([(SensorPose(), bad)], tmp_path / "bad.csv")
    with pytest.raises(ValueError):
        fmt_float(float("nan"))


def test_write_to_missing_directory_reports_path(tmp_path):
    target = tmp_path / "nope" / "s.csv"
    with pytest.raises(OSError, match="nope"):
        write_scan_file(_random_scans(1, 1), target)


def test_fmt_float_round_trips():
    rng = np.random.default_rng(3)
    vals = rng.normal(size=1000) * 10.0 ** rng.integers(-300, 300, 1000)
    assert all(float(fmt_float(v)) == v for v in vals)


@pytest.mark.parametrize("variant", ["tabular", "transformer", "naive_query"])
def test_weights_round_trip(tmp_path, variant):
    w = init_weights(DecoderConfig(variant=variant, probabilistic=True), 10, seed=4)
    path = tmp_path / "w.nrdr"
    save_weights(w, path)
    back = load_weights(path)
    assert back.config == w.config and back.num_rays == 10 and back.seed == 4
    assert set(back.tensors) == set(w.tensors)
    for k in w.tensors:
        assert back.tensors[k].tobytes() == w.tensors[k].tobytes()
        assert back.tensors[k].shape == w.tensors[k].shape
    raw = path.read_bytes()
    assert raw[:5] == WEIGHTS_MAGIC
    assert struct.unpack("<I", raw[5:9])[0] == len(w.tensors)
    side = json.loads((tmp_path / "w.nrdr.json").read_text())
    assert side["format"] == "NRDR1" and side["config"]["variant"] == variant
    save_weights(back, tmp_path / "w2.nrdr")
    assert (tmp_path / "w2.nrdr").read_bytes() == raw


def test_weights_bad_magic(tmp_path):
    w = init_weights(DecoderConfig(variant="mlp"), 4)
    path = tmp_path / "w.nrdr"
    save_weights(w, path)
    path.write_bytes(b"XXXXX" + path.read_bytes()[5:])
    with pytest.raises(ValueError, match="NRDR1"):
        load_weights(path)


def test_curve_csv(tmp_path):
    curve = np.array([1.0, 0.1 + 0.2, 1e-300])
    write_curve_csv(curve, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "iteration,loss"
    assert [float(l.split(",")[1]) for l in lines[1:]] == list(curve)
