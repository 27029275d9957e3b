"""On-disk formats: packed binary events, text IMU/odometry, JSON-lines records."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import EVENT_DTYPE, ImuStream, OdometryStream

MAGIC = b"EVT1"
HEADER_DTYPE = np.dtype([("magic", "S4"), ("width", "<u2"), ("height", "<u2"), ("epoch", "<u8")])
RECORD_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "u1")])
assert HEADER_DTYPE.itemsize == 16 and RECORD_DTYPE.itemsize == 14

ORTHONORMAL_TOL = 1e-6
LOG_SCHEMA = 1


class FormatError(ValueError):
    """A file violates its format; the message carries the path and line or byte offset."""


@dataclass(frozen=True)
class EventFile:
    events: np.ndarray  # EVENT_DTYPE
    width: int
    height: int
    epoch_ns: int


# -- events --------------------------------------------------------------------


def _check_events(events, width, height, where):
    if len(events) == 0:
        return
    t = events["t"]
    bad = np.nonzero(t[1:] < t[:-1])[0]
    if len(bad):
        raise FormatError(f"{where}: record {bad[0] + 1} is earlier than its predecessor")
    out = np.nonzero((events["x"] >= width) | (events["y"] >= height))[0]
    if len(out):
        raise FormatError(f"{where}: record {out[0]} outside the {width}x{height} sensor")
    pol = np.nonzero((events["p"] != 1) & (events["p"] != -1))[0]
    if len(pol):
        raise FormatError(f"{where}: record {pol[0]} has polarity {int(events['p'][pol[0]])}")


def write_events(path, events: np.ndarray, width: int, height: int, epoch_ns: int = 0) -> None:
    _check_events(events, width, height, str(path))
    header = np.array([(MAGIC, width, height, epoch_ns)], dtype=HEADER_DTYPE)
    rec = np.zeros(len(events), dtype=RECORD_DTYPE)
    for name in ("t", "x", "y", "p"):
        rec[name] = events[name]
    with open(Path(path), "wb") as fh:
        fh.write(header.tobytes())
        fh.write(rec.tobytes())


def read_header(path) -> tuple[int, int, int]:
    """``(width, height, epoch_ns)`` from the 16-byte header."""
    with open(Path(path), "rb") as fh:
        raw = fh.read(HEADER_DTYPE.itemsize)
    if len(raw) < HEADER_DTYPE.itemsize:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    h = np.frombuffer(raw, dtype=HEADER_DTYPE)[0]
    if bytes(h["magic"]) != MAGIC:
        raise FormatError(f"{path}: bad magic {bytes(h['magic'])!r} at offset 0")
    return int(h["width"]), int(h["height"]), int(h["epoch"])


def _records_to_events(rec: np.ndarray, path, first_offset: int) -> np.ndarray:
    pad = np.nonzero(rec["pad"] != 0)[0]
    if len(pad):
        raise FormatError(f"{path}: non-zero pad byte at offset {first_offset + pad[0] * 14 + 13}")
    ev = np.empty(len(rec), dtype=EVENT_DTYPE)
    for name in ("t", "x", "y", "p"):
        ev[name] = rec[name]
    return ev


def read_events(path) -> EventFile:
    width, height, epoch = read_header(path)
    raw = Path(path).read_bytes()[HEADER_DTYPE.itemsize:]
    if len(raw) % RECORD_DTYPE.itemsize:
        whole = len(raw) // RECORD_DTYPE.itemsize
        raise FormatError(f"{path}: truncated record at offset {HEADER_DTYPE.itemsize + whole * 14}")
    rec = np.frombuffer(raw, dtype=RECORD_DTYPE)
    ev = _records_to_events(rec, path, HEADER_DTYPE.itemsize)
    _check_events(ev, width, height, str(path))
    return EventFile(ev, width, height, epoch)


def iter_event_chunks(path, chunk: int = 1 << 16):
    """Yield ``(width, height, epoch_ns)`` first, then validated event chunks in file order."""
    width, height, epoch = read_header(path)
    yield width, height, epoch
    offset = HEADER_DTYPE.itemsize
    last_t = None
    with open(Path(path), "rb") as fh:
        fh.seek(offset)
        while True:
            raw = fh.read(chunk * RECORD_DTYPE.itemsize)
            if not raw:
                return
            if len(raw) % RECORD_DTYPE.itemsize:
                whole = len(raw) // RECORD_DTYPE.itemsize
                raise FormatError(f"{path}: truncated record at offset {offset + whole * 14}")
            ev = _records_to_events(np.frombuffer(raw, dtype=RECORD_DTYPE), path, offset)
            where = f"{path} (chunk at offset {offset})"
            _check_events(ev, width, height, where)
            if last_t is not None and len(ev) and ev["t"][0] < last_t:
                raise FormatError(f"{where}: first record is earlier than its predecessor")
            if len(ev):
                last_t = ev["t"][-1]
            offset += len(raw)
            yield ev


def write_events_text(path, events: np.ndarray) -> None:
    """One ``t_ns x y polarity`` line per event."""
    with open(Path(path), "w") as fh:
        for t, x, y, p in zip(events["t"].tolist(), events["x"].tolist(), events["y"].tolist(),
                              events["p"].tolist()):
            fh.write(f"{t} {x} {y} {p}\n")


def read_events_text(path, width: int, height: int) -> np.ndarray:
    rows = []
    for lineno, fields in _lines(path):
        if len(fields) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 fields, got {len(fields)}")
        try:
            rows.append(tuple(int(f) for f in fields))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if rows[-1][0] < 0 or not (0 <= rows[-1][1] < width and 0 <= rows[-1][2] < height):
            raise FormatError(f"{path}:{lineno}: value out of range")
    ev = np.zeros(len(rows), dtype=EVENT_DTYPE)
    if rows:
        a = np.array(rows, dtype=np.int64)
        ev["t"], ev["x"], ev["y"], ev["p"] = a[:, 0], a[:, 1], a[:, 2], a[:, 3]
    _check_events(ev, width, height, str(path))
    return ev


# -- IMU / odometry text -------------------------------------------------------


def _lines(path):
    with open(Path(path)) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if line and not line.startswith("#"):
                yield lineno, line.replace(",", " ").split()


def _parse_rows(path, n_fields: int):
    prev = None
    for lineno, fields in _lines(path):
        if len(fields) != n_fields:
            raise FormatError(f"{path}:{lineno}: expected {n_fields} fields, got {len(fields)}")
        try:
            ti = int(fields[0])
            v = [float(f) for f in fields[1:]]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if ti < 0:
            raise FormatError(f"{path}:{lineno}: negative timestamp")
        if prev is not None and ti < prev:
            raise FormatError(f"{path}:{lineno}: timestamp {ti} precedes {prev}")
        if not np.all(np.isfinite(v)):
            raise FormatError(f"{path}:{lineno}: non-finite value")
        prev = ti
        yield lineno, ti, v


def _num(v: float) -> str:
    return repr(float(v))  # shortest string that round-trips exactly


def write_imu(path, imu: ImuStream) -> None:
    with open(Path(path), "w") as fh:
        fh.write("# t_ns wx wy wz (rad/s, body frame)\n")
        for t, w in zip(imu.t.tolist(), imu.omega):
            fh.write(f"{t} {_num(w[0])} {_num(w[1])} {_num(w[2])}\n")


def read_imu(path) -> ImuStream:
    t, w = [], []
    for _, ti, v in _parse_rows(path, 4):
        t.append(ti)
        w.append(v)
    return ImuStream(np.array(t, dtype=np.uint64), np.array(w, dtype=float).reshape(-1, 3))


def write_odometry(path, odom: OdometryStream) -> None:
    with open(Path(path), "w") as fh:
        fh.write("# t_ns R(row-major, 9) t(xyz), body-to-world\n")
        for t, R, p in zip(odom.t.tolist(), odom.rotation, odom.translation):
            fh.write(" ".join([str(t)] + [_num(v) for v in R.ravel()] + [_num(v) for v in p]) + "\n")


def read_odometry(path) -> OdometryStream:
    t, R, p = [], [], []
    for lineno, ti, v in _parse_rows(path, 13):
        Ri = np.array(v[:9]).reshape(3, 3)
        err = float(np.abs(Ri @ Ri.T - np.eye(3)).max())
        if err > ORTHONORMAL_TOL or np.linalg.det(Ri) <= 0:
            raise FormatError(f"{path}:{lineno}: rotation not orthonormal (error {err:.2e})")
        t.append(ti)
        R.append(Ri)
        p.append(v[9:])
    return OdometryStream(np.array(t, dtype=np.uint64), np.array(R, dtype=float).reshape(-1, 3, 3),
                          np.array(p, dtype=float).reshape(-1, 3))


# -- JSON records --------------------------------------------------------------


def _plain(v):
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def dumps(record: dict) -> str:
    return json.dumps(_plain(record), sort_keys=True, allow_nan=True)


class JsonlWriter:
    """Line-delimited records, each stamped with the log schema version."""

    def __init__(self, path):
        self.fh = open(Path(path), "w")

    def write(self, kind: str, **fields) -> None:
        self.fh.write(dumps({"schema": LOG_SCHEMA, "kind": kind, **fields}) + "\n")

    def close(self) -> None:
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_jsonl(path) -> list[dict]:
    out = []
    with open(Path(path)) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc.msg}") from None
            if rec.get("schema") != LOG_SCHEMA:
                raise FormatError(f"{path}:{lineno}: unsupported schema {rec.get('schema')!r}")
            out.append(rec)
    return out
