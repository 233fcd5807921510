"""On-disk formats: flat key=value scenario text and a binary matrix container.

Binary layout (all integers little-endian):
    bytes  0..15   magic ``RISCASCADE-MAT01``
    u32            record count
    per record:
        u32        name length, then that many UTF-8 bytes
        u64, u64   rows, cols
        payload    rows*cols little-endian (re, im) float64 pairs, row-major
"""

import struct
from pathlib import Path

import numpy as np

from .channel import GroundTruth, MeasurementSet, ScenarioConfig
from .exceptions import ConfigError

MAGIC = b"RISCASCADE-MAT01"
assert len(MAGIC) == 16

_INT_FIELDS = {"m1", "m2", "n1", "n2", "k", "q", "l_c", "l_r_k", "l_r", "seed", "t_max"}


def parse_key_values(text: str) -> dict[str, str]:
    """Parse ``key=value`` lines; '#' starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def scenario_from_mapping(mapping: dict[str, str], ignore_extra: bool = False) -> ScenarioConfig:
    names = set(ScenarioConfig.field_names())
    kwargs = {}
    for key, value in mapping.items():
        if key not in names:
            if ignore_extra:
                continue
            raise ConfigError(f"unknown scenario key {key!r}")
        try:
            kwargs[key] = int(value) if key in _INT_FIELDS else float(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    return ScenarioConfig(**kwargs)


def read_scenario(path: str | Path, ignore_extra: bool = False) -> ScenarioConfig:
    return scenario_from_mapping(parse_key_values(Path(path).read_text()), ignore_extra=ignore_extra)


def write_scenario(cfg: ScenarioConfig, path: str | Path) -> None:
    lines = ["# scenario configuration"]
    for name in ScenarioConfig.field_names():
        lines.append(f"{name}={getattr(cfg, name)}")
    Path(path).write_text("\n".join(lines) + "\n")


def save_matrices(path: str | Path, records: dict[str, np.ndarray]) -> None:
    """Write named complex matrices to the binary container format."""
    chunks = [MAGIC, struct.pack("<I", len(records))]
    for name, mat in records.items():
        arr = np.atleast_2d(np.asarray(mat, dtype=np.complex128))
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
        chunks.append(np.ascontiguousarray(arr, dtype="<c16").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_matrices(path: str | Path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:16] != MAGIC:
        raise ConfigError(f"{path}: bad magic header")
    pos = 16
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        rows, cols = struct.unpack_from("<QQ", data, pos)
        pos += 16
        nbytes = rows * cols * 16
        arr = np.frombuffer(data[pos : pos + nbytes], dtype="<c16").reshape(rows, cols)
        pos += nbytes
        out[name] = arr.astype(np.complex128)
    if pos != len(data):
        raise ConfigError(f"{path}: trailing bytes after last record")
    return out


def save_ground_truth(gt: GroundTruth, path: str | Path) -> None:
    records: dict[str, np.ndarray] = {
        "h_tilde": gt.h_tilde,
        "u_true": gt.u_true.astype(np.complex128),
        "column_support": np.asarray(gt.column_support, dtype=np.complex128)[None, :],
        "row_supports": np.asarray(gt.row_supports, dtype=np.complex128),
    }
    for i, h in enumerate(gt.h_physical_per_ue):
        records[f"h_physical_{i}"] = h
    save_matrices(path, records)


def load_ground_truth(path: str | Path) -> GroundTruth:
    rec = load_matrices(path)
    per_ue = []
    i = 0
    while f"h_physical_{i}" in rec:
        per_ue.append(rec[f"h_physical_{i}"])
        i += 1
    rows = rec["row_supports"].real.astype(int)
    return GroundTruth(
        h_tilde=rec["h_tilde"],
        u_true=np.round(rec["u_true"].real).astype(np.int8),
        h_physical_per_ue=per_ue,
        column_support=rec["column_support"].real.astype(int)[0],
        row_supports=[rows[l] for l in range(rows.shape[0])],
    )


def save_measurements(meas: MeasurementSet, path: str | Path) -> None:
    save_matrices(
        path,
        {
            "y_tilde": meas.y_tilde,
            "theta_tilde": meas.theta_tilde,
            "sigma2": np.array([[meas.sigma2]], dtype=np.complex128),
        },
    )


def load_measurements(path: str | Path) -> MeasurementSet:
    rec = load_matrices(path)
    return MeasurementSet(
        y_tilde=rec["y_tilde"],
        theta_tilde=rec["theta_tilde"],
        sigma2=float(rec["sigma2"][0, 0].real),
    )
