"""File formats: the KTEN tensor container, key=value configs and small CSVs.

KTEN layout (all little-endian)::

    b"KTEN" | version u8 (=1) | dtype u8 (0 real f64, 1 complex f64) | ndim u8
    | ndim x u32 dims | row-major f64 payload (complex as interleaved re, im)

Every writer goes through a temporary file in the destination directory
followed by ``os.replace`` so readers never observe a partial file.
"""
from __future__ import annotations

import dataclasses
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"KTEN"
VERSION = 1
REAL, COMPLEX = 0, 1


class FormatError(ValueError):
    """Malformed KTEN file or config text."""


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def kten_encode(x) -> bytes:
    x = np.asarray(x)
    if np.iscomplexobj(x):
        code = COMPLEX
        payload = np.ascontiguousarray(x, dtype="<c16").tobytes()
    else:
        code = REAL
        payload = np.ascontiguousarray(x, dtype="<f8").tobytes()
    if x.ndim > 255:
        raise FormatError("too many dimensions for KTEN")
    if any(d >= 2**32 for d in x.shape):
        raise FormatError("dimension does not fit in u32")
    header = MAGIC + struct.pack("<BBB", VERSION, code, x.ndim)
    header += struct.pack(f"<{x.ndim}I", *x.shape)
    return header + payload


def kten_decode(data: bytes) -> np.ndarray:
    if len(data) < 7 or data[:4] != MAGIC:
        raise FormatError("not a KTEN file (bad magic)")
    version, code, ndim = struct.unpack_from("<BBB", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported KTEN version {version}")
    if code not in (REAL, COMPLEX):
        raise FormatError(f"unknown dtype code {code}")
    off = 7 + 4 * ndim
    if len(data) < off:
        raise FormatError("truncated header")
    dims = struct.unpack_from(f"<{ndim}I", data, 7)
    count = int(np.prod(dims, dtype=np.int64))
    itemsize = 8 * (1 + code)
    if len(data) - off != itemsize * count:
        raise FormatError(f"payload is {len(data) - off} bytes, expected {itemsize * count}")
    dtype = "<c16" if code == COMPLEX else "<f8"
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=off)
    return arr.reshape(dims).astype(np.complex128 if code else np.float64)


def write_kten(path, x) -> None:
    atomic_write_bytes(path, kten_encode(x))


def read_kten(path) -> np.ndarray:
    return kten_decode(Path(path).read_bytes())


def write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def loss_csv(history) -> str:
    lines = ["iteration,loss"]
    lines += [f"{i},{float(v)!r}" for i, v in enumerate(history)]
    return "\n".join(lines) + "\n"


def read_loss_csv(path) -> np.ndarray:
    rows = Path(path).read_text().strip().splitlines()[1:]
    return np.array([float(r.split(",")[1]) for r in rows])


# ---------------------------------------------------------------- configs

def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise FormatError(f"not a boolean: {s!r}")


def _parse_triple(s: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(p) for p in s.split(","))
    except ValueError as exc:
        raise FormatError(f"bad decoder triple {s!r}") from exc
    return vals


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(p) for p in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class ExperimentConfig:
    """Every knob of a simulate/reconstruct/verify run, serialisable as key=value text."""

    n: int = 64
    coils: int = 4
    mask: str = "random"
    r: float = 3.0
    acs: int = 8
    pf_fraction: float = 0.5625
    sigma: float = 0.0
    n_ellipses: int = 6
    z_arch: tuple = (6, 64)
    csm_arch: tuple = (4, 32, 9)
    phase_arch: tuple = (4, 32, 9)
    iters: int = 1000
    lr: float = 1e-4
    seed: int = 0
    mask_seed: int = 0
    weighting: bool = False
    dc: bool = True
    ablation: str = "full"
    trials: int = 20
    hankel_d: int = 4
    latent_radius: float = 1.0
    beta: float = 1.1
    out: str = "out"

    _choices = {
        "mask": ("random", "vd_regular", "partial_fourier", "full", "entrywise"),
        "ablation": ("full", "sensitivity_only", "phase_only"),
    }

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for key, allowed in self._choices.items():
            if getattr(self, key) not in allowed:
                raise FormatError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        if self.n < 4 or self.n & (self.n - 1):
            raise FormatError(f"n must be a power of two >= 4, got {self.n}")
        if self.coils < 1:
            raise FormatError("coils must be >= 1")
        if self.r < 1:
            raise FormatError("r must be >= 1")
        if self.acs < 0 or self.acs > self.n:
            raise FormatError("acs must lie in [0, n]")
        if not 0 < self.pf_fraction <= 1:
            raise FormatError("pf_fraction must lie in (0, 1]")
        if self.sigma < 0:
            raise FormatError("sigma must be >= 0")
        if self.iters < 1:
            raise FormatError("iters must be >= 1")
        if not self.lr > 0:
            raise FormatError("lr must be positive")
        if self.trials < 1:
            raise FormatError("trials must be >= 1")
        if self.hankel_d < 2:
            raise FormatError("hankel_d must be >= 2")
        if len(self.z_arch) != 2 or len(self.csm_arch) != 3 or len(self.phase_arch) != 3:
            raise FormatError("z_arch is layers,channels; csm/phase_arch are layers,channels,size")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "ExperimentConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(mapping) - set(known))
        if unknown:
            raise FormatError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for key, raw in mapping.items():
            default = known[key].default
            if isinstance(default, bool):
                kwargs[key] = _parse_bool(raw)
            elif isinstance(default, tuple):
                kwargs[key] = _parse_triple(raw)
            else:
                try:
                    kwargs[key] = type(default)(raw)
                except ValueError as exc:
                    raise FormatError(f"bad value for {key}: {raw!r}") from exc
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        mapping = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"line {lineno}: expected key=value")
            key, value = (p.strip() for p in line.split("=", 1))
            if key in mapping:
                raise FormatError(f"line {lineno}: duplicate key {key}")
            mapping[key] = value
        return cls.from_mapping(mapping)

    @classmethod
    def read(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        return "".join(f"{k}={format_value(getattr(self, k))}\n" for k in self.keys())

    def write(self, path) -> None:
        write_text(path, self.to_text())

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def read_metadata(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip() and "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def metadata_text(meta: dict) -> str:
    return "".join(f"{k}={format_value(v)}\n" for k, v in meta.items())
