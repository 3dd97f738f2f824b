"""Image container: raw float32 payload plus a plain-text header.

A container ``name`` is the pair ``name.bin`` / ``name.hdr``.  The payload
holds ``W*H*S`` little-endian float32 samples, plane-sequential (one band
after another), each plane with the width index fastest; that is
``array.reshape(-1, order="F")`` of a ``W x H x S`` array.  The header has
one ``key = value`` pair per line::

    width = 64
    height = 64
    bands = 31
    scale = 1.0
    labels = 400,410,420

``scale`` is the value that maps to 1.0 on load; ``labels`` is optional.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DTYPE = np.dtype("<f4")
REQUIRED = ("width", "height", "bands")


class ContainerError(Exception):
    """Bad container; ``category`` is machine-readable."""

    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


@dataclass
class Header:
    width: int
    height: int
    bands: int
    scale: float = 1.0
    labels: list[str] = field(default_factory=list)

    @property
    def nbytes(self) -> int:
        return self.width * self.height * self.bands * DTYPE.itemsize

    def render(self) -> str:
        lines = [f"width = {self.width}", f"height = {self.height}", f"bands = {self.bands}",
                 f"scale = {self.scale!r}"]
        if self.labels:
            lines.append("labels = " + ",".join(self.labels))
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "Header":
        fields = {}
        for num, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ContainerError("malformed-header", f"line {num}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            fields[key.lower()] = value
        missing = [k for k in REQUIRED if k not in fields]
        if missing:
            raise ContainerError("malformed-header", f"missing keys: {', '.join(missing)}")
        try:
            dims = [int(fields[k]) for k in REQUIRED]
            scale = float(fields.get("scale", 1.0))
        except ValueError as exc:
            raise ContainerError("malformed-header", str(exc)) from exc
        if min(dims) < 1 or not scale > 0:
            raise ContainerError("malformed-header", f"nonpositive size or scale: {dims}, {scale}")
        labels = [s.strip() for s in fields["labels"].split(",")] if fields.get("labels") else []
        if labels and len(labels) != dims[2]:
            raise ContainerError("malformed-header", f"{len(labels)} labels for {dims[2]} bands")
        return cls(*dims, scale=scale, labels=labels)


def _paths(path: str | Path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".bin", ".hdr"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".bin"), p.with_name(p.name + ".hdr")


def write_image(path: str | Path, data: np.ndarray, scale: float = 1.0, labels: list[str] | None = None) -> Path:
    """Write ``data`` (``W x H`` or ``W x H x S``) as stored values; returns the payload path."""
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[..., None]
    if data.ndim != 3:
        raise ValueError(f"expected a W x H x S array, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ContainerError("invalid-values", "image contains NaN or infinite values")
    header = Header(*data.shape, scale=scale, labels=[str(s) for s in labels or []])
    bin_path, hdr_path = _paths(path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    bin_path.write_bytes(np.asarray(data, dtype=DTYPE).reshape(-1, order="F").tobytes())
    hdr_path.write_text(header.render())
    return bin_path


def read_header(path: str | Path) -> Header:
    _, hdr_path = _paths(path)
    if not hdr_path.exists():
        raise ContainerError("missing-file", f"header not found: {hdr_path}")
    return Header.parse(hdr_path.read_text())


def load_image(path: str | Path, normalize: bool = True) -> np.ndarray:
    """Read a container into a float64 ``W x H x S`` array divided by the header scale."""
    header = read_header(path)
    bin_path, _ = _paths(path)
    if not bin_path.exists():
        raise ContainerError("missing-file", f"payload not found: {bin_path}")
    raw = bin_path.read_bytes()
    if len(raw) != header.nbytes:
        kind = "truncated-payload" if len(raw) < header.nbytes else "oversized-payload"
        raise ContainerError(kind, f"{bin_path}: expected {header.nbytes} bytes, found {len(raw)}")
    flat = np.frombuffer(raw, dtype=DTYPE)
    if not np.all(np.isfinite(flat)):
        raise ContainerError("invalid-values", f"{bin_path}: payload contains NaN or infinite values")
    data = flat.reshape((header.width, header.height, header.bands), order="F").astype(np.float64)
    return data / header.scale if normalize else data
