"""File formats: PGM images, binary frame/density containers, run manifests.

Potentials travel as grayscale images (PGM P5 required, PNG optional via
Pillow) with pixel values mapped linearly to [0, 1]; image row 0 is the top
of the domain and white means high potential. Particle frames and density
sequences use little-endian binary files with a fixed 64-byte header (magic,
version, dims, frame spacing, domain bounds) followed by float64 payload;
loaders reject unknown magics and versions. Run manifests are JSON.
"""

from __future__ import annotations

import json
import time
import warnings
from pathlib import Path

import numpy as np

from .binning import FrameSequence
from .fields import DegenerateFieldWarning, Domain, Grid2D, ScalarField
from .sde import TrajectoryFrames

__all__ = [
    "load_potential_image",
    "save_field_image",
    "save_frames",
    "load_frames",
    "save_density",
    "load_density",
    "save_field",
    "load_field",
    "write_manifest",
    "read_manifest",
]

FORMAT_VERSION = 1
_FRAME_MAGIC = b"FPITRAJ\x00"
_DENSITY_MAGIC = b"FPIDENS\x00"

_FRAME_HEADER = np.dtype(
    [
        ("magic", "S8"),
        ("version", "<u4"),
        ("n_frames", "<u4"),
        ("n_particles", "<u4"),
        ("pad", "<u4"),
        ("dt", "<f8"),
        ("x_min", "<f8"),
        ("x_max", "<f8"),
        ("y_min", "<f8"),
        ("y_max", "<f8"),
    ]
)
_DENSITY_HEADER = np.dtype(
    [
        ("magic", "S8"),
        ("version", "<u4"),
        ("n_frames", "<u4"),
        ("nx", "<u4"),
        ("ny", "<u4"),
        ("dt", "<f8"),
        ("x_min", "<f8"),
        ("x_max", "<f8"),
        ("y_min", "<f8"),
        ("y_max", "<f8"),
    ]
)
assert _FRAME_HEADER.itemsize == 64 and _DENSITY_HEADER.itemsize == 64


# ---------------------------------------------------------------------------
# images

def _read_pgm(data: bytes) -> np.ndarray:
    """Parse a P5 (binary) or P2 (ASCII) PGM into a float array in [0, 1]."""
    if data[:2] not in (b"P5", b"P2"):
        kind = data[:2].decode("ascii", "replace")
        raise ValueError(
            f"unsupported netpbm magic {kind!r}: only grayscale PGM (P2/P5) is accepted"
        )
    ascii_form = data[:2] == b"P2"

    # Header tokens (width, height, maxval) with '#' comments allowed.
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    width, height, maxval = (int(t) for t in tokens)
    if not 0 < maxval < 65536:
        raise ValueError(f"PGM maxval {maxval} out of range")

    if ascii_form:
        raster = np.array(data[pos:].split(), dtype=float)
    else:
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        if len(data) - pos < width * height * dtype.itemsize:
            raise ValueError("PGM raster size does not match header")
        raster = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos).astype(float)
    if raster.size != width * height:
        raise ValueError("PGM raster size does not match header")
    return raster.reshape(height, width) / maxval


def _read_png(path: Path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError as err:  # pragma: no cover - depends on extras
        raise ValueError("PNG support requires the optional pillow dependency") from err
    with Image.open(path) as img:
        if img.mode in ("L", "I;16", "I;16B", "I"):
            arr = np.asarray(img, dtype=float)
        else:
            raise ValueError(f"color image (mode {img.mode}) rejected: need grayscale")
    peak = 255.0 if arr.max() <= 255 else 65535.0
    return arr / peak


def load_potential_image(path, domain: Domain | None = None) -> ScalarField:
    """Read a grayscale image as a potential field in [0, 1].

    Image row 0 becomes the top of the domain (largest y); white = 1 = high
    potential. The image pixels define the grid; the domain defaults to the
    standard box.
    """
    path = Path(path)
    if domain is None:
        domain = Domain()
    if path.suffix.lower() == ".png":
        pixels = _read_png(path)
    else:
        pixels = _read_pgm(path.read_bytes())
    ny, nx = pixels.shape
    grid = Grid2D(domain, nx, ny)
    return ScalarField(grid, np.flipud(pixels))


def save_field_image(field: ScalarField, path, scale_mode: str = "minmax") -> None:
    """Write a field as an 8-bit PGM (P5).

    ``scale_mode="unit"`` clamps values to [0, 1]; ``"minmax"`` expands the
    field's own range to full gray scale (a constant field degenerates to
    mid-gray with a warning).
    """
    v = field.values
    if scale_mode == "unit":
        scaled = np.clip(v, 0.0, 1.0)
    elif scale_mode == "minmax":
        lo, hi = float(v.min()), float(v.max())
        if hi == lo:
            warnings.warn(
                "save_field_image: constant field, writing mid-gray",
                DegenerateFieldWarning,
                stacklevel=2,
            )
            scaled = np.full_like(v, 0.5)
        else:
            scaled = (v - lo) / (hi - lo)
    else:
        raise ValueError(f"scale_mode must be 'unit' or 'minmax', got {scale_mode!r}")
    pixels = np.rint(np.flipud(scaled) * 255).astype("u1")
    header = f"P5\n{field.grid.nx} {field.grid.ny}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


# ---------------------------------------------------------------------------
# binary containers

def _check_header(head: np.void, magic: bytes, kind: str) -> None:
    # numpy strips trailing NULs from S8 scalars, so pad before comparing
    found = bytes(head["magic"]).ljust(len(magic), b"\x00")
    if found != magic:
        raise ValueError(f"not a {kind} file (bad magic {found!r})")
    if int(head["version"]) != FORMAT_VERSION:
        raise ValueError(
            f"{kind} file version {int(head['version'])} not supported "
            f"(expected {FORMAT_VERSION})"
        )


def save_frames(traj: TrajectoryFrames, path) -> None:
    """Write particle frames as header + float64 positions."""
    head = np.zeros((), dtype=_FRAME_HEADER)
    head["magic"] = _FRAME_MAGIC
    head["version"] = FORMAT_VERSION
    head["n_frames"] = traj.n_frames
    head["n_particles"] = traj.n_particles
    head["dt"] = traj.dt
    d = traj.domain
    head["x_min"], head["x_max"], head["y_min"], head["y_max"] = d.x_min, d.x_max, d.y_min, d.y_max
    with open(path, "wb") as fh:
        fh.write(head.tobytes())
        fh.write(traj.positions.astype("<f8").tobytes())


def load_frames(path) -> TrajectoryFrames:
    data = Path(path).read_bytes()
    if len(data) < 64:
        raise ValueError("file too short to hold a frame header")
    head = np.frombuffer(data[:64], dtype=_FRAME_HEADER)[0]
    _check_header(head, _FRAME_MAGIC, "frame")
    L, n_p = int(head["n_frames"]), int(head["n_particles"])
    expected = L * n_p * 2
    payload = np.frombuffer(data, dtype="<f8", offset=64)
    if payload.size != expected:
        raise ValueError(f"frame payload holds {payload.size} floats, header implies {expected}")
    domain = Domain(float(head["x_min"]), float(head["x_max"]), float(head["y_min"]), float(head["y_max"]))
    return TrajectoryFrames(payload.reshape(L, n_p, 2).copy(), float(head["dt"]), domain)


def _write_density_blob(grid: Grid2D, values: np.ndarray, dt: float, path) -> None:
    head = np.zeros((), dtype=_DENSITY_HEADER)
    head["magic"] = _DENSITY_MAGIC
    head["version"] = FORMAT_VERSION
    head["n_frames"] = values.shape[0]
    head["nx"], head["ny"] = grid.nx, grid.ny
    head["dt"] = dt
    d = grid.domain
    head["x_min"], head["x_max"], head["y_min"], head["y_max"] = d.x_min, d.x_max, d.y_min, d.y_max
    with open(path, "wb") as fh:
        fh.write(head.tobytes())
        fh.write(values.astype("<f8").tobytes())


def _read_density_blob(path) -> tuple[Grid2D, np.ndarray, float]:
    data = Path(path).read_bytes()
    if len(data) < 64:
        raise ValueError("file too short to hold a density header")
    head = np.frombuffer(data[:64], dtype=_DENSITY_HEADER)[0]
    _check_header(head, _DENSITY_MAGIC, "density")
    L, nx, ny = int(head["n_frames"]), int(head["nx"]), int(head["ny"])
    expected = L * nx * ny
    payload = np.frombuffer(data, dtype="<f8", offset=64)
    if payload.size != expected:
        raise ValueError(f"density payload holds {payload.size} floats, header implies {expected}")
    domain = Domain(float(head["x_min"]), float(head["x_max"]), float(head["y_min"]), float(head["y_max"]))
    grid = Grid2D(domain, nx, ny)
    return grid, payload.reshape(L, ny, nx).copy(), float(head["dt"])


def save_density(fs: FrameSequence, path) -> None:
    """Write a density frame sequence as header + float64 fields."""
    _write_density_blob(fs.grid, fs.values, fs.dt, path)


def load_density(path) -> FrameSequence:
    grid, values, dt = _read_density_blob(path)
    return FrameSequence(grid, values, dt)


def save_field(field: ScalarField, path) -> None:
    """Lossless single-field container (a one-frame density file).

    Unlike densities, fields may carry negative values (potentials usually
    do), so this skips the FrameSequence nonnegativity validation.
    """
    _write_density_blob(field.grid, field.values[None, :, :], 1.0, path)


def load_field(path) -> ScalarField:
    grid, values, _ = _read_density_blob(path)
    if values.shape[0] != 1:
        raise ValueError(f"expected a single-field file, found {values.shape[0]} frames")
    return ScalarField(grid, values[0])


# ---------------------------------------------------------------------------
# manifests

def toolkit_version() -> str:
    from . import __version__

    return __version__


def write_manifest(path, payload: dict) -> dict:
    """Write a JSON run manifest; returns the enriched record."""
    record = {
        "toolkit_version": toolkit_version(),
        "format_version": FORMAT_VERSION,
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        **payload,
    }
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return record


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
