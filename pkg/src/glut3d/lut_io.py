"""Grid LUT ingestion/emission (.cube), Hald rasters, lattice splits, PNG I/O.

The `.cube` support covers the Adobe/Resolve-compatible subset: TITLE,
LUT_3D_SIZE, DOMAIN_MIN/DOMAIN_MAX, `#` comments, and S^3 float triplets in
red-fastest order.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np


class CubeParseError(ValueError):
    """Malformed .cube input; `line` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ImageIOError(IOError):
    pass


@dataclass
class CubeLut:
    """A grid LUT of size S with S^3 RGB entries in red-fastest order."""

    size: int
    entries: np.ndarray  # (S^3, 3) float64
    domain_min: np.ndarray = field(default_factory=lambda: np.zeros(3))
    domain_max: np.ndarray = field(default_factory=lambda: np.ones(3))
    title: str | None = None

    def __post_init__(self):
        self.entries = np.ascontiguousarray(self.entries, dtype=np.float64)
        self.domain_min = np.asarray(self.domain_min, dtype=np.float64)
        self.domain_max = np.asarray(self.domain_max, dtype=np.float64)
        if self.size < 2:
            raise ValueError(f"LUT size must be >= 2, got {self.size}")
        if self.entries.shape != (self.size**3, 3):
            raise ValueError(
                f"expected {self.size ** 3} entries, got {self.entries.shape[0]}"
            )
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("LUT entries must be finite")
        if not np.all(self.domain_min < self.domain_max):
            raise ValueError("domain_min must be < domain_max componentwise")

    def grid(self) -> np.ndarray:
        """Entries as a (S, S, S, 3) array indexed [b, g, r]."""
        return self.entries.reshape(self.size, self.size, self.size, 3)


def identity_lut(size: int) -> CubeLut:
    return CubeLut(size=size, entries=lattice_colors(size))


def lattice_colors(q: int) -> np.ndarray:
    """All q^3 lattice colors in canonical (red-fastest) order, (q^3, 3)."""
    axis = np.linspace(0.0, 1.0, q)
    b, g, r = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([r, g, b], axis=-1).reshape(-1, 3)


def sublattice_colors(q: int, full: int = 256) -> np.ndarray:
    """The q^3 uniformly strided subset of the full^3 code lattice.

    Colors are code/(full-1); q = full reproduces the whole 8-bit lattice.
    Canonical red-fastest order, (q^3, 3).
    """
    if full % q != 0:
        raise ValueError(f"q={q} must divide the lattice size {full}")
    axis = np.arange(q, dtype=np.float64) * (full // q) / (full - 1)
    b, g, r = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([r, g, b], axis=-1).reshape(-1, 3)


@dataclass
class ColorPairSet:
    """Supervised color mapping samples: inputs[i] should map to targets[i]."""

    inputs: np.ndarray   # (B, 3) in [0,1]
    targets: np.ndarray  # (B, 3) in [0,1]

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.targets = np.ascontiguousarray(self.targets, dtype=np.float64)
        if self.inputs.shape != self.targets.shape or self.inputs.ndim != 2 \
                or self.inputs.shape[1] != 3:
            raise ValueError("inputs and targets must both be (B, 3)")
        for name, arr in (("inputs", self.inputs), ("targets", self.targets)):
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ValueError(f"{name} must lie in [0,1]")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> "ColorPairSet":
        return ColorPairSet(self.inputs[idx], self.targets[idx])


def hald_index_to_color(k: int, q: int) -> np.ndarray:
    """Canonical color for raster index k: r varies fastest, value = idx/(q-1)."""
    if not 0 <= k < q**3:
        raise IndexError(f"index {k} out of range for q={q}")
    r = k % q
    g = (k // q) % q
    b = k // (q * q)
    return np.array([r, g, b], dtype=np.float64) / (q - 1)


def parse_cube(data: bytes | str) -> CubeLut:
    """Parse .cube text into a CubeLut.

    Raises CubeParseError (with line number) on missing LUT_3D_SIZE, bad
    entry counts, or non-numeric data.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")

    size: int | None = None
    title: str | None = None
    domain_min = np.zeros(3)
    domain_max = np.ones(3)
    values: list[float] = []

    for lineno, raw in enumerate(data.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        upper = line.upper()
        if upper.startswith("TITLE"):
            title = line[5:].strip().strip('"')
        elif upper.startswith("LUT_3D_SIZE"):
            try:
                size = int(line.split()[1])
            except (IndexError, ValueError):
                raise CubeParseError("malformed LUT_3D_SIZE", lineno) from None
            if size < 2:
                raise CubeParseError(f"LUT_3D_SIZE must be >= 2, got {size}", lineno)
        elif upper.startswith("DOMAIN_MIN") or upper.startswith("DOMAIN_MAX"):
            parts = line.split()
            try:
                vec = np.array([float(v) for v in parts[1:4]])
                if len(parts) < 4:
                    raise ValueError
            except ValueError:
                raise CubeParseError(f"malformed {parts[0]}", lineno) from None
            if upper.startswith("DOMAIN_MIN"):
                domain_min = vec
            else:
                domain_max = vec
        elif upper.startswith("LUT_1D_SIZE"):
            raise CubeParseError("1D LUTs are not supported", lineno)
        else:
            parts = line.split()
            if len(parts) != 3:
                raise CubeParseError(f"expected 3 values, got {len(parts)}", lineno)
            try:
                values.extend(float(v) for v in parts)
            except ValueError:
                raise CubeParseError(f"non-numeric entry {parts!r}", lineno) from None

    if size is None:
        raise CubeParseError("missing LUT_3D_SIZE")
    n_expected = size**3
    n_got = len(values) // 3
    if n_got != n_expected:
        raise CubeParseError(f"expected {n_expected} entries, got {n_got}")
    entries = np.array(values, dtype=np.float64).reshape(-1, 3)
    return CubeLut(size=size, entries=entries, domain_min=domain_min,
                   domain_max=domain_max, title=title)


def write_cube(lut: CubeLut) -> str:
    """Emit .cube text that parse_cube round-trips (entries within 1e-6)."""
    out = io.StringIO()
    if lut.title:
        out.write(f'TITLE "{lut.title}"\n')
    out.write(f"LUT_3D_SIZE {lut.size}\n")
    dmin, dmax = lut.domain_min, lut.domain_max
    if np.any(dmin != 0.0) or np.any(dmax != 1.0):
        out.write(f"DOMAIN_MIN {dmin[0]:.6f} {dmin[1]:.6f} {dmin[2]:.6f}\n")
        out.write(f"DOMAIN_MAX {dmax[0]:.6f} {dmax[1]:.6f} {dmax[2]:.6f}\n")
    for r, g, b in lut.entries:
        out.write(f"{r:.6f} {g:.6f} {b:.6f}\n")
    return out.getvalue()


def trilinear_sample(lut: CubeLut, colors: np.ndarray) -> np.ndarray:
    """Trilinear interpolation over the 8 enclosing grid vertices.

    Queries are clamped to the LUT domain box before sampling (clamp-then-
    sample policy for out-of-domain inputs). Accepts (..., 3) arrays.
    """
    c = np.asarray(colors, dtype=np.float64)
    single = c.ndim == 1
    c = np.atleast_2d(c)
    shape = c.shape
    c = c.reshape(-1, 3)

    t = (c - lut.domain_min) / (lut.domain_max - lut.domain_min)
    t = np.clip(t, 0.0, 1.0) * (lut.size - 1)

    i0 = np.minimum(t.astype(np.int64), lut.size - 2)
    frac = t - i0

    grid = lut.grid()
    r0, g0, b0 = i0[:, 0], i0[:, 1], i0[:, 2]
    fr, fg, fb = frac[:, 0:1], frac[:, 1:2], frac[:, 2:3]

    def corner(dr, dg, db):
        return grid[b0 + db, g0 + dg, r0 + dr]

    c00 = corner(0, 0, 0) * (1 - fr) + corner(1, 0, 0) * fr
    c10 = corner(0, 1, 0) * (1 - fr) + corner(1, 1, 0) * fr
    c01 = corner(0, 0, 1) * (1 - fr) + corner(1, 0, 1) * fr
    c11 = corner(0, 1, 1) * (1 - fr) + corner(1, 1, 1) * fr
    c0 = c00 * (1 - fg) + c10 * fg
    c1 = c01 * (1 - fg) + c11 * fg
    out = c0 * (1 - fb) + c1 * fb

    out = out.reshape(shape)
    return out[0] if single else out


def build_split(q_train: int = 128, full: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Train/test lattice split over the `full`^3 integer code lattice.

    Train = the q_train^3 sublattice at uniform stride (codes 0, s, 2s, ...
    with s = full / q_train); test = every remaining lattice color. Colors
    are code/(full-1) in float32. The sets are disjoint and their union is
    the whole lattice.
    """
    if full % q_train != 0:
        raise ValueError(f"q_train={q_train} must divide the lattice size {full}")
    stride = full // q_train

    codes = np.arange(full, dtype=np.int64)
    axis_train = codes % stride == 0

    b, g, r = np.meshgrid(codes, codes, codes, indexing="ij")
    is_train = (axis_train[b] & axis_train[g] & axis_train[r]).reshape(-1)

    all_colors = np.stack([r, g, b], axis=-1).reshape(-1, 3).astype(np.float32)
    all_colors /= full - 1
    return all_colors[is_train], all_colors[~is_train]


@dataclass
class HaldRaster:
    """2D raster enumerating the q^3 lattice in canonical index order."""

    samples_per_axis: int
    pixels: np.ndarray  # (q^3, 3)
    width: int
    height: int

    def __post_init__(self):
        q3 = self.samples_per_axis**3
        if self.width * self.height != q3:
            raise ValueError(f"{self.width}x{self.height} != {self.samples_per_axis}^3")
        if self.pixels.shape != (q3, 3):
            raise ValueError(f"expected {q3} pixels, got {self.pixels.shape}")

    def to_image(self) -> np.ndarray:
        return self.pixels.reshape(self.height, self.width, 3)

    @classmethod
    def from_image(cls, img: np.ndarray, samples_per_axis: int) -> "HaldRaster":
        h, w = img.shape[:2]
        return cls(samples_per_axis, img.reshape(-1, 3), width=w, height=h)


def default_hald_width(q: int) -> int:
    """Raster width for q^3 pixels: near-square power-of-two when q is one."""
    q3 = q**3
    if q & (q - 1) == 0:  # power of two
        return 1 << (q3.bit_length() - 1) // 2
    return q


def make_hald_raster(q: int, width: int | None = None) -> HaldRaster:
    """Identity Hald raster: pixel k carries hald_index_to_color(k, q)."""
    width = width or default_hald_width(q)
    if q**3 % width != 0:
        raise ValueError(f"width {width} does not divide {q}^3")
    return HaldRaster(q, lattice_colors(q), width=width, height=q**3 // width)


def _bgr_to_float(raw: np.ndarray, what: str) -> np.ndarray:
    if raw.ndim == 2:
        raw = raw[:, :, None].repeat(3, axis=2)
    if raw.shape[2] == 4:
        raw = raw[:, :, :3]
    if raw.dtype == np.uint8:
        maxcode = 255.0
    elif raw.dtype == np.uint16:
        maxcode = 65535.0
    else:
        raise ImageIOError(f"unsupported image dtype {raw.dtype} in {what}")
    return raw[:, :, ::-1].astype(np.float64) / maxcode  # BGR -> RGB


def _float_to_bgr(img: np.ndarray, bit_depth: int) -> np.ndarray:
    if bit_depth == 8:
        maxcode, dtype = 255.0, np.uint8
    elif bit_depth == 16:
        maxcode, dtype = 65535.0, np.uint16
    else:
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    codes = np.floor(np.clip(img, 0.0, 1.0) * maxcode + 0.5).astype(dtype)
    return np.ascontiguousarray(codes[:, :, ::-1])


def decode_image_bytes(data: bytes, what: str = "buffer") -> np.ndarray:
    """Decode PNG bytes into float64 RGB in [0,1] (codes / max code)."""
    import cv2

    raw = cv2.imdecode(np.frombuffer(data, dtype=np.uint8),
                       cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageIOError(f"cannot decode image from {what}")
    return _bgr_to_float(raw, what)


def encode_png_bytes(img: np.ndarray, bit_depth: int = 8) -> bytes:
    """Encode float RGB in [0,1] as PNG bytes; integer codes round half-up."""
    import cv2

    ok, buf = cv2.imencode(".png", _float_to_bgr(img, bit_depth))
    if not ok:
        raise ImageIOError("cannot encode image")
    return buf.tobytes()


def read_image(path: str) -> np.ndarray:
    """Read an 8- or 16-bit PNG into float64 RGB in [0,1] (codes / max code)."""
    import cv2

    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageIOError(f"cannot read image: {path}")
    return _bgr_to_float(raw, str(path))


def write_image(path: str, img: np.ndarray, bit_depth: int = 8) -> None:
    """Write float RGB in [0,1] as PNG; integer codes round half-up."""
    import cv2

    if not cv2.imwrite(str(path), _float_to_bgr(img, bit_depth)):
        raise ImageIOError(f"cannot write image: {path}")
