"""Little-endian binary file formats.

Every file starts with a 4-byte magic and a u32 version (always 1):

``TDS1``  paired dataset: u32 count, then per record 5 f32 contact values
          (u, v, force, radius, angle), 19 f32 electrode values, 4096 f32
          BioTac displacements, 4096 f32 DIGIT displacements.
``TNET``  network: u32 role tag, then one block (MLP) or four blocks (VAE:
          trunk, mean head, log-variance head, decoder).  A block is a u32
          layer count followed per layer by u32 in, u32 out, u8 activation,
          the out x in weights and the out biases, all f32 row-major.
``TCAL``  calibration: u32 degree, u32 monomial count, 3 x 6 f32
          coefficients, 3 f32 background.
``THMP``  height map: u32 height, u32 width, f32 pitch, height x width f32.
``DFLD``  deformation field: u32 kind (0 BioTac, 1 DIGIT), u32 rows,
          u32 cols, rows x cols f32.

Arrays are float64 in memory and rounded to float32 exactly once, on write.
Writes go to a temporary file that is renamed into place on success.
"""

from __future__ import annotations

import contextlib
import os
import struct
import tempfile
from pathlib import Path
from typing import BinaryIO, Iterator, Sequence

import numpy as np

from . import contact
from .contact import ContactSpec, DeformationField, PairedSample
from .geometry import HeightMap
from .nn import Layer, MlpModel, VaeModel
from .numerics import ShapeError
from .render import CalibrationTable, TactileImage

VERSION = 1
MAGICS = (b"TDS1", b"TNET", b"TCAL", b"THMP", b"DFLD")
RECORD_FLOATS = 5 + contact.N_ELECTRODES + 2 * contact.GRID * contact.GRID
RECORD_BYTES = 4 * RECORD_FLOATS  # 32864

ROLE_CODES = {"mlp": 0, "svb": 1, "mvb": 2, "mvd": 3, "s2mpn": 4, "m2mpn": 5, "vae": 6}
VAE_ROLES = {"svb", "mvb", "mvd", "vae"}
ACTIVATION_CODES = {"identity": 0, "tanh": 1}
KIND_CODES = {"biotac": 0, "digit": 1}


class FormatError(ValueError):
    """Malformed file contents."""


class BadMagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


@contextlib.contextmanager
def atomic_write(path: str | os.PathLike) -> Iterator[BinaryIO]:
    """Open a temporary sibling of ``path``; rename it over ``path`` on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes, name: str):
        self.data = data
        self.pos = 0
        self.name = name

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"{self.name}: needed {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def f32(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float64)

    def header(self, magic: bytes) -> None:
        got = self.take(4)
        if got != magic:
            raise BadMagicError(f"{self.name}: expected magic {magic!r}, found {got!r}")
        version = self.u32()
        if version != VERSION:
            raise VersionMismatchError(f"{self.name}: version {version}, expected {VERSION}")

    def done(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"{self.name}: {len(self.data) - self.pos} trailing bytes")


def _open(path) -> _Reader:
    return _Reader(Path(path).read_bytes(), str(path))


def _header(magic: bytes) -> bytes:
    return magic + struct.pack("<I", VERSION)


def _f32(a) -> bytes:
    return np.asarray(a, dtype="<f4").tobytes()


# -- datasets ---------------------------------------------------------------


def dataset_bytes(samples: Sequence[PairedSample]) -> bytes:
    parts = [_header(b"TDS1"), struct.pack("<I", len(samples))]
    for s in samples:
        parts.append(_f32(np.concatenate([
            s.spec.as_tuple(), s.signal, s.biotac_field.flat(), s.digit_field.flat(),
        ])))
    return b"".join(parts)


def write_dataset(path, samples: Sequence[PairedSample]) -> None:
    with atomic_write(path) as fh:
        fh.write(dataset_bytes(samples))


def read_dataset(path) -> list[PairedSample]:
    r = _open(path)
    r.header(b"TDS1")
    count = r.u32()
    n = contact.GRID
    out = []
    for _ in range(count):
        rec = r.f32(RECORD_FLOATS)
        u, v, force, radius, angle = (float(x) for x in rec[:5])
        try:
            spec = ContactSpec(u, v, force, radius, angle)
        except contact.ContactError as exc:
            raise FormatError(f"{r.name}: invalid contact record: {exc}") from exc
        sig = rec[5:5 + contact.N_ELECTRODES]
        off = 5 + contact.N_ELECTRODES
        bt = rec[off:off + n * n].reshape(n, n)
        dg = rec[off + n * n:].reshape(n, n)
        out.append(PairedSample(spec, sig, DeformationField(bt, "biotac"), DeformationField(dg, "digit")))
    r.done()
    return out


# -- networks ---------------------------------------------------------------


def _mlp_bytes(model: MlpModel) -> bytes:
    parts = [struct.pack("<I", len(model.layers))]
    for layer in model.layers:
        parts.append(struct.pack("<IIB", layer.n_in, layer.n_out, ACTIVATION_CODES[layer.activation]))
        parts.append(_f32(layer.weights))
        parts.append(_f32(layer.bias))
    return b"".join(parts)


def model_bytes(model: MlpModel | VaeModel, role: str) -> bytes:
    if role not in ROLE_CODES:
        raise ValueError(f"unknown network role {role!r}")
    is_vae = isinstance(model, VaeModel)
    if is_vae != (role in VAE_ROLES):
        raise ValueError(f"role {role!r} does not match a {type(model).__name__}")
    blocks = model.parts() if is_vae else (model,)
    return _header(b"TNET") + struct.pack("<I", ROLE_CODES[role]) + b"".join(_mlp_bytes(b) for b in blocks)


def write_model(path, model: MlpModel | VaeModel, role: str) -> None:
    data = model_bytes(model, role)
    with atomic_write(path) as fh:
        fh.write(data)


def _read_mlp(r: _Reader) -> MlpModel:
    count = r.u32()
    if count == 0:
        raise FormatError(f"{r.name}: network block without layers")
    codes = {v: k for k, v in ACTIVATION_CODES.items()}
    layers = []
    for _ in range(count):
        n_in, n_out = r.u32(), r.u32()
        code = r.u8()
        if code not in codes:
            raise FormatError(f"{r.name}: unknown activation code {code}")
        if n_in == 0 or n_out == 0:
            raise FormatError(f"{r.name}: empty layer {n_in}x{n_out}")
        w = r.f32(n_in * n_out).reshape(n_out, n_in)
        b = r.f32(n_out)
        layers.append(Layer(w, b, codes[code]))
    return MlpModel(layers)


def read_model(path) -> tuple[MlpModel | VaeModel, str]:
    """Return ``(model, role)``."""
    r = _open(path)
    r.header(b"TNET")
    code = r.u32()
    roles = {v: k for k, v in ROLE_CODES.items()}
    if code not in roles:
        raise FormatError(f"{r.name}: unknown network role tag {code}")
    role = roles[code]
    try:
        if role in VAE_ROLES:
            model: MlpModel | VaeModel = VaeModel(*(_read_mlp(r) for _ in range(4)))
        else:
            model = _read_mlp(r)
    except ShapeError as exc:
        raise FormatError(f"{r.name}: {exc}") from exc
    r.done()
    return model, role


# -- calibration, height maps, fields ---------------------------------------


def write_calibration(path, calib: CalibrationTable) -> None:
    data = (_header(b"TCAL") + struct.pack("<II", calib.degree, calib.coeffs.shape[1])
            + _f32(calib.coeffs) + _f32(calib.background))
    with atomic_write(path) as fh:
        fh.write(data)


def read_calibration(path) -> CalibrationTable:
    r = _open(path)
    r.header(b"TCAL")
    degree, n_mono = r.u32(), r.u32()
    if degree != 2 or n_mono != 6:
        raise FormatError(f"{r.name}: unsupported calibration degree {degree} with {n_mono} terms")
    coeffs = r.f32(3 * n_mono).reshape(3, n_mono)
    background = r.f32(3)
    r.done()
    try:
        return CalibrationTable(coeffs, background, degree)
    except ValueError as exc:
        raise FormatError(f"{r.name}: {exc}") from exc


def write_heightmap(path, h: HeightMap) -> None:
    rows, cols = h.data.shape
    data = _header(b"THMP") + struct.pack("<II", rows, cols) + _f32([h.pitch]) + _f32(h.data)
    with atomic_write(path) as fh:
        fh.write(data)


def read_heightmap(path) -> HeightMap:
    r = _open(path)
    r.header(b"THMP")
    rows, cols = r.u32(), r.u32()
    pitch = float(r.f32(1)[0])
    data = r.f32(rows * cols).reshape(rows, cols)
    r.done()
    try:
        return HeightMap(data, pitch)
    except ValueError as exc:
        raise FormatError(f"{r.name}: {exc}") from exc


def write_field(path, field: DeformationField) -> None:
    rows, cols = field.values.shape
    data = _header(b"DFLD") + struct.pack("<III", KIND_CODES[field.kind], rows, cols) + _f32(field.values)
    with atomic_write(path) as fh:
        fh.write(data)


def read_field(path) -> DeformationField:
    r = _open(path)
    r.header(b"DFLD")
    code, rows, cols = r.u32(), r.u32(), r.u32()
    kinds = {v: k for k, v in KIND_CODES.items()}
    if code not in kinds:
        raise FormatError(f"{r.name}: unknown sensor kind code {code}")
    values = r.f32(rows * cols).reshape(rows, cols)
    r.done()
    return DeformationField(values, kinds[code])


# -- images -----------------------------------------------------------------


def write_ppm(path, image: TactileImage) -> None:
    head = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    with atomic_write(path) as fh:
        fh.write(head + np.ascontiguousarray(image.pixels).tobytes())


def read_ppm(path) -> TactileImage:
    data = Path(path).read_bytes()
    fields = data.split(maxsplit=4)
    if len(fields) < 5 or fields[0] != b"P6" or fields[3] != b"255":
        raise FormatError(f"{path}: not a binary PPM with maxval 255")
    w, h = int(fields[1]), int(fields[2])
    pixels = fields[4]
    if len(pixels) != w * h * 3:
        raise TruncatedFileError(f"{path}: expected {w * h * 3} pixel bytes, found {len(pixels)}")
    return TactileImage(np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3).copy())
