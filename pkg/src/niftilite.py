"""
NIfTI-lite Module

Bit-exact reader/writer for the single-file (.nii, "n+1") subset of NIfTI-1
used for phantom and real volumes alike. Supported datatypes are uint8, int16,
float32 and uint16. qform/sform orientation is ignored. Compressed files are
not read directly: callers may pass a `decompress` hook (e.g. gzip.decompress)
that turns the raw file bytes into plain .nii bytes.
"""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np

from errors import (
    CorruptFileError,
    CorruptHeaderError,
    PreconditionError,
    UnsupportedDatatypeError,
    UnsupportedFormatError,
)

logger = logging.getLogger(__name__)

HEADER_SIZE = 348
DEFAULT_VOX_OFFSET = 352
SWAPPED_HEADER_SIZE = 1543569408  # 348 read with the wrong byte order
SINGLE_FILE_MAGIC = b"n+1\x00"

# code -> (numpy kind, bitpix)
DATATYPES: Dict[int, Tuple[str, int]] = {
    2: ("u1", 8),
    4: ("i2", 16),
    16: ("f4", 32),
    512: ("u2", 16),
}

# Static layout of the NIfTI-1 header, in declaration order
NIFTI1_FIELDS = [
    ('i', 'sizeof_hdr'),
    ('10s', 'data_type'),
    ('18s', 'db_name'),
    ('i', 'extents'),
    ('h', 'session_error'),
    ('b', 'regular'),
    ('b', 'dim_info'),
    ('8h', 'dim'),
    ('f', 'intent_p1'),
    ('f', 'intent_p2'),
    ('f', 'intent_p3'),
    ('h', 'intent_code'),
    ('h', 'datatype'),
    ('h', 'bitpix'),
    ('h', 'slice_start'),
    ('8f', 'pixdim'),
    ('f', 'vox_offset'),
    ('f', 'scl_slope'),
    ('f', 'scl_inter'),
    ('h', 'slice_end'),
    ('b', 'slice_code'),
    ('b', 'xyzt_units'),
    ('f', 'cal_max'),
    ('f', 'cal_min'),
    ('f', 'slice_duration'),
    ('f', 'toffset'),
    ('i', 'glmax'),
    ('i', 'glmin'),
    ('80s', 'descrip'),
    ('24s', 'aux_file'),
    ('h', 'qform_code'),
    ('h', 'sform_code'),
    ('f', 'quatern_b'),
    ('f', 'quatern_c'),
    ('f', 'quatern_d'),
    ('f', 'qoffset_x'),
    ('f', 'qoffset_y'),
    ('f', 'qoffset_z'),
    ('4f', 'srow_x'),
    ('4f', 'srow_y'),
    ('4f', 'srow_z'),
    ('16s', 'intent_name'),
    ('4s', 'magic'),
]
NIFTI1_STRUCT_FORMAT = "".join(code for code, _ in NIFTI1_FIELDS)
assert struct.calcsize('=' + NIFTI1_STRUCT_FORMAT) == HEADER_SIZE


@dataclass
class NiftiHeader:
    """The header fields this subset interprets; everything else is written as zero."""
    dim: Tuple[int, ...]
    datatype: int = 16
    bitpix: int = 32
    vox_offset: float = float(DEFAULT_VOX_OFFSET)
    scl_slope: float = 1.0
    scl_inter: float = 0.0
    pixdim: Tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    magic: bytes = SINGLE_FILE_MAGIC
    sizeof_hdr: int = HEADER_SIZE
    byteorder: str = '<'

    @property
    def extents(self) -> Tuple[int, int, int]:
        """(X, Y, Z) with Z = 1 for 2D images."""
        x, y = self.dim[1], self.dim[2]
        z = self.dim[3] if self.dim[0] >= 3 else 1
        return int(x), int(y), int(z)

    @property
    def numpy_dtype(self) -> np.dtype:
        kind, _ = DATATYPES[self.datatype]
        return np.dtype(self.byteorder + kind)

    def same_content(self, other: "NiftiHeader") -> bool:
        """Equality ignoring the byte order the header was stored in."""
        return (self.dim, self.datatype, self.bitpix, self.vox_offset, self.scl_slope,
                self.scl_inter, self.pixdim, self.magic) == \
               (other.dim, other.datatype, other.bitpix, other.vox_offset, other.scl_slope,
                other.scl_inter, other.pixdim, other.magic)


@dataclass
class Volume:
    """A 2D or 3D float32 image indexed [x, y, z]; flattening in Fortran order is x-fastest."""
    voxels: np.ndarray
    source_scaling: bool = False
    pixdim: Tuple[float, float, float] = field(default=(1.0, 1.0, 1.0))

    def __post_init__(self):
        voxels = np.asarray(self.voxels, dtype=np.float32)
        if voxels.ndim == 2:
            voxels = voxels[:, :, None]
        if voxels.ndim != 3:
            raise PreconditionError(f"Volume expects 2D or 3D voxels, got shape {voxels.shape}")
        self.voxels = voxels

    @property
    def extents(self) -> Tuple[int, int, int]:
        return tuple(int(e) for e in self.voxels.shape)


def _unpack_fields(buffer: bytes, byteorder: str) -> Dict[str, object]:
    values = struct.unpack(byteorder + NIFTI1_STRUCT_FORMAT, buffer[:HEADER_SIZE])
    fields: Dict[str, object] = {}
    position = 0
    for code, name in NIFTI1_FIELDS:
        count = int(code[:-1]) if code[:-1] and code[-1] != 's' else 1
        if count > 1:
            fields[name] = tuple(values[position:position + count])
        else:
            fields[name] = values[position]
        position += count
    return fields


def parse_header(buffer: bytes) -> NiftiHeader:
    """Parse and validate a NIfTI-1 single-file header.

    The byte order is detected from sizeof_hdr (348 either way round).

    Args:
        buffer: At least 348 bytes starting at the header

    Returns:
        NiftiHeader

    Raises:
        CorruptHeaderError: Short buffer, bad sizeof_hdr, bitpix or dimensions
        UnsupportedFormatError: Magic other than "n+1\\0"
        UnsupportedDatatypeError: Datatype outside {2, 4, 16, 512}
    """
    if len(buffer) < HEADER_SIZE:
        raise CorruptHeaderError(f"NIfTI header needs {HEADER_SIZE} bytes, got {len(buffer)}")

    raw_size = struct.unpack('<i', buffer[:4])[0]
    if raw_size == HEADER_SIZE:
        byteorder = '<'
    elif raw_size == SWAPPED_HEADER_SIZE:
        byteorder = '>'
    else:
        raise CorruptHeaderError(f"sizeof_hdr is {raw_size} in either byte order, expected {HEADER_SIZE}")

    fields = _unpack_fields(buffer, byteorder)
    magic = fields['magic']
    if magic != SINGLE_FILE_MAGIC:
        raise UnsupportedFormatError(f"Unsupported NIfTI magic {magic!r}; only single-file 'n+1' is supported")

    datatype = int(fields['datatype'])
    if datatype not in DATATYPES:
        raise UnsupportedDatatypeError(f"Unsupported NIfTI datatype code {datatype}")
    bitpix = int(fields['bitpix'])
    if bitpix != DATATYPES[datatype][1]:
        raise CorruptHeaderError(f"bitpix {bitpix} inconsistent with datatype {datatype}")

    dim = tuple(int(d) for d in fields['dim'])
    if dim[0] not in (2, 3):
        raise CorruptHeaderError(f"dim[0] must be 2 or 3, got {dim[0]}")
    if any(extent < 1 for extent in dim[1:dim[0] + 1]):
        raise CorruptHeaderError(f"Non-positive extent in dim {dim}")

    vox_offset = float(fields['vox_offset'])
    if vox_offset < DEFAULT_VOX_OFFSET:
        raise CorruptHeaderError(f"vox_offset {vox_offset} is below {DEFAULT_VOX_OFFSET}")

    return NiftiHeader(
        dim=dim,
        datatype=datatype,
        bitpix=bitpix,
        vox_offset=vox_offset,
        scl_slope=float(fields['scl_slope']),
        scl_inter=float(fields['scl_inter']),
        pixdim=tuple(float(p) for p in fields['pixdim']),
        magic=magic,
        sizeof_hdr=HEADER_SIZE,
        byteorder=byteorder,
    )


def pack_header(header: NiftiHeader, byteorder: str = '<') -> bytes:
    """Serialize a header (plus the 4-byte empty extension flag) in the given byte order."""
    values = []
    for code, name in NIFTI1_FIELDS:
        if name == 'sizeof_hdr':
            values.append(HEADER_SIZE)
        elif name == 'dim':
            values.extend(header.dim)
        elif name == 'pixdim':
            values.extend(header.pixdim)
        elif name in ('datatype', 'bitpix', 'vox_offset', 'scl_slope', 'scl_inter', 'magic'):
            values.append(getattr(header, name))
        elif code.endswith('s'):
            values.append(b'')
        else:
            count = int(code[:-1]) if code[:-1] else 1
            values.extend([0] * count)
    return struct.pack(byteorder + NIFTI1_STRUCT_FORMAT, *values) + b'\x00' * 4


def read_volume(path: Union[str, Path], decompress: Optional[Callable[[bytes], bytes]] = None) -> Volume:
    """Read a .nii file into a float32 Volume, applying scl_slope/scl_inter when slope != 0.

    Args:
        path: File to read
        decompress: Optional hook applied to the raw bytes before parsing

    Returns:
        Volume indexed [x, y, z]
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise OSError(f"Cannot read NIfTI file {path}: {e}") from e
    if decompress is not None:
        raw = decompress(raw)

    header = parse_header(raw)
    x, y, z = header.extents
    count = x * y * z
    offset = int(header.vox_offset)
    expected = count * header.bitpix // 8
    actual = max(0, len(raw) - offset)
    if actual < expected:
        raise CorruptFileError(f"{path}: payload truncated, expected {expected} bytes, got {actual}")

    values = np.frombuffer(raw, dtype=header.numpy_dtype, count=count, offset=offset)
    voxels = values.reshape((z, y, x)).transpose(2, 1, 0).astype(np.float32)
    scaled = header.scl_slope != 0.0
    if scaled and not (header.scl_slope == 1.0 and header.scl_inter == 0.0):
        voxels = (voxels.astype(np.float64) * header.scl_slope + header.scl_inter).astype(np.float32)

    logger.debug("Read %s: extents %s, datatype %d", path, header.extents, header.datatype)
    return Volume(voxels=np.ascontiguousarray(voxels), source_scaling=scaled,
                  pixdim=tuple(header.pixdim[1:4]))


def write_volume(volume: Volume, path: Union[str, Path]) -> None:
    """Write a Volume as little-endian float32 NIfTI-1 (vox_offset 352, slope 1, inter 0)."""
    x, y, z = volume.extents
    if min(x, y, z) < 1:
        raise PreconditionError(f"Cannot write a volume with empty extents {volume.extents}")
    header = NiftiHeader(
        dim=(3, x, y, z, 1, 1, 1, 1),
        pixdim=(1.0,) + tuple(float(p) for p in volume.pixdim) + (1.0, 1.0, 1.0, 1.0),
    )
    payload = np.asarray(volume.voxels, dtype='<f4').transpose(2, 1, 0).tobytes(order='C')

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'wb') as f:
            f.write(pack_header(header, '<'))
            f.write(payload)
    except OSError as e:
        raise OSError(f"Cannot write NIfTI file {path}: {e}") from e
    logger.debug("Wrote %s: extents %s", path, volume.extents)
