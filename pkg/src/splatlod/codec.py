"""Truncatable layered container for hierarchical Gaussian models (.gode).

Header (all little-endian):
  magic "GODE" | version u16 | L u16 | per-layer counts u32[L] |
  bit codes u8[5] for (position, sh, opacity, scale, rotation) |
  affine channel count u16 | (scale f32, zero_point f32) per channel |
  LZMA preset u8 | compressed layer lengths u64[L]
followed by the L layer blobs. Layer l packs the Gaussians of G_0 (l = 0)
or E_l, channel-planar within each attribute (all x, all y, ... then SH
channel planes, ...): positions f32, SH u8 (affine), opacity/scale/rotation
f16, each layer LZMA-compressed independently so a byte prefix ending at a
layer boundary decodes without recompression. Empty layers are stored as
zero-length blobs.

Quantization is the only lossy step: decoding reproduces the frozen
quantizer image of the encoded model bit-exactly.
"""

from __future__ import annotations

import io
import logging
import lzma
import struct
from dataclasses import dataclass, field

import numpy as np

from .hierarchy import Hierarchy
from .model import GaussianModel, SH_CHANNELS, subset
from .quant import QuantizationSpec, QuantParams, affine_quantize

MAGIC = b"GODE"
VERSION = 1
LZMA_PRESET = 6

logger = logging.getLogger(__name__)


@dataclass
class GodeStream:
    counts: list[int]
    spec: QuantizationSpec
    params: QuantParams
    layers: list[bytes]
    version: int = VERSION
    preset: int = LZMA_PRESET
    clipped: int = 0  # encode-time out-of-range SH values (not serialized)

    @property
    def levels(self) -> int:
        return len(self.counts)

    def cumulative_counts(self) -> list[int]:
        return list(np.cumsum(self.counts))

    def header_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<HH", self.version, self.levels))
        buf.write(struct.pack(f"<{self.levels}I", *self.counts))
        codes = (self.spec.position_bits, self.spec.sh_bits, self.spec.opacity_bits,
                 self.spec.scale_bits, self.spec.rotation_bits)
        buf.write(struct.pack("<5B", *codes))
        n_ch = self.params.n_channels
        buf.write(struct.pack("<H", n_ch))
        pairs = np.empty(2 * n_ch, dtype="<f4")
        pairs[0::2] = self.params.scale
        pairs[1::2] = self.params.zero_point
        buf.write(pairs.tobytes())
        buf.write(struct.pack("<B", self.preset))
        buf.write(struct.pack(f"<{self.levels}Q", *[len(b) for b in self.layers]))
        return buf.getvalue()

    def to_bytes(self) -> bytes:
        return self.header_bytes() + b"".join(self.layers)


class GodeFormatError(ValueError):
    pass


def _attribute_dtypes(spec: QuantizationSpec):
    """(name, dtype, channel count) for the planar layout, in file order."""
    def store(bits):
        return {0: "<f4", 8: "u1", 16: "<f2"}[bits]
    return [
        ("positions", "<f4", 3),
        ("sh", store(spec.sh_bits), SH_CHANNELS),
        ("opacity", store(spec.opacity_bits), 1),
        ("scale", store(spec.scale_bits), 3),
        ("rotation", store(spec.rotation_bits), 4),
    ]


def _pack_layer(model: GaussianModel, spec: QuantizationSpec,
                params: QuantParams) -> tuple[bytes, int]:
    """Planar packing of one layer; returns (raw bytes, clipped count)."""
    n = model.n
    clipped = 0
    planes = [model.positions.astype("<f4").T]
    if spec.sh_bits == 8:
        flat = model.sh_coeffs.reshape(n, SH_CHANNELS)
        raw_codes = np.rint(flat / params.scale + params.zero_point)
        clipped = int(np.count_nonzero(
            (raw_codes < params.q_min) | (raw_codes > params.q_max)))
        codes = affine_quantize(flat, params)
        planes.append(codes.astype("u1").T)
    else:
        planes.append(model.sh_coeffs.reshape(n, SH_CHANNELS).astype("<f4").T)
    for values, bits in ((model.opacity_logit.reshape(n, 1), spec.opacity_bits),
                         (model.scale_log.reshape(n, 3), spec.scale_bits),
                         (model.rotation.reshape(n, 4), spec.rotation_bits)):
        with np.errstate(over="ignore"):  # overflow raises explicitly below
            stored = values.astype("<f2" if bits == 16 else "<f4")
        if not np.all(np.isfinite(stored)):
            raise ValueError("value overflows the 16-bit storage range")
        planes.append(stored.T)
    raw = b"".join(np.ascontiguousarray(p).tobytes() for p in planes)
    return raw, clipped


def _unpack_layer(raw: bytes, count: int, spec: QuantizationSpec,
                  params: QuantParams) -> GaussianModel:
    fields_out = {}
    offset = 0
    for name, dtype, channels in _attribute_dtypes(spec):
        width = np.dtype(dtype).itemsize
        nbytes = count * channels * width
        if offset + nbytes > len(raw):
            raise GodeFormatError(
                f"layer too short: attribute {name} needs {nbytes} bytes")
        arr = np.frombuffer(raw[offset:offset + nbytes], dtype=dtype)
        arr = arr.reshape(channels, count).T
        offset += nbytes
        if name == "sh" and spec.sh_bits == 8:
            values = params.scale * (arr.astype(np.float64) - params.zero_point)
        else:
            values = arr.astype(np.float64)
        fields_out[name] = values
    if offset != len(raw):
        raise GodeFormatError(f"layer has {len(raw) - offset} trailing bytes")
    return GaussianModel(
        positions=fields_out["positions"],
        sh_coeffs=fields_out["sh"].reshape(count, 16, 3),
        opacity_logit=fields_out["opacity"].reshape(count),
        scale_log=fields_out["scale"],
        rotation=fields_out["rotation"],
    )


def encode(model: GaussianModel, hierarchy: Hierarchy, spec: QuantizationSpec,
           params: QuantParams) -> GodeStream:
    """Pack each layer with the frozen quantization parameters.

    SH values outside a frozen channel range are clamped to the range edge
    and counted on the returned stream's `clipped` field.
    """
    if hierarchy.source_count != model.n:
        raise ValueError(
            f"hierarchy built for {hierarchy.source_count} Gaussians, "
            f"model has {model.n}")
    if spec.sh_bits == 8 and params.n_channels != SH_CHANNELS:
        raise ValueError(f"need {SH_CHANNELS} affine channels, got {params.n_channels}")
    layer_indices = [hierarchy.base] + list(hierarchy.enhancements)
    layers = []
    counts = []
    clipped = 0
    for indices in layer_indices:
        part = subset(model, indices)
        counts.append(part.n)
        if part.n == 0:
            layers.append(b"")
            continue
        raw, n_clip = _pack_layer(part, spec, params)
        clipped += n_clip
        layers.append(lzma.compress(raw, preset=LZMA_PRESET))
    if clipped:
        logger.warning("encode clamped %d SH values outside frozen ranges", clipped)
    return GodeStream(counts=counts, spec=spec, params=params, layers=layers,
                      clipped=clipped)


def _parse_header(data: bytes):
    if len(data) < 8:
        raise GodeFormatError("stream shorter than the fixed header")
    if data[:4] != MAGIC:
        raise GodeFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    version, levels = struct.unpack_from("<HH", data, 4)
    if version != VERSION:
        raise GodeFormatError(f"unknown format version {version}")
    offset = 8
    need = levels * 4 + 5 + 2
    if len(data) < offset + need:
        raise GodeFormatError("truncated header")
    counts = list(struct.unpack_from(f"<{levels}I", data, offset))
    offset += levels * 4
    codes = struct.unpack_from("<5B", data, offset)
    offset += 5
    spec = QuantizationSpec(sh_bits=codes[1], opacity_bits=codes[2],
                            scale_bits=codes[3], rotation_bits=codes[4])
    (n_ch,) = struct.unpack_from("<H", data, offset)
    offset += 2
    if len(data) < offset + 8 * n_ch + 1 + 8 * levels:
        raise GodeFormatError("truncated header")
    pairs = np.frombuffer(data, dtype="<f4", count=2 * n_ch, offset=offset)
    offset += 8 * n_ch
    if n_ch:
        params = QuantParams(pairs[0::2].astype(np.float64),
                             pairs[1::2].astype(np.float64))
    else:
        params = QuantParams(np.ones(0), np.zeros(0))
    (preset,) = struct.unpack_from("<B", data, offset)
    offset += 1
    lengths = list(struct.unpack_from(f"<{levels}Q", data, offset))
    offset += 8 * levels
    return counts, spec, params, preset, lengths, offset


def _stream_from_bytes(data: bytes, need_level: int) -> GodeStream:
    counts, spec, params, preset, lengths, offset = _parse_header(data)
    if not 0 <= need_level < len(counts):
        raise ValueError(f"level {need_level} out of range for {len(counts)} layers")
    layers = []
    for l in range(need_level + 1):
        end = offset + lengths[l]
        if len(data) < end:
            raise GodeFormatError(
                f"stream prefix ends inside layer {l}: need {end} bytes, "
                f"have {len(data)}")
        layers.append(data[offset:end])
        offset = end
    # Levels beyond the requested one may be absent from the prefix.
    layers += [b""] * (len(counts) - len(layers))
    return GodeStream(counts=counts, spec=spec, params=params, layers=layers,
                      preset=preset)


def decode(stream, level: int) -> GaussianModel:
    """Model of the first `level + 1` layers concatenated in layer order;
    accepts a GodeStream or raw prefix bytes."""
    if isinstance(stream, (bytes, bytearray, memoryview)):
        stream = _stream_from_bytes(bytes(stream), level)
    if not 0 <= level < stream.levels:
        raise ValueError(f"level {level} out of range for {stream.levels} layers")
    parts = []
    for l in range(level + 1):
        count = stream.counts[l]
        if count == 0:
            continue
        blob = stream.layers[l]
        try:
            raw = lzma.decompress(blob)
        except lzma.LZMAError as exc:
            raise GodeFormatError(f"layer {l} payload corrupt: {exc}") from exc
        parts.append(_unpack_layer(raw, count, stream.spec, stream.params))
    if not parts:
        from .model import empty_model
        return empty_model()
    model = GaussianModel(
        np.concatenate([p.positions for p in parts]),
        np.concatenate([p.sh_coeffs for p in parts]),
        np.concatenate([p.opacity_logit for p in parts]),
        np.concatenate([p.scale_log for p in parts]),
        np.concatenate([p.rotation for p in parts]),
    )
    model.validate()
    return model


def truncate(stream: GodeStream, level: int) -> bytes:
    """Header plus layers 0..level; the size of this prefix is the stored
    footprint of that level of detail."""
    if not 0 <= level < stream.levels:
        raise ValueError(f"level {level} out of range for {stream.levels} layers")
    return stream.header_bytes() + b"".join(stream.layers[:level + 1])


def write_gode(stream: GodeStream, path) -> None:
    with open(path, "wb") as fh:
        fh.write(stream.to_bytes())


def read_gode(path) -> GodeStream:
    with open(path, "rb") as fh:
        data = fh.read()
    counts, spec, params, preset, lengths, offset = _parse_header(data)
    layers = []
    for l, length in enumerate(lengths):
        end = offset + length
        if len(data) < end:
            raise GodeFormatError(f"file ends inside layer {l}")
        layers.append(data[offset:end])
        offset = end
    return GodeStream(counts=counts, spec=spec, params=params, layers=layers,
                      preset=preset)
