"""Binary model container.

Layout (all integers and floats little-endian)::

    magic            5 bytes   b"DPKAN"
    version          u32       FORMAT_VERSION
    n_layers         u32
    has_stats        u8        1 if feature standardization stats follow the layers
    per layer:
      kind           u8        0 linear, 1 kan, 2 fasterkan
      n_in, n_out    u32, u32
      linear:        activation u8 (0 none, 1 relu), bias u8
      kan:           degree u32, grid_size u32, lo f64, hi f64
      fasterkan:     num_grids u32, grid_min f64, grid_max f64,
                     inv_denominator f64, layer_norm u8, bias u8
      n_values       u64
      values         n_values x f64, the layer's flattened parameters
    if has_stats:
      d              u32
      mean, std      d x f64 each

Trailing bytes are rejected.
"""

from __future__ import annotations

import struct

import numpy as np

from dpkan.basis import BSplineGrid, RswafGrid
from dpkan.layers import FasterKanLayer, KanLayer, LinearLayer, Model
from dpkan.numerics import ShapeError

MAGIC = b"DPKAN"
FORMAT_VERSION = 1

_KIND_CODES = {"linear": 0, "kan": 1, "fasterkan": 2}
_ACTIVATIONS = ("none", "relu")


class ModelFormatError(ValueError):
    """Base class for unreadable model files."""


class BadMagicError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class TruncatedModelError(ModelFormatError):
    pass


class ModelShapeError(ModelFormatError, ShapeError):
    pass


def serialize_model(model: Model) -> bytes:
    out = [MAGIC, struct.pack("<IIB", FORMAT_VERSION, len(model.layers), model.feature_mean is not None)]
    for layer in model.layers:
        out.append(struct.pack("<BII", _KIND_CODES[layer.kind], layer.n_in, layer.n_out))
        if layer.kind == "linear":
            out.append(struct.pack("<BB", _ACTIVATIONS.index(layer.activation), layer.has_bias))
        elif layer.kind == "kan":
            g = layer.grid
            out.append(struct.pack("<IIdd", g.degree, g.grid_size, g.lo, g.hi))
        else:
            g = layer.grid
            out.append(
                struct.pack(
                    "<IdddBB", g.num_grids, g.grid_min, g.grid_max, g.inv_denominator, layer.layer_norm, layer.has_bias
                )
            )
        values = np.concatenate([p.ravel() for p in layer.params()])
        out.append(struct.pack("<Q", values.size))
        out.append(values.astype("<f8").tobytes())
    if model.feature_mean is not None:
        out.append(struct.pack("<I", model.feature_mean.size))
        out.append(model.feature_mean.astype("<f8").tobytes())
        out.append(model.feature_std.astype("<f8").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedModelError(f"model file truncated at byte {len(self.data)} (needed {self.pos + n})")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, n):
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)


def _read_layer(r: _Reader):
    code, n_in, n_out = r.unpack("<BII")
    if code == 0:
        act, bias = r.unpack("<BB")
        if act >= len(_ACTIVATIONS):
            raise ModelFormatError(f"unknown activation code {act}")
        layer = LinearLayer(n_in, n_out, activation=_ACTIVATIONS[act], bias=bool(bias))
    elif code == 1:
        degree, grid_size, lo, hi = r.unpack("<IIdd")
        layer = KanLayer(n_in, n_out, grid=BSplineGrid(degree, grid_size, lo, hi))
    elif code == 2:
        num_grids, gmin, gmax, inv_den, ln, bias = r.unpack("<IdddBB")
        grid = RswafGrid(gmin, gmax, num_grids, inv_den)
        layer = FasterKanLayer(n_in, n_out, grid=grid, layer_norm=bool(ln), bias=bool(bias))
    else:
        raise ModelFormatError(f"unknown layer kind code {code}")
    (n_values,) = r.unpack("<Q")
    if n_values != layer.n_params:
        raise ModelShapeError(
            f"{layer.kind} layer {n_in}->{n_out} needs {layer.n_params} parameters, payload has {n_values}"
        )
    values = r.floats(n_values)
    i = 0
    for p in layer.params():
        p[...] = values[i : i + p.size].reshape(p.shape)
        i += p.size
    return layer


def deserialize_model(data: bytes) -> Model:
    r = _Reader(data)
    if bytes(r.take(len(MAGIC))) != MAGIC:
        raise BadMagicError("not a DPKAN model file (bad magic)")
    version, n_layers, has_stats = r.unpack("<IIB")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"model format version {version} is not supported (expected {FORMAT_VERSION})")
    layers = [_read_layer(r) for _ in range(n_layers)]
    mean = std = None
    if has_stats:
        (d,) = r.unpack("<I")
        mean, std = r.floats(d), r.floats(d)
        if d != layers[0].n_in:
            raise ModelShapeError(f"feature stats cover {d} inputs, first layer has {layers[0].n_in}")
    if r.pos != len(r.data):
        raise ModelFormatError(f"{len(r.data) - r.pos} trailing bytes after model payload")
    try:
        return Model(layers, feature_mean=mean, feature_std=std)
    except ShapeError as exc:
        raise ModelShapeError(str(exc)) from exc


def save_model(model: Model, path):
    with open(path, "wb") as f:
        f.write(serialize_model(model))


def load_model(path) -> Model:
    with open(path, "rb") as f:
        return deserialize_model(f.read())
