"""Deterministic numerical primitives shared by the whole pipeline.

Block-structured flat vectors, block-diagonal symmetric matrices,
fixed-point quantization, and reproducible reductions.  Everything here
is pure and immutable after construction.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class StructuralError(ValueError):
    """Shape / layout mismatch between structured operands."""


class FactorizationError(ArithmeticError):
    """A block that must be SPD failed its Cholesky factorization."""


class RangeError(ValueError):
    """A value fell outside its declared fixed-point magnitude bound."""


# ---------------------------------------------------------------------------
# layouts and vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockLayout:
    """Contiguous partition of [0, d) into labelled blocks."""

    blocks: tuple[tuple[int, int, str], ...]  # (offset, size, label)
    total_dim: int

    def __post_init__(self):
        expected = 0
        seen = set()
        for offset, size, label in self.blocks:
            if offset != expected:
                raise StructuralError(
                    f"block {label!r} starts at {offset}, expected {expected}"
                )
            if size < 1:
                raise StructuralError(f"block {label!r} has size {size} < 1")
            if label in seen:
                raise StructuralError(f"duplicate block label {label!r}")
            seen.add(label)
            expected += size
        if expected != self.total_dim:
            raise StructuralError(
                f"blocks cover [0, {expected}) but total_dim is {self.total_dim}"
            )

    @classmethod
    def from_sizes(cls, sizes_and_labels) -> "BlockLayout":
        blocks = []
        offset = 0
        for size, label in sizes_and_labels:
            blocks.append((offset, int(size), label))
            offset += int(size)
        return cls(blocks=tuple(blocks), total_dim=offset)

    @property
    def labels(self) -> list[str]:
        return [label for _, _, label in self.blocks]

    def slices(self):
        for offset, size, label in self.blocks:
            yield slice(offset, offset + size), label

    def block_slice(self, label: str) -> slice:
        for offset, size, lab in self.blocks:
            if lab == label:
                return slice(offset, offset + size)
        raise KeyError(label)

    def to_json(self) -> list[dict]:
        return [
            {"offset": o, "size": s, "label": l} for o, s, l in self.blocks
        ]

    @classmethod
    def from_json(cls, entries) -> "BlockLayout":
        blocks = tuple((e["offset"], e["size"], e["label"]) for e in entries)
        total = blocks[-1][0] + blocks[-1][1] if blocks else 0
        return cls(blocks=blocks, total_dim=total)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ParamVector:
    """Flat f64 vector tied to a block layout."""

    values: np.ndarray
    layout: BlockLayout

    def __post_init__(self):
        object.__setattr__(self, "values", _freeze(self.values))
        if self.values.ndim != 1 or self.values.size != self.layout.total_dim:
            raise StructuralError(
                f"vector length {self.values.size} != layout dim "
                f"{self.layout.total_dim}"
            )
        if not np.all(np.isfinite(self.values)):
            raise StructuralError("non-finite entries in ParamVector")

    @property
    def dim(self) -> int:
        return self.layout.total_dim

    def block(self, label: str) -> np.ndarray:
        return self.values[self.layout.block_slice(label)]

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values=values, layout=self.layout)


@dataclass(frozen=True)
class BlockDiagMatrix:
    """Symmetric block-diagonal matrix stored as dense per-block arrays."""

    blocks: tuple[np.ndarray, ...]
    layout: BlockLayout

    def __post_init__(self):
        frozen = []
        for arr, (_, size, label) in zip(self.blocks, self.layout.blocks):
            arr = _freeze(arr)
            if arr.shape != (size, size):
                raise StructuralError(
                    f"block {label!r} has shape {arr.shape}, expected "
                    f"({size}, {size})"
                )
            scale = np.abs(arr).max() if arr.size else 0.0
            if np.abs(arr - arr.T).max() > 1e-12 * max(scale, 1e-300):
                raise StructuralError(f"block {label!r} is not symmetric")
            frozen.append(arr)
        if len(frozen) != len(self.layout.blocks):
            raise StructuralError("block count does not match layout")
        object.__setattr__(self, "blocks", tuple(frozen))

    def dense(self) -> np.ndarray:
        d = self.layout.total_dim
        out = np.zeros((d, d))
        for arr, (sl, _) in zip(self.blocks, self.layout.slices()):
            out[sl, sl] = arr
        return out

    def max_abs(self) -> float:
        return max((np.abs(b).max() if b.size else 0.0) for b in self.blocks)


def blockdiag_matvec(A: BlockDiagMatrix, x: ParamVector) -> ParamVector:
    """y with y^(b) = A^(b) x^(b), concatenated in layout order."""
    if A.layout != x.layout:
        raise StructuralError("matrix and vector layouts differ")
    out = np.empty(x.dim)
    for arr, (sl, _) in zip(A.blocks, A.layout.slices()):
        out[sl] = arr @ x.values[sl]
    return x.with_values(out)


def blockdiag_solve(A: BlockDiagMatrix, y: ParamVector) -> ParamVector:
    """Solve A x = y per block via Cholesky; every block must be SPD."""
    if A.layout != y.layout:
        raise StructuralError("matrix and vector layouts differ")
    out = np.empty(y.dim)
    for arr, (sl, label) in zip(A.blocks, A.layout.slices()):
        try:
            c = cho_factor(arr, lower=True)
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(
                f"block {label!r} is not SPD: {exc}"
            ) from exc
        out[sl] = cho_solve(c, y.values[sl])
    return y.with_values(out)


# ---------------------------------------------------------------------------
# fixed point
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedVector:
    """Signed integers with f fractional bits, bounded by |x| <= bound."""

    ints: np.ndarray
    frac_bits: int
    bound: float

    def __post_init__(self):
        ints = np.ascontiguousarray(self.ints, dtype=np.int64)
        ints.setflags(write=False)
        object.__setattr__(self, "ints", ints)
        limit = self.bound * 2.0**self.frac_bits
        if ints.size and np.abs(ints).max() > limit:
            raise RangeError("integer magnitude exceeds declared bound")

    def dequantize(self) -> np.ndarray:
        return self.ints.astype(np.float64) * 2.0 ** (-self.frac_bits)


def quantize(x: np.ndarray, frac_bits: int, bound: float) -> FixedVector:
    """Round-half-to-even quantization of in-range values."""
    if frac_bits > 40:
        raise ValueError("frac_bits must be <= 40")
    x = np.asarray(x, dtype=np.float64).ravel()
    over = np.abs(x) > bound
    if over.any():
        idx = int(np.argmax(over))
        raise RangeError(f"|x[{idx}]| = {abs(x[idx])} exceeds bound {bound}")
    ints = np.rint(x * 2.0**frac_bits).astype(np.int64)
    return FixedVector(ints=ints, frac_bits=frac_bits, bound=bound)


def fixed_point_codec(
    x: ParamVector, frac_bits: int, bound: float
) -> FixedVector:
    return quantize(x.values, frac_bits, bound)


def dequantize(fv: FixedVector, layout: BlockLayout) -> ParamVector:
    return ParamVector(values=fv.dequantize(), layout=layout)


# ---------------------------------------------------------------------------
# deterministic reductions
# ---------------------------------------------------------------------------

_CHUNK = 1024


def _pairwise(a: np.ndarray) -> np.ndarray:
    # reduce along axis 0 in a fixed binary-tree order
    while a.shape[0] > 1:
        n = a.shape[0]
        even = a[0 : n - (n % 2) : 2] + a[1::2]
        if n % 2:
            a = np.concatenate([even, a[-1:]], axis=0)
        else:
            a = even
    return a[0]


def tree_sum(a: np.ndarray, axis: int = 0) -> np.ndarray:
    """Fixed-chunk pairwise summation; bit-identical across runs."""
    a = np.moveaxis(np.asarray(a, dtype=np.float64), axis, 0)
    if a.shape[0] == 0:
        return np.zeros(a.shape[1:])
    chunks = [
        _pairwise(a[i : i + _CHUNK]) for i in range(0, a.shape[0], _CHUNK)
    ]
    return _pairwise(np.stack(chunks, axis=0))


def tree_mean(a: np.ndarray, axis: int = 0) -> np.ndarray:
    n = np.asarray(a).shape[axis]
    return tree_sum(a, axis=axis) / n


# ---------------------------------------------------------------------------
# digests and the .pvec container
# ---------------------------------------------------------------------------


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def save_pvec(path: str, v: ParamVector) -> str:
    """Write manifest JSON at `path` and the f64 blob at `path + '.bin'`."""
    blob = v.values.astype("<f8").tobytes()
    manifest = {
        "dtype": "f64",
        "dim": v.dim,
        "layout": v.layout.to_json(),
        "sha256": sha256_hex(blob),
    }
    with open(path + ".bin", "wb") as fh:
        fh.write(blob)
    with open(path, "wb") as fh:
        fh.write(canonical_json(manifest))
    return manifest["sha256"]


def load_pvec(path: str) -> ParamVector:
    with open(path, "rb") as fh:
        manifest = json.loads(fh.read())
    with open(path + ".bin", "rb") as fh:
        blob = fh.read()
    if sha256_hex(blob) != manifest["sha256"]:
        raise StructuralError(f"blob digest mismatch for {path}")
    values = np.frombuffer(blob, dtype="<f8")
    layout = BlockLayout.from_json(manifest["layout"])
    return ParamVector(values=values, layout=layout)


def save_blockdiag(path: str, m: BlockDiagMatrix) -> str:
    blob = b"".join(b.astype("<f8").tobytes() for b in m.blocks)
    manifest = {
        "dtype": "f64",
        "kind": "blockdiag",
        "dim": m.layout.total_dim,
        "layout": m.layout.to_json(),
        "sha256": sha256_hex(blob),
    }
    with open(path + ".bin", "wb") as fh:
        fh.write(blob)
    with open(path, "wb") as fh:
        fh.write(canonical_json(manifest))
    return manifest["sha256"]


def load_blockdiag(path: str) -> BlockDiagMatrix:
    with open(path, "rb") as fh:
        manifest = json.loads(fh.read())
    if manifest.get("kind") != "blockdiag":
        raise StructuralError(f"{path} is not a blockdiag container")
    with open(path + ".bin", "rb") as fh:
        blob = fh.read()
    if sha256_hex(blob) != manifest["sha256"]:
        raise StructuralError(f"blob digest mismatch for {path}")
    layout = BlockLayout.from_json(manifest["layout"])
    blocks = []
    pos = 0
    for _, size, _ in layout.blocks:
        count = size * size
        arr = np.frombuffer(
            blob, dtype="<f8", count=count, offset=pos
        ).reshape(size, size)
        blocks.append(arr)
        pos += count * 8
    return BlockDiagMatrix(blocks=tuple(blocks), layout=layout)
