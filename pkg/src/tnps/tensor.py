"""Dense tensor operations: labelled pairwise contraction, mode permutation,
tensorization utilities and the .tnsb/.tns file formats.

Tensors are plain numpy float64 arrays in C (row-major) order; the flat value
sequence therefore has the last index varying fastest, which is also the
on-disk order of both file formats.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .validation import check_tensor

__all__ = [
    "IndexLabel",
    "contract_pair",
    "permute_modes",
    "frobenius_norm",
    "tensorize_reshape",
    "tensorize_vdt",
    "inverse_vdt",
    "save_tnsb",
    "load_tnsb",
    "save_tns",
    "load_tns",
]


@dataclass(frozen=True)
class IndexLabel:
    """Names one tensor axis; two occurrences of the same id get summed."""

    id: object
    dim: int


def contract_pair(a, a_labels, b, b_labels):
    """Contract two tensors over every label id they share (Einstein summation).

    Returns the contracted tensor together with its remaining labels, ordered
    a-remainder first, then b-remainder. No shared ids means outer product;
    all ids shared means a full pairing down to a scalar.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a_labels = list(a_labels)
    b_labels = list(b_labels)
    if len(a_labels) != a.ndim or len(b_labels) != b.ndim:
        raise ValueError("label count does not match tensor order")
    for labels, t, side in ((a_labels, a, "a"), (b_labels, b, "b")):
        ids = [lab.id for lab in labels]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate label id within operand {side}")
        for ax, lab in enumerate(labels):
            if lab.dim != t.shape[ax]:
                raise ValueError(f"label dim {lab.dim} != axis dim {t.shape[ax]}")

    b_pos = {lab.id: i for i, lab in enumerate(b_labels)}
    a_axes, b_axes = [], []
    for i, lab in enumerate(a_labels):
        j = b_pos.get(lab.id)
        if j is None:
            continue
        if b_labels[j].dim != lab.dim:
            raise ValueError(f"shared id {lab.id!r} has mismatched dims "
                             f"{lab.dim} vs {b_labels[j].dim}")
        a_axes.append(i)
        b_axes.append(j)

    out = np.tensordot(a, b, axes=(a_axes, b_axes)) if a_axes else \
        np.tensordot(a, b, axes=0)
    out_labels = [lab for i, lab in enumerate(a_labels) if i not in set(a_axes)]
    out_labels += [lab for j, lab in enumerate(b_labels) if j not in set(b_axes)]
    return out, out_labels


def permute_modes(x, p):
    """Send source mode n to destination position p[n].

    Output shape[k] = x.shape[p^-1(k)] and Y[i_{p(0)}, ..., i_{p(N-1)}] =
    X[i_0, ..., i_N-1].
    """
    x = np.asarray(x)
    p = tuple(int(v) for v in p)
    if len(p) != x.ndim or sorted(p) != list(range(x.ndim)):
        raise ValueError(f"invalid mode permutation {p!r} for order-{x.ndim} tensor")
    inv = np.empty(len(p), dtype=np.intp)
    for n, dest in enumerate(p):
        inv[dest] = n
    return np.transpose(x, axes=inv)


def frobenius_norm(x) -> float:
    """sqrt of the sum of squared entries."""
    return float(np.linalg.norm(np.asarray(x, dtype=np.float64).ravel()))


def tensorize_reshape(data, target_shape):
    """Row-major reinterpretation of the flat values under a new shape."""
    data = np.asarray(data, dtype=np.float64)
    target_shape = tuple(int(d) for d in target_shape)
    if int(np.prod(target_shape)) != data.size:
        raise ValueError(f"cannot reshape {data.size} elements into {target_shape}")
    return np.ascontiguousarray(data).reshape(target_shape)


def _vdt_levels(side: int, block: int) -> int:
    if block < 2:
        raise ValueError("block must be >= 2")
    k, s = 0, 1
    while s < side:
        s *= block
        k += 1
    if s != side:
        raise ValueError(f"side {side} is not a power of block {block}")
    return k


def tensorize_vdt(image, block: int = 2):
    """Visual data tensorization of a square block^k x block^k image.

    Output mode n indexes the block coordinate at the n-th resolution level
    (n = 0 is the coarsest): writing row = sum_l r_l * block^(k-1-l) and
    col likewise, output index at mode l is r_l * block + c_l. Every mode has
    dimension block^2; a 256x256 image with block 2 becomes an order-8 tensor
    with all mode dimensions 4. Inverse: inverse_vdt.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError(f"expected a square 2-D image, got shape {image.shape}")
    side = image.shape[0]
    k = _vdt_levels(side, block)
    # split both axes into k base-`block` digits (most significant first),
    # interleave row/col digits per level, then merge each pair into one mode
    t = image.reshape((block,) * k + (block,) * k)
    axes = []
    for level in range(k):
        axes.extend([level, k + level])
    t = np.transpose(t, axes)
    return np.ascontiguousarray(t).reshape((block * block,) * k)


def inverse_vdt(tensor, block: int = 2):
    """Invert tensorize_vdt back to the square image."""
    tensor = np.asarray(tensor, dtype=np.float64)
    k = tensor.ndim
    if tensor.shape != (block * block,) * k:
        raise ValueError(f"expected all mode dims == {block * block}, got {tensor.shape}")
    t = tensor.reshape((block,) * (2 * k))
    axes = [2 * level for level in range(k)] + [2 * level + 1 for level in range(k)]
    t = np.transpose(t, axes)
    side = block ** k
    return np.ascontiguousarray(t).reshape(side, side)


_TNSB_MAGIC = b"TNSB"
_TNSB_VERSION = 1


def save_tnsb(x, path) -> None:
    """Binary tensor format: magic 'TNSB', u8 version=1, u64-LE order N,
    N u64-LE dims, then float64-LE values row-major."""
    x = check_tensor(x)
    with open(path, "wb") as fh:
        fh.write(_TNSB_MAGIC)
        fh.write(struct.pack("<B", _TNSB_VERSION))
        fh.write(struct.pack("<Q", x.ndim))
        fh.write(struct.pack(f"<{x.ndim}Q", *x.shape))
        fh.write(x.astype("<f8", copy=False).tobytes(order="C"))


def load_tnsb(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _TNSB_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<B", fh.read(1))
        if version != _TNSB_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        (order,) = struct.unpack("<Q", fh.read(8))
        if order == 0 or order > 64:
            raise ValueError(f"{path}: implausible tensor order {order}")
        dims = struct.unpack(f"<{order}Q", fh.read(8 * order))
        count = int(np.prod(dims))
        raw = fh.read(8 * count)
        if len(raw) != 8 * count:
            raise ValueError(f"{path}: truncated value section")
        data = np.frombuffer(raw, dtype="<f8", count=count)
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after values")
    return np.ascontiguousarray(data.astype(np.float64).reshape(dims))


def save_tns(x, path) -> None:
    """Text tensor format: line 1 = N, line 2 = dims, then values row-major."""
    x = check_tensor(x)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{x.ndim}\n")
        fh.write(" ".join(str(d) for d in x.shape) + "\n")
        fh.write(" ".join(repr(float(v)) for v in x.ravel(order="C")) + "\n")


def load_tns(path) -> np.ndarray:
    text = Path(path).read_text(encoding="ascii").split()
    if not text:
        raise ValueError(f"{path}: empty tensor file")
    order = int(text[0])
    if order < 1 or len(text) < 1 + order:
        raise ValueError(f"{path}: malformed header")
    dims = tuple(int(v) for v in text[1:1 + order])
    values = np.array([float(v) for v in text[1 + order:]], dtype=np.float64)
    if values.size != int(np.prod(dims)):
        raise ValueError(f"{path}: expected {int(np.prod(dims))} values, got {values.size}")
    return values.reshape(dims)


def load_tensor(path) -> np.ndarray:
    """Dispatch on extension: .tnsb binary, anything else text."""
    return load_tnsb(path) if str(path).endswith(".tnsb") else load_tns(path)


def save_tensor(x, path) -> None:
    if str(path).endswith(".tnsb"):
        save_tnsb(x, path)
    else:
        save_tns(x, path)
