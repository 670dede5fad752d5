from io import BytesIO

import numpy as np
from parse import parse
from scipy.io import mmread, mmwrite


TENSOR_HEADER = "dims: {:d} {:d} {:d}"


def soft_threshold(v, t):
    """Elementwise soft-thresholding, the proximal map of t*|.|.

    Args:
        v: real array
        t: threshold, scalar or array broadcastable to v

    Returns:
        sign(v) * max(|v| - t, 0)
    """
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def unfold(X, mode):
    """Mode-n unfolding with the mode-(n+1) index running fastest."""
    return np.reshape(np.moveaxis(X, mode, 0), (X.shape[mode], -1), order="F")


def fold(M, mode, shape):
    full = [shape[mode]] + [s for k, s in enumerate(shape) if k != mode]
    return np.moveaxis(np.reshape(M, full, order="F"), 0, mode)


def blocks_label(indices):
    return "+".join(str(int(i)) for i in indices)


def parse_blocks_label(label):
    if label is None or (isinstance(label, float) and np.isnan(label)):
        return ()
    return tuple(int(s) for s in str(label).split("+") if s != "")


def _as_dense(a):
    if hasattr(a, "toarray"):
        a = a.toarray()
    return np.asarray(a)


def read_matrix(path):
    """Read a dense MatrixMarket array file."""
    with open(path, "rb") as f:
        return _as_dense(mmread(f))


def read_vector(path):
    a = read_matrix(path)
    if a.ndim == 2 and 1 in a.shape:
        return a.reshape(-1)
    raise ValueError(f"{path} holds a {a.shape} matrix, expected a vector")


def write_matrix(path, a, comment=""):
    """Write a dense matrix (or a vector, as one column) in MatrixMarket array format."""
    a = np.asarray(a)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    field = "complex" if np.iscomplexobj(a) else "real"
    with open(path, "wb") as f:
        mmwrite(f, a, comment=comment, field=field, precision=17)


def read_tensor(path):
    """Read a third-order tensor: a `dims:` header line, then the mode-1 unfolding."""
    with open(path, "rb") as f:
        header = f.readline().decode("utf-8").strip()
        body = f.read()
    dims = parse(TENSOR_HEADER, header)
    if dims is None:
        raise ValueError(f"{path}: bad tensor header {header!r}, expected 'dims: d1 d2 d3'")
    shape = tuple(dims.fixed)
    M = _as_dense(mmread(BytesIO(body)))
    if M.shape != (shape[0], shape[1] * shape[2]):
        raise ValueError(f"{path}: unfolding has shape {M.shape}, header says {shape}")
    return fold(M, 0, shape)


def write_tensor(path, X, comment=""):
    X = np.asarray(X)
    if X.ndim != 3:
        raise ValueError("Only third-order tensors are supported")
    buf = BytesIO()
    field = "complex" if np.iscomplexobj(X) else "real"
    mmwrite(buf, unfold(X, 0), comment=comment, field=field, precision=17)
    with open(path, "wb") as f:
        f.write((TENSOR_HEADER.format(*X.shape) + "\n").encode("utf-8"))
        f.write(buf.getvalue())
