"""File formats: Matrix Market matrices, plain-text vectors, atomic writes.

Reading is strict and reports the offending line; writing goes through
:func:`scipy.io.mmwrite` with 17 significant digits so that a save/load
round trip is exact.
"""

import io
import os
import tempfile
from pathlib import Path

import numpy as np
import scipy.io

from .systems import BilinearSystem

SYSTEM_FILES = {"A": "A.mtx", "N": "N.mtx", "b": "b.txt", "c": "c.txt"}
#: Sign relating the mirrored entry ``(j, i)`` to a stored ``(i, j)``; ``None`` for general.
_SYMMETRY_SIGN = {"general": None, "symmetric": 1.0, "skew-symmetric": -1.0}


class FormatError(ValueError):
    """A matrix or vector file could not be parsed."""

    def __init__(self, path, line, message):
        where = f"{path}:{line}" if line else str(path)
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


def _data_lines(path, text):
    for num, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if stripped and not stripped.startswith("%"):
            yield num, stripped


def _float(path, num, token):
    try:
        return float(token)
    except ValueError:
        raise FormatError(path, num, f"cannot parse {token!r} as a real number") from None


def _int(path, num, token, what):
    try:
        value = int(token)
    except ValueError:
        raise FormatError(path, num, f"{what} {token!r} is not an integer") from None
    return value


def read_matrix_market(path):
    """Read a real Matrix Market file (array or coordinate) as a dense array.

    General, symmetric and skew-symmetric storage are accepted.
    """
    path = Path(path)
    text = path.read_text()
    lines = text.splitlines()
    if not lines:
        raise FormatError(path, 1, "empty file")
    header = lines[0].split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket" or header[1].lower() != "matrix":
        raise FormatError(path, 1, "missing '%%MatrixMarket matrix <format> real general' header")
    fmt, field, symmetry = (h.lower() for h in header[2:])
    if fmt not in ("array", "coordinate"):
        raise FormatError(path, 1, f"unsupported format {fmt!r}")
    if field not in ("real", "integer", "double"):
        raise FormatError(path, 1, f"only real matrices are supported, got field {field!r}")
    if symmetry not in _SYMMETRY_SIGN:
        raise FormatError(path, 1, f"unsupported symmetry {symmetry!r}")
    sign = _SYMMETRY_SIGN[symmetry]

    body = _data_lines(path, "\n".join(lines[1:]))
    body = ((num + 1, line) for num, line in body)
    try:
        num, size_line = next(body)
    except StopIteration:
        raise FormatError(path, len(lines), "missing size line") from None
    dims = size_line.split()
    if fmt == "array":
        if len(dims) != 2:
            raise FormatError(path, num, "array size line needs 'rows cols'")
        m, n = (_int(path, num, t, "dimension") for t in dims)
        if sign is not None and m != n:
            raise FormatError(path, num, f"{symmetry} matrix must be square, got {m}x{n}")
        values = []
        for num, line in body:
            toks = line.split()
            if len(toks) != 1:
                raise FormatError(path, num, f"expected one value, found {len(toks)}")
            values.append(_float(path, num, toks[0]))
        if sign is None:
            if len(values) != m * n:
                raise FormatError(path, num, f"expected {m * n} values, found {len(values)}")
            return np.array(values, dtype=float).reshape((m, n), order="F")
        # Packed lower triangle by columns (strictly lower when skew-symmetric).
        k = 0 if sign > 0 else 1
        rows, cols = np.tril_indices(n, -k)
        order = np.lexsort((rows, cols))
        if len(values) != order.size:
            raise FormatError(path, num, f"expected {order.size} values, found {len(values)}")
        out = np.zeros((n, n))
        out[rows[order], cols[order]] = values
        return out + sign * np.tril(out, -1).T

    if len(dims) != 3:
        raise FormatError(path, num, "coordinate size line needs 'rows cols nnz'")
    m, n, nnz = (_int(path, num, t, "size field") for t in dims)
    if sign is not None and m != n:
        raise FormatError(path, num, f"{symmetry} matrix must be square, got {m}x{n}")
    out = np.zeros((m, n))
    count = 0
    for num, line in body:
        toks = line.split()
        if len(toks) != 3:
            raise FormatError(path, num, f"expected 'row col value', found {len(toks)} fields")
        i = _int(path, num, toks[0], "row index")
        j = _int(path, num, toks[1], "column index")
        if not (1 <= i <= m and 1 <= j <= n):
            raise FormatError(path, num, f"index ({i}, {j}) outside a {m}x{n} matrix")
        if sign is not None and j > i:
            raise FormatError(path, num, f"entry ({i}, {j}) above the diagonal of a {symmetry} file")
        value = _float(path, num, toks[2])
        out[i - 1, j - 1] += value
        if sign is not None and i != j:
            out[j - 1, i - 1] += sign * value
        count += 1
    if count != nnz:
        raise FormatError(path, num, f"header promises {nnz} entries, found {count}")
    return out


def read_vector(path):
    """Read whitespace-separated real values (normally one per line)."""
    path = Path(path)
    values = []
    for num, line in _data_lines(path, path.read_text()):
        if line.startswith("#"):
            continue
        values.extend(_float(path, num, tok) for tok in line.split())
    if not values:
        raise FormatError(path, 0, "no values found")
    return np.array(values)


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` via a temporary file and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def matrix_market_text(M):
    buf = io.BytesIO()
    scipy.io.mmwrite(buf, np.asarray(M, dtype=float), precision=17, symmetry="general")
    return buf.getvalue().decode("ascii")


def vector_text(v):
    return "".join(format(float(x), ".17g") + "\n" for x in np.ravel(v))


def write_matrix_market(path, M):
    atomic_write_text(path, matrix_market_text(M))


def write_vector(path, v):
    atomic_write_text(path, vector_text(v))


def load_system(path_A, path_N, path_b, path_c):
    """Load and dimension-check a bilinear system from four files."""
    A = read_matrix_market(path_A)
    N = read_matrix_market(path_N)
    b = read_vector(path_b)
    c = read_vector(path_c)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"{path_A}: A must be square, got {A.shape[0]}x{A.shape[1]}")
    if N.shape != (n, n):
        raise ValueError(f"{path_N}: N is {N.shape[0]}x{N.shape[1]}, expected {n}x{n}")
    if b.size != n:
        raise ValueError(f"{path_b}: b has length {b.size}, expected {n}")
    if c.size != n:
        raise ValueError(f"{path_c}: c has length {c.size}, expected {n}")
    return BilinearSystem(A, N, b, c)


def load_system_dir(directory, names=SYSTEM_FILES):
    d = Path(directory)
    return load_system(*(d / names[k] for k in "ANbc"))


def save_system(directory, sys, names=SYSTEM_FILES):
    """Write ``A``, ``N`` (Matrix Market) and ``b``, ``c`` (text) into ``directory``."""
    d = Path(directory)
    write_matrix_market(d / names["A"], sys.A)
    write_matrix_market(d / names["N"], sys.N)
    write_vector(d / names["b"], sys.b)
    write_vector(d / names["c"], sys.c)
    return [d / names[k] for k in "ANbc"]
