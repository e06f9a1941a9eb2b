"""Dense linear algebra over wire-labelled tensor-product spaces.

Operators are stored as dense complex matrices whose rows and columns are
indexed by ordered lists of wires.  The first wire in the list is the most
significant index (row-major composite indexing), so a matrix on wires
``[a, b]`` with dims ``(2, 3)`` has side length 6 and the composite basis
order ``|00>, |01>, |02>, |10>, ...``.

Everything here is a pure function of its inputs; no operation mutates a
``LabelledMatrix``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

# Hermiticity is accepted up to this absolute deviation, and spectra of
# nominally PSD matrices may dip this far below zero before we call them
# non-PSD.  Both are double-precision allowances for <= 1024-dim matrices.
HERMITIAN_ATOL = 1e-10
EIG_FLOOR = -1e-9

DEFAULT_RANK_RTOL = 1e-9


class Direction(str, Enum):
    INPUT = "input"
    OUTPUT = "output"


class LabelCollisionError(ValueError):
    pass


class NotPSDError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class WireSystem:
    """A single labelled subsystem: name, Hilbert dimension, and direction."""

    label: str
    dim: int
    direction: Direction

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"wire {self.label!r}: dim must be >= 1, got {self.dim}")
        object.__setattr__(self, "direction", Direction(self.direction))

    def to_json(self) -> dict:
        return {"label": self.label, "dim": self.dim, "direction": self.direction.value}

    @staticmethod
    def from_json(obj: dict) -> "WireSystem":
        return WireSystem(obj["label"], int(obj["dim"]), Direction(obj["direction"]))


def wire_dims(wires: Sequence[WireSystem]) -> tuple[int, ...]:
    return tuple(w.dim for w in wires)


def total_dim(wires: Sequence[WireSystem]) -> int:
    return int(np.prod(wire_dims(wires), dtype=np.int64)) if wires else 1


def _check_unique_labels(wires: Sequence[WireSystem]) -> None:
    labels = [w.label for w in wires]
    if len(set(labels)) != len(labels):
        dupes = sorted({x for x in labels if labels.count(x) > 1})
        raise LabelCollisionError(f"duplicate wire labels: {dupes}")


@dataclass(frozen=True, eq=False)
class LabelledMatrix:
    """Dense complex matrix with wire-labelled row and column indices."""

    entries: np.ndarray
    row_wires: tuple[WireSystem, ...]
    col_wires: tuple[WireSystem, ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.col_wires is None:
            object.__setattr__(self, "col_wires", self.row_wires)
        object.__setattr__(self, "row_wires", tuple(self.row_wires))
        object.__setattr__(self, "col_wires", tuple(self.col_wires))
        arr = np.asarray(self.entries, dtype=np.complex128)
        if arr.ndim != 2:
            raise ValueError(f"entries must be a matrix, got shape {arr.shape}")
        object.__setattr__(self, "entries", arr)
        _check_unique_labels(self.row_wires)
        _check_unique_labels(self.col_wires)
        expected = (total_dim(self.row_wires), total_dim(self.col_wires))
        if arr.shape != expected:
            raise ValueError(
                f"entries shape {arr.shape} does not match wire dims {expected}"
            )

    # -- small accessors -------------------------------------------------

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(w.label for w in self.row_wires)

    @property
    def is_square(self) -> bool:
        return wire_dims(self.row_wires) == wire_dims(self.col_wires)

    def wire(self, label: str) -> WireSystem:
        for w in self.row_wires:
            if w.label == label:
                return w
        raise KeyError(f"no wire labelled {label!r}")

    def require_operator(self) -> None:
        """Operators must carry the same wires on rows and columns."""
        if self.labels != tuple(w.label for w in self.col_wires) or not self.is_square:
            raise ValueError("operation requires matching row and column wires")

    def is_hermitian(self, atol: float = HERMITIAN_ATOL) -> bool:
        a = self.entries
        return a.shape[0] == a.shape[1] and bool(
            np.allclose(a, a.conj().T, atol=atol, rtol=0.0)
        )

    # -- serialization ---------------------------------------------------

    def to_json(self) -> dict:
        obj: dict = {}
        if self.row_wires == self.col_wires:
            obj["wires"] = [w.to_json() for w in self.row_wires]
        else:
            obj["row_wires"] = [w.to_json() for w in self.row_wires]
            obj["col_wires"] = [w.to_json() for w in self.col_wires]
        obj["re"] = self.entries.real.tolist()
        obj["im"] = self.entries.imag.tolist()
        return obj

    @staticmethod
    def from_json(obj: dict) -> "LabelledMatrix":
        if "wires" in obj:
            rows = tuple(WireSystem.from_json(w) for w in obj["wires"])
            cols = rows
        else:
            rows = tuple(WireSystem.from_json(w) for w in obj["row_wires"])
            cols = tuple(WireSystem.from_json(w) for w in obj["col_wires"])
        entries = np.asarray(obj["re"], dtype=float) + 1j * np.asarray(obj["im"], dtype=float)
        return LabelledMatrix(entries, rows, cols)

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @staticmethod
    def loads(text: str) -> "LabelledMatrix":
        return LabelledMatrix.from_json(json.loads(text))


# -- constructors ---------------------------------------------------------


def identity(wires: Sequence[WireSystem]) -> LabelledMatrix:
    d = total_dim(wires)
    return LabelledMatrix(np.eye(d, dtype=np.complex128), tuple(wires))


def maximally_mixed(wires: Sequence[WireSystem]) -> LabelledMatrix:
    d = total_dim(wires)
    return LabelledMatrix(np.eye(d, dtype=np.complex128) / d, tuple(wires))


# -- wire algebra ----------------------------------------------------------


def tensor_product(a: LabelledMatrix, b: LabelledMatrix) -> LabelledMatrix:
    """Kronecker product; wire lists concatenate, labels must stay unique."""
    rows = a.row_wires + b.row_wires
    cols = a.col_wires + b.col_wires
    _check_unique_labels(rows)
    _check_unique_labels(cols)
    return LabelledMatrix(np.kron(a.entries, b.entries), rows, cols)


def _tensor_view(m: LabelledMatrix) -> np.ndarray:
    dims = wire_dims(m.row_wires)
    return m.entries.reshape(dims + dims)


def partial_trace(m: LabelledMatrix, keep: Iterable[str]) -> LabelledMatrix:
    """Trace out every wire not named in ``keep``.

    The kept wires retain their relative order.  Tracing everything leaves a
    1x1 matrix on an empty wire list holding Tr[m].
    """
    m.require_operator()
    keep_set = set(keep)
    unknown = keep_set - set(m.labels)
    if unknown:
        raise KeyError(f"unknown wire labels: {sorted(unknown)}")
    if keep_set == set(m.labels):
        return m

    k = len(m.row_wires)
    t = _tensor_view(m)
    wires = list(m.row_wires)
    while True:
        try:
            idx = next(i for i, w in enumerate(wires) if w.label not in keep_set)
        except StopIteration:
            break
        t = np.trace(t, axis1=idx, axis2=len(wires) + idx)
        del wires[idx]
    d = total_dim(wires)
    return LabelledMatrix(t.reshape(d, d), tuple(wires))


def trace_out(m: LabelledMatrix, drop: Iterable[str]) -> LabelledMatrix:
    """Complement form of :func:`partial_trace`: trace the named wires away."""
    drop_set = set(drop)
    unknown = drop_set - set(m.labels)
    if unknown:
        raise KeyError(f"unknown wire labels: {sorted(unknown)}")
    return partial_trace(m, [l for l in m.labels if l not in drop_set])


def permute_wires(m: LabelledMatrix, order: Sequence[str]) -> LabelledMatrix:
    """Reorder the wires of an operator to the given label sequence."""
    m.require_operator()
    if sorted(order) != sorted(m.labels):
        raise ValueError(
            f"order {list(order)} is not a permutation of labels {list(m.labels)}"
        )
    if tuple(order) == m.labels:
        return m
    pos = {lab: i for i, lab in enumerate(m.labels)}
    perm = [pos[lab] for lab in order]
    k = len(perm)
    t = _tensor_view(m).transpose(perm + [k + p for p in perm])
    wires = tuple(m.row_wires[p] for p in perm)
    d = total_dim(wires)
    return LabelledMatrix(np.ascontiguousarray(t).reshape(d, d), wires)


def aligned(m: LabelledMatrix, like: LabelledMatrix) -> LabelledMatrix:
    """Permute ``m`` so its wire order matches ``like``'s labels."""
    return permute_wires(m, like.labels)


# -- norms and ranks --------------------------------------------------------


def trace_norm(m: LabelledMatrix) -> float:
    """Sum of singular values (sum of |eigenvalues| for Hermitian input)."""
    a = m.entries
    if a.shape[0] != a.shape[1]:
        raise ValueError("trace norm requires a square matrix")
    if m.is_hermitian():
        return float(np.abs(np.linalg.eigvalsh(a)).sum())
    return float(np.linalg.svd(a, compute_uv=False).sum())


def hs_norm(m: LabelledMatrix) -> float:
    return float(np.linalg.norm(m.entries))


def _psd_eigenvalues(m: LabelledMatrix) -> np.ndarray:
    if not m.is_hermitian():
        raise NotPSDError("matrix is not Hermitian within 1e-10")
    w = np.linalg.eigvalsh(m.entries)
    if w.min(initial=0.0) < EIG_FLOOR:
        raise NotPSDError(f"matrix has eigenvalue {w.min():.3e} below the PSD floor")
    return w


def matrix_rank(m: LabelledMatrix, rel_tol: float = DEFAULT_RANK_RTOL) -> int:
    """Count of eigenvalues above ``rel_tol`` times the largest (PSD input)."""
    w = _psd_eigenvalues(m)
    top = w.max(initial=0.0)
    if top <= 0.0:
        return 0
    return int(np.count_nonzero(w > rel_tol * top))


def rank_eta(m: LabelledMatrix, eta: float, rel_tol: float = DEFAULT_RANK_RTOL) -> int:
    """Smallest rank reachable within Hilbert-Schmidt distance ``eta``.

    Computed by eigenvalue-tail truncation (the Frobenius-optimal Hermitian
    approximant keeps the largest-magnitude eigenvalues): the result is the
    smallest r with root-sum-square of the d-r smallest eigenvalues <= eta.
    Never returns 0 for a nonzero matrix, even when the eta-ball contains 0.
    """
    if eta < 0:
        raise ValueError(f"eta must be nonnegative, got {eta}")
    if eta == 0:
        return matrix_rank(m, rel_tol)
    w = np.sort(np.abs(_psd_eigenvalues(m)))[::-1]
    if w.max(initial=0.0) == 0.0:
        return 0
    tail_sq = np.concatenate([np.cumsum(w[::-1] ** 2)[::-1], [0.0]])  # tail_sq[r] for r=0..d
    for r in range(1, len(w) + 1):
        if np.sqrt(tail_sq[r]) <= eta:
            return r
    return len(w)


def truncation_error(m: LabelledMatrix, r: int) -> float:
    """Root-sum-square of the eigenvalues dropped by a rank-``r`` truncation."""
    w = np.sort(np.abs(_psd_eigenvalues(m)))[::-1]
    if r >= len(w):
        return 0.0
    return float(np.sqrt(np.sum(w[r:] ** 2)))
