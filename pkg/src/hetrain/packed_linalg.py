"""Packed matrices over the slot engine.

Two families of layout are supported:

Row
    One register per matrix row. ``matvec_row`` evaluates ``W @ x`` with
    rotate-and-sum inner products followed by unit-vector masking.

Diagonal (and its pre-rotated "stepped" variant)
    A matrix ``W`` with ``N`` rows and ``M`` columns, ``N >= M``, is packed
    *tall*: ``N`` registers of length ``N`` where part ``k`` holds
    ``W[(k + j) % N, j]`` in slot ``j < M`` and zeros elsewhere. A matrix with
    fewer rows than columns (``M x N``) is packed *wide*: ``M`` registers of
    length ``N`` where part ``i`` holds ``W[(i + j) % M, j]`` in every slot.
    Either way ``matvec_diag`` evaluates ``W.T @ x``, so the weight of a layer
    ``y = A x`` is stored as ``pack_diag(A.T)`` (see :func:`pack_operator`).

The tall and wide forms of a matrix and its transpose are related by pure
rotations, which is what makes the diagonal transpose multiplication-free.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .slot_engine import (
    DimensionError,
    EngineContext,
    Kind,
    SlotRegister,
    add,
    encode,
    encrypt,
    mul,
    rotate,
)


class LayoutError(ValueError):
    """Operation applied to a packed matrix of the wrong layout."""


class UnsupportedShapeError(ValueError):
    """Shape has N mod M != 0 and the ragged path was not requested."""


class Layout(enum.Enum):
    ROW = "row"
    DIAGONAL = "diag"
    STEPPED = "diag-stepped"

    @property
    def is_diagonal(self) -> bool:
        return self is not Layout.ROW


class Operation(enum.Enum):
    MATVEC = "matvec"
    TRANSPOSE = "transpose"


IN_TO_OUT = "InToOut"
OUT_TO_IN = "OutToIn"


@dataclass(frozen=True)
class MatrixShape:
    """Storage geometry of a packed matrix.

    ``orig_in``/``orig_out`` are the logical (unpadded) dimensions of the map
    the packing evaluates; ``direction`` says whether the big axis ``N`` is
    the input axis (``InToOut``, tall diagonal packing) or the output axis.
    """

    n_big: int
    m_small: int
    q: int
    r: int
    orig_in: int
    orig_out: int
    direction: str = IN_TO_OUT

    @classmethod
    def of(cls, n_in: int, n_out: int, orig_in: int | None = None,
           orig_out: int | None = None) -> "MatrixShape":
        n, m = max(n_in, n_out), min(n_in, n_out)
        q, r = divmod(n, m)
        return cls(n, m, q, r,
                   n_in if orig_in is None else orig_in,
                   n_out if orig_out is None else orig_out,
                   IN_TO_OUT if n_in >= n_out else OUT_TO_IN)

    @property
    def n_in(self) -> int:
        return self.n_big if self.direction == IN_TO_OUT else self.m_small

    @property
    def n_out(self) -> int:
        return self.m_small if self.direction == IN_TO_OUT else self.n_big

    def transposed(self) -> "MatrixShape":
        return MatrixShape.of(self.n_out, self.n_in, self.orig_out, self.orig_in)


@dataclass(frozen=True, eq=False)
class PackedMatrix:
    layout: Layout
    shape: MatrixShape
    parts: tuple
    register_length: int
    # tall diagonal parts that carry period-M copies instead of zero padding
    replicated: bool = False

    def __post_init__(self):
        lengths = {len(p) for p in self.parts}
        kinds = {p.kind for p in self.parts}
        if lengths != {self.register_length} or len(kinds) != 1:
            raise DimensionError("parts must share one length and one kind")

    @property
    def wide(self) -> bool:
        return self.layout.is_diagonal and self.shape.direction == OUT_TO_IN

    @property
    def levels(self) -> list:
        return [p.level for p in self.parts]

    def with_parts(self, parts) -> "PackedMatrix":
        return replace(self, parts=tuple(parts))


@lru_cache(maxsize=None)
def _unit_vectors(length: int) -> tuple:
    return tuple(SlotRegister(np.eye(length)[j], Kind.PLAIN) for j in range(length))


class UnitVectorSet:
    """Plain masks ``u_j`` with a single one in slot ``j``."""

    def __init__(self, length: int):
        self.length = length
        self.registers = _unit_vectors(length)

    def __getitem__(self, j: int) -> SlotRegister:
        return self.registers[j]

    def __len__(self) -> int:
        return self.length


@dataclass(frozen=True)
class CostEstimate:
    mults: int
    rotations: int
    depth: int


# ---------------------------------------------------------------------------
# packing

def _as_matrix(W) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.size == 0:
        raise DimensionError(f"expected a non-empty 2-D matrix, got shape {W.shape}")
    return W


def _seal(slots_list, ctx: EngineContext | None, encrypted: bool) -> tuple:
    regs = [SlotRegister(s, Kind.PLAIN) for s in slots_list]
    if encrypted:
        if ctx is None:
            raise ValueError("a context is needed to encrypt packed parts")
        regs = [encrypt(p, ctx) for p in regs]
    return tuple(regs)


def padded_size(n: int, m: int) -> int:
    """Smallest multiple of ``m`` that is >= ``n``."""
    return -(-n // m) * m


def pack_row(W, ctx: EngineContext | None = None, *, register_length: int | None = None,
             encrypted: bool = True) -> PackedMatrix:
    W = _as_matrix(W)
    rows, cols = W.shape
    L = register_length or max(rows, cols)
    if L < max(rows, cols):
        raise DimensionError(f"register length {L} too short for a {rows}x{cols} matrix")
    parts = _seal([np.pad(row, (0, L - cols)) for row in W], ctx, encrypted)
    return PackedMatrix(Layout.ROW, MatrixShape.of(cols, rows), parts, L)


def pack_diag(W, stepped: bool = False, ctx: EngineContext | None = None, *,
              padded_shape: tuple | None = None, experimental_ragged: bool = False,
              encrypted: bool = True) -> PackedMatrix:
    """Diagonal packing of ``W`` (tall if it has at least as many rows as columns).

    Without ``padded_shape`` the larger dimension is zero-padded up to a
    multiple of the smaller one; ``experimental_ragged`` keeps ``N = qM + r``
    with ``r > 0`` instead.
    """
    W = _as_matrix(W)
    rows, cols = W.shape
    if padded_shape is None:
        if experimental_ragged:
            padded_shape = (rows, cols)
        elif rows >= cols:
            padded_shape = (padded_size(rows, cols), cols)
        else:
            padded_shape = (rows, padded_size(cols, rows))
    prow, pcol = padded_shape
    if prow < rows or pcol < cols:
        raise DimensionError(f"cannot pad {W.shape} down to {padded_shape}")
    shape = MatrixShape.of(prow, pcol, rows, cols)
    if shape.r and not experimental_ragged:
        raise UnsupportedShapeError(
            f"N={shape.n_big} is not a multiple of M={shape.m_small}; pad or pass experimental_ragged")
    P = np.zeros((prow, pcol))
    P[:rows, :cols] = W
    N, M = shape.n_big, shape.m_small
    j = np.arange(N)
    if shape.direction == IN_TO_OUT:
        parts = []
        for k in range(N):
            slots = np.zeros(N)
            slots[:M] = P[(k + j[:M]) % N, j[:M]]
            if stepped:
                slots = np.roll(slots, k)
            parts.append(slots)
    else:
        if stepped:
            raise LayoutError("stepped packing is defined for tall matrices only")
        parts = [P[(i + j) % M, j] for i in range(M)]
    layout = Layout.STEPPED if stepped else Layout.DIAGONAL
    return PackedMatrix(layout, shape, _seal(parts, ctx, encrypted), N)


def unpack(P: PackedMatrix) -> np.ndarray:
    """Dense matrix held by ``P`` (reads slots directly; client-side view)."""
    s = P.shape
    if P.layout is Layout.ROW:
        rows = np.array([p.slots[: s.n_in] for p in P.parts])
        return rows[: s.orig_out, : s.orig_in]
    N, M = s.n_big, s.m_small
    j = np.arange(N)
    if P.wide:
        W = np.zeros((M, N))
        for i, part in enumerate(P.parts):
            W[(i + j) % M, j] = part.slots
    else:
        W = np.zeros((N, M))
        for k, part in enumerate(P.parts):
            slots = np.roll(part.slots, -k) if P.layout is Layout.STEPPED else part.slots
            W[(k + j[:M]) % N, j[:M]] = slots[:M]
    return W[: s.orig_in, : s.orig_out]


def pack_operator(A, layout: Layout, ctx: EngineContext | None = None, *,
                  padded: tuple | None = None, experimental_ragged: bool = False,
                  encrypted: bool = True) -> PackedMatrix:
    """Pack the map ``x -> A @ x`` so that ``matvec`` evaluates it.

    ``padded`` is ``(padded_in, padded_out)``.
    """
    A = _as_matrix(A)
    out_dim, in_dim = A.shape
    if layout is Layout.ROW:
        length = max(padded) if padded else None
        return pack_row(A, ctx, register_length=length, encrypted=encrypted)
    return pack_diag(A.T, layout is Layout.STEPPED, ctx, padded_shape=padded,
                     experimental_ragged=experimental_ragged, encrypted=encrypted)


def operator_of(P: PackedMatrix) -> np.ndarray:
    """Dense ``A`` such that ``matvec(P, x) == A @ x``."""
    W = unpack(P)
    return W if P.layout is Layout.ROW else W.T


# ---------------------------------------------------------------------------
# matrix-vector products

def _sum(regs, ctx: EngineContext) -> SlotRegister:
    acc = regs[0]
    for r in regs[1:]:
        acc = add(acc, r, ctx)
    return acc


def matvec_row(Wp: PackedMatrix, x: SlotRegister, U: UnitVectorSet | None,
               ctx: EngineContext) -> SlotRegister:
    """Row-packed ``W @ x``; result in slots ``0 .. rows-1``. Two levels."""
    if Wp.layout is not Layout.ROW:
        raise LayoutError(f"matvec_row needs a row packing, got {Wp.layout.value}")
    if len(x) != Wp.register_length:
        raise DimensionError(f"input length {len(x)} != register length {Wp.register_length}")
    U = U or UnitVectorSet(Wp.register_length)
    cols = Wp.shape.n_in
    outputs = []
    for i, w in enumerate(Wp.parts):
        prod = mul(w, x, ctx)
        y1 = _sum([prod] + [rotate(prod, -s, ctx) for s in range(1, cols)], ctx)
        outputs.append(mul(rotate(y1, i, ctx), U[i], ctx))
    return _sum(outputs, ctx)


def replicate(x: SlotRegister, period: int, ctx: EngineContext) -> SlotRegister:
    """Tile the first ``period`` slots of a zero-padded register across it."""
    copies = len(x) // period
    return _sum([x] + [rotate(x, t * period, ctx) for t in range(1, copies)], ctx)


def matvec_diag(Wp: PackedMatrix, x: SlotRegister, ctx: EngineContext, *,
                input_replicated: bool = False, keep: list | None = None) -> SlotRegister:
    """Diagonal-packed ``W.T @ x``. One level, no masking.

    Tall packing: ``sum_k C_k * rot(x, -k)`` with the output in slots
    ``0 .. M-1`` (zeros after, or period-``M`` copies for a replicated
    packing). Wide packing: ``x`` (zero-padded, ``M`` meaningful slots) is first
    replicated with period ``M``, then ``sum_i D_i * rot(x~, -i)`` fills all
    ``N`` slots.

    If ``keep`` is a list, the rotated inputs are appended to it so a later
    gradient can reuse them.
    """
    if not Wp.layout.is_diagonal:
        raise LayoutError(f"matvec_diag needs a diagonal packing, got {Wp.layout.value}")
    if len(x) != Wp.register_length:
        raise DimensionError(f"input length {len(x)} != register length {Wp.register_length}")
    if Wp.layout is Layout.STEPPED and not Wp.wide:
        # C_k = rot(C'_k, -k), so rotate the product instead of the input
        terms = [rotate(mul(c, x, ctx), -k, ctx) for k, c in enumerate(Wp.parts)]
        return _sum(terms, ctx)
    if Wp.wide and not input_replicated:
        x = replicate(x, Wp.shape.m_small, ctx)
    shifted = [rotate(x, -k, ctx) for k in range(len(Wp.parts))]
    if keep is not None:
        keep.extend(shifted)
    return _sum([mul(c, xs, ctx) for c, xs in zip(Wp.parts, shifted)], ctx)


def matvec(Wp: PackedMatrix, x: SlotRegister, ctx: EngineContext) -> SlotRegister:
    if Wp.layout is Layout.ROW:
        return matvec_row(Wp, x, None, ctx)
    return matvec_diag(Wp, x, ctx)


# ---------------------------------------------------------------------------
# transposes

def transpose_row(Wp: PackedMatrix, U: UnitVectorSet | None, ctx: EngineContext) -> PackedMatrix:
    """Row packing of ``W.T``: isolate each entry with a unit mask and move it."""
    if Wp.layout is not Layout.ROW:
        raise LayoutError(f"transpose_row needs a row packing, got {Wp.layout.value}")
    U = U or UnitVectorSet(Wp.register_length)
    rows, cols = Wp.shape.n_out, Wp.shape.n_in
    y1 = [[rotate(mul(c, U[j], ctx), i - j, ctx) for j in range(cols)]
          for i, c in enumerate(Wp.parts)]
    d = [_sum([y1[i][k] for i in range(rows)], ctx) for k in range(cols)]
    return PackedMatrix(Layout.ROW, Wp.shape.transposed(), tuple(d), Wp.register_length)


def _alg4_terms(i: int, shape: MatrixShape, ragged: bool):
    """(part index, right-rotation) pairs assembling transposed part ``i``."""
    N, M, q, r = shape.n_big, shape.m_small, shape.q, shape.r
    if ragged:
        # printed bounds: e_i = q for i <= M - r, else q + 1, summed s = 0 .. e_i
        e = q if i <= M - r else q + 1
        s_range = range(e + 1)
    else:
        # exact tiling: the q pieces that cover [0, N) once
        s_range = range(q)
    return [((s * M - i) % N, s * M - i) for s in s_range]


def transpose_diag(Wp: PackedMatrix, ctx: EngineContext, *,
                   experimental_ragged: bool = False) -> PackedMatrix:
    """Diagonal packing of ``W.T`` using rotations and additions only.

    Tall -> wide: ``D_i = sum_s rot(C_{sM-i}, sM-i)``. Wide -> tall gives the
    replicated tall form ``C~_k = rot(D_{-k mod M}, -k)``; a replicated tall
    packing goes back with ``D_i = rot(C~_{-i mod N}, -i)``.
    """
    if Wp.layout is Layout.STEPPED:
        raise LayoutError("use transpose_diag_stepped for stepped packings")
    if Wp.layout is not Layout.DIAGONAL:
        raise LayoutError(f"transpose_diag needs a diagonal packing, got {Wp.layout.value}")
    s = Wp.shape
    N, M = s.n_big, s.m_small
    C = Wp.parts
    if Wp.wide:
        parts = [rotate(C[(-k) % M], -k, ctx) for k in range(N)]
        return PackedMatrix(Layout.DIAGONAL, s.transposed(), tuple(parts), N, replicated=True)
    if Wp.replicated:
        parts = [rotate(C[(-i) % N], -i, ctx) for i in range(M)]
    else:
        if s.r and not experimental_ragged:
            raise UnsupportedShapeError(f"N={N}, M={M} leaves r={s.r}; pad or pass experimental_ragged")
        parts = [_sum([rotate(C[k], off, ctx) for k, off in _alg4_terms(i, s, bool(s.r))], ctx)
                 for i in range(M)]
    # for N == M the transposed shape is again tall, which is what we want
    return PackedMatrix(Layout.DIAGONAL, s.transposed(), tuple(parts), N)


def transpose_diag_stepped(Wp: PackedMatrix, ctx: EngineContext, *,
                           experimental_ragged: bool = False) -> PackedMatrix:
    """Transpose of a stepped packing.

    Stepped part ``k`` already sits at offset ``k``; each piece only needs the
    residual rotation ``(sM - i) - k``, which is a multiple of ``N``, so the
    wrapping term ``rot(C_{N-i}, -i)`` and the ``C_{sM-i}`` terms are all
    picked up without rotating a ciphertext.
    """
    if Wp.layout is not Layout.STEPPED:
        raise LayoutError(f"transpose_diag_stepped needs a stepped packing, got {Wp.layout.value}")
    s = Wp.shape
    if s.r and not experimental_ragged:
        raise UnsupportedShapeError(f"N={s.n_big}, M={s.m_small} leaves r={s.r}")
    C = Wp.parts
    parts = [_sum([rotate(C[k], off - k, ctx) for k, off in _alg4_terms(i, s, bool(s.r))], ctx)
             for i in range(s.m_small)]
    return PackedMatrix(Layout.DIAGONAL, s.transposed(), tuple(parts), s.n_big)


def transpose(Wp: PackedMatrix, ctx: EngineContext, **kw) -> PackedMatrix:
    if Wp.layout is Layout.ROW:
        return transpose_row(Wp, None, ctx)
    if Wp.layout is Layout.STEPPED:
        return transpose_diag_stepped(Wp, ctx, **kw)
    return transpose_diag(Wp, ctx, **kw)


# ---------------------------------------------------------------------------
# gradient outer products

def grad_outer_diag(delta: SlotRegister, x: SlotRegister, shape: MatrixShape,
                    ctx: EngineContext, layout: Layout = Layout.DIAGONAL, *,
                    shifted: list | None = None) -> PackedMatrix:
    """Gradient of a diagonal-packed weight, packed exactly like the weight.

    For the layer ``y = A x`` stored as ``pack_diag(A.T)``, the gradient
    ``outer(delta, x)`` is stored as its transpose ``outer(x, delta)``:
    tall part ``k`` is ``delta * rot(x, -k)`` (``delta`` zero past ``M``),
    wide part ``i`` is ``delta * rot(x~, -i)`` with ``x~`` the period-``M``
    replica of ``x``. ``shifted`` may carry those rotated copies of ``x`` from
    the forward matvec (see ``matvec_diag(keep=...)``).
    """
    N = shape.n_big
    if len(delta) != N or len(x) != N:
        raise DimensionError(f"delta/x lengths {len(delta)}, {len(x)} != N={N}")
    wide = shape.direction == OUT_TO_IN
    count = shape.m_small if wide else N
    if layout is Layout.STEPPED:
        if wide:
            raise LayoutError("stepped packing is defined for tall matrices only")
        parts = [mul(rotate(delta, k, ctx), x, ctx) for k in range(N)]
        return PackedMatrix(layout, shape, tuple(parts), N)
    if shifted is None:
        if wide:
            x = replicate(x, shape.m_small, ctx)
        shifted = [rotate(x, -k, ctx) for k in range(count)]
    elif len(shifted) != count:
        raise DimensionError(f"expected {count} shifted inputs, got {len(shifted)}")
    parts = [mul(delta, xs, ctx) for xs in shifted]
    return PackedMatrix(layout, shape, tuple(parts), N)


def grad_outer_row(delta: SlotRegister, x: SlotRegister, shape: MatrixShape,
                   ctx: EngineContext, *, scale: SlotRegister | None = None,
                   U: UnitVectorSet | None = None) -> PackedMatrix:
    """Row packing of ``outer(delta * scale, x)``.

    Row ``i`` broadcasts ``delta[i]`` with a unit mask and a rotate-and-sum,
    then multiplies by ``x``. The mask is folded into ``scale`` first so the
    extraction does not lengthen the ``delta`` chain.
    """
    L = len(x)
    if len(delta) != L:
        raise DimensionError("delta and x must share the register length")
    U = U or UnitVectorSet(L)
    rows = []
    for i in range(shape.n_out):
        selector = U[i] if scale is None else mul(scale, U[i], ctx)
        picked = mul(delta, selector, ctx)
        spread = _sum([picked] + [rotate(picked, s, ctx) for s in range(1, L)], ctx)
        rows.append(mul(spread, x, ctx))
    return PackedMatrix(Layout.ROW, shape, tuple(rows), L)


# ---------------------------------------------------------------------------
# closed-form costs

def predict_cost(layout: Layout, operation: Operation, N: int, M: int, *,
                 wide: bool = False) -> CostEstimate:
    """Closed-form cost of one packed matvec or transpose.

    ``N >= M``. For matvec, the default is the contracting map ``N -> M``;
    ``wide=True`` is the expanding ``M -> N`` map (for the diagonal layout
    that includes replicating the input).
    """
    layout, operation = Layout(layout), Operation(operation)
    if not (isinstance(N, (int, np.integer)) and isinstance(M, (int, np.integer))) or not N >= M >= 1:
        raise ValueError(f"invalid shape N={N}, M={M}")
    q = N // M
    if operation is Operation.MATVEC:
        if layout is Layout.ROW:
            return CostEstimate(2 * (N if wide else M), M * N, 2)
        if wide:
            return CostEstimate(M, (M - 1) + (q - 1), 1)
        return CostEstimate(N, N - 1, 1)
    if layout is Layout.ROW:
        return CostEstimate(N * M, N * M, 1)
    if layout is Layout.STEPPED:
        return CostEstimate(0, M, 0)
    if wide:
        return CostEstimate(0, N - 1, 0)
    return CostEstimate(0, q * M, 0)


def encode_vector(values, length: int, ctx: EngineContext, *, encrypted: bool = True) -> SlotRegister:
    p = encode(values, length)
    return encrypt(p, ctx) if encrypted else p
