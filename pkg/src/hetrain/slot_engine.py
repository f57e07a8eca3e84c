"""Idealized CKKS slot model.

A ciphertext is modelled as a cyclic register of real slots carrying a
remaining-level counter. Every operation goes through an :class:`EngineContext`
that counts multiplications, rotations and additions, so circuits built on
top of this module can be audited for cost and multiplicative depth without
any lattice arithmetic.

Registers are immutable. Rotation wraps modulo the register's own length
(not a global slot count); see ``resize`` for how registers of different
lengths are bridged.
"""
from __future__ import annotations

import enum
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand lengths do not line up."""


class DepthBudgetError(RuntimeError):
    """A multiplication would take a ciphertext below level 0."""


class KindError(TypeError):
    """Plain register where a ciphertext is required (or vice versa)."""


class Kind(enum.Enum):
    PLAIN = "plain"
    CIPHER = "cipher"


@dataclass(frozen=True, eq=False)
class SlotRegister:
    slots: np.ndarray
    kind: Kind = Kind.PLAIN
    level: int | None = None

    def __post_init__(self):
        arr = np.array(self.slots, dtype=np.float64).reshape(-1)
        if arr.size < 1:
            raise DimensionError("register length must be >= 1")
        arr.flags.writeable = False
        object.__setattr__(self, "slots", arr)
        if self.kind is Kind.CIPHER:
            if self.level is None or self.level < 0:
                raise ValueError(f"cipher register needs a level >= 0, got {self.level}")
        else:
            object.__setattr__(self, "level", None)

    def __len__(self) -> int:
        return self.slots.size

    @property
    def is_cipher(self) -> bool:
        return self.kind is Kind.CIPHER

    def peek(self) -> np.ndarray:
        """Slot values as a fresh array (what the key holder would see)."""
        return self.slots.copy()

    def __repr__(self) -> str:
        tag = "Cipher" if self.is_cipher else "Plain"
        lvl = f", level={self.level}" if self.is_cipher else ""
        return f"{tag}({np.array2string(self.slots, precision=4)}{lvl})"


@dataclass
class OpCounts:
    """Plain snapshot of counter values."""

    ct_mults: int = 0
    pt_mults: int = 0
    rotations: int = 0
    additions: int = 0

    @property
    def mults(self) -> int:
        return self.ct_mults + self.pt_mults

    @property
    def total(self) -> int:
        # the quantity compared in the row-vs-diagonal cost tables
        return self.mults + self.rotations

    def __add__(self, other: "OpCounts") -> "OpCounts":
        return OpCounts(
            self.ct_mults + other.ct_mults,
            self.pt_mults + other.pt_mults,
            self.rotations + other.rotations,
            self.additions + other.additions,
        )

    def __sub__(self, other: "OpCounts") -> "OpCounts":
        return OpCounts(
            self.ct_mults - other.ct_mults,
            self.pt_mults - other.pt_mults,
            self.rotations - other.rotations,
            self.additions - other.additions,
        )


class Counters:
    """Thread-safe operation counters, shared by a context and its children."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts = OpCounts()
        self.min_level: int | None = None

    def bump(self, name: str, n: int = 1) -> None:
        with self._lock:
            setattr(self._counts, name, getattr(self._counts, name) + n)

    def observe_level(self, level: int) -> None:
        with self._lock:
            if self.min_level is None or level < self.min_level:
                self.min_level = level

    def snapshot(self) -> OpCounts:
        with self._lock:
            c = self._counts
            return OpCounts(c.ct_mults, c.pt_mults, c.rotations, c.additions)

    ct_mults = property(lambda self: self.snapshot().ct_mults)
    pt_mults = property(lambda self: self.snapshot().pt_mults)
    rotations = property(lambda self: self.snapshot().rotations)
    additions = property(lambda self: self.snapshot().additions)
    mults = property(lambda self: self.snapshot().mults)


@dataclass
class EngineContext:
    """Level budget, noise knob, RNG and counters for one computation.

    ``spawn`` derives a child with its own noise stream (keyed, so results do
    not depend on which worker ran first) but the same counters.
    """

    level_budget: int = 9
    noise_std: float = 0.0
    seed: int = 0
    counters: Counters = field(default_factory=Counters)
    key: tuple = ()
    ledger: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.level_budget < 1:
            raise ValueError("level_budget must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        self.rng = np.random.default_rng([self.seed, *self.key])

    def spawn(self, *key: int, fresh_counters: bool = False) -> "EngineContext":
        return EngineContext(
            level_budget=self.level_budget,
            noise_std=self.noise_std,
            seed=self.seed,
            counters=Counters() if fresh_counters else self.counters,
            key=(*self.key, *key),
            ledger={} if fresh_counters else self.ledger,
        )

    @contextmanager
    def track(self, phase: str, label: str) -> Iterator[None]:
        """Attribute the counter delta of the enclosed block to (phase, label).

        Only meaningful when nothing else is using the counters concurrently.
        """
        before = self.counters.snapshot()
        try:
            yield
        finally:
            delta = self.counters.snapshot() - before
            key = (phase, label)
            self.ledger[key] = self.ledger.get(key, OpCounts()) + delta


def _check_lengths(a: SlotRegister, b: SlotRegister) -> None:
    if len(a) != len(b):
        raise DimensionError(f"register length mismatch: {len(a)} vs {len(b)}")


def _result_level(*regs: SlotRegister) -> int | None:
    levels = [r.level for r in regs if r.is_cipher]
    return min(levels) if levels else None


def encode(values: Sequence[float], length: int) -> SlotRegister:
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size > length:
        raise DimensionError(f"{values.size} values do not fit in {length} slots")
    slots = np.zeros(length)
    slots[: values.size] = values
    return SlotRegister(slots, Kind.PLAIN)


def encrypt(p: SlotRegister, ctx: EngineContext) -> SlotRegister:
    if p.is_cipher:
        raise KindError("register is already encrypted")
    ctx.counters.observe_level(ctx.level_budget)
    return SlotRegister(p.slots, Kind.CIPHER, ctx.level_budget)


def decrypt(a: SlotRegister) -> SlotRegister:
    if not a.is_cipher:
        raise KindError("decrypt expects a cipher register")
    return SlotRegister(a.slots, Kind.PLAIN)


def rotate(a: SlotRegister, k: int, ctx: EngineContext) -> SlotRegister:
    """Cyclic right rotation by ``k`` (left for negative ``k``)."""
    k = int(k) % len(a)
    if k == 0:
        return a
    if a.is_cipher:
        ctx.counters.bump("rotations")
    return SlotRegister(np.roll(a.slots, k), a.kind, a.level)


def add(a: SlotRegister, b: SlotRegister, ctx: EngineContext) -> SlotRegister:
    _check_lengths(a, b)
    level = _result_level(a, b)
    if level is None:
        return SlotRegister(a.slots + b.slots, Kind.PLAIN)
    ctx.counters.bump("additions")
    return SlotRegister(a.slots + b.slots, Kind.CIPHER, level)


def sub(a: SlotRegister, b: SlotRegister, ctx: EngineContext) -> SlotRegister:
    _check_lengths(a, b)
    level = _result_level(a, b)
    if level is None:
        return SlotRegister(a.slots - b.slots, Kind.PLAIN)
    ctx.counters.bump("additions")
    return SlotRegister(a.slots - b.slots, Kind.CIPHER, level)


def mul(a: SlotRegister, b: SlotRegister, ctx: EngineContext) -> SlotRegister:
    _check_lengths(a, b)
    level = _result_level(a, b)
    product = a.slots * b.slots
    if level is None:
        return SlotRegister(product, Kind.PLAIN)
    if level < 1:
        raise DepthBudgetError(
            f"multiplication needs a level but operand is at level {level} "
            f"(budget {ctx.level_budget})"
        )
    ctx.counters.bump("ct_mults" if a.is_cipher and b.is_cipher else "pt_mults")
    if ctx.noise_std > 0:
        product = product + ctx.rng.normal(0.0, ctx.noise_std, product.size)
    ctx.counters.observe_level(level - 1)
    return SlotRegister(product, Kind.CIPHER, level - 1)


def resize(a: SlotRegister, length: int) -> SlotRegister:
    """Reinterpret ``a`` as a register of ``length`` slots.

    Keeps the leading slots, zero-fills when growing and drops the tail when
    shrinking. Free of charge: callers only shrink registers whose tail is
    structurally zero, which in a real backend is the same ciphertext.
    """
    if length < 1:
        raise DimensionError("register length must be >= 1")
    slots = np.zeros(length)
    n = min(length, len(a))
    slots[:n] = a.slots[:n]
    return SlotRegister(slots, a.kind, a.level)


def constant(value: float, length: int) -> SlotRegister:
    return SlotRegister(np.full(length, float(value)), Kind.PLAIN)
