"""Operation census: counts the emulated arithmetic ops actually executed.

The MAC and quantization paths report, in bulk, how many small-integer
exponent adds, sign XORs, wide accumulations, final shifts, exponent-field
scaling adds and rounding decisions they performed. `general_muls` exists so
the multiply-free contract is a measured quantity, not an assumption; nothing
on the quantized path ever increments it. The fp32 baseline path reports its
multiplies and adds under separate keys so a baseline run can be priced too.

Counters are per-thread and merged on read, so concurrent engines do not
contend or lose increments.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, fields

from .errors import InputError


@dataclass
class OpCounts:
    int_add: int = 0        # exponent additions inside MACs
    xor: int = 0            # sign-bit XORs
    accumulate: int = 0     # adds into the wide/saturating accumulator
    final_shift: int = 0    # one per dot-product output (rescale of z)
    scale_add: int = 0      # exponent-field adds applying the block scale
    round_op: int = 0       # log-domain rounding decisions
    general_mul: int = 0    # general multiplies on the quantized path (must stay 0)
    fp32_mul: int = 0       # baseline-path multiplies
    fp32_add: int = 0       # baseline-path adds
    saturation: int = 0     # strict32 clamping events
    skipped_pairs: int = 0  # sentinel pairs skipped inside MACs

    def __add__(self, other: "OpCounts") -> "OpCounts":
        return OpCounts(**{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)})

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict[str, int]) -> "OpCounts":
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise InputError(f"unknown census keys: {sorted(bad)}")
        return cls(**{k: int(v) for k, v in d.items()})


_local = threading.local()
# Registry keeps a reference to every thread's counter so totals survive
# thread exit and reset can zero them all.
_registry: list[OpCounts] = []
_registry_lock = threading.Lock()


def _my_counts() -> OpCounts:
    c = getattr(_local, "counts", None)
    if c is None:
        c = _local.counts = OpCounts()
        with _registry_lock:
            _registry.append(c)
    return c


def record(**kwargs: int) -> None:
    """Bulk-increment census counters for the calling thread."""
    c = _my_counts()
    for name, n in kwargs.items():
        setattr(c, name, getattr(c, name) + int(n))


def op_census() -> OpCounts:
    """Merged counts since the last reset, across all threads."""
    with _registry_lock:
        snap = list(_registry)
    total = OpCounts()
    for c in snap:
        total = total + c
    return total


def reset_census() -> None:
    with _registry_lock:
        for c in _registry:
            for f in fields(OpCounts):
                setattr(c, f.name, 0)
