"""Multi-scale kernel-box scanning over spectrograms.

A kernel box of size (h, w) slides over an F x T spectrogram on a grid of
frequency/time anchors and stacks the extracted patches. Anchors either
follow fixed step sizes or step sizes derived from requested scan counts;
in both cases a final anchor at the far edge guarantees full coverage.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dsp import Spectrogram
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class KernelBox:
    """Scanning window: h bins along frequency, w frames along time."""

    h: int
    w: int

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise ConfigError(f"kernel box must be at least 1x1, got {self.h}x{self.w}")

    def __str__(self):
        return f"{self.h}x{self.w}"


@dataclass(frozen=True)
class ScanPlan:
    """Anchor grid for one kernel box over one spectrogram size."""

    f_positions: tuple
    t_positions: tuple

    @property
    def n_f(self) -> int:
        return len(self.f_positions)

    @property
    def n_t(self) -> int:
        return len(self.t_positions)

    @property
    def patch_count(self) -> int:
        return self.n_f * self.n_t


@dataclass(frozen=True)
class PatchStack:
    """The N = n_f * n_t patches one kernel extracted, shape (N, h, w)."""

    patches: np.ndarray
    box: KernelBox

    def __len__(self):
        return self.patches.shape[0]


def _check_fits(F: int, T: int, box: KernelBox) -> None:
    if box.h > F or box.w > T:
        raise ConfigError(
            f"kernel {box} does not fit inside a {F}x{T} spectrogram"
        )


def steps_from_counts(F: int, T: int, box: KernelBox, n_f: int, n_t: int):
    """Step sizes that spread n_f x n_t anchors over the spectrogram.

    f_step = max(1, floor((F - h) / (n_f - 1))) for n_f > 1, else F - h;
    t_step analogously from (T, w, n_t).
    """
    _check_fits(F, T, box)
    if n_f < 1 or n_t < 1:
        raise ConfigError("scan counts must be at least 1")
    if n_f > 1:
        f_step = max(1, (F - box.h) // (n_f - 1))
    else:
        f_step = F - box.h
    if n_t > 1:
        t_step = max(1, (T - box.w) // (n_t - 1))
    else:
        t_step = T - box.w
    return f_step, t_step


def _axis_positions(extent: int, size: int, step: int) -> tuple:
    last = extent - size
    step = max(1, step)  # step 0 only occurs when the kernel spans the axis
    pos = list(range(0, last + 1, step))
    if pos[-1] != last:
        pos.append(last)
    return tuple(pos)


def plan_from_steps(F: int, T: int, box: KernelBox, f_step: int, t_step: int) -> ScanPlan:
    """Anchor grid for fixed steps: multiples of the step clipped to the
    valid range, with the far-edge anchor appended when stepping undershoots."""
    _check_fits(F, T, box)
    if f_step < 0 or t_step < 0:
        raise ConfigError("step sizes must be non-negative")
    return ScanPlan(
        f_positions=_axis_positions(F, box.h, f_step),
        t_positions=_axis_positions(T, box.w, t_step),
    )


def plan_from_counts(F: int, T: int, box: KernelBox, n_f: int, n_t: int) -> ScanPlan:
    f_step, t_step = steps_from_counts(F, T, box, n_f, n_t)
    return plan_from_steps(F, T, box, f_step, t_step)


def scan(spec: Spectrogram, box: KernelBox, plan: ScanPlan) -> PatchStack:
    """Extract the planned patches, row-major over (frequency anchor, time anchor)."""
    values = spec.values
    F, T = values.shape
    _check_fits(F, T, box)
    fp = np.asarray(plan.f_positions, dtype=np.intp)
    tp = np.asarray(plan.t_positions, dtype=np.intp)
    if fp.size == 0 or tp.size == 0:
        raise DataError("scan plan has no anchors")
    if fp.min() < 0 or fp.max() > F - box.h or tp.min() < 0 or tp.max() > T - box.w:
        raise DataError(f"scan plan exceeds the {F}x{T} spectrogram for kernel {box}")
    return PatchStack(scan_array(values, box.h, box.w, fp, tp), box)


def scan_array(values: np.ndarray, h: int, w: int, fp: np.ndarray, tp: np.ndarray) -> np.ndarray:
    """Gather (len(fp)*len(tp), h, w) patches from a 2-D array (or a batch
    of them, leading axes preserved)."""
    f_idx = (fp[:, None] + np.arange(h)[None, :]).reshape(-1)     # (n_f*h,)
    t_idx = (tp[:, None] + np.arange(w)[None, :]).reshape(-1)     # (n_t*w,)
    block = values[..., f_idx, :][..., t_idx]                     # (..., n_f*h, n_t*w)
    lead = values.shape[:-2]
    block = block.reshape(lead + (len(fp), h, len(tp), w))
    block = np.moveaxis(block, -2, -3)                            # (..., n_f, n_t, h, w)
    return block.reshape(lead + (len(fp) * len(tp), h, w))


def default_kernel_set():
    """The 12-kernel cross product {32,64,128,256} x {16,32,64}, h-major order."""
    return [KernelBox(h, w) for h in (32, 64, 128, 256) for w in (16, 32, 64)]


def usable_kernels(kernels, F: int, T: int):
    """Drop kernels that do not fit the spectrogram, with a warning per drop."""
    kept = []
    for box in kernels:
        if box.h > F or box.w > T:
            warnings.warn(f"skipping kernel {box}: larger than {F}x{T} spectrogram")
        else:
            kept.append(box)
    return kept


def coverage_map(F: int, T: int, box: KernelBox, plan: ScanPlan) -> np.ndarray:
    """F x T matrix counting how many patches cover each cell."""
    cover = np.zeros((F, T), dtype=np.int64)
    for f in plan.f_positions:
        for t in plan.t_positions:
            cover[f:f + box.h, t:t + box.w] += 1
    return cover
