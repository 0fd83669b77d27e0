"""Butterworth low-pass design and causal second-order-section filtering.

The analog Butterworth prototype is pre-warped and mapped to the z-plane with
the bilinear transform, then factored into biquad sections (plus one
first-order section for odd orders).  Filtering is causal only: the streaming
path steps the identical recurrence one sample at a time, so batch and online
outputs agree bit for bit.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FilterSpec:
    order: int
    cutoff_hz: float
    sample_rate_hz: float

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("filter order must be at least 1")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        if not 0 < self.cutoff_hz < self.sample_rate_hz / 2:
            raise ValueError(
                f"cutoff must lie strictly inside (0, Nyquist); got "
                f"{self.cutoff_hz} Hz at fs={self.sample_rate_hz} Hz. A cutoff at or "
                "above Nyquist makes a digital low-pass degenerate; pick a smaller "
                "cutoff (the default pipeline uses fs/4)."
            )


@dataclass
class _Section:
    """One second-order section in direct form II transposed, with state."""

    b0: float
    b1: float
    b2: float
    a1: float
    a2: float
    z1: float = 0.0
    z2: float = 0.0

    def step(self, x: float) -> float:
        y = self.b0 * x + self.z1
        self.z1 = self.b1 * x - self.a1 * y + self.z2
        self.z2 = self.b2 * x - self.a2 * y
        return y

    def poles(self):
        if self.a2 == 0.0:
            return np.array([complex(-self.a1)]) if self.a1 != 0.0 else np.empty(0, complex)
        return np.roots([1.0, self.a1, self.a2])


class BiquadCascade:
    """Cascade of biquad sections; owns the running filter state.

    A cascade instance carries state and must be fed by a single stream;
    create one instance per channel.
    """

    def __init__(self, sections: list[_Section], spec: FilterSpec | None = None):
        self.sections = sections
        self.spec = spec

    def reset(self) -> None:
        for s in self.sections:
            s.z1 = 0.0
            s.z2 = 0.0

    def copy(self) -> "BiquadCascade":
        return BiquadCascade(
            [_Section(s.b0, s.b1, s.b2, s.a1, s.a2, s.z1, s.z2) for s in self.sections],
            self.spec,
        )

    def step(self, sample: float) -> float:
        """Advance the cascade by one sample and return the filtered value."""
        if not math.isfinite(sample):
            raise ValueError(f"non-finite input sample {sample!r}")
        y = float(sample)
        for s in self.sections:
            y = s.step(y)
        return y

    def apply(self, signal) -> np.ndarray:
        """Filter a whole signal causally, starting from the current state.

        Equivalent by construction to folding `step` over the samples.
        """
        x = np.asarray(signal, dtype=float)
        bad = np.flatnonzero(~np.isfinite(x))
        if bad.size:
            raise ValueError(f"non-finite input sample at index {bad[0]}")
        out = np.empty_like(x)
        for i, xi in enumerate(x):
            y = float(xi)
            for s in self.sections:
                y = s.step(y)
            out[i] = y
        return out

    def poles(self) -> np.ndarray:
        return np.concatenate([s.poles() for s in self.sections])

    def frequency_response(self, freqs_hz, sample_rate_hz: float | None = None) -> np.ndarray:
        """Complex response H(e^{j2*pi*f/fs}) evaluated at the given frequencies."""
        fs = sample_rate_hz or (self.spec.sample_rate_hz if self.spec else None)
        if fs is None:
            raise ValueError("sample rate unknown; pass sample_rate_hz")
        w = 2.0 * np.pi * np.asarray(freqs_hz, dtype=float) / fs
        z1 = np.exp(-1j * w)
        z2 = z1 * z1
        h = np.ones_like(z1, dtype=complex)
        for s in self.sections:
            h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2)
        return h

    def magnitude_response(self, freqs_hz, sample_rate_hz: float | None = None) -> np.ndarray:
        """|H| evaluated per section in a form that stays relatively accurate
        near the Nyquist zeros, where the complex product underflows."""
        fs = sample_rate_hz or (self.spec.sample_rate_hz if self.spec else None)
        if fs is None:
            raise ValueError("sample rate unknown; pass sample_rate_hz")
        w = 2.0 * np.pi * np.asarray(freqs_hz, dtype=float) / fs
        z1 = np.exp(-1j * w)
        z2 = z1 * z1
        mag = np.ones_like(w)
        for s in self.sections:
            den = np.abs(1.0 + s.a1 * z1 + s.a2 * z2)
            edge = 2.0 * np.cos(w / 2.0)  # |1 + z^-1|
            if s.a2 == 0.0:
                mag *= s.b0 * edge / den
            else:
                mag *= s.b0 * edge * edge / den
        return mag

    def coefficient_table(self) -> str:
        """Plain-text table of section coefficients for inspection."""
        lines = ["section        b0              b1              b2              a1              a2"]
        for i, s in enumerate(self.sections):
            lines.append(
                f"{i:7d} {s.b0:15.9e} {s.b1:15.9e} {s.b2:15.9e} {s.a1:15.9e} {s.a2:15.9e}"
            )
        return "\n".join(lines)

    @property
    def b0_total(self) -> float:
        out = 1.0
        for s in self.sections:
            out *= s.b0
        return out


def design_butterworth(spec: FilterSpec) -> BiquadCascade:
    """Design a low-pass Butterworth cascade for the given spec.

    Prototype poles sit on the circle of radius tan(pi*fc/fs) in the left
    half-plane; the bilinear map places all zeros at z=-1 and each section is
    normalized to unit DC gain, so the cascade's DC gain is exactly 1.
    """
    n = spec.order
    wc = math.tan(math.pi * spec.cutoff_hz / spec.sample_rate_hz)

    # Left-half-plane prototype poles, scaled by the warped cutoff.
    analog_poles = [
        wc * cmath.exp(1j * math.pi * (2 * k + n - 1) / (2 * n)) for k in range(1, n + 1)
    ]

    sections: list[_Section] = []
    # Conjugate pairs -> biquads (take poles with positive imaginary part).
    pairs = [p for p in analog_poles if p.imag > 1e-12]
    for p in pairs:
        zp = (1 + p) / (1 - p)  # bilinear transform, T normalized into wc
        a1 = -2.0 * zp.real
        a2 = abs(zp) ** 2
        gain = (1.0 + a1 + a2) / 4.0  # unity gain at z=1 with zeros (1 + z^-1)^2
        sections.append(_Section(b0=gain, b1=2.0 * gain, b2=gain, a1=a1, a2=a2))
    # Odd order leaves one real pole -> first-order section.
    if n % 2:
        p = -wc
        zp = (1 + p) / (1 - p)
        a1 = -zp
        gain = (1.0 + a1) / 2.0
        sections.append(_Section(b0=gain, b1=gain, b2=0.0, a1=a1, a2=0.0))

    return BiquadCascade(sections, spec)
