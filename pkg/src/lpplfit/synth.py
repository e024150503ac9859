"""Synthetic LPPL series with known ground truth."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError
from .model import LinearParams, NonlinearParams, lppl_value
from .timeseries import TimeSeries

WEEK = 7 / 365.25


@dataclass(frozen=True)
class SynthSpec:
    nl: NonlinearParams
    lin: LinearParams
    start: float
    end: float
    spacing: float = WEEK
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.start < self.end:
            raise ValidationError("start must precede end")
        if not self.end < self.nl.tc:
            raise ValidationError(f"end ({self.end}) must precede tc ({self.nl.tc})")
        if not self.spacing > 0:
            raise ValidationError("spacing must be positive")
        if not self.noise_sigma >= 0:
            raise ValidationError("noise_sigma must be non-negative")

    def grid(self) -> np.ndarray:
        n = math.floor((self.end - self.start) / self.spacing + 1e-9) + 1
        return self.start + self.spacing * np.arange(n)

    def truth(self) -> dict:
        return {
            "nl": asdict(self.nl),
            "lin": asdict(self.lin),
            "start": self.start,
            "end": self.end,
            "spacing": self.spacing,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class SynthSeries:
    series: TimeSeries
    clean: np.ndarray
    spec: SynthSpec


def generate(spec: SynthSpec, times=None, literal_cos: bool = False) -> SynthSeries:
    """Sample the model on ``spec.grid()`` (or explicit ``times``) plus Gaussian noise.

    Noise comes from a PCG64 generator seeded with ``spec.seed``.
    """
    t = spec.grid() if times is None else np.asarray(times, dtype=float)
    if t.size and not t.max() < spec.nl.tc:
        raise ValidationError("sample times must precede tc")
    clean = np.asarray(lppl_value(spec.nl, spec.lin, t, literal_cos), dtype=float)
    noise = np.random.Generator(np.random.PCG64(spec.seed)).normal(0.0, 1.0, t.size)
    values = clean + spec.noise_sigma * noise
    return SynthSeries(TimeSeries(t, values, label="synthetic"), clean, spec)
