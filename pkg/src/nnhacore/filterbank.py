"""Log-banded linear-phase brick-wall FIR filter bank.

Each band filter is specified as a 0/1 mask on the DFT grid, transformed
to a zero-phase impulse response and circularly shifted by half its length
so that every filter is causal with a constant group delay of ``N/2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidBandError, SampleRateError, ShapeError, SpecError

DEFAULT_SAMPLE_RATE_HZ = 24000.0
DEFAULT_NUM_BANDS = 6
DEFAULT_BASE_CENTER_HZ = 250.0
DEFAULT_MIN_FREQ_HZ = 20.0


@dataclass(frozen=True)
class FilterBankSpec:
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    num_bands: int = DEFAULT_NUM_BANDS
    base_center_hz: float = DEFAULT_BASE_CENTER_HZ
    min_freq_hz: float = DEFAULT_MIN_FREQ_HZ

    def validate(self) -> "FilterBankSpec":
        """Check every design invariant, raising :class:`SpecError` on failure."""
        if not self.sample_rate_hz > 0:
            raise SpecError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if int(self.num_bands) != self.num_bands or self.num_bands < 1:
            raise SpecError(f"num_bands must be a positive integer, got {self.num_bands}")
        if not self.base_center_hz > 0:
            raise SpecError(f"base centre frequency must be positive, got {self.base_center_hz}")
        if not 0 < self.min_freq_hz < self.base_center_hz:
            raise SpecError(
                f"min_freq_hz must lie in (0, {self.base_center_hz}), got {self.min_freq_hz}"
            )
        filter_length(self)
        nyquist = self.sample_rate_hz / 2
        top = self.num_bands - 1
        _, hi = band_limits(self, top)
        if hi > nyquist:
            raise SpecError(
                f"band {top} top edge {_fmt_hz(hi)} > Nyquist {_fmt_hz(nyquist)}"
            )
        return self


@dataclass(frozen=True)
class BandSpec:
    index: int
    center_hz: float
    lo_hz: float
    hi_hz: float


@dataclass(frozen=True, eq=False)
class FirFilter:
    """A designed band filter.

    ``mask`` holds the one-sided DFT mask (bins ``0..N/2``) the taps were
    generated from.
    """

    taps: np.ndarray
    band: int
    length: int
    dft_resolution_hz: float
    sample_rate_hz: float
    mask: np.ndarray

    def magnitude_response(self) -> np.ndarray:
        """|DFT| of the taps at bins ``0..N/2``."""
        return np.abs(np.fft.rfft(self.taps))


def _fmt_hz(value: float) -> str:
    return f"{value:g}"


def _check_band(spec: FilterBankSpec, m: int) -> int:
    if int(m) != m or not 0 <= m < spec.num_bands:
        raise InvalidBandError(f"band index {m} outside [0, {spec.num_bands})")
    return int(m)


def center_frequency(spec: FilterBankSpec, m: int) -> float:
    """Octave-spaced centre frequency ``base_center_hz * 2**m``."""
    m = _check_band(spec, m)
    return spec.base_center_hz * 2.0**m


def dft_resolution(spec: FilterBankSpec) -> float:
    return spec.base_center_hz / 2


def filter_length(spec: FilterBankSpec) -> int:
    """Number of taps ``N = f_s / f_t``.

    Raises:
        SpecError: if the ratio is not an even positive integer, since the
            overlap-add framework advances by ``N/2``.
    """
    ratio = Fraction(spec.sample_rate_hz) / Fraction(dft_resolution(spec))
    if ratio.denominator != 1:
        raise SpecError(
            f"filter length f_s/f_t = {spec.sample_rate_hz:g}/{dft_resolution(spec):g} "
            "is not an integer"
        )
    n = int(ratio)
    if n <= 0 or n % 2:
        raise SpecError(f"filter length {n} must be even and positive")
    return n


def band_limits(spec: FilterBankSpec, m: int) -> tuple[float, float]:
    m = _check_band(spec, m)
    if m == 0:
        return spec.min_freq_hz, center_frequency(spec, 0) + dft_resolution(spec)
    lo = band_limits(spec, m - 1)[1]
    return lo, 1.5 * center_frequency(spec, m)


def band_spec(spec: FilterBankSpec, m: int) -> BandSpec:
    lo, hi = band_limits(spec, m)
    return BandSpec(index=m, center_hz=center_frequency(spec, m), lo_hz=lo, hi_hz=hi)


def band_mask(spec: FilterBankSpec, m: int) -> np.ndarray:
    """One-sided 0/1 DFT mask for band ``m`` over bins ``0..N/2``.

    Band 0 includes both edges; higher bands exclude their lower edge so that
    a bin on a shared edge belongs to exactly one band. DC is never passed.
    """
    lo, hi = band_limits(spec, m)
    n = filter_length(spec)
    freqs = np.arange(n // 2 + 1) * dft_resolution(spec)
    if m == 0:
        mask = (freqs >= lo) & (freqs <= hi)
    else:
        mask = (freqs > lo) & (freqs <= hi)
    mask[0] = False
    return mask.astype(np.float64)


def design_band_filter(spec: FilterBankSpec, m: int) -> FirFilter:
    spec.validate()
    m = _check_band(spec, m)
    n = filter_length(spec)
    mask = band_mask(spec, m)
    # irfft mirrors the one-sided mask, so the full mask is conjugate symmetric
    zero_phase = np.fft.irfft(mask, n=n)
    half = n // 2
    taps = np.roll(zero_phase, half)
    # enforce exact even symmetry about N/2 (irfft leaves ~1e-17 asymmetry)
    k = np.arange(1, half)
    taps[half + k] = taps[half - k]
    taps.setflags(write=False)
    mask.setflags(write=False)
    return FirFilter(
        taps=taps,
        band=m,
        length=n,
        dft_resolution_hz=dft_resolution(spec),
        sample_rate_hz=spec.sample_rate_hz,
        mask=mask,
    )


class FilterBank:
    """All ``M`` band filters of a spec, stacked for block processing."""

    def __init__(self, spec: FilterBankSpec | None = None):
        self.spec = (spec or FilterBankSpec()).validate()
        self.length = filter_length(self.spec)
        self.bands = tuple(band_spec(self.spec, m) for m in range(self.spec.num_bands))
        self.filters = tuple(design_band_filter(self.spec, m) for m in range(self.spec.num_bands))
        self.taps = np.stack([f.taps for f in self.filters])
        self.masks = np.stack([f.mask for f in self.filters])

    @property
    def num_bands(self) -> int:
        return self.spec.num_bands

    @property
    def sample_rate_hz(self) -> float:
        return self.spec.sample_rate_hz

    @property
    def hop(self) -> int:
        return self.length // 2


class FirStream:
    """Streaming linear convolution with one FIR filter.

    Keeps the last ``N - 1`` input samples between calls so that
    concatenated outputs equal a single convolution of the whole stream.
    """

    def __init__(self, fir: FirFilter, sample_rate_hz: float | None = None):
        if sample_rate_hz is not None and sample_rate_hz != fir.sample_rate_hz:
            raise SampleRateError(
                f"stream rate {sample_rate_hz:g} Hz does not match filter rate "
                f"{fir.sample_rate_hz:g} Hz"
            )
        self.fir = fir
        self.history = np.zeros(fir.length - 1)

    def reset(self) -> None:
        self.history[:] = 0.0

    def process(self, samples) -> np.ndarray:
        x = np.asarray(samples, dtype=np.float64)
        if x.ndim != 1:
            raise ShapeError(f"expected a 1-D sample block, got shape {x.shape}")
        buf = np.concatenate([self.history, x])
        out = np.convolve(buf, self.fir.taps, mode="valid")
        self.history = buf[len(buf) - (self.fir.length - 1):].copy()
        return out


class FilterBankStream:
    """Streaming convolution of one input through every band filter at once.

    Output has shape ``(M, len(samples))``; row ``m`` equals what a
    :class:`FirStream` on filter ``m`` would produce.
    """

    def __init__(self, bank: FilterBank, sample_rate_hz: float | None = None):
        if sample_rate_hz is not None and sample_rate_hz != bank.sample_rate_hz:
            raise SampleRateError(
                f"stream rate {sample_rate_hz:g} Hz does not match filter bank rate "
                f"{bank.sample_rate_hz:g} Hz"
            )
        self.bank = bank
        self.history = np.zeros(bank.length - 1)

    def reset(self) -> None:
        self.history[:] = 0.0

    def process(self, samples) -> np.ndarray:
        x = np.asarray(samples, dtype=np.float64)
        if x.ndim != 1:
            raise ShapeError(f"expected a 1-D sample block, got shape {x.shape}")
        n = self.bank.length
        buf = np.concatenate([self.history, x])
        out = np.stack([np.convolve(buf, taps, mode="valid") for taps in self.bank.taps])
        self.history = buf[len(buf) - (n - 1):].copy()
        return out


def filter_signal(fir: FirFilter, samples) -> np.ndarray:
    """Causal convolution of a whole signal, truncated to the input length."""
    x = np.asarray(samples, dtype=np.float64)
    return np.convolve(x, fir.taps)[: len(x)]
