"""Per-band block sound level meter."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ShapeError

DEFAULT_CALIBRATION_DB = 100.0
DEFAULT_FLOOR_DB = -120.0


class Estimator(str, Enum):
    RMS = "rms"
    PAPER_LITERAL = "paper_literal"


@dataclass(frozen=True, eq=False)
class SlmConfig:
    """Level meter calibration.

    Attributes:
        dc_offset: per-band offset added to the linear level before the log.
        calibration_db: per-band dB offset from digital full scale to dB SPL.
            With the default of 100 dB an RMS of 1.0 reads 100 dB SPL.
        estimator: ``rms`` (default) or ``paper_literal`` (plain block sum).
        floor_db: reading reported when the log argument is not positive.
    """

    dc_offset: np.ndarray
    calibration_db: np.ndarray
    estimator: Estimator = Estimator.RMS
    floor_db: float = DEFAULT_FLOOR_DB

    def __post_init__(self):
        dc = np.array(self.dc_offset, dtype=np.float64).reshape(-1)
        cal = np.array(self.calibration_db, dtype=np.float64).reshape(-1)
        if dc.shape != cal.shape:
            raise ShapeError(
                f"dc_offset has {dc.size} bands but calibration_db has {cal.size}"
            )
        if not (np.all(np.isfinite(dc)) and np.all(np.isfinite(cal)) and np.isfinite(self.floor_db)):
            raise ValueError("SLM configuration values must be finite")
        dc.setflags(write=False)
        cal.setflags(write=False)
        object.__setattr__(self, "dc_offset", dc)
        object.__setattr__(self, "calibration_db", cal)
        object.__setattr__(self, "estimator", Estimator(self.estimator))

    @classmethod
    def default(cls, num_bands: int, calibration_db: float = DEFAULT_CALIBRATION_DB, **kwargs):
        return cls(
            dc_offset=np.zeros(num_bands),
            calibration_db=np.full(num_bands, float(calibration_db)),
            **kwargs,
        )

    @property
    def num_bands(self) -> int:
        return self.calibration_db.size


@dataclass(frozen=True, eq=False)
class BandLevels:
    """Per-band block level in dB SPL."""

    levels_db_spl: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        levels = np.array(self.levels_db_spl, dtype=np.float64).reshape(-1)
        levels.setflags(write=False)
        object.__setattr__(self, "levels_db_spl", levels)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.levels_db_spl, dtype=dtype)

    def __len__(self):
        return self.levels_db_spl.size


def amplitude_to_db_spl(amplitude, config: SlmConfig) -> np.ndarray:
    """``20 log10(amplitude + l_t) + l_d`` per band, clamped at the floor.

    ``amplitude`` may be ``(M,)`` or ``(M, T)``; the offsets broadcast over
    the band axis.
    """
    a = np.asarray(amplitude, dtype=np.float64)
    extra = (slice(None),) + (None,) * (a.ndim - 1)
    arg = a + config.dc_offset[extra]
    with np.errstate(divide="ignore", invalid="ignore"):
        db = 20.0 * np.log10(arg) + config.calibration_db[extra]
    db = np.where(arg > 0, np.maximum(db, config.floor_db), config.floor_db)
    return np.nan_to_num(db, nan=config.floor_db, posinf=np.finfo(np.float64).max)


def measure(band_blocks, config: SlmConfig, block_length: int | None = None) -> BandLevels:
    """Estimate each band's level over one block of band-filtered samples.

    Args:
        band_blocks: ``(M, N)`` array, row ``m`` is the band ``m`` signal.
        config: calibration and estimator choice.
        block_length: expected ``N``; checked when given.

    Raises:
        ShapeError: wrong band count or block length.
    """
    blocks = np.asarray(band_blocks, dtype=np.float64)
    if blocks.ndim != 2 or blocks.shape[0] != config.num_bands:
        raise ShapeError(
            f"expected ({config.num_bands}, N) band blocks, got shape {blocks.shape}"
        )
    if block_length is not None and blocks.shape[1] != block_length:
        raise ShapeError(f"block length {blocks.shape[1]} != N = {block_length}")
    if config.estimator is Estimator.RMS:
        with np.errstate(over="ignore"):
            amplitude = np.sqrt(np.einsum("ij,ij->i", blocks, blocks) / blocks.shape[1])
        if not np.all(np.isfinite(amplitude)):
            # rescale so squaring very large finite samples cannot overflow
            peak = np.max(np.abs(blocks), axis=1, keepdims=True)
            safe = np.where(peak > 0, peak, 1.0)
            amplitude = safe[:, 0] * np.sqrt(np.mean((blocks / safe) ** 2, axis=1))
    else:
        with np.errstate(over="ignore"):
            amplitude = np.sum(blocks, axis=1)
    return BandLevels(amplitude_to_db_spl(amplitude, config))
