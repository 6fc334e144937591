"""Block-linear neural hearing aid core and the compressor baseline.

Both engines share the framing: every step takes ``N/2`` new samples, runs
them through the band filters, forms an ``N``-sample frame per band from the
previous and current half blocks, applies gains, sums the bands and
crossfades the overlap with the previous frame using a periodic Hann
window.

The neural engine holds one gain per band for the whole frame, so within a
block the chain is linear. The baseline engine computes a gain per sample
from a running attack/release level tracker, as a compressor bank would.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

from .errors import DataError, SampleRateError, ShapeError
from .filterbank import FilterBank, FilterBankSpec, FilterBankStream
from .prescription import CompressorRule, Mlp, forward, reference_gain
from .slm import BandLevels, SlmConfig, amplitude_to_db_spl, measure

ENGINES = ("neural", "compressor_baseline")
DEFAULT_ATTACK_MS = 5.0
DEFAULT_RELEASE_MS = 50.0
TRACE_HEADER = ["block", "band", "level_db_spl", "gain_db"]


def make_window(n: int) -> np.ndarray:
    """Periodic Hann window of even length ``n``.

    The second half is written as ``1 - first half`` so that
    ``w[k] + w[k + n/2] == 1`` holds exactly in floating point.
    """
    if int(n) != n or n < 2 or n % 2:
        raise ValueError(f"window length must be a positive even integer, got {n}")
    n = int(n)
    half = n // 2
    head = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(half) / n))
    return np.concatenate([head, 1.0 - head])


def smoothing_coefficient(time_ms: float, sample_rate_hz: float) -> float:
    return math.exp(-1.0 / (sample_rate_hz * time_ms / 1000.0))


def baseline_level_tracker(state: float, sample: float, attack_ms: float,
                           release_ms: float, sample_rate_hz: float) -> float:
    """One step of the attack/release envelope follower on ``|sample|``."""
    if not (attack_ms > 0 and release_ms > 0):
        raise ValueError("attack and release times must be positive")
    x = abs(sample)
    tau = attack_ms if x > state else release_ms
    alpha = smoothing_coefficient(tau, sample_rate_hz)
    return alpha * state + (1.0 - alpha) * x


class EnvelopeFollower:
    """Per-band attack/release tracker over sample blocks."""

    def __init__(self, num_bands: int, attack_ms: float, release_ms: float,
                 sample_rate_hz: float):
        if not (attack_ms > 0 and release_ms > 0):
            raise ValueError("attack and release times must be positive")
        self.attack = smoothing_coefficient(attack_ms, sample_rate_hz)
        self.release = smoothing_coefficient(release_ms, sample_rate_hz)
        self.state = [0.0] * num_bands

    def process(self, band_samples: np.ndarray) -> np.ndarray:
        """Envelope after every sample; input and output are ``(M, T)``."""
        out = np.empty_like(band_samples)
        att, rel = self.attack, self.release
        for m, row in enumerate(band_samples):
            env = self.state[m]
            trace = []
            for x in np.abs(row).tolist():
                a = att if x > env else rel
                env = a * env + (1.0 - a) * x
                trace.append(env)
            out[m] = trace
            self.state[m] = env
        return out


@dataclass
class HaCoreConfig:
    filterbank: FilterBankSpec = field(default_factory=FilterBankSpec)
    slm: SlmConfig | None = None
    engine: str = "neural"
    model: Mlp | None = None
    rule: CompressorRule | None = None
    attack_ms: float = DEFAULT_ATTACK_MS
    release_ms: float = DEFAULT_RELEASE_MS
    window: str = "periodic_hann"

    def __post_init__(self):
        self.filterbank.validate()
        m = self.filterbank.num_bands
        if self.slm is None:
            self.slm = SlmConfig.default(m)
        if self.slm.num_bands != m:
            raise ShapeError(f"SLM configured for {self.slm.num_bands} bands, filter bank has {m}")
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.window != "periodic_hann":
            raise ValueError(f"unsupported window {self.window!r}")
        if self.engine == "neural":
            if self.model is None:
                raise ValueError("neural engine needs a loaded prescription model")
            if self.model.num_bands != m:
                raise ShapeError(f"model has {self.model.num_bands} bands, filter bank has {m}")
        else:
            if self.rule is None:
                raise ValueError("compressor baseline needs a compressor rule")
            if self.rule.num_bands != m:
                raise ShapeError(f"rule has {self.rule.num_bands} bands, filter bank has {m}")
            if not (self.attack_ms > 0 and self.release_ms > 0):
                raise ValueError("attack and release times must be positive")


@dataclass(frozen=True, eq=False)
class TraceRecord:
    block: int
    levels_db_spl: np.ndarray
    gains_db: np.ndarray


class BlockProcessor:
    """Streaming state for one mono audio stream.

    Args:
        config: engine, filter bank and calibration.
        fixed_levels: when given, the neural engine skips the level meter and
            prescribes from these levels for every block (frozen gains).
    """

    def __init__(self, config: HaCoreConfig, fixed_levels=None):
        self.config = config
        self.bank = FilterBank(config.filterbank)
        self.length = self.bank.length
        self.hop = self.bank.hop
        self.window = make_window(self.length)
        self._w_head = self.window[: self.hop]
        self._w_tail = self.window[self.hop:]
        self.stream = FilterBankStream(self.bank)
        m = self.bank.num_bands
        self.prev_bands = np.zeros((m, self.hop))
        self.y_prev = np.zeros(self.length)
        self.block_index = 0
        self.trace: list[TraceRecord] = []
        self.fixed_levels = None
        if fixed_levels is not None:
            self.fixed_levels = np.asarray(BandLevels(fixed_levels), dtype=np.float64)
            if self.fixed_levels.size != m:
                raise ShapeError(f"fixed levels need {m} bands, got {self.fixed_levels.size}")
        if config.engine == "compressor_baseline":
            self.follower = EnvelopeFollower(m, config.attack_ms, config.release_ms,
                                             self.bank.sample_rate_hz)
            self.prev_gains = np.ones((m, self.hop))

    @property
    def sample_rate_hz(self) -> float:
        return self.bank.sample_rate_hz

    def process_block(self, new_samples) -> tuple[np.ndarray, TraceRecord]:
        """Consume ``N/2`` samples and emit the ``N/2`` completed output samples."""
        x = np.asarray(new_samples, dtype=np.float64)
        if x.shape != (self.hop,):
            raise ShapeError(f"expected {self.hop} new samples, got shape {x.shape}")
        new_bands = self.stream.process(x)
        frame = np.concatenate([self.prev_bands, new_bands], axis=1)
        if self.config.engine == "neural":
            y, levels, gains_db = self._neural(frame)
        else:
            y, levels, gains_db = self._baseline(frame, new_bands)
        out = self.y_prev[self.hop:] * self._w_tail + y[: self.hop] * self._w_head
        self.y_prev = y
        self.prev_bands = new_bands
        record = TraceRecord(self.block_index, levels, gains_db)
        self.trace.append(record)
        self.block_index += 1
        return out, record

    def _neural(self, frame):
        if self.fixed_levels is not None:
            levels = self.fixed_levels
        else:
            levels = measure(frame, self.config.slm, self.length).levels_db_spl
        gains_db = forward(self.config.model, levels)
        linear = 10.0 ** (gains_db / 20.0)
        return linear @ frame, levels, gains_db

    def _baseline(self, frame, new_bands):
        env = self.follower.process(new_bands)
        levels = amplitude_to_db_spl(env, self.config.slm)
        gains_db = reference_gain(self.config.rule, levels.T).T
        linear = 10.0 ** (gains_db / 20.0)
        gains = np.concatenate([self.prev_gains, linear], axis=1)
        self.prev_gains = linear
        y = np.sum(gains * frame, axis=0)
        return y, levels[:, -1].copy(), gains_db[:, -1].copy()

    def flush(self) -> np.ndarray:
        """Finish the pending overlap as if the last gains were held."""
        return self.y_prev[self.hop:].copy()


def process_signal(processor: BlockProcessor, samples) -> np.ndarray:
    """Run a whole signal through ``processor`` and align the output.

    The one-hop framing offset is removed and the final half block is
    flushed, so the result has the input's length and lags it only by the
    filters' group delay of ``N/2`` samples.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected mono samples, got shape {x.shape}")
    hop = processor.hop
    blocks = -(-len(x) // hop)
    padded = np.zeros(blocks * hop)
    padded[: len(x)] = x
    out = [processor.process_block(padded[i * hop:(i + 1) * hop])[0] for i in range(blocks)]
    out.append(processor.flush())
    y = np.concatenate(out)[hop:]
    return y[: len(x)]


def read_wav(path) -> tuple[float, np.ndarray]:
    """Mono 16-bit PCM or 32-bit float WAV as float64 in [-1, 1)."""
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise DataError(f"{path}: unreadable WAV file ({exc})") from exc
    if data.ndim != 1:
        raise DataError(f"{path}: {data.shape[1]}-channel input; only mono is supported")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}; use 16-bit PCM or 32-bit float")
    return float(rate), samples


def write_wav(path, sample_rate_hz: float, samples) -> None:
    wavfile.write(path, int(sample_rate_hz), np.asarray(samples, dtype=np.float32))


def write_trace(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for rec in records:
            for band, (level, gain) in enumerate(zip(rec.levels_db_spl, rec.gains_db)):
                writer.writerow([rec.block, band, repr(float(level)), repr(float(gain))])


@dataclass(frozen=True)
class ProcessSummary:
    blocks: int
    samples: int
    sample_rate_hz: float
    latency_samples: int
    peak_level_dbfs: float
    real_time_factor: float

    def as_dict(self) -> dict:
        return {
            "blocks": self.blocks,
            "samples": self.samples,
            "sample_rate_hz": self.sample_rate_hz,
            "latency_samples": self.latency_samples,
            "latency_ms": 1000.0 * self.latency_samples / self.sample_rate_hz,
            "peak_level_dbfs": self.peak_level_dbfs if math.isfinite(self.peak_level_dbfs) else None,
            "real_time_factor": self.real_time_factor,
        }


def process_file(config: HaCoreConfig, input_path, output_path, trace_path=None) -> ProcessSummary:
    """Process a mono WAV file, writing float WAV output and an optional trace.

    Raises:
        SampleRateError: the file rate differs from the filter bank rate;
            no resampling is done.
        DataError: multichannel or unsupported input.
    """
    rate, samples = read_wav(input_path)
    expected = config.filterbank.sample_rate_hz
    if rate != expected:
        raise SampleRateError(
            f"{input_path}: sample rate {rate:g} Hz does not match the filter bank "
            f"rate {expected:g} Hz; resample the input first"
        )
    processor = BlockProcessor(config)
    start = time.perf_counter()
    out = process_signal(processor, samples)
    elapsed = time.perf_counter() - start
    write_wav(output_path, rate, out)
    if trace_path is not None:
        write_trace(processor.trace, trace_path)
    peak = float(np.max(np.abs(out))) if out.size else 0.0
    duration = len(samples) / rate
    return ProcessSummary(
        blocks=len(processor.trace),
        samples=len(out),
        sample_rate_hz=rate,
        latency_samples=processor.hop,
        peak_level_dbfs=20.0 * math.log10(peak) if peak > 0 else float("-inf"),
        real_time_factor=duration / elapsed if elapsed > 0 else float("inf"),
    )
