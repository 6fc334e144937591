import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from nnhacore.core import (BlockProcessor, EnvelopeFollower, HaCoreConfig, baseline_level_tracker,
                           make_window, process_file, process_signal, smoothing_coefficient)
from nnhacore.errors import DataError, SampleRateError, ShapeError
from nnhacore.filterbank import filter_signal
from nnhacore.prescription import Mlp, forward, reference_gain

from .conftest import FS, bin_sine

N, HOP = 192, 96


def neural_config(model=None):
    return HaCoreConfig(model=model if model is not None else Mlp.zeros([6, 8, 6]))


def baseline_config(rule):
    return HaCoreConfig(engine="compressor_baseline", rule=rule)


class TestWindow:
    def test_n4(self):
        np.testing.assert_allclose(make_window(4), [0.0, 0.5, 1.0, 0.5], rtol=0, atol=1e-15)

    def test_center_is_one(self):
        assert make_window(192)[96] == 1.0

    @given(half=st.integers(1, 2048))
    def test_cola_exact(self, half):
        w = make_window(2 * half)
        assert np.all(w[:half] + w[half:] == 1.0)

    def test_matches_periodic_hann(self):
        n = 192
        np.testing.assert_allclose(make_window(n), 0.5 * (1 - np.cos(2 * np.pi * np.arange(n) / n)),
                                   atol=1e-15)

    @pytest.mark.parametrize("n", [3, 0, 7.5])
    def test_rejects_odd(self, n):
        with pytest.raises(ValueError):
            make_window(n)


class TestLevelTracker:
    def test_step_response_time_constant(self):
        # closed form: after n samples of a unit step, level = 1 - alpha**n
        level = 0.0
        for _ in range(120):
            level = baseline_level_tracker(level, 1.0, 5.0, 50.0, FS)
        assert level == pytest.approx(1 - math.exp(-1), abs=1e-12)

    def test_converges_monotonically(self):
        level, trace = 0.0, []
        for _ in range(5000):
            level = baseline_level_tracker(level, -0.3, 5.0, 50.0, FS)
            trace.append(level)
        assert np.all(np.diff(trace) >= 0)
        assert trace[-1] == pytest.approx(0.3, abs=1e-12)

    def test_release_decay_geometric(self):
        alpha = smoothing_coefficient(50.0, FS)
        level = 1.0
        for k in range(1, 50):
            level = baseline_level_tracker(level, 0.0, 5.0, 50.0, FS)
            assert level == pytest.approx(alpha ** k, rel=1e-12)

    def test_follower_matches_scalar_tracker(self):
        x = np.random.default_rng(0).standard_normal((2, 300))
        follower = EnvelopeFollower(2, 5.0, 50.0, FS)
        out = np.concatenate([follower.process(x[:, :100]), follower.process(x[:, 100:])], axis=1)
        for m in range(2):
            level = 0.0
            for t in range(300):
                level = baseline_level_tracker(level, x[m, t], 5.0, 50.0, FS)
                assert out[m, t] == pytest.approx(level, rel=1e-12, abs=1e-15)

    def test_rejects_non_positive_times(self):
        with pytest.raises(ValueError):
            baseline_level_tracker(0.0, 1.0, 0.0, 50.0, FS)


class TestConfig:
    def test_neural_needs_model(self):
        with pytest.raises(ValueError, match="model"):
            HaCoreConfig()

    def test_baseline_needs_rule(self):
        with pytest.raises(ValueError, match="rule"):
            HaCoreConfig(engine="compressor_baseline")

    def test_model_band_mismatch(self):
        with pytest.raises(ShapeError):
            HaCoreConfig(model=Mlp.zeros([5, 3, 5]))


class TestBlockProcessing:
    def test_wrong_sample_count(self):
        proc = BlockProcessor(neural_config())
        with pytest.raises(ShapeError):
            proc.process_block(np.zeros(HOP + 1))

    @pytest.mark.parametrize("engine", ["neural", "baseline"])
    def test_silence_in_silence_out(self, engine, rule, trained):
        cfg = neural_config(trained.model) if engine == "neural" else baseline_config(rule)
        proc = BlockProcessor(cfg)
        for _ in range(20):
            out, _ = proc.process_block(np.zeros(HOP))
            assert np.all(np.abs(out) < 1e-12)

    def test_impulse_peak_at_half_filter_length(self):
        x = np.zeros(2000)
        x[0] = 1.0
        y = process_signal(BlockProcessor(neural_config()), x)
        assert int(np.argmax(np.abs(y))) == N // 2

    def test_raw_stream_lags_by_one_extra_hop(self):
        proc = BlockProcessor(neural_config())
        x = np.zeros(HOP * 10)
        x[0] = 1.0
        raw = np.concatenate([proc.process_block(b)[0] for b in x.reshape(-1, HOP)])
        assert int(np.argmax(np.abs(raw))) == N // 2 + HOP

    def test_sine_reconstruction_60_db_spl(self):
        amplitude = math.sqrt(2) * 10 ** ((60 - 100) / 20)
        x = bin_sine(1000.0, 20 * N, amplitude=amplitude)
        y = process_signal(BlockProcessor(neural_config()), x)
        settled = slice(2 * N, len(x))
        ref = x[2 * N - N // 2:len(x) - N // 2]
        assert np.sqrt(np.mean((y[settled] - ref) ** 2) / np.mean(ref ** 2)) < 1e-4

    def test_frozen_gains_scale_exactly(self, trained):
        x = np.random.default_rng(3).standard_normal(50 * HOP) * 0.1
        levels = np.array([55.0, 60.0, 65.0, 70.0, 62.0, 58.0])
        cfg = neural_config(trained.model)
        y1 = process_signal(BlockProcessor(cfg, fixed_levels=levels), x)
        y2 = process_signal(BlockProcessor(cfg, fixed_levels=levels), 0.5 * x)
        np.testing.assert_allclose(y2, 0.5 * y1, rtol=0, atol=1e-12)

    def test_block_is_gain_weighted_band_sum(self, bank, trained):
        # superposition inside one block, checked against independent convolutions
        x = np.random.default_rng(4).standard_normal(6 * HOP) * 0.05
        proc = BlockProcessor(neural_config(trained.model))
        outs, records = zip(*[proc.process_block(b) for b in x.reshape(-1, HOP)])
        bands = np.stack([filter_signal(f, x) for f in bank.filters])
        w = make_window(N)
        k = 4
        frame = bands[:, (k - 1) * HOP:(k + 1) * HOP]
        prev = bands[:, (k - 2) * HOP:k * HOP]
        gains = 10 ** (records[k].gains_db / 20)
        prev_gains = 10 ** (records[k - 1].gains_db / 20)
        expected = (prev_gains @ prev)[HOP:] * w[HOP:] + (gains @ frame)[:HOP] * w[:HOP]
        np.testing.assert_allclose(outs[k], expected, rtol=0, atol=1e-12)
        np.testing.assert_allclose(records[k].gains_db, forward(trained.model, records[k].levels_db_spl))

    def test_trace_levels_are_frame_rms(self, bank):
        x = bin_sine(1000.0, 8 * HOP, amplitude=0.2)
        proc = BlockProcessor(neural_config())
        records = [proc.process_block(b)[1] for b in x.reshape(-1, HOP)]
        band2 = filter_signal(bank.filters[2], x)
        frame = band2[5 * HOP:7 * HOP]
        expected = 20 * np.log10(np.sqrt(np.mean(frame ** 2))) + 100
        assert records[6].levels_db_spl[2] == pytest.approx(expected, abs=1e-9)

    def test_baseline_compresses_above_knee(self, rule):
        x = bin_sine(2000.0, 200 * HOP, amplitude=0.5)
        y1 = process_signal(BlockProcessor(baseline_config(rule)), x)
        y2 = process_signal(BlockProcessor(baseline_config(rule)), 2 * x)
        tail = slice(150 * HOP, 200 * HOP)
        ratio = np.sqrt(np.mean(y2[tail] ** 2) / np.mean(y1[tail] ** 2))
        assert 1.0 < ratio < 2.0

    def test_baseline_gain_follows_rule(self, rule):
        proc = BlockProcessor(baseline_config(rule))
        x = bin_sine(2000.0, 100 * HOP, amplitude=0.3)
        records = [proc.process_block(b)[1] for b in x.reshape(-1, HOP)]
        last = records[-1]
        np.testing.assert_allclose(last.gains_db, reference_gain(rule, last.levels_db_spl))

    def test_trace_one_record_per_block(self):
        proc = BlockProcessor(neural_config())
        process_signal(proc, np.zeros(HOP * 7 + 5))
        assert len(proc.trace) == 8
        assert [r.block for r in proc.trace] == list(range(8))


def _write_input(path, x, rate=int(FS), dtype=np.float32):
    if dtype == np.int16:
        wavfile.write(path, rate, np.round(x * 32767).astype(np.int16))
    else:
        wavfile.write(path, rate, x.astype(dtype))


class TestProcessFile:
    def test_lengths_and_trace(self, tmp_path, trained):
        x = np.random.default_rng(0).standard_normal(int(FS)) * 0.05
        _write_input(tmp_path / "in.wav", x)
        summary = process_file(neural_config(trained.model), tmp_path / "in.wav",
                               tmp_path / "out.wav", tmp_path / "trace.csv")
        rate, y = wavfile.read(tmp_path / "out.wav")
        assert rate == int(FS) and y.dtype == np.float32 and len(y) == len(x)
        assert summary.blocks == len(x) // HOP
        with open(tmp_path / "trace.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["block", "band", "level_db_spl", "gain_db"]
        assert len(rows) - 1 == summary.blocks * 6
        assert summary.real_time_factor > 0

    def test_int16_input(self, tmp_path):
        x = bin_sine(1000.0, 20 * N, amplitude=0.5)
        _write_input(tmp_path / "in.wav", x, dtype=np.int16)
        process_file(neural_config(), tmp_path / "in.wav", tmp_path / "out.wav")
        _, y = wavfile.read(tmp_path / "out.wav")
        ref = np.round(x * 32767) / 32768
        np.testing.assert_allclose(y[2 * N:], ref[2 * N - HOP:-HOP], atol=1e-6)

    def test_sample_rate_mismatch(self, tmp_path):
        _write_input(tmp_path / "in.wav", np.zeros(4410), rate=44100)
        with pytest.raises(SampleRateError, match="resample"):
            process_file(neural_config(), tmp_path / "in.wav", tmp_path / "out.wav")
        assert not (tmp_path / "out.wav").exists()

    def test_multichannel_rejected(self, tmp_path):
        wavfile.write(tmp_path / "in.wav", int(FS), np.zeros((100, 2), dtype=np.float32))
        with pytest.raises(DataError, match="mono"):
            process_file(neural_config(), tmp_path / "in.wav", tmp_path / "out.wav")

    def test_deterministic_outputs(self, tmp_path, trained):
        x = np.random.default_rng(1).standard_normal(int(FS) // 2) * 0.1
        _write_input(tmp_path / "in.wav", x)
        for tag in "ab":
            process_file(neural_config(trained.model), tmp_path / "in.wav",
                         tmp_path / f"{tag}.wav", tmp_path / f"{tag}.csv")
        assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


@settings(max_examples=15, deadline=None)
@given(alpha=st.floats(0.01, 10.0), seed=st.integers(0, 2**32 - 1))
def test_frozen_chain_homogeneous(alpha, seed):
    x = np.random.default_rng(seed).standard_normal(10 * HOP)
    cfg = HaCoreConfig(model=Mlp.initialize([6, 4, 6], seed=seed % 1000))
    levels = np.full(6, 65.0)
    y1 = process_signal(BlockProcessor(cfg, fixed_levels=levels), x)
    y2 = process_signal(BlockProcessor(cfg, fixed_levels=levels), alpha * x)
    np.testing.assert_allclose(y2, alpha * y1, rtol=1e-12, atol=1e-12 * max(1.0, alpha))
