import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arasr import features as fe
from arasr.audio import AudioBuffer


def sine(freq, seconds=1.0, rate=16000):
    t = np.arange(int(seconds * rate)) / rate
    return AudioBuffer(0.5 * np.sin(2 * np.pi * freq * t), rate)


def test_one_second_shape():
    feat = fe.spectrogram(AudioBuffer(np.zeros(16000), 16000))
    assert (feat.T, feat.F) == (99, 161)


def test_1khz_peaks_at_bin_20():
    feat = fe.spectrogram(sine(1000))
    assert np.all(np.argmax(feat.frames, axis=1) == 20)


def test_silence_is_log_floor():
    feat = fe.spectrogram(AudioBuffer(np.zeros(4000), 16000))
    assert np.all(feat.frames == fe.LOG_FLOOR)


def test_values_finite(rng):
    feat = fe.spectrogram(AudioBuffer(rng.uniform(-1, 1, 8000), 16000))
    assert np.all(np.isfinite(feat.frames))


def test_short_buffer_raises():
    with pytest.raises(fe.EmptyFeatureError):
        fe.spectrogram(AudioBuffer(np.zeros(319), 16000))


def test_fractional_window_rejected():
    with pytest.raises(ValueError):
        fe.spectrogram(AudioBuffer(np.zeros(1000), 16000), frame_length=0.02003)


def test_exactly_one_window():
    assert fe.spectrogram(AudioBuffer(np.zeros(320), 16000)).T == 1


def test_bins_follow_window():
    feat = fe.spectrogram(AudioBuffer(np.zeros(8000), 8000))
    assert feat.F == 160 // 2 + 1


def test_parseval(rng):
    buf = AudioBuffer(rng.uniform(-1, 1, 1600), 16000)
    power = fe.power_spectrum(buf)
    win = 320
    frame = buf.samples[160:160 + win] * fe.hann(win)
    # one-sided rfft: interior bins count twice, DC and Nyquist once
    p = power[1]
    total = (p[0] + p[-1] + 2 * p[1:-1].sum()) / win
    assert total == pytest.approx(np.sum(frame ** 2), rel=1e-6)


def test_time_shift_covariance(rng):
    x = rng.uniform(-1, 1, 5000)
    a = fe.spectrogram(AudioBuffer(x, 16000)).frames
    b = fe.spectrogram(AudioBuffer(x[160:], 16000)).frames
    np.testing.assert_allclose(b[:-1], a[1:b.shape[0]], atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(320, 6000), extra=st.integers(0, 500))
def test_frame_count_monotone(n, extra):
    assert fe.frame_count(n, 320, 160) <= fe.frame_count(n + extra, 320, 160)
    assert fe.frame_count(n, 320, 160) == 1 + (n - 320) // 160


def test_normalize_constant_is_zero():
    feat = fe.FeatureMatrix(np.full((10, 5), 3.0), 0.02, 0.01)
    np.testing.assert_array_equal(fe.normalize(feat).frames, 0.0)


def test_normalize_moments_and_idempotence(rng):
    feat = fe.FeatureMatrix(rng.normal(4.0, 7.0, size=(50, 161)), 0.02, 0.01)
    once = fe.normalize(feat)
    assert abs(once.frames.mean()) < 1e-6
    assert abs(once.frames.var() - 1.0) < 1e-3
    np.testing.assert_allclose(fe.normalize(once).frames, once.frames, atol=1e-6)


def test_cache_round_trip(tmp_path, rng):
    feat = fe.extract(AudioBuffer(rng.uniform(-1, 1, 4000), 16000))
    fe.write_cache(tmp_path / "f.feat", feat)
    back = fe.read_cache(tmp_path / "f.feat")
    assert (back.frame_length, back.frame_shift) == (0.02, 0.01)
    np.testing.assert_array_equal(back.frames, feat.frames.astype(np.float32))


def test_cache_truncation_detected(tmp_path, rng):
    feat = fe.extract(AudioBuffer(rng.uniform(-1, 1, 4000), 16000))
    fe.write_cache(tmp_path / "f.feat", feat)
    data = (tmp_path / "f.feat").read_bytes()
    (tmp_path / "f.feat").write_bytes(data[:-4])
    with pytest.raises(ValueError):
        fe.read_cache(tmp_path / "f.feat")
