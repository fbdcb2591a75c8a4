import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from lnt.data import (
    InjectionSpec,
    LabeledSeries,
    NormStats,
    compute_stats,
    destandardize,
    inject_sine_anomalies,
    load_csv,
    save_csv,
    standardize,
    synth_normal,
    window,
)


def label_runs(labels):
    """(start, length) of each maximal run of ones."""
    padded = np.concatenate([[0], labels, [0]])
    diff = np.diff(padded)
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    return list(zip(starts, ends - starts))


# ---------------------------------------------------------------------------
# LabeledSeries


def test_series_defaults_channel_names():
    s = LabeledSeries(np.zeros((3, 10)))
    assert s.channel_names == ["ch0", "ch1", "ch2"]
    assert s.channels == 3 and s.length == 10
    assert s.labels is None


def test_series_rejects_bad_shapes():
    with pytest.raises(ValueError):
        LabeledSeries(np.zeros(10))
    with pytest.raises(ValueError):
        LabeledSeries(np.zeros((2, 10)), labels=np.zeros(9, dtype=int))
    with pytest.raises(ValueError):
        LabeledSeries(np.zeros((2, 10)), channel_names=["only-one"])


def test_series_rejects_bad_label_values():
    labels = np.zeros(10, dtype=int)
    labels[3] = 2
    with pytest.raises(ValueError, match="0 or 1"):
        LabeledSeries(np.zeros((1, 10)), labels=labels)


# ---------------------------------------------------------------------------
# CSV


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    series = LabeledSeries(
        rng.normal(size=(2, 40)),
        labels=(rng.uniform(size=40) < 0.3).astype(int),
        channel_names=["acc_x", "acc_y"],
    )
    path = tmp_path / "series.csv"
    save_csv(path, series)
    back = load_csv(path)
    assert back.channel_names == ["acc_x", "acc_y"]
    assert_array_equal(back.labels, series.labels)
    assert_allclose(back.values, series.values, rtol=1e-8)


def test_csv_rewrite_is_byte_identical(tmp_path):
    series = synth_normal(3, 500, seed=7)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    save_csv(a, series)
    save_csv(b, series)
    assert a.read_bytes() == b.read_bytes()


def test_csv_without_label_column(tmp_path):
    path = tmp_path / "plain.csv"
    path.write_text("x,y\n1.0,2.0\n3.0,4.0\n")
    series = load_csv(path)
    assert series.labels is None
    assert_allclose(series.values, [[1.0, 3.0], [2.0, 4.0]])


def test_csv_rejects_nan_with_row_number(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x,label\n1.0,0\nNaN,0\n2.0,1\n")
    with pytest.raises(ValueError, match="row 3"):
        load_csv(path)


def test_csv_rejects_non_numeric(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x\n1.0\nhello\n")
    with pytest.raises(ValueError, match="row 3.*'hello'"):
        load_csv(path)


def test_csv_rejects_ragged_rows(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x,y\n1.0,2.0\n3.0\n")
    with pytest.raises(ValueError, match="row 3"):
        load_csv(path)


def test_csv_rejects_bad_label(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x,label\n1.0,2\n")
    with pytest.raises(ValueError, match="label"):
        load_csv(path)


def test_csv_rejects_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(ValueError, match="empty"):
        load_csv(path)


# ---------------------------------------------------------------------------
# normalization


def test_compute_stats_matches_numpy():
    series = LabeledSeries(np.random.default_rng(1).normal(2.0, 3.0, size=(2, 1000)))
    stats = compute_stats(series)
    assert_allclose(stats.mean, series.values.mean(axis=1), rtol=1e-6)
    assert_allclose(stats.std, series.values.std(axis=1), rtol=1e-6)
    assert stats.keep.all()


def test_standardize_centers_and_scales():
    series = synth_normal(3, 4000, seed=3)
    stats = compute_stats(series)
    out = standardize(series, stats)
    assert abs(out.values.mean(axis=1)).max() < 1e-5
    assert_allclose(out.values.std(axis=1), 1.0, atol=1e-4)


def test_standardize_drops_constant_channel():
    values = np.random.default_rng(0).normal(size=(3, 200))
    values[1] = 5.0
    series = LabeledSeries(values, channel_names=["a", "flat", "c"])
    stats = compute_stats(series)
    assert list(stats.keep) == [True, False, True]
    out = standardize(series, stats)
    assert out.channels == 2
    assert out.channel_names == ["a", "c"]


def test_standardize_uses_train_stats_not_its_own():
    train = synth_normal(2, 3000, seed=0)
    stats = compute_stats(train)
    shifted = LabeledSeries(train.values + 10.0)
    out = standardize(shifted, stats)
    # the +10 shift must survive, proving no re-fit happened
    assert out.values.mean() > 5.0


def test_destandardize_roundtrip():
    series = synth_normal(3, 2000, seed=9)
    stats = compute_stats(series)
    back = destandardize(standardize(series, stats), stats)
    assert np.abs(back.values - series.values).max() < 1e-5


def test_standardize_channel_count_mismatch():
    series = synth_normal(2, 1000, seed=0)
    stats = compute_stats(synth_normal(3, 1000, seed=0))
    with pytest.raises(ValueError, match="channels"):
        standardize(series, stats)
    with pytest.raises(ValueError, match="channels"):
        destandardize(series, NormStats(np.zeros(3), np.ones(3), np.ones(3, bool)))


# ---------------------------------------------------------------------------
# synthesis


def test_synth_is_seed_deterministic():
    a = synth_normal(3, 1000, seed=42)
    b = synth_normal(3, 1000, seed=42)
    c = synth_normal(3, 1000, seed=43)
    assert_array_equal(a.values, b.values)
    assert (a.values != c.values).any()


def test_synth_shape_and_labels():
    s = synth_normal(4, 777, seed=1)
    assert s.values.shape == (4, 777)
    assert s.labels.shape == (777,)
    assert not s.labels.any()


def test_synth_amplitude_envelope():
    # 2..4 components with amplitudes in [0.5,1] keep the std in a sane band
    for seed in range(5):
        s = synth_normal(3, 50_000, seed=seed)
        stds = s.values.std(axis=1)
        assert (stds > 0.25).all() and (stds < 3.0).all()


def test_synth_is_slow_compared_to_anomaly_band():
    # background energy should live below 20 cycles per 16000 frames
    s = synth_normal(1, 32_000, seed=5)
    spectrum = np.abs(np.fft.rfft(s.values[0]))
    freqs = np.fft.rfftfreq(32_000, d=1.0) * 16_000.0
    dominant = freqs[np.argmax(spectrum)]
    assert dominant < 20.0


# ---------------------------------------------------------------------------
# injection


def test_injection_fraction_and_ranges():
    series = synth_normal(3, 50_000, seed=0)
    out = inject_sine_anomalies(series, InjectionSpec(seed=1))
    frac = out.labels.mean()
    assert abs(frac - 0.10) <= 0.02
    for _, length in label_runs(out.labels):
        assert 512 <= length <= 4096


def test_injection_is_seed_deterministic():
    series = synth_normal(2, 30_000, seed=0)
    a = inject_sine_anomalies(series, InjectionSpec(seed=5))
    b = inject_sine_anomalies(series, InjectionSpec(seed=5))
    c = inject_sine_anomalies(series, InjectionSpec(seed=6))
    assert_array_equal(a.values, b.values)
    assert_array_equal(a.labels, b.labels)
    assert (a.labels != c.labels).any() or (a.values != c.values).any()


def test_injection_leaves_unlabeled_frames_untouched():
    series = synth_normal(3, 40_000, seed=2)
    out = inject_sine_anomalies(series, InjectionSpec(seed=3))
    clean = out.labels == 0
    assert_array_equal(out.values[:, clean], series.values[:, clean])
    assert (out.values[:, ~clean] != series.values[:, ~clean]).any()


def test_injection_zero_amplitude_marks_but_does_not_modify():
    series = synth_normal(2, 30_000, seed=4)
    out = inject_sine_anomalies(series, InjectionSpec(amplitude=0.0, seed=7))
    assert_array_equal(out.values, series.values)
    assert out.labels.sum() > 0


def test_injection_tone_frequency_is_in_band():
    series = synth_normal(1, 50_000, seed=8)
    out = inject_sine_anomalies(series, InjectionSpec(seed=9))
    for start, length in label_runs(out.labels):
        diff = out.values[0, start : start + length] - series.values[0, start : start + length]
        spectrum = np.abs(np.fft.rfft(diff))
        freq = np.fft.rfftfreq(length, d=1.0)[np.argmax(spectrum)] * 16_000.0
        # FFT bin resolution for a 512-frame tone is 31.25 Hz-equivalent
        assert 20.0 - 32.0 <= freq <= 120.0 + 32.0


def test_injection_amplitude_tracks_channel_std():
    values = np.random.default_rng(0).normal(0.0, [[1.0], [10.0]], size=(2, 30_000))
    series = LabeledSeries(values)
    out = inject_sine_anomalies(series, InjectionSpec(seed=1))
    start, length = label_runs(out.labels)[0]
    diff = out.values[:, start : start + length] - values[:, start : start + length]
    ratio = np.abs(diff[1]).max() / np.abs(diff[0]).max()
    expected = values[1].std() / values[0].std()
    assert_allclose(ratio, expected, rtol=1e-6)


def test_injection_rejects_short_series():
    series = synth_normal(1, 3000, seed=0)
    with pytest.raises(ValueError, match="too short"):
        inject_sine_anomalies(series, InjectionSpec())


def test_injection_spec_validation():
    with pytest.raises(ValueError):
        InjectionSpec(fraction=0.0)
    with pytest.raises(ValueError):
        InjectionSpec(fraction=1.0)
    with pytest.raises(ValueError):
        InjectionSpec(freq_low=50.0, freq_high=20.0)
    with pytest.raises(ValueError):
        InjectionSpec(len_low=0)
    with pytest.raises(ValueError):
        InjectionSpec(amplitude=-0.1)


def test_injection_respects_custom_fraction():
    series = synth_normal(2, 60_000, seed=1)
    out = inject_sine_anomalies(series, InjectionSpec(fraction=0.25, seed=2))
    assert abs(out.labels.mean() - 0.25) <= 0.02


# ---------------------------------------------------------------------------
# windowing


def test_window_exact_cover():
    values = np.arange(300.0).reshape(3, 100)
    wins = window(values, 30, 30)
    assert len(wins) == 3
    assert_array_equal(wins[1], values[:, 30:60])


def test_window_overlapping():
    wins = window(np.zeros((2, 100)), 30, 15)
    assert len(wins) == 5


def test_window_accepts_series_and_copies():
    series = synth_normal(2, 100, seed=0)
    wins = window(series, 50, 50)
    wins[0][:] = 0.0
    assert series.values[:, :50].any()


def test_window_rejects_bad_args():
    with pytest.raises(ValueError, match="exceeds"):
        window(np.zeros((1, 10)), 11, 1)
    with pytest.raises(ValueError):
        window(np.zeros((1, 10)), 5, 0)
