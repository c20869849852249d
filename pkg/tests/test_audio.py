"""Audio frontend: framing, mel filterbank, normalization, VAD, cropping,
cache round trips."""

import numpy as np
import pytest

from voice2face import audio
from voice2face.errors import AudioError


def tone(freq=440.0, seconds=1.0, amplitude=1.0, sr=audio.SAMPLE_RATE):
    t = np.arange(int(seconds * sr)) / sr
    return (amplitude * np.sin(2 * np.pi * freq * t)).astype(np.float32)


class TestFraming:
    def test_three_seconds_gives_298_frames(self):
        # 1 + (48000 - 400) // 160, from the framing formula.
        assert audio.frame_count(48000) == 298
        wav = audio.Waveform(np.random.default_rng(0).normal(0, 0.1, 48000).astype(np.float32))
        assert audio.mel_spectrogram(wav).frames == 298

    def test_exact_window_gives_one_frame(self):
        wav = audio.Waveform(tone(seconds=400 / 16000))
        spec = audio.mel_spectrogram(wav)
        assert spec.frames == 1

    def test_too_short_input_names_minimum(self):
        with pytest.raises(AudioError) as exc:
            audio.mel_spectrogram(audio.Waveform(np.zeros(399, dtype=np.float32)))
        assert "400" in str(exc.value)

    def test_formula_for_random_lengths(self, rng):
        for n in rng.integers(400, 200_000, size=50):
            n = int(n)
            expected = 1 + (n - 400) // 160
            assert audio.frame_count(n) == expected


class TestMelSpectrogram:
    def test_silence_hits_log_floor(self):
        wav = audio.Waveform(np.zeros(4000, dtype=np.float32))
        spec = audio.mel_spectrogram(wav)
        assert np.allclose(spec.values, np.log(audio.LOG_FLOOR), atol=1e-5)

    def test_amplitude_scaling_shifts_log_by_2_ln_c(self, rng):
        base = rng.normal(0, 0.3, 8000).astype(np.float32)
        spec1 = audio.mel_spectrogram(audio.Waveform(base))
        c = 1.8
        spec2 = audio.mel_spectrogram(audio.Waveform((base * c).astype(np.float32)))
        shift = spec2.values.astype(np.float64) - spec1.values.astype(np.float64)
        assert np.abs(shift - 2.0 * np.log(c)).max() < 1e-5

    def test_normalization_is_scale_invariant(self, rng):
        base = rng.normal(0, 0.2, 16000).astype(np.float32)
        a = audio.normalize_mel(audio.mel_spectrogram(audio.Waveform(base)))
        b = audio.normalize_mel(audio.mel_spectrogram(audio.Waveform((base * 3.0).astype(np.float32))))
        assert np.abs(a.values - b.values).max() < 1e-3

    def test_determinism(self, rng):
        samples = rng.normal(0, 0.2, 12000).astype(np.float32)
        a = audio.mel_spectrogram(audio.Waveform(samples.copy()))
        b = audio.mel_spectrogram(audio.Waveform(samples.copy()))
        assert np.array_equal(a.values, b.values)


class TestFilterbank:
    def test_filters_nonnegative_with_positive_sums(self):
        bank = audio.mel_filterbank()
        assert bank.shape == (64, audio.N_FFT // 2 + 1)
        assert (bank >= 0).all()
        assert (bank.sum(axis=1) > 0).all()

    def test_interior_partition_of_unity(self):
        bank = audio.mel_filterbank().astype(np.float64)
        total = bank.sum(axis=0)
        freqs = np.arange(audio.N_FFT // 2 + 1) * audio.SAMPLE_RATE / audio.N_FFT
        # between the first and last filter centers the triangles sum to ~1
        centers = freqs[np.argmax(bank, axis=1)]
        lo, hi = centers.min(), centers.max()
        interior = (freqs > lo) & (freqs < hi)
        assert np.abs(total[interior] - 1.0).max() < 0.05


class TestNormalize:
    def test_hand_computed_row(self):
        values = np.zeros((64, 3), dtype=np.float32)
        values[0] = [1.0, 2.0, 3.0]
        spec = audio.MelSpectrogram(values)
        out = audio.normalize_mel(spec)
        assert np.allclose(out.values[0], [-1.2247449, 0.0, 1.2247449], atol=1e-5)

    def test_constant_row_is_zeroed(self):
        values = np.full((64, 5), 2.5, dtype=np.float32)
        out = audio.normalize_mel(audio.MelSpectrogram(values))
        assert np.all(out.values == 0.0)

    def test_single_frame_is_zeroed(self):
        out = audio.normalize_mel(audio.MelSpectrogram(np.ones((64, 1), dtype=np.float32)))
        assert np.all(out.values == 0.0)

    def test_idempotent_on_standardized_values(self, rng):
        spec = audio.MelSpectrogram(rng.normal(size=(64, 100)).astype(np.float32))
        once = audio.normalize_mel(spec)
        twice = audio.normalize_mel(audio.MelSpectrogram(once.values.copy()))
        assert np.abs(twice.values - once.values).max() < 1e-6

    def test_double_normalization_flag_rejected(self, rng):
        spec = audio.normalize_mel(
            audio.MelSpectrogram(rng.normal(size=(64, 10)).astype(np.float32)))
        with pytest.raises(AudioError):
            audio.normalize_mel(spec)

    def test_rows_standardized(self, rng):
        spec = audio.MelSpectrogram(rng.normal(3.0, 2.0, size=(64, 500)).astype(np.float32))
        out = audio.normalize_mel(spec)
        assert np.abs(out.values.mean(axis=1)).max() < 1e-5
        assert np.abs(out.values.astype(np.float64).var(axis=1) - 1.0).max() < 1e-3


class TestVad:
    def test_pure_silence_has_no_voiced_segments(self):
        wav = audio.Waveform(np.zeros(16000, dtype=np.float32))
        assert audio.detect_voiced(wav) == []

    def test_tone_between_silences_is_isolated(self):
        silence = np.zeros(16000, dtype=np.float32)
        wav = audio.Waveform(np.concatenate([silence, tone(seconds=1.0), silence]))
        segments = audio.detect_voiced(wav, threshold_db=15.0)
        assert len(segments) == 1
        seg = segments[0]
        frames_per_s = 1000 / audio.VAD_FRAME_MS
        assert abs(seg.start_frame - frames_per_s) <= 1
        assert abs(seg.end_frame - 2 * frames_per_s) <= 1

    def test_uniformly_voiced_input_spans_whole_signal(self, rng):
        # speech-like broadband signal at constant level
        wav = audio.Waveform(rng.normal(0, 0.2, 32000).astype(np.float32))
        segments = audio.detect_voiced(wav)
        assert len(segments) == 1
        assert segments[0].start_frame == 0
        assert segments[0].end_frame == 32000 // 480

    def test_apply_vad_concatenates_voiced_samples(self):
        silence = np.zeros(16000, dtype=np.float32)
        voiced = tone(seconds=1.0)
        wav = audio.Waveform(np.concatenate([silence, voiced, silence]))
        segments = audio.detect_voiced(wav, threshold_db=15.0)
        out = audio.apply_vad(wav, segments)
        expected = sum(s.end_frame - s.start_frame for s in segments) * 480
        assert out.samples.size == expected
        assert out.samples.std() > 0.5  # kept the loud part

    def test_apply_vad_with_no_segments_raises(self):
        wav = audio.Waveform(np.zeros(16000, dtype=np.float32))
        with pytest.raises(AudioError):
            audio.apply_vad(wav, [])


class TestRandomCrop:
    def make_spec(self, frames, rng):
        return audio.MelSpectrogram(rng.normal(size=(64, frames)).astype(np.float32))

    def test_deterministic_given_seed(self, rng):
        spec = self.make_spec(1000, rng)
        a = audio.random_crop(spec, rng_seed=11)
        b = audio.random_crop(spec, rng_seed=11)
        assert np.array_equal(a.values, b.values)

    def test_short_input_returned_whole_with_warning(self, rng):
        spec = self.make_spec(200, rng)
        out = audio.random_crop(spec, rng_seed=0)
        assert out.frames == 200
        assert out.warning is not None

    def test_exact_minimum_returns_whole(self, rng):
        spec = self.make_spec(300, rng)
        out = audio.random_crop(spec, rng_seed=0)
        assert out.frames == 300

    def test_lengths_stay_in_bounds_over_10000_crops(self, rng):
        spec = self.make_spec(900, rng)
        lengths = [audio.random_crop(spec, rng_seed=s).frames for s in range(10_000)]
        assert min(lengths) >= 300
        assert max(lengths) <= 800
        # crops are genuinely spread over the allowed range
        assert len(set(lengths)) > 400

    def test_crop_frames_tiles_short_specs(self, rng):
        spec = self.make_spec(100, rng)
        out = audio.crop_frames(spec, 250, np.random.default_rng(0))
        assert out.shape == (64, 250)


class TestWavAndCache:
    def test_wav_round_trip(self, tmp_path, rng):
        wav = audio.Waveform(rng.uniform(-0.9, 0.9, 8000).astype(np.float32))
        path = tmp_path / "t.wav"
        audio.write_wav(path, wav)
        back = audio.read_wav(path)
        assert back.sample_rate == audio.SAMPLE_RATE
        assert np.abs(back.samples - wav.samples).max() < 1e-3  # 16-bit quantization

    def test_mel_cache_round_trip_bit_exact(self, tmp_path, rng):
        spec = audio.normalize_mel(
            audio.MelSpectrogram(rng.normal(size=(64, 321)).astype(np.float32)))
        path = tmp_path / "m.mel"
        audio.save_mel(path, spec)
        back = audio.load_mel(path)
        assert back.normalized == spec.normalized
        assert np.array_equal(back.values, spec.values)

    def test_corrupt_cache_rejected(self, tmp_path):
        path = tmp_path / "bad.mel"
        path.write_bytes(b"garbage")
        with pytest.raises(AudioError):
            audio.load_mel(path)

    def test_noise_generator_kinds_and_determinism(self):
        for kind in audio.NOISE_KINDS:
            a = audio.make_noise(kind, 1.0, np.random.default_rng(5))
            b = audio.make_noise(kind, 1.0, np.random.default_rng(5))
            assert np.array_equal(a.samples, b.samples)
            assert a.samples.size == 16000
        with pytest.raises(AudioError):
            audio.make_noise("sawtooth", 1.0, np.random.default_rng(0))

    def test_read_wav_resamples_to_16k(self, tmp_path, rng):
        from scipy.io import wavfile
        samples = (rng.uniform(-0.5, 0.5, 8000) * 32767).astype(np.int16)
        path = tmp_path / "8k.wav"
        wavfile.write(path, 8000, samples)
        wav = audio.read_wav(path)
        assert wav.sample_rate == audio.SAMPLE_RATE
        assert abs(wav.samples.size - 16000) <= 2

    def test_pipeline_determinism_end_to_end(self, rng):
        samples = rng.normal(0, 0.2, 32000).astype(np.float32)
        a = audio.voice_to_features(audio.Waveform(samples.copy()))
        b = audio.voice_to_features(audio.Waveform(samples.copy()))
        assert np.array_equal(a.values, b.values)
        assert a.normalized
