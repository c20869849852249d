"""Audio frontend: WAV IO, voice activity detection, log-mel features.

The feature pipeline is VAD -> 64-bin log-mel extraction (25 ms window,
10 ms hop at 16 kHz) -> per-utterance mean/variance normalization of each
mel bin -> optional random 3-8 s crop for training. Whole recordings are
used at test time.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

from voice2face.errors import AudioError

SAMPLE_RATE = 16_000
WINDOW = 400        # 25 ms at 16 kHz
HOP = 160           # 10 ms at 16 kHz
N_FFT = 512         # next power of two >= WINDOW
N_MELS = 64
FMIN = 0.0
FMAX = 8000.0
LOG_FLOOR = 1e-10

VAD_FRAME_MS = 30.0
VAD_THRESHOLD_DB = 12.0
VAD_ABS_FLOOR_DB = -60.0  # keeps uniformly-voiced input from gating itself out

CROP_MIN_FRAMES = 300     # 3 s at the 10 ms hop
CROP_MAX_FRAMES = 800     # 8 s

_MEL_MAGIC = b"V2FMELS1"
_MEL_VERSION = 1
_MEL_HEADER = struct.Struct("<8sIIIB3x")


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise AudioError("waveform must be a non-empty 1D array")
        if self.sample_rate <= 0:
            raise AudioError("sample_rate must be positive")

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


@dataclass
class MelSpectrogram:
    values: np.ndarray  # (64, T), natural-log domain
    normalized: bool = False
    warning: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.shape[0] != N_MELS:
            raise AudioError(f"mel spectrogram must be ({N_MELS}, T), got {self.values.shape}")
        if self.values.shape[1] < 1:
            raise AudioError("mel spectrogram needs at least one frame")

    @property
    def frames(self):
        return self.values.shape[1]


@dataclass
class VadSegment:
    start_frame: int
    end_frame: int
    is_voiced: bool = True

    def __post_init__(self):
        if self.start_frame >= self.end_frame:
            raise AudioError("VAD segment must satisfy start < end")


def read_wav(path) -> Waveform:
    """Read a PCM16 or float32 WAV, downmixing to mono and rescaling to [-1, 1]."""
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError) as e:
        raise AudioError(f"cannot read WAV {path}: {e}") from e
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float32) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = np.clip(data, -1.0, 1.0).astype(np.float32)
    else:
        raise AudioError(f"unsupported WAV sample format {data.dtype} in {path}")
    wav = Waveform(samples, rate)
    if rate != SAMPLE_RATE:
        wav = resample(wav, SAMPLE_RATE)
    return wav


def write_wav(path, wav: Waveform):
    data = np.clip(wav.samples, -1.0, 1.0)
    wavfile.write(path, wav.sample_rate, (data * 32767.0).astype(np.int16))


def resample(wav: Waveform, rate: int) -> Waveform:
    """Linear-interpolation resampling; adequate for the synthetic corpus."""
    if wav.sample_rate == rate:
        return wav
    n_out = max(1, int(round(wav.samples.size * rate / wav.sample_rate)))
    t_in = np.arange(wav.samples.size) / wav.sample_rate
    t_out = np.arange(n_out) / rate
    return Waveform(np.interp(t_out, t_in, wav.samples).astype(np.float32), rate)


def frame_count(n_samples, window=WINDOW, hop=HOP):
    if n_samples < window:
        raise AudioError(f"input of {n_samples} samples is shorter than one {window}-sample window")
    return 1 + (n_samples - window) // hop


def detect_voiced(wav: Waveform, frame_ms: float = VAD_FRAME_MS,
                  threshold_db: float = VAD_THRESHOLD_DB) -> list[VadSegment]:
    """Energy-gated voice activity detection over non-overlapping frames.

    A frame is voiced when its log energy exceeds the noise floor by
    `threshold_db`. When the frame energies are bimodal (p90 - p10 spread
    beyond the threshold) the floor is the 10th-percentile energy; a
    uniformly loud signal has no quiet mode to estimate a floor from, so
    the absolute floor applies and everything above it stays voiced.
    Returns maximal voiced runs, sorted and non-overlapping.
    """
    frame_len = max(1, int(round(wav.sample_rate * frame_ms / 1000.0)))
    n_frames = wav.samples.size // frame_len
    if n_frames == 0:
        n_frames = 1
        frames = wav.samples[None, :]
        energy = (frames ** 2).mean(axis=1)
    else:
        frames = wav.samples[: n_frames * frame_len].reshape(n_frames, frame_len)
        energy = (frames ** 2).mean(axis=1)
    energy_db = 10.0 * np.log10(np.maximum(energy, 1e-12))
    p10, p90 = np.percentile(energy_db, [10.0, 90.0])
    if p90 - p10 > threshold_db:
        floor_db = max(float(p10), VAD_ABS_FLOOR_DB)
    else:
        floor_db = VAD_ABS_FLOOR_DB
    voiced = energy_db > floor_db + threshold_db

    segments = []
    start = None
    for i, v in enumerate(voiced):
        if v and start is None:
            start = i
        elif not v and start is not None:
            segments.append(VadSegment(start, i))
            start = None
    if start is not None:
        segments.append(VadSegment(start, n_frames))
    return segments


def apply_vad(wav: Waveform, segments: list[VadSegment],
              frame_ms: float = VAD_FRAME_MS) -> Waveform:
    """Concatenate the voiced sample ranges; raises if nothing is voiced."""
    if not segments:
        raise AudioError("no voiced segments to keep")
    frame_len = max(1, int(round(wav.sample_rate * frame_ms / 1000.0)))
    parts = [wav.samples[s.start_frame * frame_len: s.end_frame * frame_len]
             for s in segments]
    return Waveform(np.concatenate(parts), wav.sample_rate)


def mel_filterbank(n_mels=N_MELS, n_fft=N_FFT, sample_rate=SAMPLE_RATE,
                   fmin=FMIN, fmax=FMAX):
    """Unit-peak triangular filters on the Slaney mel scale, (n_mels, n_fft//2+1)."""
    def hz_to_mel(f):
        f = np.asarray(f, dtype=np.float64)
        linear = 3.0 * f / 200.0
        log_part = 15.0 + 27.0 * np.log(np.maximum(f, 1000.0) / 1000.0) / np.log(6.4)
        return np.where(f < 1000.0, linear, log_part)

    def mel_to_hz(m):
        m = np.asarray(m, dtype=np.float64)
        linear = 200.0 * m / 3.0
        log_part = 1000.0 * np.exp(np.log(6.4) * (np.maximum(m, 15.0) - 15.0) / 27.0)
        return np.where(m < 15.0, linear, log_part)

    mel_points = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    fft_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft

    bank = np.zeros((n_mels, fft_freqs.size), dtype=np.float64)
    for i in range(n_mels):
        left, center, right = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        up = (fft_freqs - left) / max(center - left, 1e-12)
        down = (right - fft_freqs) / max(right - center, 1e-12)
        bank[i] = np.clip(np.minimum(up, down), 0.0, None)
    return bank.astype(np.float32)


_BANK_CACHE = {}


def _filterbank():
    key = (N_MELS, N_FFT, SAMPLE_RATE, FMIN, FMAX)
    if key not in _BANK_CACHE:
        _BANK_CACHE[key] = mel_filterbank()
    return _BANK_CACHE[key]


def mel_spectrogram(wav: Waveform) -> MelSpectrogram:
    """64-bin log-mel features: 25 ms Hann window, 10 ms hop, natural log."""
    if wav.sample_rate != SAMPLE_RATE:
        wav = resample(wav, SAMPLE_RATE)
    n = wav.samples.size
    t = frame_count(n)  # raises with the required minimum in the message
    idx = np.arange(WINDOW)[None, :] + HOP * np.arange(t)[:, None]
    frames = wav.samples[idx].astype(np.float64)
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(WINDOW) / WINDOW)
    spectrum = np.fft.rfft(frames * window, n=N_FFT, axis=1)
    power = (spectrum.real ** 2 + spectrum.imag ** 2)
    mel = power @ _filterbank().astype(np.float64).T  # (T, 64)
    values = np.log(mel + LOG_FLOOR).T.astype(np.float32)
    return MelSpectrogram(values, normalized=False)


def normalize_mel(spec: MelSpectrogram) -> MelSpectrogram:
    """Standardize each mel bin over the utterance's frames (population stats).

    Bins with no variance (including single-frame input) come out all-zero.
    """
    if spec.normalized:
        raise AudioError("mel spectrogram is already normalized")
    v = spec.values.astype(np.float64)
    mean = v.mean(axis=1, keepdims=True)
    std = v.std(axis=1, keepdims=True)
    out = np.where(std > 1e-8, (v - mean) / np.maximum(std, 1e-8), 0.0)
    return MelSpectrogram(out.astype(np.float32), normalized=True, warning=spec.warning)


def random_crop(spec: MelSpectrogram, min_s: float = 3.0, max_s: float = 8.0,
                rng_seed: int = 0) -> MelSpectrogram:
    """Uniform random contiguous crop of min_s..max_s seconds (at the 10 ms hop).

    Input shorter than the minimum is returned whole with a warning flag.
    """
    rng = np.random.default_rng(rng_seed)
    lo = int(round(min_s * 1000.0 / 10.0))
    hi = int(round(max_s * 1000.0 / 10.0))
    if spec.frames < lo:
        return MelSpectrogram(spec.values, normalized=spec.normalized,
                              warning="input shorter than minimum crop; returned whole")
    length = int(rng.integers(lo, hi + 1))
    length = min(length, spec.frames)
    start = int(rng.integers(0, spec.frames - length + 1))
    return MelSpectrogram(spec.values[:, start:start + length],
                          normalized=spec.normalized, warning=spec.warning)


def crop_frames(spec: MelSpectrogram, length: int, rng) -> np.ndarray:
    """Contiguous crop of exactly `length` frames.

    Specs shorter than `length` are tiled cyclically first, so minibatches
    stay rectangular regardless of recording length.
    """
    values = spec.values
    if values.shape[1] < length:
        reps = -(-length // values.shape[1])
        values = np.tile(values, (1, reps))
    start = int(rng.integers(0, values.shape[1] - length + 1))
    return values[:, start:start + length]


def voice_to_features(wav: Waveform, use_vad: bool = True) -> MelSpectrogram:
    """The full speech pipeline: VAD (optional), log-mel, bin normalization."""
    if use_vad:
        segments = detect_voiced(wav)
        if segments:
            wav = apply_vad(wav, segments)
    return normalize_mel(mel_spectrogram(wav))


def save_mel(path, spec: MelSpectrogram):
    """Flat binary cache: header (magic, version, bins, frames, flag) + f32 LE rows."""
    header = _MEL_HEADER.pack(_MEL_MAGIC, _MEL_VERSION, N_MELS, spec.frames,
                              1 if spec.normalized else 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(spec.values, dtype="<f4").tobytes())


def load_mel(path) -> MelSpectrogram:
    with open(path, "rb") as fh:
        raw = fh.read(_MEL_HEADER.size)
        if len(raw) != _MEL_HEADER.size:
            raise AudioError(f"mel cache {path} truncated")
        magic, version, bins, frames, normalized = _MEL_HEADER.unpack(raw)
        if magic != _MEL_MAGIC or version != _MEL_VERSION:
            raise AudioError(f"mel cache {path} has unknown magic/version")
        if bins != N_MELS:
            raise AudioError(f"mel cache {path} has {bins} bins, expected {N_MELS}")
        data = np.frombuffer(fh.read(4 * bins * frames), dtype="<f4")
    if data.size != bins * frames:
        raise AudioError(f"mel cache {path} truncated")
    return MelSpectrogram(data.reshape(bins, frames).copy(), normalized=bool(normalized))


def make_noise(kind: str, seconds: float, rng, sample_rate=SAMPLE_RATE) -> Waveform:
    """Test noises for the specificity protocol: white, pink, brown, babble."""
    n = int(round(seconds * sample_rate))
    if kind == "white":
        x = rng.normal(0.0, 1.0, n)
    elif kind in ("pink", "brown"):
        spectrum = np.fft.rfft(rng.normal(0.0, 1.0, n))
        freqs = np.maximum(np.fft.rfftfreq(n, 1.0 / sample_rate), 1.0)
        slope = 0.5 if kind == "pink" else 1.0
        x = np.fft.irfft(spectrum / freqs ** slope, n)
    elif kind == "babble":
        # Overlapping amplitude-modulated pink bursts; speech-shaped but identity-free.
        x = np.zeros(n)
        for _ in range(6):
            spectrum = np.fft.rfft(rng.normal(0.0, 1.0, n))
            freqs = np.maximum(np.fft.rfftfreq(n, 1.0 / sample_rate), 1.0)
            burst = np.fft.irfft(spectrum / freqs ** 0.5, n)
            t = np.arange(n) / sample_rate
            am = 0.5 + 0.5 * np.sin(2.0 * np.pi * rng.uniform(2.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
            x += burst * am
    else:
        raise AudioError(f"unknown noise kind {kind!r}")
    x = x / np.max(np.abs(x)) * 0.7
    return Waveform(x.astype(np.float32), sample_rate)


NOISE_KINDS = ("white", "pink", "brown", "babble")
NOISE_DURATIONS = (1.0, 2.0, 3.0, 5.0, 10.0)
