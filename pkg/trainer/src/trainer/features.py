"""Audio to feature vectors: one averaged 40-value MFCC row per clip.

The extraction pipeline follows the librosa defaults: resample to 22050
Hz, power spectrogram with a 2048-point FFT and hop 512 (centered, hann
window), a 128-band Slaney-style mel filterbank, decibel conversion with
an 80 dB floor, then an orthonormal DCT-II.  The first 40 coefficients of
every frame are averaged over time, so each clip becomes a single vector.

Clips are discovered by the RAVDESS naming convention
modality-vocal-emotion-intensity-statement-repetition-actor.wav; only
speech clips (03-01-...) count.  Anything unreadable or misnamed is
skipped with a warning and counted.
"""

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dct, rfft
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly
from sklearn.model_selection import train_test_split

SAMPLE_RATE = 22050
N_FFT = 2048
HOP = 512
N_MELS = 128
N_MFCC = 40
AMIN = 1e-10
TOP_DB = 80.0
TEST_FRACTION = 0.33
SPLIT_SEED = 13

LABELS = ("neutral", "calm", "happy", "sad", "angry", "fearful",
          "disgust", "surprised")


# ------------------------------------------------------------- wav reading

_PEAK = {np.dtype(np.int16): 1 << 15, np.dtype(np.int32): 1 << 31}


def read_wav(path):
    """Mono float64 signal in [-1, 1] plus its sample rate."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sr, data = wavfile.read(path)
    data = np.asarray(data)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype in _PEAK:
        y = data.astype(np.float64) / _PEAK[data.dtype]
    elif data.dtype == np.uint8:
        y = (data.astype(np.float64) - 128.0) / 128.0
    else:
        y = data.astype(np.float64)
    return y, int(sr)


def _resample(y, sr):
    if sr == SAMPLE_RATE:
        return y
    g = math.gcd(SAMPLE_RATE, sr)
    return resample_poly(y, SAMPLE_RATE // g, sr // g)


# ------------------------------------------------------------ MFCC pipeline

def _hz_to_mel(f):
    # Slaney scale: linear below 1 kHz, log-spaced above
    f = np.asarray(f, dtype=np.float64)
    mel = f / (200.0 / 3)
    log_step = np.log(6.4) / 27.0
    hi = f >= 1000.0
    mel = np.where(hi, 15.0 + np.log(np.maximum(f, 1e-12) / 1000.0) / log_step,
                   mel)
    return mel


def _mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    f = mel * (200.0 / 3)
    log_step = np.log(6.4) / 27.0
    hi = mel >= 15.0
    return np.where(hi, 1000.0 * np.exp(log_step * (mel - 15.0)), f)


def mel_filterbank(sr=SAMPLE_RATE, n_fft=N_FFT, n_mels=N_MELS):
    """Triangular filters on the Slaney mel scale, area-normalized."""
    fft_freqs = np.linspace(0.0, sr / 2, 1 + n_fft // 2)
    mel_pts = _mel_to_hz(np.linspace(_hz_to_mel(0.0), _hz_to_mel(sr / 2),
                                     n_mels + 2))
    fdiff = np.diff(mel_pts)
    ramps = mel_pts[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    enorm = 2.0 / (mel_pts[2:] - mel_pts[:-2])
    return weights * enorm[:, None]


def _power_spectrogram(y):
    if y.size < 2:
        y = np.zeros(2)
    pad = N_FFT // 2
    y = np.pad(y, pad, mode="reflect")
    window = get_window("hann", N_FFT, fftbins=True)
    n_frames = 1 + (y.size - N_FFT) // HOP
    starts = np.arange(n_frames) * HOP
    frames = y[starts[:, None] + np.arange(N_FFT)[None, :]]
    spec = rfft(frames * window, axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def _power_to_db(m):
    db = 10.0 * np.log10(np.maximum(m, AMIN))
    return np.maximum(db, db.max() - TOP_DB)


_MEL_BASIS = None


def mfcc_vector(y, sr):
    """Average the per-frame MFCCs of one clip into a 40-value vector."""
    global _MEL_BASIS
    if _MEL_BASIS is None:
        _MEL_BASIS = mel_filterbank()
    y = _resample(np.asarray(y, dtype=np.float64), sr)
    mels = _MEL_BASIS @ _power_spectrogram(y)
    coef = dct(_power_to_db(mels), type=2, axis=0, norm="ortho")[:N_MFCC]
    return coef.mean(axis=1).astype(np.float32)


# ---------------------------------------------------------------- datasets

@dataclass
class FeatureDataset:
    """Per-clip feature vectors with labels and a fixed train/test split."""

    vectors: np.ndarray          # (N, 40) float32
    labels: np.ndarray           # (N,) int64 indices into label_names
    files: tuple
    train_idx: np.ndarray
    test_idx: np.ndarray
    skipped: int = 0
    label_names: tuple = field(default=LABELS)

    def save(self, path):
        np.savez_compressed(path, vectors=self.vectors, labels=self.labels,
                            files=np.array(self.files, dtype=str),
                            train_idx=self.train_idx, test_idx=self.test_idx,
                            skipped=np.int64(self.skipped),
                            label_names=np.array(self.label_names, dtype=str))

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            return cls(vectors=z["vectors"], labels=z["labels"],
                       files=tuple(str(f) for f in z["files"]),
                       train_idx=z["train_idx"], test_idx=z["test_idx"],
                       skipped=int(z["skipped"]),
                       label_names=tuple(str(l) for l in z["label_names"]))


def _split(n, seed):
    if n < 3:
        return np.arange(n, dtype=np.int64), np.array([], dtype=np.int64)
    train, test = train_test_split(np.arange(n, dtype=np.int64),
                                   test_size=TEST_FRACTION,
                                   random_state=seed)
    return np.sort(train), np.sort(test)


def clip_label(path):
    """Class index from a RAVDESS speech file name, else None."""
    parts = Path(path).stem.split("-")
    if len(parts) != 7 or parts[0] != "03" or parts[1] != "01":
        return None
    try:
        code = int(parts[2])
    except ValueError:
        return None
    return code - 1 if 1 <= code <= len(LABELS) else None


def extract_features(audio_dir, split_seed=SPLIT_SEED):
    """Walk audio_dir, turn every speech clip into one labeled vector.

    Deterministic: files are visited in sorted order and the split seed is
    fixed.  Unreadable or misnamed files are skipped with a warning.
    """
    root = Path(audio_dir)
    if not root.is_dir():
        raise FileNotFoundError("audio directory %s does not exist" % root)
    vectors, labels, files = [], [], []
    skipped = 0
    for path in sorted(root.rglob("*.wav"), key=lambda p: p.as_posix()):
        label = clip_label(path)
        if label is None:
            warnings.warn("skipping %s: not a RAVDESS speech clip name"
                          % path.name)
            skipped += 1
            continue
        try:
            y, sr = read_wav(path)
        except (OSError, ValueError) as exc:
            warnings.warn("skipping %s: %s" % (path.name, exc))
            skipped += 1
            continue
        vectors.append(mfcc_vector(y, sr))
        labels.append(label)
        files.append(str(path.relative_to(root)))
    vec = (np.stack(vectors) if vectors
           else np.zeros((0, N_MFCC), dtype=np.float32))
    lab = np.array(labels, dtype=np.int64)
    train_idx, test_idx = _split(len(files), split_seed)
    return FeatureDataset(vec, lab, tuple(files), train_idx, test_idx,
                          skipped=skipped)
