"""Dataset manifests and the procedural synthetic paired corpus.

The synthetic corpus couples faces and voices through a shared per-identity
attribute vector: glyph geometry and hue on the face side, source pitch and
resonance peaks on the voice side, both affine in the same attributes plus
bounded per-file jitter. That shared structure is what the adversarial
training is expected to discover.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from voice2face import audio, images
from voice2face.errors import ManifestError

SPLITS = ("train", "validation", "test")
MODALITIES = ("voice", "face")

# Per-file jitter radii (documented bounds; tests assert against these).
JITTER = {
    "geometry_px": 1.5,     # glyph center/axis/spacing perturbation
    "color": 0.04,          # additive RGB perturbation of base colors
    "formant_rel": 0.03,    # relative perturbation of resonance frequencies
    "pitch_rel": 0.05,      # relative perturbation of source pitch
}


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    identity: int
    gender: int
    split: str
    modality: str


@dataclass
class DatasetManifest:
    entries: list

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.entries:
            raise ManifestError("manifest has no entries")
        identities = sorted({e.identity for e in self.entries})
        k = len(identities)
        if identities != list(range(k)):
            raise ManifestError(f"identity labels must be dense in [0, {k}), got {identities[:8]}...")
        split_of = {}
        gender_of = {}
        for row, e in enumerate(self.entries):
            if e.split not in SPLITS:
                raise ManifestError(f"row {row}: unknown split {e.split!r}")
            if e.modality not in MODALITIES:
                raise ManifestError(f"row {row}: unknown modality {e.modality!r}")
            if e.gender not in (0, 1):
                raise ManifestError(f"row {row}: gender must be 0 or 1, got {e.gender!r}")
            prev = split_of.setdefault(e.identity, e.split)
            if prev != e.split:
                raise ManifestError(
                    f"row {row}: identity {e.identity} appears in both "
                    f"'{prev}' and '{e.split}' (splits must be disjoint by identity)"
                )
            prev_g = gender_of.setdefault(e.identity, e.gender)
            if prev_g != e.gender:
                raise ManifestError(f"row {row}: identity {e.identity} has inconsistent gender")
        for identity, split in split_of.items():
            if split != "train":
                continue
            mods = {e.modality for e in self.entries if e.identity == identity}
            if mods != set(MODALITIES):
                raise ManifestError(
                    f"train identity {identity} is missing a modality (has {sorted(mods)})"
                )

    def select(self, split=None, modality=None):
        out = self.entries
        if split is not None:
            out = [e for e in out if e.split == split]
        if modality is not None:
            out = [e for e in out if e.modality == modality]
        return out

    def identities(self, split=None):
        return sorted({e.identity for e in self.select(split=split)})


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest {path} does not exist")
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["path", "identity", "gender", "split", "modality"]:
            raise ManifestError(
                f"manifest {path} must have header path,identity,gender,split,modality"
            )
        for row_num, row in enumerate(reader, start=2):
            try:
                entries.append(ManifestEntry(
                    path=row["path"],
                    identity=int(row["identity"]),
                    gender=int(row["gender"]),
                    split=row["split"],
                    modality=row["modality"],
                ))
            except (TypeError, ValueError, KeyError) as e:
                raise ManifestError(f"manifest {path} row {row_num}: {e}") from e
    if not entries:
        raise ManifestError(f"manifest {path} is empty")
    return DatasetManifest(entries)


def save_manifest(path, manifest: DatasetManifest):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "identity", "gender", "split", "modality"])
        for e in manifest.entries:
            writer.writerow([e.path, e.identity, e.gender, e.split, e.modality])


# -- synthetic identities ------------------------------------------------


@dataclass(frozen=True)
class SyntheticIdentity:
    identity_label: int
    attribute_vector: np.ndarray  # (7,): gender, face trio, vocal-tract trio

    @property
    def gender(self):
        return int(self.attribute_vector[0])


def identity_attributes(corpus_seed: int, identity: int) -> SyntheticIdentity:
    """Deterministic attributes; the face and vocal-tract trios coincide."""
    rng = np.random.default_rng([corpus_seed, identity, 101])
    trio = rng.uniform(-1.0, 1.0, 3)
    gender = identity % 2
    vec = np.concatenate([[float(gender)], trio, trio])
    return SyntheticIdentity(identity, vec)


def glyph_parameters(ident: SyntheticIdentity, rng) -> dict:
    """Face-glyph geometry/colors: affine in the attributes plus bounded jitter."""
    g = ident.gender
    f1, f2, f3 = ident.attribute_vector[1:4]
    jg = JITTER["geometry_px"]
    jc = JITTER["color"]
    base_bg = np.array([0.42, 0.48, 0.62]) if g == 0 else np.array([0.62, 0.50, 0.40])
    base_skin = np.array([0.78, 0.62, 0.50]) if g == 0 else np.array([0.86, 0.70, 0.58])
    return {
        "center_y": 32.0 + rng.uniform(-jg, jg),
        "center_x": 32.0 + rng.uniform(-jg, jg),
        "axis_y": 22.0 + 4.0 * f1 + rng.uniform(-jg, jg),
        "axis_x": 17.0 + 4.0 * f2 + rng.uniform(-jg, jg),
        "eye_dx": 7.0 + 2.5 * f3 + rng.uniform(-jg, jg) * 0.5,
        "eye_r": 2.2 + 0.7 * f2 + rng.uniform(-jg, jg) * 0.3,
        "mouth_w": 8.0 + 3.0 * f1 + rng.uniform(-jg, jg),
        "bg": np.clip(base_bg + 0.06 * f3 + rng.uniform(-jc, jc, 3), 0.0, 1.0),
        "skin": np.clip(base_skin + 0.05 * f1 + rng.uniform(-jc, jc, 3), 0.0, 1.0),
    }


def _blend(img, alpha, color):
    img *= 1.0 - alpha
    img += alpha * np.asarray(color).reshape(3, 1, 1)


def render_glyph(params: dict, band: float = 2.5) -> np.ndarray:
    """Rasterize the glyph into (3, 64, 64) bytes.

    Shape boundaries are antialiased over a `band`-pixel transition so the
    image manifold is smooth enough for a deconvolution stack to approach.
    """
    size = images.SIZE
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.empty((3, size, size), dtype=np.float64)
    img[:] = params["bg"][:, None, None]

    cy, cx = params["center_y"], params["center_x"]
    ay, ax = params["axis_y"], params["axis_x"]
    q = np.sqrt(((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2)
    head_alpha = np.clip((1.0 - q) * min(ay, ax) / band + 0.5, 0.0, 1.0)
    _blend(img, head_alpha[None], params["skin"])

    eye_y = cy - 0.35 * ay
    for sign in (-1.0, 1.0):
        ex = cx + sign * params["eye_dx"]
        r = np.sqrt((yy - eye_y) ** 2 + (xx - ex) ** 2)
        eye_alpha = np.clip((params["eye_r"] - r) / band + 0.5, 0.0, 1.0)
        _blend(img, eye_alpha[None], (0.12, 0.12, 0.12))

    mouth_y = cy + 0.45 * ay
    dy = np.abs(yy - mouth_y)
    dx = np.abs(xx - cx)
    mouth_alpha = (np.clip((1.4 - dy) / band + 0.5, 0.0, 1.0)
                   * np.clip((params["mouth_w"] - dx) / band + 0.5, 0.0, 1.0))
    _blend(img, mouth_alpha[None], (0.55, 0.20, 0.22))

    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def voice_parameters(ident: SyntheticIdentity, rng) -> dict:
    """Source pitch and three resonances: affine in the attributes plus jitter.

    The gender bit flips the pitch register and scales the resonance base
    frequencies.
    """
    g = ident.gender
    v1, v2, v3 = ident.attribute_vector[4:7]
    jf = JITTER["formant_rel"]
    jp = JITTER["pitch_rel"]
    scale = 1.0 if g == 0 else 1.18
    pitch = (112.0 + 18.0 * v1) if g == 0 else (205.0 + 28.0 * v1)
    return {
        "pitch": pitch * (1.0 + rng.uniform(-jp, jp)),
        "formants": [
            (480.0 + 110.0 * v1) * scale * (1.0 + rng.uniform(-jf, jf)),
            (1450.0 + 320.0 * v2) * scale * (1.0 + rng.uniform(-jf, jf)),
            (2500.0 + 420.0 * v3) * scale * (1.0 + rng.uniform(-jf, jf)),
        ],
        "bandwidths": [90.0, 130.0, 190.0],
        "am_rate": rng.uniform(2.5, 4.5),
    }


def synthesize_voice(params: dict, seconds: float, rng,
                     sample_rate=audio.SAMPLE_RATE) -> audio.Waveform:
    """Source-filter synthesis: pulse train + noise through three resonators.

    A syllabic gate (~80% duty cycle) inserts near-silent pauses so the
    recordings have speech-like dynamics for the voice activity detector.
    """
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate

    pitch = params["pitch"] * (1.0 + 0.02 * np.sin(2.0 * np.pi * 0.7 * t))
    phase = np.cumsum(pitch) / sample_rate
    source = (np.mod(phase, 1.0) < 0.08).astype(np.float64)  # glottal-ish pulses
    source += 0.05 * rng.normal(0.0, 1.0, n)

    x = source
    for f, bw in zip(params["formants"], params["bandwidths"]):
        r = np.exp(-np.pi * bw / sample_rate)
        theta = 2.0 * np.pi * f / sample_rate
        b = [1.0 - r]
        a = [1.0, -2.0 * r * np.cos(theta), r * r]
        x = lfilter(b, a, x)

    syl = np.sin(2.0 * np.pi * params["am_rate"] * t + rng.uniform(0, 2 * np.pi))
    gate = np.clip((syl + 0.75) / 0.35, 0.0, 1.0)  # smooth bursts, ~80% duty
    am = 0.02 + 0.98 * gate * (0.75 + 0.25 * np.sin(2.0 * np.pi * 1.3 * t))
    x = x * am
    x = x / (np.max(np.abs(x)) + 1e-12) * 0.7
    return audio.Waveform(x.astype(np.float32), sample_rate)


def synthesize_corpus(root, k: int, per_id_voices: int, per_id_faces: int,
                      corpus_seed: int, test_fraction: float = 0.25,
                      val_fraction: float = 0.0) -> DatasetManifest:
    """Generate a paired corpus under `root` and return its manifest.

    Identities are split by label order: train first, then validation,
    then test (labels stay dense across the whole corpus). Gender
    alternates with the label so contiguous splits stay balanced.
    """
    if k < 2:
        raise ManifestError("need at least 2 identities")
    if per_id_voices < 1 or per_id_faces < 1:
        raise ManifestError("need at least one file per identity and modality")
    root = Path(root)
    (root / "faces").mkdir(parents=True, exist_ok=True)
    (root / "voices").mkdir(parents=True, exist_ok=True)

    n_test = int(round(k * test_fraction))
    n_val = int(round(k * val_fraction))
    n_train = k - n_test - n_val
    if n_train < 2:
        raise ManifestError("split fractions leave fewer than 2 train identities")

    entries = []
    for identity in range(k):
        ident = identity_attributes(corpus_seed, identity)
        if identity < n_train:
            split = "train"
        elif identity < n_train + n_val:
            split = "validation"
        else:
            split = "test"

        for j in range(per_id_faces):
            rng = np.random.default_rng([corpus_seed, identity, 202, j])
            glyph = render_glyph(glyph_parameters(ident, rng))
            rel = f"faces/id{identity:04d}_f{j:03d}.png"
            images.save_png(root / rel, glyph)
            entries.append(ManifestEntry(rel, identity, ident.gender, split, "face"))

        for j in range(per_id_voices):
            rng = np.random.default_rng([corpus_seed, identity, 303, j])
            seconds = float(rng.uniform(3.0, 10.0))
            wav = synthesize_voice(voice_parameters(ident, rng), seconds, rng)
            rel = f"voices/id{identity:04d}_v{j:03d}.wav"
            audio.write_wav(root / rel, wav)
            entries.append(ManifestEntry(rel, identity, ident.gender, split, "voice"))

    manifest = DatasetManifest(entries)
    save_manifest(root / "manifest.csv", manifest)
    return manifest
