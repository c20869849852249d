"""Quantitative evaluation protocols and qualitative image grids.

Three protocols: discriminator-score specificity (faces generated from
speech versus from noise), gender accuracy of generated faces against a
probe classifier trained on real faces, and 1:2 voice-to-face matching
where the generated face's classifier feature stands in for the probe
voice. Matching compares cosine similarity against the true and imposter
gallery faces; gender-stratified trials force the imposter to share the
true speaker's gender.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from voice2face import audio, images
from voice2face.dataset import DatasetManifest
from voice2face.errors import EvaluationError, ManifestError
from voice2face.layers import LayerSpec, build_sequential
from voice2face.networks import ArchConfig, FEATURE_DIM, ModelBundle
from voice2face.optim import Adam
from voice2face.ops import binary_cross_entropy
from voice2face.tensor import Tensor
from voice2face.training import load_voice_features, rng_for


@dataclass
class EvalReport:
    name: str
    value: float
    trials: int
    ci_low: float | None = None
    ci_high: float | None = None
    skipped: int = 0
    notes: str | None = None

    def format_line(self):
        ci = (f" ci_low={self.ci_low:.6f} ci_high={self.ci_high:.6f}"
              if self.ci_low is not None else "")
        notes = f" notes={self.notes}" if self.notes else ""
        skipped = f" skipped={self.skipped}" if self.skipped else ""
        return f"metric={self.name} value={self.value:.6f} n={self.trials}{ci}{skipped}{notes}"


def write_reports(path, reports):
    with open(path, "w") as fh:
        for r in reports:
            fh.write(r.format_line() + "\n")


def wilson_ci(successes: int, n: int, z: float = 1.959964):
    """95% Wilson score interval for a binomial proportion."""
    if n == 0:
        return (0.0, 1.0)
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return (center - half, center + half)


@dataclass(frozen=True)
class MatchingTrial:
    probe_voice_path: str
    true_face_path: str
    imposter_face_path: str
    probe_identity: int
    imposter_identity: int
    probe_gender: int
    imposter_gender: int
    gender_stratified: bool

    def __post_init__(self):
        if self.probe_identity == self.imposter_identity:
            raise EvaluationError("imposter must differ from the probe identity")
        if self.gender_stratified and self.probe_gender != self.imposter_gender:
            raise EvaluationError("stratified trial with mismatched genders")


def build_trials(manifest: DatasetManifest, stratify: bool, max_trials: int,
                 rng_seed: int, split: str = "test") -> list[MatchingTrial]:
    """Deterministic 1:2 trial construction over one (open-set) split.

    Exhaustive when the full probe x true-face x imposter-face product fits
    in max_trials, otherwise a seeded uniform sample of that product.
    """
    voices = manifest.select(split=split, modality="voice")
    faces = manifest.select(split=split, modality="face")
    if not voices or not faces:
        raise ManifestError(f"split {split!r} lacks voices or faces for matching")
    faces_of = {}
    for f in faces:
        faces_of.setdefault(f.identity, []).append(f)
    genders = {f.identity: f.gender for f in faces}
    if stratify and len({f.gender for f in faces}) < 2:
        raise EvaluationError("stratified trials need both genders in the split")

    def imposters_for(v):
        return [f for f in faces
                if f.identity != v.identity
                and (not stratify or f.gender == v.gender)]

    total = 0
    per_probe = []
    for v in voices:
        true_faces = faces_of.get(v.identity, [])
        imps = imposters_for(v)
        per_probe.append((v, true_faces, imps))
        total += len(true_faces) * len(imps)
    if total == 0:
        raise EvaluationError("no valid trials can be constructed")

    trials = []
    if total <= max_trials:
        for v, true_faces, imps in per_probe:
            for tf in true_faces:
                for im in imps:
                    trials.append(MatchingTrial(
                        v.path, tf.path, im.path, v.identity, im.identity,
                        v.gender, im.gender, stratify))
    else:
        rng = rng_for(rng_seed, 31)
        candidates = [p for p in per_probe if p[1] and p[2]]
        for _ in range(max_trials):
            v, true_faces, imps = candidates[rng.integers(0, len(candidates))]
            tf = true_faces[rng.integers(0, len(true_faces))]
            im = imps[rng.integers(0, len(imps))]
            trials.append(MatchingTrial(
                v.path, tf.path, im.path, v.identity, im.identity,
                v.gender, im.gender, stratify))
    return trials


def cosine(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return None
    return float(np.dot(a, b) / (na * nb))


def run_matching(trials, probe_feature_fn, face_feature_fn,
                 name="matching_accuracy") -> EvalReport:
    """Generic 1:2 matching harness over pluggable feature functions.

    A trial counts as correct when the probe feature is strictly closer (by
    cosine) to the true face's feature than to the imposter's; degenerate
    zero features skip the trial and are reported.
    """
    correct = 0
    counted = 0
    skipped = 0
    for trial in trials:
        probe = probe_feature_fn(trial)
        true_feat = face_feature_fn(trial.true_face_path)
        imp_feat = face_feature_fn(trial.imposter_face_path)
        sim_true = cosine(probe, true_feat)
        sim_imp = cosine(probe, imp_feat)
        if sim_true is None or sim_imp is None:
            skipped += 1
            continue
        counted += 1
        if sim_true > sim_imp:
            correct += 1
    if counted == 0:
        raise EvaluationError("all matching trials were skipped")
    acc = correct / counted
    lo, hi = wilson_ci(correct, counted)
    return EvalReport(name=name, value=acc, trials=counted,
                      ci_low=lo, ci_high=hi, skipped=skipped)


def bundle_matching_functions(bundle: ModelBundle, corpus_root, use_vad=True):
    """Feature functions for run_matching backed by a trained bundle.

    Probe: whole-recording mel -> embedding -> generated face -> classifier
    penultimate feature. Gallery: classifier penultimate feature of the
    face image. Results are cached per path.
    """
    root = Path(corpus_root)
    voice_cache = {}
    face_cache = {}

    def probe_feature(trial):
        path = trial.probe_voice_path
        if path not in voice_cache:
            spec = load_voice_features(root, path, use_vad=use_vad)
            emb = bundle.embed_voice(spec)
            face = bundle.generate_face(emb)
            _, feat = bundle.classify(face)
            voice_cache[path] = feat
        return voice_cache[path]

    def face_feature(path):
        if path not in face_cache:
            face = images.normalize_pixels(images.load_png(root / path))
            _, feat = bundle.classify(face)
            face_cache[path] = feat
        return face_cache[path]

    return probe_feature, face_feature


def matching_accuracy(bundle: ModelBundle, trials, corpus_root,
                      use_vad=True, name="matching_accuracy") -> EvalReport:
    probe_fn, face_fn = bundle_matching_functions(bundle, corpus_root, use_vad)
    return run_matching(trials, probe_fn, face_fn, name=name)


# -- gender protocol ------------------------------------------------------


def build_gender_probe(arch: ArchConfig, seed: int = 0):
    """Discriminator-architecture binary classifier (trunk + sigmoid head)."""
    trunk = build_sequential(arch.trunk_specs(), rng_for(seed, 41))
    head = build_sequential(
        [LayerSpec("fully_connected", in_channels=FEATURE_DIM, out_channels=1),
         LayerSpec("sigmoid")],
        rng_for(seed, 42))
    return trunk, head


def _probe_scores(probe, faces_values):
    trunk, head = probe
    feats = trunk.forward(Tensor(faces_values))
    feats = feats.reshape(feats.data.shape[0], FEATURE_DIM)
    return head.forward(feats).reshape(feats.data.shape[0])


def train_gender_probe(faces, genders, arch: ArchConfig, steps=400,
                       batch=32, learning_rate=2e-4, seed=0):
    """Fit the probe on real faces; returns (trunk, head)."""
    probe = build_gender_probe(arch, seed)
    trunk, head = probe
    params = [p for _, p in trunk.params()] + [p for _, p in head.params()]
    opt = Adam(params, learning_rate=learning_rate, beta1=0.5, beta2=0.999)
    genders = np.asarray(genders, dtype=np.float32)
    n = faces.shape[0]
    for step in range(steps):
        rng = rng_for(seed, 43, step)
        idx = rng.integers(0, n, size=min(batch, n))
        scores = _probe_scores(probe, faces[idx])
        loss = binary_cross_entropy(scores, genders[idx]).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    for p in params:
        p.requires_grad = False
    return probe


def probe_accuracy(probe, faces, genders) -> float:
    preds = []
    for start in range(0, faces.shape[0], 64):
        scores = _probe_scores(probe, faces[start:start + 64])
        preds.append(scores.data > 0.5)
    preds = np.concatenate(preds).astype(int)
    return float((preds == np.asarray(genders)).mean())


def gender_accuracy(bundle: ModelBundle, voice_specs, speaker_genders, probe,
                    gate_faces, gate_genders, min_gate=0.9) -> EvalReport:
    """Fraction of generated faces whose probe-predicted gender matches the
    speaker. Refuses to run when the probe is unreliable on real faces."""
    gate = probe_accuracy(probe, gate_faces, gate_genders)
    if gate < min_gate:
        raise EvaluationError(
            f"gender probe accuracy {gate:.3f} on held-out real faces is below "
            f"{min_gate:.2f}; evaluation refused")
    correct = 0
    for spec, gender in zip(voice_specs, speaker_genders):
        emb = bundle.embed_voice(spec)
        face = bundle.generate_face(emb)
        score = _probe_scores(probe, face.values[None]).data[0]
        correct += int((score > 0.5) == bool(gender))
    n = len(voice_specs)
    lo, hi = wilson_ci(correct, n)
    return EvalReport(name="gender_accuracy", value=correct / n, trials=n,
                      ci_low=lo, ci_high=hi,
                      notes=f"probe_real_accuracy={gate:.4f}")


# -- specificity protocol -------------------------------------------------


def specificity_stats(bundle: ModelBundle, speech_specs, noise_specs,
                      min_samples=30):
    """Discriminator score statistics for speech- versus noise-generated faces."""
    if len(speech_specs) < min_samples or len(noise_specs) < min_samples:
        raise EvaluationError(f"specificity needs >= {min_samples} samples per class")

    def scores(specs):
        out = np.empty(len(specs), dtype=np.float64)
        for i, spec in enumerate(specs):
            emb = bundle.embed_voice(spec)
            face = bundle.generate_face(emb)
            out[i] = bundle.discriminate(face)
        return out

    s = scores(speech_specs)
    n = scores(noise_specs)
    notes = None if bundle.iteration > 0 else "untrained bundle"
    reports = [
        EvalReport("specificity_speech_mean", float(s.mean()), len(s), notes=notes),
        EvalReport("specificity_speech_std", float(s.std()), len(s), notes=notes),
        EvalReport("specificity_noise_mean", float(n.mean()), len(n), notes=notes),
        EvalReport("specificity_noise_std", float(n.std()), len(n), notes=notes),
        EvalReport("specificity_ordering", float(s.mean() > n.mean()), len(s) + len(n),
                   notes="1.0 means mean(speech) > mean(noise)"),
    ]
    return reports


def noise_feature_set(count: int, rng_seed: int, kinds=audio.NOISE_KINDS,
                      durations=audio.NOISE_DURATIONS):
    """Normalized mel specs of synthetic noises (VAD bypassed by design)."""
    specs = []
    i = 0
    while len(specs) < count:
        rng = rng_for(rng_seed, 51, i)
        kind = kinds[i % len(kinds)]
        dur = durations[(i // len(kinds)) % len(durations)]
        wav = audio.make_noise(kind, dur, rng)
        specs.append(audio.voice_to_features(wav, use_vad=False))
        i += 1
    return specs


# -- qualitative grids ----------------------------------------------------


def export_grids(bundle: ModelBundle, corpus_root, manifest: DatasetManifest,
                 out_dir, seed: int = 0, use_vad=True, speakers=4, segments=7):
    """Write the three qualitative PNG grids; returns the file paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = Path(corpus_root)

    def face_from_spec(spec):
        return images.denormalize_pixels(
            bundle.generate_face(bundle.embed_voice(spec)).values)

    # Noise grid: rows are noise kinds, columns are durations.
    noise_tiles = []
    for kind in audio.NOISE_KINDS:
        for j, dur in enumerate(audio.NOISE_DURATIONS):
            wav = audio.make_noise(kind, dur, rng_for(seed, 61, j))
            noise_tiles.append(face_from_spec(audio.voice_to_features(wav, use_vad=False)))
    noise_path = out_dir / "grid_noise.png"
    images.save_png(noise_path, images.tile_grid(
        noise_tiles, len(audio.NOISE_KINDS), len(audio.NOISE_DURATIONS)))

    voices = manifest.select(split="test", modality="voice")
    faces = manifest.select(split="test", modality="face")
    if not voices:
        voices = manifest.select(split="train", modality="voice")
        faces = manifest.select(split="train", modality="face")
    by_id_v = {}
    for v in voices:
        by_id_v.setdefault(v.identity, []).append(v)
    by_id_f = {}
    for f in faces:
        by_id_f.setdefault(f.identity, []).append(f)
    ids = [i for i in sorted(by_id_v) if i in by_id_f][:speakers]

    # Per-speaker grid: `segments` generated faces then one reference face.
    rng = rng_for(seed, 62)
    speaker_tiles = []
    for identity in ids:
        pool = by_id_v[identity]
        for j in range(segments):
            entry = pool[int(rng.integers(0, len(pool)))]
            spec = load_voice_features(root, entry.path, use_vad=use_vad)
            speaker_tiles.append(face_from_spec(spec))
        speaker_tiles.append(images.load_png(root / by_id_f[identity][0].path))
    speaker_path = out_dir / "grid_speakers.png"
    images.save_png(speaker_path, images.tile_grid(
        speaker_tiles, len(ids), segments + 1))

    # Side-by-side: generated halves on the left, reference halves right.
    pairs = 4
    side_tiles = []
    for identity in ids:
        pool_v = by_id_v[identity]
        pool_f = by_id_f[identity]
        row_gen = []
        row_ref = []
        for j in range(pairs):
            entry = pool_v[int(rng.integers(0, len(pool_v)))]
            spec = load_voice_features(root, entry.path, use_vad=use_vad)
            row_gen.append(face_from_spec(spec))
            row_ref.append(images.load_png(root / pool_f[j % len(pool_f)].path))
        side_tiles.extend(row_gen + row_ref)
    side_path = out_dir / "grid_side_by_side.png"
    images.save_png(side_path, images.tile_grid(side_tiles, len(ids), 2 * pairs))

    return [noise_path, speaker_path, side_path]
