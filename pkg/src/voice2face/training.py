"""Embedder pretraining and the three-player adversarial training loop.

Each iteration samples a voice minibatch and a face minibatch
independently, then runs three gradient-ascent updates in order:
discriminator (real-vs-generated log likelihood), classifier (identity
log likelihood on real faces only), generator (realness plus
correct-identity log likelihood of its outputs). The embedder is
pretrained on speaker recognition and frozen throughout. Each player owns
its Adam moments; the shared conv trunk carries one set for the
discriminator step and one for the classifier step.
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from voice2face import audio, images
from voice2face.backend import worker_count
from voice2face.checkpoint import save_checkpoint
from voice2face.dataset import DatasetManifest
from voice2face.errors import ManifestError, NotFiniteError, TrainingAborted
from voice2face.layers import LayerSpec, build_sequential
from voice2face.networks import ArchConfig, EMBED_DIM, ModelBundle, parameter_count_report
from voice2face.optim import Adam
from voice2face.ops import (binary_cross_entropy_with_logits,
                            categorical_cross_entropy_with_logits)
from voice2face.tensor import Tensor


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_voices: int = 128
    batch_faces: int = 128
    total_iterations: int = 100_000
    seed: int = 0
    crop_min_s: float = 3.0
    crop_max_s: float = 8.0
    checkpoint_every: int = 10_000
    pretrain_steps: int = 3000
    pretrain_learning_rate: float = 2e-4
    width: float = 1.0
    use_vad: bool = True

    def __post_init__(self):
        if self.batch_voices < 2 or self.batch_faces < 2:
            raise ValueError("minibatch sizes must be >= 2 (batch norm)")
        if self.crop_min_s > self.crop_max_s:
            raise ValueError("crop_min_s must be <= crop_max_s")

    def to_dict(self):
        return asdict(self)

    @property
    def crop_min_frames(self):
        return int(round(self.crop_min_s * 100))

    @property
    def crop_max_frames(self):
        return int(round(self.crop_max_s * 100))


@dataclass
class StepReport:
    iteration: int
    loss_d: float = float("nan")
    loss_c: float = float("nan")
    loss_g: float = float("nan")
    real_score: float = float("nan")
    fake_score: float = float("nan")

    def format_line(self):
        return (f"iter={self.iteration} loss_d={self.loss_d:.6f} "
                f"loss_c={self.loss_c:.6f} loss_g={self.loss_g:.6f} "
                f"real_score={self.real_score:.4f} fake_score={self.fake_score:.4f}")


def rng_for(seed, *tags):
    return np.random.default_rng([int(seed)] + [int(t) for t in tags])


# -- corpus access --------------------------------------------------------


class CorpusData:
    """In-memory view of one split: normalized voice mels and face arrays."""

    def __init__(self, voice_specs, voice_labels, voice_genders,
                 faces, face_labels, face_genders, class_of):
        self.voice_specs = voice_specs
        self.voice_labels = np.asarray(voice_labels)
        self.voice_genders = np.asarray(voice_genders)
        self.faces = faces  # (N, 3, 64, 64) float32
        self.face_labels = np.asarray(face_labels)
        self.face_genders = np.asarray(face_genders)
        self.class_of = class_of  # identity -> dense class index

    @property
    def n_classes(self):
        return len(self.class_of)


def mel_cache_path(root, voice_rel_path):
    return Path(root) / "melcache" / (Path(voice_rel_path).stem + ".mel")


def load_voice_features(root, rel_path, use_vad=True):
    cache = mel_cache_path(root, rel_path)
    if cache.exists():
        return audio.load_mel(cache)
    wav = audio.read_wav(Path(root) / rel_path)
    return audio.voice_to_features(wav, use_vad=use_vad)


def prepare_mel_cache(root, manifest: DatasetManifest, use_vad=True):
    """Extract and cache normalized mel features for every voice entry."""
    root = Path(root)
    (root / "melcache").mkdir(exist_ok=True)
    entries = manifest.select(modality="voice")

    def one(entry):
        cache = mel_cache_path(root, entry.path)
        if cache.exists():
            return 0
        wav = audio.read_wav(root / entry.path)
        audio.save_mel(cache, audio.voice_to_features(wav, use_vad=use_vad))
        return 1

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        written = sum(pool.map(one, entries))
    return written


def load_corpus(root, manifest: DatasetManifest, split="train", use_vad=True):
    root = Path(root)
    train_ids = manifest.identities(split="train")
    class_of = {identity: i for i, identity in enumerate(train_ids)}

    voice_entries = manifest.select(split=split, modality="voice")
    face_entries = manifest.select(split=split, modality="face")
    if not voice_entries or not face_entries:
        raise ManifestError(f"split {split!r} lacks voice or face entries")

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        voice_specs = list(pool.map(
            lambda e: load_voice_features(root, e.path, use_vad=use_vad), voice_entries))
    faces = np.stack([
        images.normalize_pixels(images.load_png(root / e.path)).values
        for e in face_entries
    ])
    return CorpusData(
        voice_specs=voice_specs,
        voice_labels=[e.identity for e in voice_entries],
        voice_genders=[e.gender for e in voice_entries],
        faces=faces,
        face_labels=[e.identity for e in face_entries],
        face_genders=[e.gender for e in face_entries],
        class_of=class_of,
    )


def crop_batch(specs, indices, length, rng):
    """Rectangular (B, 64, L) batch of crops; one shared length per batch."""
    out = np.empty((len(indices), audio.N_MELS, length), dtype=np.float32)
    for row, i in enumerate(indices):
        out[row] = audio.crop_frames(specs[i], length, rng)
    return out


# -- embedder pretraining -------------------------------------------------


def pretrain_embedder(data: CorpusData, config: TrainConfig, steps=None,
                      log_cb=None):
    """Train the voice embedder on speaker recognition; the softmax head is
    temporary and discarded by callers after the returned accuracy check."""
    n_ids = data.n_classes
    if n_ids < 2:
        raise ManifestError("pretraining needs at least 2 identities")
    steps = steps if steps is not None else config.pretrain_steps
    arch = ArchConfig(classes=n_ids, width=config.width)

    embedder = build_sequential(arch.embedder_specs(), rng_for(config.seed, 11))
    head = build_sequential(
        [LayerSpec("fully_connected", in_channels=EMBED_DIM, out_channels=n_ids),
         LayerSpec("softmax")],
        rng_for(config.seed, 12))
    head_fc = head.layers[0]
    params = [p for _, p in embedder.params()] + [p for _, p in head.params()]
    opt = Adam(params, config.pretrain_learning_rate, config.beta1, config.beta2)

    labels = np.array([data.class_of[i] for i in data.voice_labels])
    n_voices = len(data.voice_specs)
    batch = min(config.batch_voices, max(2, n_voices))

    for step in range(steps):
        rng = rng_for(config.seed, 13, step)
        idx = rng.integers(0, n_voices, size=batch)
        length = int(rng.integers(config.crop_min_frames, config.crop_max_frames + 1))
        x = crop_batch(data.voice_specs, idx, length, rng)
        emb = embedder.forward(Tensor(x), training=True)
        logits = head_fc.forward(emb)
        loss = categorical_cross_entropy_with_logits(logits, labels[idx]).mean()
        if not np.isfinite(loss.item()):
            raise TrainingAborted(step, "non-finite pretraining loss")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log_cb is not None:
            log_cb(step, loss.item())
    return embedder, head


def embedder_accuracy(embedder, head, data: CorpusData, limit=None):
    """Speaker-recognition accuracy on whole recordings (inference mode)."""
    labels = np.array([data.class_of[i] for i in data.voice_labels])
    n = len(data.voice_specs) if limit is None else min(limit, len(data.voice_specs))
    correct = 0
    for i in range(n):
        emb = embedder.forward(Tensor(data.voice_specs[i].values[None]), training=False)
        probs = head.forward(emb)
        correct += int(np.argmax(probs.data[0]) == labels[i])
    return correct / n


def freeze_embedder(bundle: ModelBundle):
    for _, p in bundle.embedder.params():
        p.requires_grad = False


# -- the three adversarial updates ---------------------------------------


def _trainable(params_named):
    return [p for _, p in params_named]


def _set_only_trainable(bundle: ModelBundle, nets):
    """requires_grad on exactly the given sub-networks (embedder stays frozen)."""
    for name in ("generator", "trunk", "disc_head", "cls_head"):
        flag = name in nets
        for _, p in getattr(bundle, name).params():
            p.requires_grad = flag


def discriminator_step(bundle: ModelBundle, opt: Adam, real_faces: np.ndarray,
                       fake_faces: np.ndarray):
    """Ascend log D(real) + log(1 - D(fake)) over trunk + discriminator head.

    `fake_faces` must already be detached outputs of the generator. The
    loss runs in logit space (same objective, saturation-proof gradients).
    """
    _set_only_trainable(bundle, ("trunk", "disc_head"))
    real_logits = bundle.discriminate_logits_batch(Tensor(real_faces))
    fake_logits = bundle.discriminate_logits_batch(Tensor(fake_faces))
    ones = np.ones(real_logits.data.shape[0], dtype=real_logits.dtype)
    zeros = np.zeros(fake_logits.data.shape[0], dtype=fake_logits.dtype)
    loss = binary_cross_entropy_with_logits(real_logits, ones).mean() + \
        binary_cross_entropy_with_logits(fake_logits, zeros).mean()
    value = loss.item()
    if not np.isfinite(value):
        raise NotFiniteError("discriminator loss is not finite")
    opt.zero_grad()
    loss.backward()
    opt.step()
    real_score = float(_sigmoid(real_logits.data).mean())
    fake_score = float(_sigmoid(fake_logits.data).mean())
    return value, real_score, fake_score


def classifier_step(bundle: ModelBundle, opt: Adam, real_faces: np.ndarray,
                    class_labels: np.ndarray):
    """Ascend log C(real)[label] over trunk + classifier head (real faces only)."""
    _set_only_trainable(bundle, ("trunk", "cls_head"))
    logits, _ = bundle.classify_logits_batch(Tensor(real_faces))
    loss = categorical_cross_entropy_with_logits(logits, class_labels).mean()
    value = loss.item()
    if not np.isfinite(value):
        raise NotFiniteError("classifier loss is not finite")
    opt.zero_grad()
    loss.backward()
    opt.step()
    return value


def generator_step(bundle: ModelBundle, opt: Adam, embeddings: np.ndarray,
                   class_labels: np.ndarray):
    """Ascend log D(G(e)) + log C(G(e))[label] over the generator only."""
    _set_only_trainable(bundle, ("generator",))
    fakes = bundle.generate_batch(Tensor(embeddings))
    score_logits = bundle.discriminate_logits_batch(fakes)
    cls_logits, _ = bundle.classify_logits_batch(fakes)
    ones = np.ones(score_logits.data.shape[0], dtype=score_logits.dtype)
    loss = binary_cross_entropy_with_logits(score_logits, ones).mean() + \
        categorical_cross_entropy_with_logits(cls_logits, class_labels).mean()
    value = loss.item()
    if not np.isfinite(value):
        raise NotFiniteError("generator loss is not finite")
    opt.zero_grad()
    loss.backward()
    opt.step()
    return value


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def make_optimizers(bundle: ModelBundle, config: TrainConfig):
    """Three Adam instances; the shared trunk appears in both D and C sets,
    each with its own moments."""
    kw = dict(learning_rate=config.learning_rate, beta1=config.beta1, beta2=config.beta2)
    opt_d = Adam(_trainable(bundle.trunk.params()) + _trainable(bundle.disc_head.params()), **kw)
    opt_c = Adam(_trainable(bundle.trunk.params()) + _trainable(bundle.cls_head.params()), **kw)
    opt_g = Adam(_trainable(bundle.generator.params()), **kw)
    return opt_d, opt_c, opt_g


def parameter_fingerprints(bundle: ModelBundle) -> dict:
    """sha256 per named parameter and buffer (ownership/freeze assertions)."""
    out = {}
    for name, p in bundle.named_parameters():
        out[name] = hashlib.sha256(np.ascontiguousarray(p.data).tobytes()).hexdigest()
    for name, b in bundle.named_buffers():
        out[f"buffer.{name}"] = hashlib.sha256(np.ascontiguousarray(b).tobytes()).hexdigest()
    return out


def train(bundle: ModelBundle, data: CorpusData, config: TrainConfig,
          out_dir, log_cb=None, start_iteration=0):
    """Run the adversarial loop for config.total_iterations; returns reports.

    Writes checkpoints on schedule plus `final.ckpt`, a plain-text run log,
    and a parameter-count report. Deterministic given (seed, corpus, config).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "param_report.txt").write_text(parameter_count_report(bundle))

    opt_d, opt_c, opt_g = make_optimizers(bundle, config)
    n_voices = len(data.voice_specs)
    n_faces = data.faces.shape[0]
    voice_classes = np.array([data.class_of[i] for i in data.voice_labels])
    face_classes = np.array([data.class_of[i] for i in data.face_labels])

    reports = []
    log_path = out_dir / "run_log.txt"
    with open(log_path, "a") as log:
        for it in range(start_iteration, config.total_iterations):
            try:
                rng_v = rng_for(config.seed, 21, it)
                rng_f = rng_for(config.seed, 22, it)
                rng_c = rng_for(config.seed, 23, it)
                v_idx = rng_v.integers(0, n_voices, size=config.batch_voices)
                f_idx = rng_f.integers(0, n_faces, size=config.batch_faces)
                length = int(rng_c.integers(config.crop_min_frames,
                                            config.crop_max_frames + 1))
                v_batch = crop_batch(data.voice_specs, v_idx, length, rng_c)
                real_batch = data.faces[f_idx]

                emb = bundle.embed_batch(v_batch, training=False)
                fakes = bundle.generate_batch_detached(emb.data)

                loss_d, real_score, fake_score = discriminator_step(
                    bundle, opt_d, real_batch, fakes)
                loss_c = classifier_step(bundle, opt_c, real_batch,
                                         face_classes[f_idx])
                loss_g = generator_step(bundle, opt_g, emb.data,
                                        voice_classes[v_idx])
            except NotFiniteError as e:
                bundle.iteration = it
                save_checkpoint(out_dir / "abort.ckpt", bundle,
                                extras={"config": config.to_dict(), "abort": str(e)})
                raise TrainingAborted(it, str(e)) from e

            report = StepReport(iteration=it, loss_d=loss_d, loss_c=loss_c,
                                loss_g=loss_g, real_score=real_score,
                                fake_score=fake_score)
            reports.append(report)
            log.write(report.format_line() + "\n")
            if log_cb is not None:
                log_cb(report)

            bundle.iteration = it + 1
            if config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
                save_checkpoint(out_dir / f"ckpt_{it + 1:06d}.ckpt", bundle,
                                extras={"config": config.to_dict()})

    save_checkpoint(out_dir / "final.ckpt", bundle,
                    extras={"config": config.to_dict()})
    return reports
