"""The four networks: voice embedder, generator, discriminator, classifier.

The embedder is a five-layer strided 1D conv stack (each conv followed by
batch norm and ReLU) pooled over time into a 64-dim embedding. The
generator grows a 64x1x1 embedding to a 3x64x64 image through transposed
convs with ReLU, finishing with a 1x1 deconv and tanh. Discriminator and
classifier share one conv trunk (LReLU throughout, no batch norm) ending
in a 64-dim feature, with separate sigmoid / softmax heads.

`width` scales the hidden channel counts; the 64-dim interfaces (mel bins,
embedding, trunk feature) and the 3x64x64 image are fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from voice2face import ops
from voice2face.audio import MelSpectrogram, N_MELS
from voice2face.errors import ShapeError
from voice2face.images import FaceImage, CHANNELS, SIZE
from voice2face.layers import LayerSpec, Sequential, build_sequential
from voice2face.tensor import Tensor

EMBED_DIM = 64
FEATURE_DIM = 64
LEAKY_SLOPE = 0.2

_EMBEDDER_CHANNELS = (256, 384, 576, 864)
_GENERATOR_CHANNELS = (1024, 512, 256, 128, 64)
_TRUNK_CHANNELS = (32, 64, 128, 256, 512)


def _scaled(c, width):
    return max(2, int(round(c * width)))


@dataclass(frozen=True)
class ArchConfig:
    classes: int
    width: float = 1.0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("classifier needs at least 2 classes")
        if self.width <= 0:
            raise ValueError("width must be positive")

    def embedder_specs(self):
        chans = [_scaled(c, self.width) for c in _EMBEDDER_CHANNELS] + [EMBED_DIM]
        specs = []
        c_in = N_MELS
        for c_out in chans:
            specs.append(LayerSpec("conv1d", kernel=3, stride=2, padding=1,
                                   in_channels=c_in, out_channels=c_out))
            specs.append(LayerSpec("batchnorm", in_channels=c_out))
            specs.append(LayerSpec("relu"))
            c_in = c_out
        specs.append(LayerSpec("time_avg_pool"))
        return specs

    def generator_specs(self):
        chans = [_scaled(c, self.width) for c in _GENERATOR_CHANNELS]
        specs = [
            LayerSpec("deconv2d", kernel=4, stride=1, padding=0, output_padding=0,
                      in_channels=EMBED_DIM, out_channels=chans[0]),
            LayerSpec("relu"),
        ]
        for c_in, c_out in zip(chans, chans[1:]):
            specs.append(LayerSpec("deconv2d", kernel=3, stride=2, padding=1,
                                   output_padding=1, in_channels=c_in, out_channels=c_out))
            specs.append(LayerSpec("relu"))
        specs.append(LayerSpec("deconv2d", kernel=1, stride=1, padding=0,
                               output_padding=0, in_channels=chans[-1],
                               out_channels=CHANNELS))
        # Table-style architecture lists no activation here; tanh bounds the
        # output to the normalized pixel range.
        specs.append(LayerSpec("tanh"))
        return specs

    def trunk_specs(self):
        chans = [_scaled(c, self.width) for c in _TRUNK_CHANNELS]
        specs = [
            LayerSpec("conv2d", kernel=1, stride=1, padding=0,
                      in_channels=CHANNELS, out_channels=chans[0]),
            LayerSpec("leaky_relu", leaky_slope=LEAKY_SLOPE),
        ]
        for c_in, c_out in zip(chans, chans[1:]):
            specs.append(LayerSpec("conv2d", kernel=3, stride=2, padding=1,
                                   in_channels=c_in, out_channels=c_out))
            specs.append(LayerSpec("leaky_relu", leaky_slope=LEAKY_SLOPE))
        specs.append(LayerSpec("conv2d", kernel=4, stride=1, padding=0,
                               in_channels=chans[-1], out_channels=FEATURE_DIM))
        specs.append(LayerSpec("leaky_relu", leaky_slope=LEAKY_SLOPE))
        return specs

    def disc_head_spec(self):
        return [LayerSpec("fully_connected", in_channels=FEATURE_DIM, out_channels=1),
                LayerSpec("sigmoid")]

    def cls_head_spec(self):
        return [LayerSpec("fully_connected", in_channels=FEATURE_DIM,
                          out_channels=self.classes),
                LayerSpec("softmax")]

    def to_dict(self):
        return asdict(self)


class ModelBundle:
    """Parameters of all four networks plus architecture metadata.

    The discriminator and classifier read the same trunk storage: a
    gradient step through either head moves the shared conv parameters.
    The embedder is trained separately and frozen for adversarial training.
    """

    def __init__(self, arch: ArchConfig, embedder: Sequential, generator: Sequential,
                 trunk: Sequential, disc_head: Sequential, cls_head: Sequential,
                 iteration: int = 0):
        self.arch = arch
        self.embedder = embedder
        self.generator = generator
        self.trunk = trunk
        self.disc_head = disc_head
        self.cls_head = cls_head
        self.iteration = iteration

    @staticmethod
    def build(arch: ArchConfig, seed: int = 0, dtype=np.float32) -> "ModelBundle":
        def rng(tag):
            return np.random.default_rng([seed, tag])

        return ModelBundle(
            arch=arch,
            embedder=build_sequential(arch.embedder_specs(), rng(1), dtype),
            generator=build_sequential(arch.generator_specs(), rng(2), dtype),
            trunk=build_sequential(arch.trunk_specs(), rng(3), dtype),
            disc_head=build_sequential(arch.disc_head_spec(), rng(4), dtype),
            cls_head=build_sequential(arch.cls_head_spec(), rng(5), dtype),
        )

    def named_parameters(self):
        out = []
        for net_name in ("embedder", "generator", "trunk", "disc_head", "cls_head"):
            net = getattr(self, net_name)
            for name, p in net.params():
                out.append((f"{net_name}.{name}", p))
        return out

    def named_buffers(self):
        out = []
        for net_name in ("embedder", "generator", "trunk", "disc_head", "cls_head"):
            net = getattr(self, net_name)
            for name, b in net.buffers():
                out.append((f"{net_name}.{name}", b))
        return out

    # -- batched forward passes (training path) --------------------------

    def embed_batch(self, mel_batch: np.ndarray, training: bool = False) -> Tensor:
        """(B, 64, T) normalized log-mel values -> (B, 64) embeddings."""
        if mel_batch.ndim != 3 or mel_batch.shape[1] != N_MELS:
            raise ShapeError("embed_batch", "input", f"(B, {N_MELS}, T)", mel_batch.shape)
        return self.embedder.forward(Tensor(mel_batch), training=training)

    def generate_batch(self, embeddings: Tensor) -> Tensor:
        """(B, 64) embeddings -> (B, 3, 64, 64) images in (-1, 1)."""
        if embeddings.data.shape[1] != EMBED_DIM:
            raise ShapeError("generate_batch", "embedding dim", EMBED_DIM,
                             embeddings.data.shape[1])
        b = embeddings.data.shape[0]
        return self.generator.forward(embeddings.reshape(b, EMBED_DIM, 1, 1))

    def features_batch(self, image_batch: Tensor) -> Tensor:
        """(B, 3, 64, 64) images -> (B, 64) shared-trunk features."""
        if image_batch.data.shape[1:] != (CHANNELS, SIZE, SIZE):
            raise ShapeError("features_batch", "image", (CHANNELS, SIZE, SIZE),
                             image_batch.data.shape[1:])
        feats = self.trunk.forward(image_batch)
        b = feats.data.shape[0]
        return feats.reshape(b, FEATURE_DIM)

    def discriminate_batch(self, image_batch: Tensor) -> Tensor:
        """(B, 3, 64, 64) images -> (B,) realness scores in (0, 1)."""
        scores = self.disc_head.forward(self.features_batch(image_batch))
        return scores.reshape(scores.data.shape[0])

    def discriminate_logits_batch(self, image_batch: Tensor) -> Tensor:
        """Realness logits (the affine head without its sigmoid), for the
        numerically fused training losses."""
        feats = self.features_batch(image_batch)
        logits = self.disc_head.layers[0].forward(feats)
        return logits.reshape(logits.data.shape[0])

    def classify_batch(self, image_batch: Tensor):
        """Images -> ((B, k) probabilities, (B, 64) penultimate features)."""
        feats = self.features_batch(image_batch)
        return self.cls_head.forward(feats), feats

    def classify_logits_batch(self, image_batch: Tensor):
        """Identity logits (affine head without its softmax) + features."""
        feats = self.features_batch(image_batch)
        return self.cls_head.layers[0].forward(feats), feats

    def generate_batch_detached(self, embeddings_data: np.ndarray) -> np.ndarray:
        """Generator forward with no gradient tracking (discriminator fakes)."""
        saved = [(p, p.requires_grad) for _, p in self.generator.params()]
        for p, _ in saved:
            p.requires_grad = False
        try:
            out = self.generate_batch(Tensor(np.asarray(embeddings_data, dtype=np.float32)))
        finally:
            for p, flag in saved:
                p.requires_grad = flag
        return out.data

    def eval_mode(self):
        """Turn off gradient tracking everywhere (inference bundles)."""
        for _, p in self.named_parameters():
            p.requires_grad = False
        return self

    # -- single-sample inference wrappers ---------------------------------

    def embed_voice(self, spec: MelSpectrogram) -> np.ndarray:
        """A normalized mel spectrogram -> 64-dim embedding (inference mode)."""
        if not spec.normalized:
            raise ShapeError("embed_voice", "normalized", True, False)
        out = self.embed_batch(spec.values[None, :, :], training=False)
        return out.data[0].copy()

    def generate_face(self, embedding: np.ndarray) -> FaceImage:
        embedding = np.asarray(embedding, dtype=np.float32)
        if embedding.shape != (EMBED_DIM,):
            raise ShapeError("generate_face", "embedding", (EMBED_DIM,), embedding.shape)
        out = self.generate_batch(Tensor(embedding[None, :]))
        return FaceImage(out.data[0])

    def discriminate(self, face: FaceImage) -> float:
        out = self.discriminate_batch(Tensor(face.values[None]))
        return float(out.data[0])

    def classify(self, face: FaceImage):
        probs, feats = self.classify_batch(Tensor(face.values[None]))
        return probs.data[0].copy(), feats.data[0].copy()


def parameter_count_report(bundle: ModelBundle) -> str:
    """Stable plain-text parameter counts per network plus the total."""
    lines = []
    totals = {}
    for name, p in bundle.named_parameters():
        net = name.split(".")[0]
        totals[net] = totals.get(net, 0) + p.data.size
    for net in ("embedder", "generator", "trunk", "disc_head", "cls_head"):
        lines.append(f"{net}: {totals.get(net, 0)}")
    lines.append(f"total: {sum(totals.values())}")
    return "\n".join(lines) + "\n"


def shape_report(arch: ArchConfig, t0: int) -> dict:
    """Compute-free dry run of all four networks' per-layer output shapes."""
    from voice2face.layers import chain_shapes

    return {
        "embedder": chain_shapes(arch.embedder_specs(), (N_MELS, t0)),
        "generator": chain_shapes(arch.generator_specs(), (EMBED_DIM, 1, 1)),
        "discriminator": chain_shapes(
            arch.trunk_specs() + arch.disc_head_spec(), (CHANNELS, SIZE, SIZE)
        ),
        "classifier": chain_shapes(
            arch.trunk_specs() + arch.cls_head_spec(), (CHANNELS, SIZE, SIZE)
        ),
    }
