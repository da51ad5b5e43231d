"""The retrieval networks: music encoder, three pretext decoders, predictor.

The encoder is a bottleneck-residual conv stack that maps a 1x128x128 input
down a 128-64-32-16-8-4 ladder of stride-2 stages, then a 1x1 conv to the
embedding width.  A depth multiplier scales the per-stage block counts
(multiplier 1 gives the 3,4,6,3 layout); the embedding width scales every
internal channel count, so the default width 512 reproduces the full-size
stage widths 256/512/1024/2048.

Spatial convention: input rows are time frames, columns are mel bands, so the
pooled temporal feature [C x 4 x 1] keeps a coarse time axis and the 1-d
decoders upsample it 4 -> 128 back to frame resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose1d,
    ConvTranspose2d,
    Linear,
    Module,
    ModuleList,
    ShapeMismatch,
    Tensor,
    adaptive_avg_pool2d,
    add,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
)

INPUT_SIDE = 128
TEMPORAL_LEN = 4
STAGE_BLOCKS = (3, 4, 6, 3)


@dataclass
class ModelConfig:
    embed_dim: int = 512
    depth_multiplier: float = 1.0
    n_classes: int = 1101
    dtype: type = np.float32

    def __post_init__(self):
        if self.embed_dim % 16 != 0:
            raise ValueError("embed_dim must be divisible by 16")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")

    @property
    def stage_blocks(self) -> tuple:
        return tuple(max(1, round(self.depth_multiplier * n)) for n in STAGE_BLOCKS)

    @property
    def attention_bottleneck(self) -> int:
        return max(4, math.ceil(self.embed_dim / 32))


@dataclass
class EncoderOutput:
    temporal: Tensor  # [B, C, 4, 1]
    embedding: Tensor  # [B, C]


class Bottleneck(Module):
    expansion = 4

    def __init__(self, cin: int, planes: int, stride: int, rng, dtype):
        super().__init__()
        cout = planes * self.expansion
        self.conv1 = Conv2d(cin, planes, 1, 1, 0, rng=rng, dtype=dtype, bias=False)
        self.bn1 = BatchNorm2d(planes, dtype=dtype)
        self.conv2 = Conv2d(planes, planes, 3, stride, 1, rng=rng, dtype=dtype, bias=False)
        self.bn2 = BatchNorm2d(planes, dtype=dtype)
        self.conv3 = Conv2d(planes, cout, 1, 1, 0, rng=rng, dtype=dtype, bias=False)
        self.bn3 = BatchNorm2d(cout, dtype=dtype)
        self.has_proj = stride != 1 or cin != cout
        if self.has_proj:
            self.proj = Conv2d(cin, cout, 1, stride, 0, rng=rng, dtype=dtype, bias=False)
            self.proj_bn = BatchNorm2d(cout, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = relu(self.bn1(self.conv1(x)))
        h = relu(self.bn2(self.conv2(h)))
        h = self.bn3(self.conv3(h))
        skip = self.proj_bn(self.proj(x)) if self.has_proj else x
        return relu(add(h, skip))


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        c, dtype = cfg.embed_dim, cfg.dtype
        w0 = c // 8
        self.stem = Conv2d(1, w0, 7, 2, 3, rng=rng, dtype=dtype, bias=False)
        self.stem_bn = BatchNorm2d(w0, dtype=dtype)
        stages = []
        cin = w0
        for i, blocks in enumerate(cfg.stage_blocks):
            planes = w0 * (2**i)
            stage = ModuleList()
            for b in range(blocks):
                stage.append(Bottleneck(cin, planes, stride=2 if b == 0 else 1, rng=rng, dtype=dtype))
                cin = planes * Bottleneck.expansion
            stages.append(stage)
        self.stage1, self.stage2, self.stage3, self.stage4 = stages
        self.head = Conv2d(cin, c, 1, 1, 0, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor) -> EncoderOutput:
        if x.data.ndim != 4 or x.data.shape[1:] != (1, INPUT_SIDE, INPUT_SIDE):
            raise ShapeMismatch(f"encoder expects [B, 1, {INPUT_SIDE}, {INPUT_SIDE}], got {x.shape}")
        h = relu(self.stem_bn(self.stem(x)))
        for stage in (self.stage1, self.stage2, self.stage3, self.stage4):
            for block in stage:
                h = block(h)
        h = self.head(h)  # [B, C, 4, 4]
        f_t = adaptive_avg_pool2d(h, (None, 1))  # [B, C, 4, 1]
        u = adaptive_avg_pool2d(f_t, (1, None))  # [B, C, 1, 1]
        u = reshape(u, (u.data.shape[0], u.data.shape[1]))
        return EncoderOutput(temporal=f_t, embedding=u)


# (out_channels_divisor, kernel, stride, padding), final entry maps to 1 channel
_D1_LADDER = ((1, 4, 1, 0), (1, 4, 2, 1), (2, 4, 2, 1), (2, 4, 2, 1), (4, 3, 1, 1), (4, 4, 2, 1), (8, 3, 1, 1), (None, 4, 2, 1))


class SpectrogramDecoder(Module):
    """Upsamples an embedding back to a 1x128x128 map; last layer is linear."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        c, dtype = cfg.embed_dim, cfg.dtype
        self.layers = ModuleList()
        self.norms = ModuleList()
        cin = c
        for div, k, s, p in _D1_LADDER:
            cout = 1 if div is None else c // div
            self.layers.append(ConvTranspose2d(cin, cout, k, s, p, rng=rng, dtype=dtype, bias=div is None))
            if div is not None:
                self.norms.append(BatchNorm2d(cout, dtype=dtype))
            cin = cout

    def __call__(self, u: Tensor) -> Tensor:
        h = reshape(u, (u.data.shape[0], u.data.shape[1], 1, 1))
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.norms):
                h = relu(self.norms[i](h))
        return h  # [B, 1, 128, 128]


class SequenceDecoder(Module):
    """Five stride-2 transposed 1-d convs (4 -> 128) plus a 1x1 head.

    ``binary=True`` appends a sigmoid (rhythm head); otherwise the output is a
    plain regression (melody head).
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, binary: bool):
        super().__init__()
        c, dtype = cfg.embed_dim, cfg.dtype
        self.binary = binary
        chans = [c, c, c // 2, c // 4, c // 8, max(1, c // 16)]
        self.layers = ModuleList(
            ConvTranspose1d(chans[i], chans[i + 1], 2, 2, 0, rng=rng, dtype=dtype) for i in range(5)
        )
        self.head = ConvTranspose1d(chans[-1], 1, 1, 1, 0, rng=rng, dtype=dtype)

    def __call__(self, f_t: Tensor) -> Tensor:
        b, c = f_t.data.shape[0], f_t.data.shape[1]
        h = reshape(f_t, (b, c, TEMPORAL_LEN))
        for layer in self.layers:
            h = relu(layer(h))
        h = self.head(h)
        h = reshape(h, (b, h.data.shape[2]))
        if self.binary:
            h = sigmoid(h)
        return h  # [B, 128]


class ResAttBlock(Module):
    """Residual MLP block with a squeeze-excitation-style gate on the branch.

    h = W2 relu(W1 x); gate = sigmoid(W4 relu(W3 h)); out = x + h * gate.
    Zero weights make the block an exact identity.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        c, dtype = cfg.embed_dim, cfg.dtype
        bneck = cfg.attention_bottleneck
        self.fc1 = Linear(c, 2 * c, rng, dtype)
        self.fc2 = Linear(2 * c, c, rng, dtype)
        self.fc3 = Linear(c, bneck, rng, dtype)
        self.fc4 = Linear(bneck, c, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.fc2(relu(self.fc1(x)))
        gate = sigmoid(self.fc4(relu(self.fc3(h))))
        return add(x, mul(h, gate))


class Predictor(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        c, dtype = cfg.embed_dim, cfg.dtype
        self.input = Linear(c, c, rng, dtype)
        self.blocks = ModuleList(ResAttBlock(cfg, rng) for _ in range(3))
        self.output = Linear(c, cfg.n_classes, rng, dtype)
        # frozen-encoder embeddings arrive at whatever scale pretraining chose;
        # this buffer standardizes them so the fixed fine-tune lr stays sane
        self.register_buffer("input_scale", np.ones(1, dtype=dtype))

    def set_input_scale(self, embeddings: np.ndarray) -> None:
        rms = float(np.sqrt(np.mean(np.square(embeddings, dtype=np.float64))))
        self.input_scale[0] = 1.0 / max(rms, 1e-8)

    def __call__(self, u: Tensor) -> Tensor:
        if u.data.ndim != 2 or u.data.shape[1] != self.input.weight.data.shape[1]:
            raise ShapeMismatch(f"predictor expects [B, {self.input.weight.data.shape[1]}], got {u.shape}")
        h = self.input(mul(u, float(self.input_scale[0])))
        for block in self.blocks:
            h = block(h)
        return self.output(h)  # logits [B, K]


def predict_probs(t: Predictor, u: Tensor) -> Tensor:
    return softmax(t(u), axis=-1)


@dataclass
class Models:
    cfg: ModelConfig
    encoder: Encoder
    dec_spec: SpectrogramDecoder
    dec_melody: SequenceDecoder
    dec_rhythm: SequenceDecoder
    predictor: Predictor

    def components(self) -> dict:
        return {
            "E": self.encoder,
            "D1": self.dec_spec,
            "D2": self.dec_melody,
            "D3": self.dec_rhythm,
            "T": self.predictor,
        }

    def state_dict(self) -> dict:
        out = {}
        for prefix, module in self.components().items():
            out.update(module.state_dict(prefix + "."))
        return out

    def train(self, mode: bool = True):
        for m in self.components().values():
            m.train(mode)
        return self

    def eval(self):
        return self.train(False)


def build_models(cfg: ModelConfig, seed: int) -> Models:
    """Construct all networks with one seeded stream (order is fixed)."""
    rng = np.random.default_rng(seed)
    return Models(
        cfg=cfg,
        encoder=Encoder(cfg, rng),
        dec_spec=SpectrogramDecoder(cfg, rng),
        dec_melody=SequenceDecoder(cfg, rng, binary=False),
        dec_rhythm=SequenceDecoder(cfg, rng, binary=True),
        predictor=Predictor(cfg, rng),
    )


def zero_parameters(module: Module) -> None:
    """Used by tests that assert zero-propagation contracts."""
    for _, p in module.named_parameters():
        p.data[...] = 0
