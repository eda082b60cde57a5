"""Small time-conditioned encoder-decoder noise estimator.

Three resolution levels with addition skip connections, two 3x3 convolutions
per block, group-norm pre-activations and a sinusoidal-time bias injected
into every block. The final convolution is zero-initialized so an untrained
network predicts exactly zero noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .. import bridge


@dataclass(frozen=True)
class ArchDescriptor:
    in_channels: int = 1
    out_channels: int = 1
    base_channels: int = 16
    levels: int = 3
    time_dim: int = 32
    time_hidden: int = 64
    groups: int = 8

    def __post_init__(self):
        if self.levels < 1 or self.base_channels < 1 or self.in_channels < 1:
            raise ValueError("architecture sizes must be positive")
        if self.time_dim % 2 != 0:
            raise ValueError("time embedding dimension must be even")

    @property
    def channels(self):
        return [self.base_channels * 2**i for i in range(self.levels)]

    @property
    def min_divisor(self):
        return 2 ** (self.levels - 1)


@dataclass
class DenoiserParams:
    arch: ArchDescriptor
    tensors: dict[str, np.ndarray]

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def copy(self):
        return DenoiserParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def n_params(self):
        return sum(v.size for v in self.tensors.values())


def param_spec(arch: ArchDescriptor) -> list[tuple[str, tuple]]:
    """Canonical (name, shape) list; fixes flattening and file order."""
    ch = arch.channels
    spec = [
        ("time.fc1_w", (arch.time_hidden, arch.time_dim)),
        ("time.fc1_b", (arch.time_hidden,)),
        ("time.fc2_w", (arch.time_hidden, arch.time_hidden)),
        ("time.fc2_b", (arch.time_hidden,)),
        ("stem_w", (ch[0], arch.in_channels, 3, 3)),
        ("stem_b", (ch[0],)),
    ]

    def block(prefix, c):
        return [
            (f"{prefix}.gn1_g", (c,)), (f"{prefix}.gn1_b", (c,)),
            (f"{prefix}.conv1_w", (c, c, 3, 3)), (f"{prefix}.conv1_b", (c,)),
            (f"{prefix}.time_w", (c, arch.time_hidden)), (f"{prefix}.time_b", (c,)),
            (f"{prefix}.gn2_g", (c,)), (f"{prefix}.gn2_b", (c,)),
            (f"{prefix}.conv2_w", (c, c, 3, 3)), (f"{prefix}.conv2_b", (c,)),
        ]

    for i in range(arch.levels):
        spec += block(f"enc{i}", ch[i])
        if i < arch.levels - 1:
            spec += [(f"down{i}_w", (ch[i + 1], ch[i], 3, 3)), (f"down{i}_b", (ch[i + 1],))]
    for i in range(arch.levels - 2, -1, -1):
        spec += [(f"dec{i}.reduce_w", (ch[i], ch[i + 1], 3, 3)), (f"dec{i}.reduce_b", (ch[i],))]
        spec += block(f"dec{i}", ch[i])
    spec += [
        ("head.gn_g", (ch[0],)), ("head.gn_b", (ch[0],)),
        ("head_w", (arch.out_channels, ch[0], 3, 3)), ("head_b", (arch.out_channels,)),
    ]
    return spec


def expected_param_count(arch: ArchDescriptor) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_spec(arch))


def init_params(arch: ArchDescriptor, seed: int, dtype=np.float32) -> DenoiserParams:
    """Fan-in-scaled normal init; norms at identity; head zeroed."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_spec(arch):
        if name.startswith("head_"):          # head_w / head_b: zero noise at init
            t = np.zeros(shape)
        elif name.endswith("_g"):
            t = np.ones(shape)
        elif name.endswith("_b"):
            t = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            t = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        tensors[name] = t.astype(dtype)
    return DenoiserParams(arch=arch, tensors=tensors)


def _block_forward(p, prefix, x, t_feat, tape, groups):
    h, c1 = L.groupnorm_forward(x, p[f"{prefix}.gn1_g"], p[f"{prefix}.gn1_b"], groups)
    h, c2 = L.silu_forward(h)
    h, c3 = L.conv3x3_forward(h, p[f"{prefix}.conv1_w"], p[f"{prefix}.conv1_b"])
    tb, c4 = L.linear_forward(t_feat, p[f"{prefix}.time_w"], p[f"{prefix}.time_b"])
    h = h + tb.T[:, :, None, None]
    h2, c5 = L.groupnorm_forward(h, p[f"{prefix}.gn2_g"], p[f"{prefix}.gn2_b"], groups)
    h2, c6 = L.silu_forward(h2)
    h2, c7 = L.conv3x3_forward(h2, p[f"{prefix}.conv2_w"], p[f"{prefix}.conv2_b"])
    tape.append((prefix, (c1, c2, c3, c4, c5, c6, c7)))
    return h2


def _block_backward(p, prefix, gy, cache, grads):
    c1, c2, c3, c4, c5, c6, c7 = cache
    g, gw, gb = L.conv3x3_backward(gy, c7)
    grads[f"{prefix}.conv2_w"] += gw
    grads[f"{prefix}.conv2_b"] += gb
    g = L.silu_backward(g, c6)
    g, gg, gb = L.groupnorm_backward(g, c5)
    grads[f"{prefix}.gn2_g"] += gg
    grads[f"{prefix}.gn2_b"] += gb
    gtb = g.sum(axis=(2, 3)).T                    # (batch, C)
    gt, gw, gb = L.linear_backward(gtb, c4)
    grads[f"{prefix}.time_w"] += gw
    grads[f"{prefix}.time_b"] += gb
    g2, gw, gb = L.conv3x3_backward(g, c3)
    grads[f"{prefix}.conv1_w"] += gw
    grads[f"{prefix}.conv1_b"] += gb
    g2 = L.silu_backward(g2, c2)
    g2, gg, gb = L.groupnorm_backward(g2, c1)
    grads[f"{prefix}.gn1_g"] += gg
    grads[f"{prefix}.gn1_b"] += gb
    return g2, gt


def _forward_tape(params: DenoiserParams, x, k):
    """Run the network, returning the prediction and the backward tape.

    x: (batch, in_channels, H, W) in model units; k: (batch,) timesteps.
    """
    arch = params.arch
    p = params.tensors
    x = np.asarray(x, dtype=params.dtype)
    if x.ndim != 4 or x.shape[1] != arch.in_channels:
        raise ValueError("input must be (batch, in_channels, H, W)")
    if x.shape[2] % arch.min_divisor or x.shape[3] % arch.min_divisor:
        raise ValueError(f"image sides must be divisible by {arch.min_divisor}")
    k = np.atleast_1d(k)
    if k.shape[0] != x.shape[0]:
        raise ValueError("one timestep per batch item")

    tape = []
    emb = L.time_embedding(k, arch.time_dim, dtype=params.dtype)
    t1, ct1 = L.linear_forward(emb, p["time.fc1_w"], p["time.fc1_b"])
    t1a, ct2 = L.silu_forward(t1)
    t_feat, ct3 = L.linear_forward(t1a, p["time.fc2_w"], p["time.fc2_b"])
    tape.append(("time", (ct1, ct2, ct3)))

    h = np.ascontiguousarray(x.transpose(1, 0, 2, 3))     # -> (C, B, H, W)
    h, cs = L.conv3x3_forward(h, p["stem_w"], p["stem_b"])
    tape.append(("stem", cs))

    skips = []
    for i in range(arch.levels):
        h = _block_forward(p, f"enc{i}", h, t_feat, tape, arch.groups)
        if i < arch.levels - 1:
            skips.append(h)
            h, cd = L.conv3x3_forward(h, p[f"down{i}_w"], p[f"down{i}_b"], stride=2)
            tape.append((f"down{i}", cd))

    for i in range(arch.levels - 2, -1, -1):
        h, cr = L.conv3x3_forward(h, p[f"dec{i}.reduce_w"], p[f"dec{i}.reduce_b"])
        tape.append((f"dec{i}.reduce", cr))
        h, cu = L.upsample2x_forward(h)
        tape.append((f"dec{i}.up", cu))
        h = h + skips[i]
        h = _block_forward(p, f"dec{i}", h, t_feat, tape, arch.groups)

    h, cg = L.groupnorm_forward(h, p["head.gn_g"], p["head.gn_b"], arch.groups)
    h, ca = L.silu_forward(h)
    out, ch = L.conv3x3_forward(h, p["head_w"], p["head_b"])
    tape.append(("head", (cg, ca, ch)))
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3)), tape


def forward(params: DenoiserParams, x, k) -> np.ndarray:
    """Noise prediction for a batch; see :func:`_forward_tape`."""
    out, _ = _forward_tape(params, x, k)
    return out


def zero_grads(params: DenoiserParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(t) for name, t in params.tensors.items()}


def backward(params: DenoiserParams, tape, gout) -> dict[str, np.ndarray]:
    """Backpropagate d(loss)/d(output) through a recorded tape."""
    arch = params.arch
    p = params.tensors
    grads = zero_grads(params)
    g = np.ascontiguousarray(np.asarray(gout, dtype=params.dtype).transpose(1, 0, 2, 3))
    gt_feat = None
    it = list(reversed(tape))
    pos = 0

    name, (cg, ca, ch) = it[pos]; pos += 1
    g, gw, gb = L.conv3x3_backward(g, ch)
    grads["head_w"] += gw
    grads["head_b"] += gb
    g = L.silu_backward(g, ca)
    g, gg, gb = L.groupnorm_backward(g, cg)
    grads["head.gn_g"] += gg
    grads["head.gn_b"] += gb

    gskips = {}
    for i in range(arch.levels - 1):
        name, cache = it[pos]; pos += 1
        assert name == f"dec{i}"
        g, gt = _block_backward(p, name, g, cache, grads)
        gt_feat = gt if gt_feat is None else gt_feat + gt
        gskips[i] = g
        name, cu = it[pos]; pos += 1
        g = L.upsample2x_backward(g, cu)
        name, cr = it[pos]; pos += 1
        g, gw, gb = L.conv3x3_backward(g, cr)
        grads[f"dec{i}.reduce_w"] += gw
        grads[f"dec{i}.reduce_b"] += gb

    for i in range(arch.levels - 1, -1, -1):
        if i < arch.levels - 1:
            name, cd = it[pos]; pos += 1
            g, gw, gb = L.conv3x3_backward(g, cd)
            grads[f"down{i}_w"] += gw
            grads[f"down{i}_b"] += gb
            g = g + gskips[i]
        name, cache = it[pos]; pos += 1
        assert name == f"enc{i}"
        g, gt = _block_backward(p, name, g, cache, grads)
        gt_feat = gt if gt_feat is None else gt_feat + gt

    name, cs = it[pos]; pos += 1
    g, gw, gb = L.conv3x3_backward(g, cs)
    grads["stem_w"] += gw
    grads["stem_b"] += gb

    name, (ct1, ct2, ct3) = it[pos]
    gt1a, gw, gb = L.linear_backward(gt_feat, ct3)
    grads["time.fc2_w"] += gw
    grads["time.fc2_b"] += gb
    gt1 = L.silu_backward(gt1a, ct2)
    _, gw, gb = L.linear_backward(gt1, ct1)
    grads["time.fc1_w"] += gw
    grads["time.fc1_b"] += gb
    return grads


def loss_and_grad(params: DenoiserParams, batch, sched: bridge.Schedule):
    """MSE loss and exact gradients on a batch of bridge samples.

    ``batch`` is a sequence of (x0, x1, k, noise_seed); the noisy state is
    drawn from the bridge marginal and the regression target is its scaled
    residual. Loss is the mean over batch items and pixels, accumulated in
    float64.
    """
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    xs, ks, targets = [], [], []
    for x0, x1, k, noise_seed in batch:
        xk = bridge.marginal_sample(sched, x0, x1, k, noise_seed)
        xs.append(xk)
        ks.append(k)
        targets.append(bridge.training_target(x0, xk, sched, k))
    x = np.stack(xs)[:, None, :, :]
    target = np.stack(targets)[:, None, :, :]
    pred, tape = _forward_tape(params, x, np.asarray(ks))
    diff = pred.astype(np.float64) - target
    loss = float(np.mean(diff * diff))
    gout = (2.0 / diff.size) * diff
    grads = backward(params, tape, gout)
    return loss, grads
