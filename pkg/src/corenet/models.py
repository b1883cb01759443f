"""Apprentice (encoder-decoder) and Master (quality regressor) networks.

Parameters live in flat ``dict[str, Tensor]`` maps so the optimizer, the
checkpoint writer and the gradient checks all see the same names.

ResDownBlock: Self-ONN conv (k=3, stride 2) -> instance norm -> tanh ->
dropout, plus a 1x1 stride-2 linear shortcut, summed. ResUpBlock mirrors it
with transposed convolutions.

Apprentice stages: encoder stage 0 is the input, stages 1..5 are the down
blocks (lengths 1024 -> 32). Each of the 5 up blocks doubles the length and
its output is concatenated with the encoder stage of equal length, the last
one being the input itself. A stride-1 transposed Self-ONN conv and tanh map
the result to 2 channels. The master ends with average pooling, a dense layer and a
sigmoid.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, ops

Params = dict[str, Tensor]


@dataclass(frozen=True)
class BlockConfig:
    in_channels: int
    out_channels: int
    kernel_size: int = 3
    stride: int = 2
    q_order: int = 3
    dropout_rate: float = 0.25


@dataclass(frozen=True)
class ARConfig:
    encoder_widths: tuple[int, ...] = (16, 32, 48, 64, 96)
    input_channels: int = 2
    output_channels: int = 2
    kernel_size: int = 3
    q_order: int = 3
    dropout_rate: float = 0.25
    length: int = 1024
    norm_eps: float = 1e-5

    def __post_init__(self):
        if len(self.encoder_widths) != 5 or min(self.encoder_widths) < 1:
            raise ValueError("apprentice needs exactly 5 positive encoder widths")
        if self.length % 32:
            raise ValueError("segment length must be divisible by 2**5")

    @classmethod
    def uniform(cls, width: int, **kw) -> "ARConfig":
        return cls(encoder_widths=(width,) * 5, **kw)

    def down_blocks(self) -> list[BlockConfig]:
        ins = (self.input_channels,) + self.encoder_widths[:-1]
        return [self._block(i, o) for i, o in zip(ins, self.encoder_widths)]

    def up_blocks(self) -> list[BlockConfig]:
        e = self.encoder_widths
        outs = (e[3], e[2], e[1], e[0], e[0])
        skips = (e[3], e[2], e[1], e[0], self.input_channels)
        ins = (e[4],) + tuple(o + k for o, k in zip(outs[:-1], skips[:-1]))
        return [self._block(i, o) for i, o in zip(ins, outs)]

    def head_in_channels(self) -> int:
        return self.encoder_widths[0] + self.input_channels

    def _block(self, cin, cout) -> BlockConfig:
        return BlockConfig(cin, cout, self.kernel_size, 2, self.q_order, self.dropout_rate)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ARConfig":
        d = dict(d)
        d["encoder_widths"] = tuple(d["encoder_widths"])
        return cls(**d)


@dataclass(frozen=True)
class MRConfig:
    widths: tuple[int, ...] = (12, 24, 32, 48, 56, 56)
    input_channels: int = 4
    kernel_size: int = 3
    q_order: int = 3
    dropout_rate: float = 0.25
    length: int = 1024
    norm_eps: float = 1e-5

    def __post_init__(self):
        if len(self.widths) != 6 or min(self.widths) < 1:
            raise ValueError("master needs exactly 6 positive widths")
        if self.length % 64:
            raise ValueError("segment length must be divisible by 2**6")

    @classmethod
    def uniform(cls, width: int, **kw) -> "MRConfig":
        return cls(widths=(width,) * 6, **kw)

    def down_blocks(self) -> list[BlockConfig]:
        ins = (self.input_channels,) + self.widths[:-1]
        return [
            BlockConfig(i, o, self.kernel_size, 2, self.q_order, self.dropout_rate)
            for i, o in zip(ins, self.widths)
        ]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MRConfig":
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        return cls(**d)


# ---------------------------------------------------------------------------
# parameter shapes and initialisation
# ---------------------------------------------------------------------------


def _block_shapes(prefix: str, b: BlockConfig) -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.conv.w": (b.q_order, b.out_channels, b.in_channels, b.kernel_size),
        f"{prefix}.conv.b": (b.out_channels,),
        f"{prefix}.norm.gamma": (b.out_channels,),
        f"{prefix}.norm.beta": (b.out_channels,),
        f"{prefix}.skip.w": (b.out_channels, b.in_channels, 1),
        f"{prefix}.skip.b": (b.out_channels,),
    }


def ar_shapes(cfg: ARConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for i, b in enumerate(cfg.down_blocks()):
        shapes.update(_block_shapes(f"down{i}", b))
    for j, b in enumerate(cfg.up_blocks()):
        shapes.update(_block_shapes(f"up{j}", b))
    cin = cfg.head_in_channels()
    shapes["out.conv.w"] = (cfg.q_order, cfg.output_channels, cin, cfg.kernel_size)
    shapes["out.conv.b"] = (cfg.output_channels,)
    return shapes


def mr_shapes(cfg: MRConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for i, b in enumerate(cfg.down_blocks()):
        shapes.update(_block_shapes(f"down{i}", b))
    shapes["head.w"] = (1, cfg.widths[-1])
    shapes["head.b"] = (1,)
    return shapes


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def _fans(name: str, shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 4:  # Self-ONN kernel, fans per q-slice
        _, out, cin, k = shape
        return cin * k, out * k
    if len(shape) == 3:
        out, cin, k = shape
        return cin * k, out * k
    out, cin = shape
    return cin, out


def init_xavier(shapes: dict[str, tuple[int, ...]], seed: int, dtype=np.float32) -> Params:
    """Xavier-uniform weights, zero biases, unit/zero instance-norm affines."""
    rng = np.random.default_rng(seed)
    params: Params = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if name.endswith(".gamma"):
            data = np.ones(shape)
        elif name.endswith((".b", ".beta")):
            data = np.zeros(shape)
        else:
            a = xavier_bound(*_fans(name, shape))
            data = rng.uniform(-a, a, size=shape)
        params[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)
    return {name: params[name] for name in shapes}


def init_ar(cfg: ARConfig, seed: int, dtype=np.float32) -> Params:
    return init_xavier(ar_shapes(cfg), seed, dtype)


def init_mr(cfg: MRConfig, seed: int, dtype=np.float32) -> Params:
    return init_xavier(mr_shapes(cfg), seed, dtype)


def param_count(params) -> int:
    """Number of scalar parameters in a map of tensors or arrays."""
    return int(sum(np.asarray(getattr(p, "data", p)).size for p in params.values()))


def _block_count(b: BlockConfig) -> int:
    conv = b.q_order * b.out_channels * b.in_channels * b.kernel_size + b.out_channels
    norm = 2 * b.out_channels
    skip = b.out_channels * b.in_channels + b.out_channels
    return conv + norm + skip


def ar_param_count(cfg: ARConfig) -> int:
    """Closed-form apprentice size."""
    total = sum(_block_count(b) for b in cfg.down_blocks() + cfg.up_blocks())
    cin = cfg.head_in_channels()
    return total + cfg.q_order * cfg.output_channels * cin * cfg.kernel_size + cfg.output_channels


def mr_param_count(cfg: MRConfig) -> int:
    """Closed-form master size."""
    return sum(_block_count(b) for b in cfg.down_blocks()) + cfg.widths[-1] + 1


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _as_input(x, params: Params) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = next(iter(params.values())).dtype
    return Tensor(np.asarray(x, dtype=dtype))


def res_down_block(p: Params, prefix: str, x: Tensor, b: BlockConfig, eps: float, train: bool, rng) -> Tensor:
    h = ops.selfonn_conv1d(x, p[f"{prefix}.conv.w"], p[f"{prefix}.conv.b"], stride=b.stride, padding=b.kernel_size // 2)
    h = ops.instance_norm(h, p[f"{prefix}.norm.gamma"], p[f"{prefix}.norm.beta"], eps)
    h = ops.dropout(ops.tanh(h), b.dropout_rate, train, rng)
    shortcut = ops.conv1d(x, p[f"{prefix}.skip.w"], p[f"{prefix}.skip.b"], stride=b.stride)
    return ops.add(h, shortcut)


def res_up_block(p: Params, prefix: str, x: Tensor, b: BlockConfig, eps: float, train: bool, rng) -> Tensor:
    pad = b.kernel_size // 2
    h = ops.selfonn_tconv1d(
        x, p[f"{prefix}.conv.w"], p[f"{prefix}.conv.b"], stride=b.stride, padding=pad, output_padding=b.stride - 1
    )
    h = ops.instance_norm(h, p[f"{prefix}.norm.gamma"], p[f"{prefix}.norm.beta"], eps)
    h = ops.dropout(ops.tanh(h), b.dropout_rate, train, rng)
    shortcut = ops.conv_transpose1d(
        x, p[f"{prefix}.skip.w"], p[f"{prefix}.skip.b"], stride=b.stride, output_padding=b.stride - 1
    )
    return ops.add(h, shortcut)


def ar_forward(r, params: Params, cfg: ARConfig, train: bool = False, rng=None, trace: list | None = None) -> Tensor:
    """Restore ``r[B, 2, L]``; output has the same shape and lies in [-1, 1].

    ``rng`` drives dropout in training mode. If ``trace`` is a list, every
    stage output is appended to it.
    """
    x = _as_input(r, params)
    if x.ndim != 3 or x.shape[1] != cfg.input_channels or x.shape[2] != cfg.length:
        raise ValueError(f"apprentice expects [B, {cfg.input_channels}, {cfg.length}], got {x.shape}")
    if train and rng is None:
        rng = np.random.default_rng(0)
    skips = [x]
    h = x
    for i, b in enumerate(cfg.down_blocks()):
        h = res_down_block(params, f"down{i}", h, b, cfg.norm_eps, train, rng)
        skips.append(h)
        if trace is not None:
            trace.append(h)
    for j, b in enumerate(cfg.up_blocks()):
        h = res_up_block(params, f"up{j}", h, b, cfg.norm_eps, train, rng)
        h = ops.concat_channels(h, skips[4 - j])
        if trace is not None:
            trace.append(h)
    k = cfg.kernel_size
    out = ops.selfonn_tconv1d(h, params["out.conv.w"], params["out.conv.b"], stride=1, padding=k // 2)
    return ops.tanh(out)


def mr_forward(r, candidate, params: Params, cfg: MRConfig, train: bool = False, rng=None) -> Tensor:
    """Normalised-PSNR score ``[B, 1]`` in (0, 1) for the pair (r, candidate)."""
    r = _as_input(r, params)
    c = _as_input(candidate, params)
    if r.shape != c.shape:
        raise ValueError(f"master inputs differ in shape: {r.shape} vs {c.shape}")
    x = ops.concat_channels(r, c)
    if x.shape[1] != cfg.input_channels or x.shape[2] != cfg.length:
        raise ValueError(f"master expects [B, {cfg.input_channels}, {cfg.length}] after pairing, got {x.shape}")
    if train and rng is None:
        rng = np.random.default_rng(0)
    h = x
    for i, b in enumerate(cfg.down_blocks()):
        h = res_down_block(params, f"down{i}", h, b, cfg.norm_eps, train, rng)
    pooled = ops.reshape(ops.adaptive_avg_pool1d(h), (h.shape[0], h.shape[1]))
    return ops.sigmoid(ops.linear(pooled, params["head.w"], params["head.b"]))


def snapshot(params: Params) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}


def load_into(params: Params, values: dict[str, np.ndarray]) -> None:
    if set(params) != set(values):
        raise KeyError(f"parameter names differ: {sorted(set(params) ^ set(values))}")
    for k, t in params.items():
        if values[k].shape != t.shape:
            raise ValueError(f"{k}: shape {values[k].shape} != {t.shape}")
        t.data = np.array(values[k], dtype=t.dtype, copy=True)


def from_arrays(values: dict[str, np.ndarray]) -> Params:
    return {k: Tensor(np.array(v, copy=True), requires_grad=True, name=k) for k, v in values.items()}
