"""U-net over covariate grids, producing one representation vector per cell.

The network follows the classic contract: a contractive path of
conv -> FRN -> SiLU blocks with 2x2 max pooling, a bottleneck, and an
expansive path with bilinear upsampling and skip concatenations, closed
by a 1x1 projection to the requested output dimension.  Spatial dims are
preserved, so cell (i, j) of the output summarizes the input neighborhood
around (i, j).

Zero padding breaks exact spatial stationarity near the border; the model
therefore exports its architectural receptive radius, and downstream code
masks a margin of that width when stationarity matters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .engine import (
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    concat_channels,
    conv2d,
    frn,
    kaiming_uniform,
    maxpool2x2,
    silu,
    slice2d,
    upsample2x,
)


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int
    out_channels: int = 1
    depth: int = 2
    hidden: int = 16
    multiplier: int = 2
    convs_per_level: int = 1
    kernel_size: int = 3
    padding: str = "zero"

    def validate(self) -> None:
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.out_channels < 1:
            raise ValueError("out_channels must be >= 1")
        if self.multiplier not in (1, 2):
            raise ValueError("multiplier must be 1 or 2")
        if self.convs_per_level < 1:
            raise ValueError("convs_per_level must be >= 1")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.padding != "zero":
            # The valid-convolution variant would shrink the output and break
            # the same-spatial-dims contract; border effects are handled by
            # interior masking instead.
            raise ValueError("only padding='zero' is supported; use interior_mask for stationarity")

    def level_channels(self) -> list[int]:
        """Channel width at levels 0..depth (the last entry is the bottleneck)."""
        return [self.hidden * self.multiplier**i for i in range(self.depth + 1)]


class _ConvBlock:
    """conv -> FRN -> SiLU with per-channel learned scale/shift."""

    def __init__(self, in_ch: int, out_ch: int, ksize: int, rng: np.random.Generator):
        fan_in = ksize * ksize * in_ch
        self.kernel = Tensor(kaiming_uniform(rng, (ksize, ksize, in_ch, out_ch), fan_in), requires_grad=True)
        self.gamma = Tensor(np.ones(out_ch), requires_grad=True)
        self.beta = Tensor(np.zeros(out_ch), requires_grad=True)

    def __call__(self, x: Tensor, detach_stats: bool) -> Tensor:
        return silu(frn(conv2d(x, self.kernel), self.gamma, self.beta, detach_stats=detach_stats))

    def parameters(self) -> list[Tensor]:
        return [self.kernel, self.gamma, self.beta]


class UNetModel:
    """Built U-net; construct via :func:`build_unet`."""

    def __init__(self, config: UNetConfig, seed: int):
        config.validate()
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x75]))
        k = config.kernel_size
        chans = config.level_channels()

        self.encoder: list[list[_ConvBlock]] = []
        in_ch = config.in_channels
        for lvl in range(config.depth):
            blocks = []
            for c in range(config.convs_per_level):
                blocks.append(_ConvBlock(in_ch if c == 0 else chans[lvl], chans[lvl], k, rng))
            self.encoder.append(blocks)
            in_ch = chans[lvl]

        self.bottleneck = [
            _ConvBlock(chans[config.depth - 1] if c == 0 else chans[config.depth], chans[config.depth], k, rng)
            for c in range(config.convs_per_level)
        ]

        self.decoder: list[list[_ConvBlock]] = []
        for lvl in range(config.depth - 1, -1, -1):
            blocks = []
            cat_ch = chans[lvl + 1] + chans[lvl]
            for c in range(config.convs_per_level):
                blocks.append(_ConvBlock(cat_ch if c == 0 else chans[lvl], chans[lvl], k, rng))
            self.decoder.append(blocks)

        fan_in = chans[0]
        self.final_kernel = Tensor(
            kaiming_uniform(rng, (1, 1, chans[0], config.out_channels), fan_in), requires_grad=True
        )
        self.final_bias = Tensor(np.zeros(config.out_channels), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        params: list[Tensor] = []
        for blocks in self.encoder:
            for b in blocks:
                params.extend(b.parameters())
        for b in self.bottleneck:
            params.extend(b.parameters())
        for blocks in self.decoder:
            for b in blocks:
                params.extend(b.parameters())
        params.append(self.final_kernel)
        params.append(self.final_bias)
        return params

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def forward(self, x, detach_norm_stats: bool = False) -> Tensor:
        t = as_tensor(x)
        if t.ndim != 3 or t.shape[2] != self.config.in_channels:
            raise ShapeError(f"expected (H, W, {self.config.in_channels}), got {t.shape}")
        h, w = t.shape[0], t.shape[1]
        div = 2**self.config.depth
        if h % div or w % div:
            raise ShapeError(f"spatial dims {h}x{w} must be divisible by {div}")

        skips = []
        for blocks in self.encoder:
            for b in blocks:
                t = b(t, detach_norm_stats)
            skips.append(t)
            t = maxpool2x2(t)
        for b in self.bottleneck:
            t = b(t, detach_norm_stats)
        for blocks, skip in zip(self.decoder, reversed(skips)):
            t = upsample2x(t)
            t = concat_channels(t, skip)
            for b in blocks:
                t = b(t, detach_norm_stats)
        return conv2d(t, self.final_kernel) + self.final_bias

    def receptive_radius(self) -> int:
        """Conservative architectural receptive radius, in input cells."""
        cfg = self.config
        half = (cfg.kernel_size - 1) // 2
        scale = 1
        radius = 0
        for _ in range(cfg.depth):
            radius += half * scale * cfg.convs_per_level
            radius += scale  # pooling
            scale *= 2
        radius += half * scale * cfg.convs_per_level  # bottleneck
        for _ in range(cfg.depth):
            radius += scale  # bilinear interpolation reach before halving
            scale //= 2
            radius += half * scale * cfg.convs_per_level
        return radius

    def interior_mask(self, h: int, w: int) -> np.ndarray:
        """Boolean (H, W) mask of cells unaffected by border padding."""
        m = self.receptive_radius()
        mask = np.zeros((h, w), dtype=bool)
        if 2 * m < h and 2 * m < w:
            mask[m : h - m, m : w - m] = True
        return mask


def build_unet(config: UNetConfig, seed: int) -> UNetModel:
    return UNetModel(config, seed)


def receptive_field(model: UNetModel, x_series: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Gradient-based receptive field of the output cell ``target``.

    For each time slice, runs a forward pass, backpropagates the summed
    output channels at the target cell, and records the L2 norm of the
    input gradient per cell; the result is averaged over time slices.
    Normalization statistics are held fixed during the probe so the map
    reflects the convolutional pathway only.
    """
    xs = np.asarray(x_series, dtype=np.float64)
    if xs.ndim == 3:
        xs = xs[None]
    t_len, h, w, _ = xs.shape
    r, c = target
    if not (0 <= r < h and 0 <= c < w):
        raise IndexError(f"target {target} outside {h}x{w} grid")
    acc = np.zeros((h, w))
    for t in range(t_len):
        x = Tensor(xs[t], requires_grad=True)
        z = model.forward(x, detach_norm_stats=True)
        probe = slice2d(z, r, r + 1, c, c + 1).sum()
        if probe.requires_grad:
            backward(probe)
            acc += np.sqrt(np.sum(x.grad * x.grad, axis=2))
        # an all-zero head leaves the probe detached: gradient is identically 0
    return acc / t_len


class LinearConvEncoder:
    """Single linear convolution used by the restricted (PCA-comparable) model."""

    def __init__(self, in_channels: int, out_channels: int, radius: int, seed: int, padding: str = "zero"):
        if radius < 0:
            raise ValueError("radius must be >= 0")
        self.radius = radius
        self.padding = padding
        self.in_channels = in_channels
        self.out_channels = out_channels
        ksize = 2 * radius + 1
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x2C]))
        fan_in = ksize * ksize * in_channels
        self.kernel = Tensor(
            kaiming_uniform(rng, (ksize, ksize, in_channels, out_channels), fan_in), requires_grad=True
        )

    def forward(self, x, detach_norm_stats: bool = False) -> Tensor:
        del detach_norm_stats
        return conv2d(as_tensor(x), self.kernel, padding=self.padding)

    def parameters(self) -> list[Tensor]:
        return [self.kernel]

    def receptive_radius(self) -> int:
        return self.radius


# -- checkpoints -----------------------------------------------------------------

_CKPT_MAGIC = b"NLCK"


@dataclass
class Checkpoint:
    kind: str
    config: dict
    seed: int
    loss_curve: list[float]
    groups: dict[str, list[np.ndarray]]
    extra: dict


def save_checkpoint(
    path,
    kind: str,
    config: dict,
    seed: int,
    loss_curve: list[float],
    groups: dict[str, list[Tensor]],
    extra: dict | None = None,
) -> None:
    """JSON header + little-endian float64 blob, parameters in layer-list order."""
    header = {
        "kind": kind,
        "config": config,
        "seed": seed,
        "loss_curve": [float(v) for v in loss_curve],
        "groups": {name: [list(p.shape) for p in params] for name, params in groups.items()},
        "group_order": list(groups.keys()),
        "extra": extra or {},
    }
    blob = b"".join(
        np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        for name in header["group_order"]
        for p in groups[name]
    )
    head_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = _CKPT_MAGIC + struct.pack("<I", len(head_bytes)) + head_bytes + blob
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    import os

    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    blob = raw[8 + hlen :]
    groups: dict[str, list[np.ndarray]] = {}
    offset = 0
    for name in header["group_order"]:
        arrays = []
        for shape in header["groups"][name]:
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape)
            arrays.append(np.ascontiguousarray(arr))
            offset += 8 * n
        groups[name] = arrays
    if offset != len(blob):
        raise ValueError(f"{path}: payload length mismatch")
    return Checkpoint(
        kind=header["kind"],
        config=header["config"],
        seed=header["seed"],
        loss_curve=header["loss_curve"],
        groups=groups,
        extra=header.get("extra", {}),
    )


def model_from_checkpoint(ckpt: Checkpoint) -> UNetModel:
    if "model" not in ckpt.groups:
        raise ValueError("checkpoint has no 'model' parameter group")
    config = UNetConfig(**ckpt.config)
    model = build_unet(config, ckpt.seed)
    params = model.parameters()
    arrays = ckpt.groups["model"]
    if len(params) != len(arrays):
        raise ValueError("checkpoint parameter count does not match architecture")
    for p, arr in zip(params, arrays):
        if tuple(p.shape) != tuple(arr.shape):
            raise ValueError("checkpoint parameter shapes do not match architecture")
        p.data[...] = arr
    return model


def unet_config_dict(config: UNetConfig) -> dict:
    return asdict(config)
