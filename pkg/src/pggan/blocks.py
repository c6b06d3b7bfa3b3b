"""Layer blocks: residual variants, down/up-sampling, and receptive-field arithmetic."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from . import ops
from .tensor import Tensor

RESIDUAL_KINDS = ("residual_a", "residual_b", "residual_c")
BLOCK_KINDS = RESIDUAL_KINDS + ("downsample", "upsample_iconv", "upsample_tconv", "conv", "dense")


@dataclass(frozen=True)
class Layer:
    op: str  # conv | tconv | resize | norm | act | dense
    name: str
    in_ch: int = 0
    out_ch: int = 0
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    dilation: int = 1
    act: str = ""
    alpha: float = 0.2
    mode: str = "nearest"
    scale: int = 2
    bias: bool = True

    def param_shapes(self) -> dict:
        if self.op == "conv":
            shapes = {"weight": (self.out_ch, self.in_ch, self.kernel, self.kernel), "bias": (self.out_ch,)}
        elif self.op == "tconv":
            shapes = {"weight": (self.in_ch, self.out_ch, self.kernel, self.kernel), "bias": (self.out_ch,)}
        else:
            shapes = {}
        if shapes:
            if not self.bias:
                del shapes["bias"]
            return shapes
        if self.op == "dense":
            return {"weight": (self.out_ch, self.in_ch), "bias": (self.out_ch,)}
        if self.op == "norm":
            return {"gain": (self.out_ch,), "shift": (self.out_ch,)}
        return {}


@dataclass(frozen=True)
class BlockSpec:
    kind: str
    channels_in: int
    channels_out: int
    kernel: int
    stride: int
    dilation: int
    layers: tuple
    # residual blocks add the input to the branch output, then apply ``post``
    skip: bool = False
    post: tuple = ()

    def all_layers(self) -> tuple:
        return self.layers + self.post

    def param_shapes(self) -> dict:
        shapes = {}
        for layer in self.all_layers():
            for pname, shape in layer.param_shapes().items():
                shapes[f"{layer.name}.{pname}"] = shape
        return shapes

    def conv_layers(self) -> list:
        return [layer for layer in self.layers if layer.op in ("conv", "tconv")]


def _act(name: str, kind: Optional[str], alpha: float = 0.2) -> tuple:
    return (Layer("act", name, act=kind, alpha=alpha),) if kind else ()


def _norm(name: str, channels: int, enabled: bool) -> tuple:
    return (Layer("norm", name, out_ch=channels),) if enabled else ()


def build_residual_block(kind: str, channels: int, dilation: int = 1, norm: bool = True, act: str = "relu") -> BlockSpec:
    """Residual block of type ``a``, ``b`` or ``c``.

    The branch is conv -> norm -> act -> conv -> norm; the skip is added and
    the activation applied afterwards. Type ``b`` dilates the first
    convolution, type ``c`` the second. Padding equals ``dilation`` so a
    3x3 kernel preserves the spatial size.
    """
    kind = kind.removeprefix("residual_")
    if kind not in ("a", "b", "c"):
        raise ValueError(f"residual kind must be a, b or c, got {kind!r}")
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    if kind == "a" and dilation != 1:
        raise ValueError("type-a residual blocks use standard convolutions only (dilation 1)")
    d1 = dilation if kind == "b" else 1
    d2 = dilation if kind == "c" else 1
    layers = (
        Layer("conv", "conv1", channels, channels, 3, 1, d1, d1, bias=not norm),
        *_norm("norm1", channels, norm),
        *_act("act1", act),
        Layer("conv", "conv2", channels, channels, 3, 1, d2, d2, bias=not norm),
        *_norm("norm2", channels, norm),
    )
    return BlockSpec(f"residual_{kind}", channels, channels, 3, 1, dilation, layers,
                     skip=True, post=_act("act_out", act))


def build_conv_block(cin: int, cout: int, kernel: int, stride: int = 1, padding: Optional[int] = None,
                     norm: bool = False, act: Optional[str] = "relu", alpha: float = 0.2,
                     kind: str = "conv") -> BlockSpec:
    if padding is None:
        padding = (kernel - 1) // 2
    layers = (
        Layer("conv", "conv", cin, cout, kernel, stride, padding, bias=not norm),
        *_norm("norm", cout, norm),
        *_act("act", act, alpha),
    )
    return BlockSpec(kind, cin, cout, kernel, stride, 1, layers)


def build_downsample(cin: int, cout: int, kernel: int = 3, norm: bool = True, act: str = "relu") -> BlockSpec:
    """Strided (stride 2) convolution halving H and W; no pooling."""
    return build_conv_block(cin, cout, kernel, 2, (kernel - 1) // 2, norm, act, kind="downsample")


def build_upsample_iconv(cin: int, cout: int, kernel: int = 3, scale: int = 2, mode: str = "nearest",
                         norm: bool = True, act: Optional[str] = "relu") -> BlockSpec:
    """Interpolated convolution: resize by ``scale`` then a stride-1 convolution."""
    layers = (
        Layer("resize", "resize", cin, cin, mode=mode, scale=scale),
        Layer("conv", "conv", cin, cout, kernel, 1, (kernel - 1) // 2, bias=not norm),
        *_norm("norm", cout, norm),
        *_act("act", act),
    )
    return BlockSpec("upsample_iconv", cin, cout, kernel, 1, 1, layers)


def build_upsample_tconv(cin: int, cout: int, kernel: int = 4, stride: int = 2, padding: Optional[int] = None,
                         norm: bool = True, act: Optional[str] = "relu") -> BlockSpec:
    """Transposed convolution; output size ``(H-1)*stride - 2*padding + kernel``."""
    if padding is None:
        padding = max(kernel - stride, 0) // 2
    layers = (
        Layer("tconv", "tconv", cin, cout, kernel, stride, padding, bias=not norm),
        *_norm("norm", cout, norm),
        *_act("act", act),
    )
    return BlockSpec("upsample_tconv", cin, cout, kernel, stride, 1, layers)


def build_dense_block(fin: int, fout: int, act: Optional[str] = None, alpha: float = 0.2) -> BlockSpec:
    layers = (Layer("dense", "fc", fin, fout), *_act("act", act, alpha))
    return BlockSpec("dense", fin, fout, 1, 1, 1, layers)


def dilation_schedule(num_residual_blocks: int) -> list:
    """Dilation per residual block, doubling from one."""
    if num_residual_blocks < 1:
        raise ValueError("need at least one residual block")
    return [2**i for i in range(num_residual_blocks)]


def run_layer(layer: Layer, params: Mapping[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    p = lambda name: params.get(f"{prefix}.{layer.name}.{name}")  # noqa: E731
    if layer.op == "conv":
        return ops.conv2d(x, p("weight"), p("bias"), layer.stride, layer.padding, layer.dilation)
    if layer.op == "tconv":
        return ops.transposed_conv2d(x, p("weight"), p("bias"), layer.stride, layer.padding)
    if layer.op == "resize":
        return ops.resize(x, layer.scale, layer.mode)
    if layer.op == "norm":
        return ops.instance_norm(x, p("gain"), p("shift"))
    if layer.op == "act":
        return ops.pointwise(x, layer.act, layer.alpha)
    if layer.op == "dense":
        return ops.dense(x, p("weight"), p("bias"))
    raise ValueError(f"unknown layer op {layer.op!r}")


def run_block(block: BlockSpec, params: Mapping[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    h = x
    for layer in block.layers:
        h = run_layer(layer, params, prefix, h)
    if block.skip:
        h = ops.add(x, h)
    for layer in block.post:
        h = run_layer(layer, params, prefix, h)
    return h


@dataclass(frozen=True)
class ReceptiveFieldTrace:
    steps: tuple  # (rf, jump) after each layer
    rf: int


def receptive_field(layers: Sequence[tuple]) -> ReceptiveFieldTrace:
    """Receptive field of a stack of ``(kernel, stride, dilation)`` layers.

    rf_k = rf_{k-1} + (d(k-1)+1 - 1) * jump_{k-1};  jump_k = jump_{k-1} * stride
    """
    if not layers:
        raise ValueError("receptive_field needs at least one layer")
    rf, jump = 1, 1
    steps = []
    for kernel, stride, dilation in layers:
        if min(kernel, stride, dilation) < 1:
            raise ValueError(f"layer parameters must be >= 1, got {(kernel, stride, dilation)}")
        effective = dilation * (kernel - 1) + 1
        rf += (effective - 1) * jump
        jump *= stride
        steps.append((rf, jump))
    return ReceptiveFieldTrace(tuple(steps), rf)


def block_rf_layers(block: BlockSpec) -> list:
    """``(kernel, stride, dilation)`` of each convolution in a block (skip path ignored)."""
    return [(layer.kernel, layer.stride, layer.dilation) for layer in block.layers if layer.op == "conv"]
