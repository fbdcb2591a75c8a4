"""LNT architecture: strided-conv encoder, recurrent context module, linear
prediction heads, and the bank of local neural transformations.

Layout conventions
------------------
Raw windows are (C, T) or batched (B, C, T).  Latent and context sequences
are time-major rows, (T_z, dim_z) / (T_z, dim_c), batched with a leading
axis.  A "flattened" latent batch is the (B*T_z, dim) row matrix used by
the losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as tn
from .tensor import GruParams, Tensor


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``filters``/``strides`` define the encoder conv stack (valid, no
    padding); the downsample factor r is the stride product.  ``K`` is the
    number of prediction horizons, ``L`` the transformation count, and
    ``bank_layers``/``bank_width`` the per-transformation MLP shape
    (bias-free, ReLU hidden, sigmoid output used as multiplicative mask).
    ``sub_seq`` is the recommended training window length.
    """

    in_channels: int = 3
    dim_z: int = 128
    dim_c: int = 32
    filters: tuple[int, ...] = (3, 3, 4, 2)
    strides: tuple[int, ...] = (3, 3, 4, 2)
    K: int = 4
    L: int = 12
    bank_layers: int = 2
    bank_width: int = 24
    conv_bias: bool = True
    separate_ddcl_heads: bool = False
    sub_seq: int = 720

    def __post_init__(self):
        if len(self.filters) != len(self.strides):
            raise ValueError("filters and strides must have equal length")
        if min(self.filters) < 1 or min(self.strides) < 1:
            raise ValueError("filters and strides must be positive")
        for name in ("in_channels", "dim_z", "dim_c", "K", "bank_layers", "bank_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.L < 2:
            raise ValueError("L must be >= 2 (the DDCL denominator needs m != l)")

    @property
    def downsample(self) -> int:
        """Raw frames per latent step (r)."""
        r = 1
        for s in self.strides:
            r *= s
        return r

    @property
    def receptive_field(self) -> int:
        rf, jump = 1, 1
        for f, s in zip(self.filters, self.strides):
            rf += (f - 1) * jump
            jump *= s
        return rf

    def latent_len(self, t: int) -> int:
        """Latent steps produced from a raw window of length t.

        The conv stack emits one step per downsample-factor stride of the
        receptive field, floor((t - rf) / r) + 1; latent step i covers raw
        frames [i*r, i*r + rf).  Trailing frames that start no new stride
        produce no step and inherit the final score at broadcast time.
        """
        if t < self.receptive_field:
            raise ValueError(
                f"window of {t} frames is shorter than the "
                f"receptive field {self.receptive_field}"
            )
        return (t - self.receptive_field) // self.downsample + 1


def small_config(channels: int = 3) -> ModelConfig:
    # separate DDCL heads: the CPC heads optimize raw dot products while the
    # DDCL score lives in cosine space, and sharing them measurably hurts
    # detection at desk scale
    return ModelConfig(in_channels=channels, separate_ddcl_heads=True)


def audio_config(channels: int = 1) -> ModelConfig:
    return ModelConfig(
        in_channels=channels,
        dim_z=512,
        dim_c=256,
        filters=(10, 8, 4, 4, 4),
        strides=(5, 4, 2, 2, 2),
        K=12,
        L=12,
        bank_layers=3,
        bank_width=64,
        sub_seq=20480,
        separate_ddcl_heads=True,
    )


_BUILTIN_CONFIGS = {"small": small_config, "audio": audio_config}


def builtin_config(name: str, channels: int | None = None) -> ModelConfig:
    if name not in _BUILTIN_CONFIGS:
        raise ValueError(f"unknown config '{name}' (choose from {sorted(_BUILTIN_CONFIGS)})")
    cfg = _BUILTIN_CONFIGS[name]()
    if channels is not None:
        cfg = replace(cfg, in_channels=channels)
    return cfg


@dataclass
class ModelParams:
    """All learned parameters plus the config that shapes them."""

    config: ModelConfig
    encoder: list[tuple[Tensor, Tensor | None]] = field(default_factory=list)
    context: GruParams | None = None
    context_out_bias: Tensor | None = None
    heads: list[Tensor] = field(default_factory=list)
    ddcl_heads: list[Tensor] | None = None
    bank: list[list[Tensor]] = field(default_factory=list)
    decoder: list[tuple[Tensor, Tensor]] | None = None

    def named_parameters(self) -> dict[str, Tensor]:
        """Trainable tensors in a fixed, stable order."""
        out: dict[str, Tensor] = {}
        for i, (w, b) in enumerate(self.encoder):
            out[f"encoder.layer{i}.weight"] = w
            if b is not None:
                out[f"encoder.layer{i}.bias"] = b
        for name in GruParams._fields:
            label = name if name.startswith("b") else name[0].upper() + name[1:]
            out[f"context.{label}"] = getattr(self.context, name)
        out["context.out_bias"] = self.context_out_bias
        for k, w in enumerate(self.heads, start=1):
            out[f"heads.W{k}"] = w
        if self.ddcl_heads is not None:
            for k, w in enumerate(self.ddcl_heads, start=1):
                out[f"ddcl_heads.W{k}"] = w
        for l, layers in enumerate(self.bank, start=1):
            for j, w in enumerate(layers):
                out[f"bank.T{l}.layer{j}.weight"] = w
        if self.decoder is not None:
            for i, (w, b) in enumerate(self.decoder):
                out[f"decoder.layer{i}.weight"] = w
                out[f"decoder.layer{i}.bias"] = b
        return out

    def heads_for_ddcl(self) -> list[Tensor]:
        return self.ddcl_heads if self.ddcl_heads is not None else self.heads


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Fresh parameters: weights uniform in ±1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    params = ModelParams(config=config)

    c_in = config.in_channels
    for f in config.filters:
        w = _uniform(rng, (config.dim_z, c_in, f), c_in * f)
        b = _zeros((config.dim_z, 1)) if config.conv_bias else None
        params.encoder.append((w, b))
        c_in = config.dim_z

    z, h = config.dim_z, config.dim_c
    params.context = GruParams(
        w_r=_uniform(rng, (h, z), z), u_r=_uniform(rng, (h, h), h), b_r=_zeros(h),
        w_u=_uniform(rng, (h, z), z), u_u=_uniform(rng, (h, h), h), b_u=_zeros(h),
        w_n=_uniform(rng, (h, z), z), u_n=_uniform(rng, (h, h), h), b_n=_zeros(h),
    )
    params.context_out_bias = _zeros(h)

    params.heads = [_uniform(rng, (z, h), h) for _ in range(config.K)]
    if config.separate_ddcl_heads:
        params.ddcl_heads = [_uniform(rng, (z, h), h) for _ in range(config.K)]

    widths = [z] + [config.bank_width] * (config.bank_layers - 1) + [z]
    for _ in range(config.L):
        layers = [
            _uniform(rng, (widths[j + 1], widths[j]), widths[j])
            for j in range(config.bank_layers)
        ]
        params.bank.append(layers)
    return params


def init_decoder(params: ModelParams, seed: int) -> None:
    """Attach a fresh transposed-conv decoder mirroring the encoder."""
    cfg = params.config
    rng = np.random.default_rng(seed)
    chans = [cfg.dim_z] * len(cfg.filters) + [cfg.in_channels]
    layers = []
    for i, (f, s) in enumerate(zip(cfg.filters[::-1], cfg.strides[::-1])):
        c_in, c_out = chans[i], chans[i + 1]
        w = _uniform(rng, (c_in, c_out, f), c_in * f)
        layers.append((w, _zeros((c_out, 1))))
    params.decoder = layers


# ---------------------------------------------------------------------------
# forward operations


def encode(params: ModelParams, x: Tensor) -> Tensor:
    """Raw window (C,T) or (B,C,T) -> latent rows (T_z,dim_z) / (B,T_z,dim_z).

    T_z follows ModelConfig.latent_len; the window must cover at least one
    receptive field.  ReLU between conv layers, linear final layer.
    """
    cfg = params.config
    c_axis = 0 if x.ndim == 2 else 1
    if x.shape[c_axis] != cfg.in_channels:
        raise ValueError(
            f"expected {cfg.in_channels} input channels, got {x.shape[c_axis]}"
        )
    cfg.latent_len(x.shape[-1])  # raises if too short

    h = x
    last = len(params.encoder) - 1
    for i, (w, b) in enumerate(params.encoder):
        h = tn.conv1d_strided(h, w, cfg.strides[i])
        if b is not None:
            h = tn.add(h, b)
        if i < last:
            h = tn.relu(h)
    # (B?,dim_z,T_z) -> time-major rows
    axes = (1, 0) if h.ndim == 2 else (0, 2, 1)
    return tn.transpose(h, axes)


def contextualize_with_state(
    params: ModelParams, z: Tensor, state: Tensor | None = None
) -> tuple[Tensor, Tensor]:
    """Run the recurrent context module; returns (contexts, final state).

    ``z`` is (T_z,dim_z) or (B,T_z,dim_z); contexts have dim_c rows at the
    same rank.  ``state`` defaults to zeros and lets chunked scoring carry
    hidden state across chunk boundaries.
    """
    cfg = params.config
    single = z.ndim == 2
    zb = tn.reshape(z, (1,) + z.shape) if single else z
    batch, t_z, _ = zb.shape
    if t_z < 1:
        raise ValueError("empty latent sequence")
    if state is None:
        state = Tensor(np.zeros((batch, cfg.dim_c)))
    zt = tn.transpose(zb, (1, 0, 2))  # (T_z, B, dim_z)
    outs = []
    for t in range(t_z):
        step_in = tn.reshape(tn.take_rows(zt, np.array([t])), (batch, cfg.dim_z))
        state = tn.gru_step(state, step_in, params.context)
        outs.append(tn.reshape(tn.add(state, params.context_out_bias), (1, batch, cfg.dim_c)))
    c = tn.transpose(tn.concat(outs, axis=0), (1, 0, 2))
    if single:
        c = tn.reshape(c, (t_z, cfg.dim_c))
    return c, state


def contextualize(params: ModelParams, z: Tensor) -> Tensor:
    """Context rows c_t summarizing z_{<=t}, zero initial state."""
    return contextualize_with_state(params, z)[0]


def predict(params: ModelParams, c: Tensor, k: int, ddcl: bool = False) -> Tensor:
    """k-step prediction W_k c for a single context vector (1-based k)."""
    heads = params.heads_for_ddcl() if ddcl else params.heads
    if not 1 <= k <= len(heads):
        raise ValueError(f"k must be in 1..{len(heads)}, got {k}")
    out = tn.matmul(heads[k - 1], tn.reshape(c, (-1, 1)))
    return tn.reshape(out, (-1,))


def predict_rows(params: ModelParams, c_rows: Tensor, k: int, ddcl: bool = False) -> Tensor:
    """Row-batched k-step predictions: (R,dim_c) -> (R,dim_z)."""
    heads = params.heads_for_ddcl() if ddcl else params.heads
    if not 1 <= k <= len(heads):
        raise ValueError(f"k must be in 1..{len(heads)}, got {k}")
    return tn.matmul(c_rows, tn.transpose(heads[k - 1]))


def transform(params: ModelParams, z: Tensor) -> list[Tensor]:
    """All L views of ``z`` ((dim_z,) vector or (R,dim_z) rows).

    view_l = sigmoid(MLP_l(z)) * z — a multiplicative mask, so every view
    is elementwise strictly smaller in magnitude wherever z is nonzero.
    """
    single = z.ndim == 1
    rows = tn.reshape(z, (1, -1)) if single else z
    views = []
    for layers in params.bank:
        h = rows
        for w in layers[:-1]:
            h = tn.relu(tn.matmul(h, tn.transpose(w)))
        mask = tn.sigmoid(tn.matmul(h, tn.transpose(layers[-1])))
        view = tn.mul(mask, rows)
        views.append(tn.reshape(view, (-1,)) if single else view)
    return views


def decode(params: ModelParams, z: Tensor) -> Tensor:
    """Latent rows back to raw frames: (T_z,dim_z) -> (C, T_z*r).

    Batched input (B,T_z,dim_z) gives (B,C,T_z*r).  Output is cropped to
    exactly r raw frames per latent step.
    """
    if params.decoder is None:
        raise ValueError("model has no decoder (train one with fit_decoder)")
    cfg = params.config
    single = z.ndim == 2
    t_z = z.shape[-2]
    h = tn.transpose(z, (1, 0) if single else (0, 2, 1))
    strides = cfg.strides[::-1]
    last = len(params.decoder) - 1
    for i, (w, b) in enumerate(params.decoder):
        h = tn.conv1d_transpose(h, w, strides[i])
        h = tn.add(h, b)
        if i < last:
            h = tn.relu(h)
    return tn.crop_last(h, t_z * cfg.downsample)


def constant_model(
    dim_z: int,
    dim_c: int,
    a,
    b,
    channels: int = 1,
    K: int = 4,
    L: int = 12,
) -> ModelParams:
    """A model whose encoder always emits ``a`` and context always ``b``.

    All multiplicative weights are zero; the final conv bias carries ``a``
    and the context output bias carries ``b`` (the recurrent state stays
    exactly zero under zero weights).  All K heads share one fixed matrix
    so every DDCL term is bitwise identical across t and k.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.size != dim_z or b.size != dim_c:
        raise ValueError("a must have dim_z entries and b dim_c entries")
    cfg = ModelConfig(in_channels=channels, dim_z=dim_z, dim_c=dim_c, K=K, L=L)
    params = ModelParams(config=cfg)

    c_in = channels
    for i, f in enumerate(cfg.filters):
        w = _zeros((dim_z, c_in, f))
        bias = np.zeros((dim_z, 1))
        if i == len(cfg.filters) - 1:
            bias[:, 0] = a
        params.encoder.append((w, Tensor(bias, requires_grad=True)))
        c_in = dim_z

    params.context = GruParams(
        w_r=_zeros((dim_c, dim_z)), u_r=_zeros((dim_c, dim_c)), b_r=_zeros(dim_c),
        w_u=_zeros((dim_c, dim_z)), u_u=_zeros((dim_c, dim_c)), b_u=_zeros(dim_c),
        w_n=_zeros((dim_c, dim_z)), u_n=_zeros((dim_c, dim_c)), b_n=_zeros(dim_c),
    )
    params.context_out_bias = Tensor(b, requires_grad=True)

    shared = np.eye(dim_z, dim_c)
    params.heads = [Tensor(shared, requires_grad=True) for _ in range(K)]

    widths = [dim_z] + [cfg.bank_width] * (cfg.bank_layers - 1) + [dim_z]
    for _ in range(L):
        params.bank.append(
            [_zeros((widths[j + 1], widths[j])) for j in range(cfg.bank_layers)]
        )
    return params
