"""Network definitions: the conditional generator, critic, auxiliary
classifier, and the single-layer softmax head used by downstream evaluation.

All four are plain MLPs built from the autodiff ops. A hidden layer is
``linear -> (batchnorm) -> leaky_relu -> dropout``; the output layer is
always a raw linear map, so the critic emits unbounded scores and the
classifiers emit unnormalized logits.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor
from .errors import ParameterError, ShapeError

BN_EPS = 1e-5

LEAKY_SLOPE = 0.2
DROPOUT_P = 0.5


@dataclass(frozen=True)
class NetConfig:
    """Shape and wiring of one MLP.

    ``final_activation`` marks whether a leaky-relu precedes the output
    linear layer. Nets with hidden layers get that structurally (every
    hidden block ends in an activation); for a zero-hidden net the marker
    decides whether the input is activated before the single linear map.
    """

    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    leaky_slope: float = LEAKY_SLOPE
    dropout_p: float = DROPOUT_P
    use_batchnorm: bool = False
    final_activation: str = "leaky_then_linear"

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ParameterError(f"all layer dims must be >= 1, got {dims}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ParameterError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ParameterError(f"leaky_slope must be in (0, 1), got {self.leaky_slope}")
        if self.final_activation not in ("none", "leaky_then_linear"):
            raise ParameterError(
                f"final_activation must be 'none' or 'leaky_then_linear', "
                f"got {self.final_activation!r}"
            )

    @property
    def layer_dims(self) -> tuple[tuple[int, int], ...]:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return tuple(zip(dims[:-1], dims[1:]))


def generator_config(
    noise_dim: int,
    attr_dim: int,
    feat_dim: int,
    hidden: tuple[int, ...] = (2048, 2048),
    dropout_p: float = DROPOUT_P,
) -> NetConfig:
    """Generator preset: noise+attribute input, batchnorm on hidden layers."""
    return NetConfig(
        input_dim=noise_dim + attr_dim,
        hidden_dims=tuple(hidden),
        output_dim=feat_dim,
        dropout_p=dropout_p,
        use_batchnorm=True,
    )


def discriminator_config(
    feat_dim: int,
    attr_dim: int,
    hidden: tuple[int, ...] = (1024, 1024, 512),
    dropout_p: float = DROPOUT_P,
) -> NetConfig:
    """Critic preset: feature+attribute input, single unbounded output score."""
    return NetConfig(
        input_dim=feat_dim + attr_dim,
        hidden_dims=tuple(hidden),
        output_dim=1,
        dropout_p=dropout_p,
    )


def classifier_config(
    feat_dim: int,
    n_classes: int,
    hidden: tuple[int, ...] = (512, 512),
    dropout_p: float = DROPOUT_P,
) -> NetConfig:
    """Auxiliary classifier preset: logits over the full class set."""
    return NetConfig(
        input_dim=feat_dim,
        hidden_dims=tuple(hidden),
        output_dim=n_classes,
        dropout_p=dropout_p,
    )


def softmax_head_config(
    feat_dim: int, n_classes: int, dropout_p: float = DROPOUT_P
) -> NetConfig:
    """Downstream evaluation head: dropout on the input, one linear layer."""
    return NetConfig(
        input_dim=feat_dim,
        hidden_dims=(),
        output_dim=n_classes,
        dropout_p=dropout_p,
        final_activation="none",
    )


@dataclass
class NetParams:
    """Per-layer weight/bias tensors plus batchnorm affine parameters."""

    config: NetConfig
    weights: list[Tensor]
    biases: list[Tensor]
    gammas: list[Optional[Tensor]] = field(default_factory=list)
    betas: list[Optional[Tensor]] = field(default_factory=list)

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"layers.{i}.weight", w
            yield f"layers.{i}.bias", b
            if i < len(self.gammas) and self.gammas[i] is not None:
                yield f"layers.{i}.gamma", self.gammas[i]
                yield f"layers.{i}.beta", self.betas[i]

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def copy(self) -> "NetParams":
        """Deep copy with fresh leaf tensors (gradients not carried over)."""

        def dup(t: Optional[Tensor]) -> Optional[Tensor]:
            if t is None:
                return None
            return Tensor(t.data.copy(), requires_grad=True)

        return NetParams(
            config=self.config,
            weights=[dup(t) for t in self.weights],
            biases=[dup(t) for t in self.biases],
            gammas=[dup(t) for t in self.gammas],
            betas=[dup(t) for t in self.betas],
        )

    def zero_grads(self) -> None:
        for t in self.tensors():
            t.grad = None

    @contextmanager
    def frozen(self):
        """Temporarily stop gradients from accumulating into these tensors."""
        ts = self.tensors()
        saved = [t.requires_grad for t in ts]
        for t in ts:
            t.requires_grad = False
        try:
            yield self
        finally:
            for t, flag in zip(ts, saved):
                t.requires_grad = flag

    def clip_(self, c: float) -> None:
        """Clamp every parameter entry into [-c, c], in place."""
        if c <= 0:
            raise ParameterError(f"clip bound must be > 0, got {c}")
        for t in self.tensors():
            np.clip(t.data, -c, c, out=t.data)

    def max_abs(self) -> float:
        return max(float(np.abs(t.data).max()) for t in self.tensors())


def init_params(config: NetConfig, rng: Rng) -> NetParams:
    """Glorot-uniform weights, zero biases, unit batchnorm scales."""
    weights, biases, gammas, betas = [], [], [], []
    n_hidden = len(config.hidden_dims)
    for i, (fan_in, fan_out) in enumerate(config.layer_dims):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = (rng.uniform((fan_in, fan_out)) * 2.0 - 1.0) * limit
        weights.append(Tensor(w.astype(ad.DTYPE), requires_grad=True))
        biases.append(Tensor(np.zeros(fan_out, dtype=ad.DTYPE), requires_grad=True))
        if i < n_hidden:
            if config.use_batchnorm:
                gammas.append(Tensor(np.ones(fan_out, dtype=ad.DTYPE), requires_grad=True))
                betas.append(Tensor(np.zeros(fan_out, dtype=ad.DTYPE), requires_grad=True))
            else:
                gammas.append(None)
                betas.append(None)
    return NetParams(config=config, weights=weights, biases=biases, gammas=gammas, betas=betas)


def mlp_forward(params: NetParams, x: Tensor, training: bool, rng: Rng) -> Tensor:
    """Run the MLP described by ``params.config`` on a batch of rows."""
    cfg = params.config
    if x.ndim != 2:
        raise ShapeError(f"network input must be rank 2, got {x.shape}")
    if x.shape[1] != cfg.input_dim:
        raise ShapeError(
            f"network expects input dim {cfg.input_dim}, got {x.shape[1]}"
        )
    h = x
    n_hidden = len(cfg.hidden_dims)
    if n_hidden == 0:
        h = ad.dropout(h, cfg.dropout_p, training, rng)
        if cfg.final_activation == "leaky_then_linear":
            h = ad.leaky_relu(h, cfg.leaky_slope)
    for i in range(n_hidden):
        h = ad.add(ad.matmul(h, params.weights[i]), params.biases[i])
        if cfg.use_batchnorm:
            h = ad.batchnorm(h, params.gammas[i], params.betas[i], BN_EPS)
        h = ad.leaky_relu(h, cfg.leaky_slope)
        h = ad.dropout(h, cfg.dropout_p, training, rng)
    return ad.add(ad.matmul(h, params.weights[-1]), params.biases[-1])


def _check_joint_batch(left: Tensor, right: Tensor, what: str) -> None:
    if left.ndim != 2 or right.ndim != 2:
        raise ShapeError(f"{what}: inputs must be rank 2")
    if left.shape[0] != right.shape[0]:
        raise ShapeError(
            f"{what}: batch sizes differ, {left.shape[0]} vs {right.shape[0]}"
        )


def generator_forward(
    params: NetParams, z: Tensor, a: Tensor, training: bool, rng: Rng
) -> Tensor:
    """Map noise concatenated with class attributes to a feature batch."""
    _check_joint_batch(z, a, "generator_forward")
    return mlp_forward(params, ad.concat_cols(z, a), training, rng)


def discriminator_forward(
    params: NetParams, x: Tensor, a: Tensor, training: bool, rng: Rng
) -> Tensor:
    """Score feature/attribute pairs; one unbounded critic value per row."""
    _check_joint_batch(x, a, "discriminator_forward")
    return mlp_forward(params, ad.concat_cols(x, a), training, rng)


def classifier_forward(params: NetParams, x: Tensor, training: bool, rng: Rng) -> Tensor:
    """Logits over the full class set for a batch of (possibly generated) features."""
    return mlp_forward(params, x, training, rng)
