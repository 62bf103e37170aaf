"""Episodic adversarial training with first-order meta-updates.

Each iteration samples a batch of tasks. Per task, the critic and the
generator+classifier pair take inner gradient steps on the task's train
split (critic ascends its objective and is weight-clipped; the pair
descends). Validation losses are then evaluated at the adapted parameters
and their gradients, summed over the batch, are applied directly to the
base parameters (first-order: the inner step is not differentiated
through).

A ``shared_inner`` variant adapts once against gradients summed over the
whole batch instead of per task; both variants share the same meta step.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Rng, Tape, Tensor
from .data import DatasetBundle
from .episodes import EpisodeSpec, TaskEpisode, sample_task_batch
from .errors import BatchError, NonFiniteError, ParameterError, ShapeError, TrainingAbortError
from .nets import (
    NetConfig,
    NetParams,
    classifier_config,
    classifier_forward,
    discriminator_config,
    discriminator_forward,
    generator_config,
    generator_forward,
    init_params,
)


@dataclass(frozen=True)
class HyperParams:
    """Step sizes and loop counts for inner adaptation and meta-updates.

    Inner rates of exactly 0 are allowed: they reduce the meta-update to a
    plain gradient step on the validation losses, a documented degeneracy
    used for testing.
    """

    inner_lr_d: float = 0.001
    inner_lr_gc: float = 0.001
    meta_lr_d: float = 0.00001
    meta_lr_gc: float = 0.00001
    inner_steps: int = 1
    n_critic: int = 1
    clip_c: float = 0.01
    iterations: int = 1000
    train_noise_std: float = 0.5
    shared_inner: bool = False

    def __post_init__(self):
        rates = (self.inner_lr_d, self.inner_lr_gc, self.meta_lr_d, self.meta_lr_gc)
        if any(r < 0 for r in rates):
            raise ParameterError(f"learning rates must be >= 0, got {rates}")
        if self.inner_steps < 1:
            raise ParameterError(f"inner_steps must be >= 1, got {self.inner_steps}")
        if self.n_critic < 1:
            raise ParameterError(f"n_critic must be >= 1, got {self.n_critic}")
        if self.clip_c <= 0:
            raise ParameterError(f"clip_c must be > 0, got {self.clip_c}")
        if self.iterations < 0:
            raise ParameterError(f"iterations must be >= 0, got {self.iterations}")
        if self.train_noise_std <= 0:
            raise ParameterError(
                f"train_noise_std must be > 0, got {self.train_noise_std}"
            )


@dataclass(frozen=True)
class ModelSpec:
    """Configurations of the three trained networks plus the noise width."""

    g: NetConfig
    d: NetConfig
    c: NetConfig
    noise_dim: int

    @staticmethod
    def for_dataset(
        feat_dim: int,
        attr_dim: int,
        n_classes: int,
        noise_dim: Optional[int] = None,
        g_hidden: tuple[int, ...] = (2048, 2048),
        d_hidden: tuple[int, ...] = (1024, 1024, 512),
        c_hidden: tuple[int, ...] = (512, 512),
        dropout_p: float = 0.5,
    ) -> "ModelSpec":
        noise_dim = attr_dim if noise_dim is None else noise_dim
        return ModelSpec(
            g=generator_config(noise_dim, attr_dim, feat_dim, g_hidden, dropout_p),
            d=discriminator_config(feat_dim, attr_dim, d_hidden, dropout_p),
            c=classifier_config(feat_dim, n_classes, c_hidden, dropout_p),
            noise_dim=noise_dim,
        )


@dataclass
class ModelState:
    """Base parameters of the three networks plus training bookkeeping."""

    spec: ModelSpec
    d_params: NetParams
    g_params: NetParams
    c_params: NetParams
    rng: Rng
    iteration: int = 0
    last_critic_val_loss: Optional[float] = None
    last_gencls_val_loss: Optional[float] = None

    @property
    def gc_params(self) -> tuple[NetParams, NetParams]:
        return self.g_params, self.c_params

    def named_params(self) -> dict[str, NetParams]:
        return {"d": self.d_params, "g": self.g_params, "c": self.c_params}

    def checksum(self) -> str:
        h = hashlib.sha256()
        for prefix, params in self.named_params().items():
            for name, tensor in params.named_tensors():
                h.update(f"{prefix}.{name}".encode())
                h.update(np.ascontiguousarray(tensor.data).tobytes())
        return h.hexdigest()


def init_model_state(spec: ModelSpec, rng: Rng) -> ModelState:
    """Randomly initialize all three parameter sets from the given stream."""
    return ModelState(
        spec=spec,
        d_params=init_params(spec.d, rng),
        g_params=init_params(spec.g, rng),
        c_params=init_params(spec.c, rng),
        rng=rng,
    )


def save_state(path: str | Path, state: ModelState) -> None:
    checkpoint.save_model(path, state.named_params())


def load_state(path: str | Path, spec: ModelSpec, rng: Rng) -> ModelState:
    params = checkpoint.load_model(path, {"d": spec.d, "g": spec.g, "c": spec.c})
    return ModelState(
        spec=spec,
        d_params=params["d"],
        g_params=params["g"],
        c_params=params["c"],
        rng=rng,
    )


def episode_arrays(
    dataset: DatasetBundle, classes: Sequence[int], items: Sequence[Sequence[int]]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Materialize (features, attributes, labels) for one episode split."""
    rows = np.concatenate([np.asarray(ix, dtype=np.int64) for ix in items])
    x = dataset.features[rows]
    labels = dataset.labels[rows].astype(np.int64)
    a = dataset.attributes[labels]
    return x, a, labels


def critic_loss(
    d: NetParams,
    g: NetParams,
    x: Tensor,
    a: Tensor,
    noise: Tensor,
    training: bool,
    rng: Rng,
) -> Tensor:
    """mean D(x, a) - mean D(x_hat, a), with x_hat = G(noise, a) detached.

    The trainer maximizes this; gradients reach only the critic because the
    generated batch is produced outside the tape.
    """
    if x.shape[0] == 0:
        raise BatchError("critic_loss needs a nonempty batch")
    if noise.shape[0] != x.shape[0]:
        raise ShapeError(
            f"noise batch {noise.shape[0]} does not match real batch {x.shape[0]}"
        )
    with ad.no_grad():
        fake = generator_forward(g, noise, a, training, rng)
    real_scores = discriminator_forward(d, x, a, training, rng)
    fake_scores = discriminator_forward(d, fake, a, training, rng)
    return ad.sub(ad.mean_all(real_scores), ad.mean_all(fake_scores))


def gen_cls_loss(
    d: NetParams,
    g: NetParams,
    c: NetParams,
    attrs: Tensor,
    labels: Sequence[int],
    noise: Tensor,
    training: bool,
    rng: Rng,
) -> Tensor:
    """-mean D(G(noise, a), a) + cross_entropy(C(G(noise, a)), labels).

    Minimized by the trainer. Gradients flow through the generator into both
    terms and through the classifier in the second; the critic is frozen.
    """
    if attrs.shape[0] == 0:
        raise BatchError("gen_cls_loss needs a nonempty batch")
    if noise.shape[0] != attrs.shape[0] or len(labels) != attrs.shape[0]:
        raise ShapeError(
            f"gen_cls_loss batch mismatch: attrs {attrs.shape[0]}, "
            f"noise {noise.shape[0]}, labels {len(labels)}"
        )
    fake = generator_forward(g, noise, attrs, training, rng)
    with d.frozen():
        fake_scores = discriminator_forward(d, fake, attrs, training, rng)
    logits = classifier_forward(c, fake, training, rng)
    ce = ad.softmax_cross_entropy(logits, labels)
    return ad.add(ad.neg(ad.mean_all(fake_scores)), ce)


def _critic_step(
    d: NetParams,
    g: NetParams,
    batches: Sequence[tuple[Tensor, Tensor, np.ndarray]],
    hp: HyperParams,
    rng: Rng,
) -> None:
    """One ascent step on the critic loss summed over ``batches``, then clip."""
    d.zero_grads()
    for x, a, labels in batches:
        noise = ad.gaussian_sample(rng, len(labels), _noise_dim(g, a), hp.train_noise_std)
        with Tape() as tape:
            loss = critic_loss(d, g, x, a, noise, True, rng)
        tape.backward(loss)
    for t in d.tensors():
        if t.grad is not None:
            t.data += np.float32(hp.inner_lr_d) * t.grad
    d.clip_(hp.clip_c)


def _gen_cls_step(
    d: NetParams,
    g: NetParams,
    c: NetParams,
    batches: Sequence[tuple[Tensor, Tensor, np.ndarray]],
    hp: HyperParams,
    rng: Rng,
) -> None:
    """One descent step on the generator+classifier loss summed over batches."""
    g.zero_grads()
    c.zero_grads()
    for _, a, labels in batches:
        noise = ad.gaussian_sample(rng, len(labels), _noise_dim(g, a), hp.train_noise_std)
        with Tape() as tape:
            loss = gen_cls_loss(d, g, c, a, labels, noise, True, rng)
        tape.backward(loss)
    for t in (*g.tensors(), *c.tensors()):
        if t.grad is not None:
            t.data -= np.float32(hp.inner_lr_gc) * t.grad


def _noise_dim(g: NetParams, a: Tensor) -> int:
    return g.config.input_dim - a.shape[1]


def _train_batches(
    dataset: DatasetBundle, episode: TaskEpisode
) -> list[tuple[Tensor, Tensor, np.ndarray]]:
    x, a, labels = episode_arrays(dataset, episode.train_classes, episode.train_items)
    return [(Tensor(x), Tensor(a), labels)]


def inner_adapt(
    state: ModelState,
    dataset: DatasetBundle,
    episode: TaskEpisode,
    hp: HyperParams,
    rng: Rng,
) -> tuple[NetParams, NetParams, NetParams]:
    """Adapt copies of the base parameters on one episode's train split.

    Each round runs ``n_critic`` clipped critic ascent steps followed by one
    generator+classifier descent step against the adapted critic. The base
    state is never mutated.
    """
    d, g, c = state.d_params.copy(), state.g_params.copy(), state.c_params.copy()
    batches = _train_batches(dataset, episode)
    for _ in range(hp.inner_steps):
        for _ in range(hp.n_critic):
            _critic_step(d, g, batches, hp, rng)
        _gen_cls_step(d, g, c, batches, hp, rng)
    return d, g, c


def shared_inner_adapt(
    state: ModelState,
    dataset: DatasetBundle,
    episodes: Sequence[TaskEpisode],
    hp: HyperParams,
    rng: Rng,
) -> tuple[NetParams, NetParams, NetParams]:
    """Variant that adapts once per round on gradients summed over the whole
    task batch instead of per task."""
    d, g, c = state.d_params.copy(), state.g_params.copy(), state.c_params.copy()
    batches = [b for ep in episodes for b in _train_batches(dataset, ep)]
    for _ in range(hp.inner_steps):
        for _ in range(hp.n_critic):
            _critic_step(d, g, batches, hp, rng)
        _gen_cls_step(d, g, c, batches, hp, rng)
    return d, g, c


@dataclass
class BatchEvaluation:
    """Validation losses at adapted parameters and their summed gradients
    with respect to those adapted parameters, in base tensor order."""

    critic_val_loss: float
    gencls_val_loss: float
    d_grads: list[np.ndarray]
    g_grads: list[np.ndarray]
    c_grads: list[np.ndarray]


def evaluate_task_batch(
    state: ModelState,
    dataset: DatasetBundle,
    episodes: Sequence[TaskEpisode],
    hp: HyperParams,
    rng: Rng,
) -> BatchEvaluation:
    """Adapt per episode (or once, if shared), then evaluate both losses on
    each episode's validation split at the adapted parameters.

    Every episode gets its own spawned rng, so the reduction is a fixed-order
    sum independent of how episode work would be scheduled.
    """
    if not episodes:
        raise BatchError("meta update needs a nonempty episode batch")
    d_sums = [np.zeros_like(t.data) for t in state.d_params.tensors()]
    g_sums = [np.zeros_like(t.data) for t in state.g_params.tensors()]
    c_sums = [np.zeros_like(t.data) for t in state.c_params.tensors()]
    critic_total = 0.0
    gencls_total = 0.0

    shared: Optional[tuple[NetParams, NetParams, NetParams]] = None
    if hp.shared_inner:
        shared = shared_inner_adapt(state, dataset, episodes, hp, rng.spawn())

    for episode in episodes:
        if shared is not None:
            d2, g2, c2 = shared
            val_rng = rng.spawn()
        else:
            ep_rng = rng.spawn()
            d2, g2, c2 = inner_adapt(state, dataset, episode, hp, ep_rng.spawn())
            val_rng = ep_rng.spawn()
        xv, av, lv = episode_arrays(dataset, episode.val_classes, episode.val_items)
        xt, at = Tensor(xv), Tensor(av)
        k = state.spec.noise_dim

        d2.zero_grads()
        noise = ad.gaussian_sample(val_rng, len(lv), k, hp.train_noise_std)
        with Tape() as tape:
            l_d = critic_loss(d2, g2, xt, at, noise, True, val_rng)
        tape.backward(l_d)
        critic_total += l_d.item()
        for acc, t in zip(d_sums, d2.tensors()):
            if t.grad is not None:
                acc += t.grad

        g2.zero_grads()
        c2.zero_grads()
        noise = ad.gaussian_sample(val_rng, len(lv), k, hp.train_noise_std)
        with Tape() as tape:
            l_gc = gen_cls_loss(d2, g2, c2, at, lv, noise, True, val_rng)
        tape.backward(l_gc)
        gencls_total += l_gc.item()
        for acc, t in zip(g_sums, g2.tensors()):
            if t.grad is not None:
                acc += t.grad
        for acc, t in zip(c_sums, c2.tensors()):
            if t.grad is not None:
                acc += t.grad

    return BatchEvaluation(
        critic_val_loss=critic_total,
        gencls_val_loss=gencls_total,
        d_grads=d_sums,
        g_grads=g_sums,
        c_grads=c_sums,
    )


def apply_meta_step(state: ModelState, ev: BatchEvaluation, hp: HyperParams) -> None:
    """First-order meta step: ascend the critic, descend the generator and
    classifier, then clip the critic weights."""
    for t, gsum in zip(state.d_params.tensors(), ev.d_grads):
        t.data += np.float32(hp.meta_lr_d) * gsum
    for t, gsum in zip(state.g_params.tensors(), ev.g_grads):
        t.data -= np.float32(hp.meta_lr_gc) * gsum
    for t, gsum in zip(state.c_params.tensors(), ev.c_grads):
        t.data -= np.float32(hp.meta_lr_gc) * gsum
    state.d_params.clip_(hp.clip_c)


def meta_update(
    state: ModelState,
    dataset: DatasetBundle,
    episodes: Sequence[TaskEpisode],
    hp: HyperParams,
) -> ModelState:
    """One full meta-iteration over a batch of episodes; mutates and returns
    the state."""
    ev = evaluate_task_batch(state, dataset, episodes, hp, state.rng)
    apply_meta_step(state, ev, hp)
    state.iteration += 1
    state.last_critic_val_loss = ev.critic_val_loss
    state.last_gencls_val_loss = ev.gencls_val_loss
    return state


MetricSink = Callable[[dict], None]


def train_loop(
    dataset: DatasetBundle,
    episode_spec: EpisodeSpec,
    hp: HyperParams,
    model_spec: ModelSpec,
    rng: Rng,
    metric_sink: Optional[MetricSink] = None,
    checkpoint_path: Optional[str | Path] = None,
    checkpoint_every: int = 0,
) -> ModelState:
    """Run ``hp.iterations`` rounds of sample-batch -> meta-update.

    Emits one metrics record per iteration to ``metric_sink`` and writes a
    checkpoint every ``checkpoint_every`` iterations (plus a final one) when
    a path is given. Any non-finite value aborts with the iteration number.
    """
    state = init_model_state(model_spec, rng)
    for it in range(hp.iterations):
        start = time.perf_counter()
        try:
            episodes = sample_task_batch(dataset, episode_spec, state.rng)
            meta_update(state, dataset, episodes, hp)
        except NonFiniteError as exc:
            raise TrainingAbortError(it, str(exc)) from exc
        if metric_sink is not None:
            metric_sink(
                {
                    "iter": it,
                    "critic_loss_val": state.last_critic_val_loss,
                    "gencls_loss_val": state.last_gencls_val_loss,
                    "wall_ms": (time.perf_counter() - start) * 1000.0,
                }
            )
        if (
            checkpoint_path is not None
            and checkpoint_every > 0
            and (it + 1) % checkpoint_every == 0
        ):
            save_state(checkpoint_path, state)
    if checkpoint_path is not None:
        save_state(checkpoint_path, state)
    return state
