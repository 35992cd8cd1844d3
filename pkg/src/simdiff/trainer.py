"""Training: clipped Adam with linear warmup, EMA, checkpoints and a metrics CSV."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .data import dataset_folder, dataset_synthetic
from .diffusion import training_loss
from .engine import Tensor
from .engine.container import ContainerError, read_tensors, write_tensors
from .uvit import UViT

log = logging.getLogger(__name__)

CKPT_MAGIC = b"SDCK"
CKPT_VERSION = 1
METRICS_HEADER = ["step", "loss", "lr", "grad_norm", "wallclock_s"]

# named sub-streams of the run seed
STREAM_INIT, STREAM_DATA, STREAM_LOSS = 0, 1, 2


class TrainingHalted(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-4
    warmup_steps: int = 10_000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-12
    ema_decay: float = 0.9999
    grad_clip: float = 1.0
    num_train_steps: int = 1000
    cond_dropout: float = 0.1
    seed: int = 0
    checkpoint_every: int = 1000

    def __post_init__(self):
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        if not 0 < self.ema_decay < 1:
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")

    @classmethod
    def from_run(cls, cfg: RunConfig) -> "TrainConfig":
        return cls(**{k: cfg[k] for k in cls.__dataclass_fields__})


def stream(seed: int, step: int, tag: int) -> np.random.Generator:
    """Counter-based randomness: the draw for (seed, step, tag) never depends on history."""
    return np.random.default_rng([seed, step, tag])


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def warmup_lr(step: int, cfg: TrainConfig) -> float:
    if cfg.warmup_steps <= 0:
        return cfg.learning_rate
    return cfg.learning_rate * min(1.0, step / cfg.warmup_steps)


@dataclass
class AdamResult:
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    grad_norm: float
    lr: float


def clip_grads(grads: dict[str, np.ndarray], max_norm: float):
    norm = global_norm(grads)
    if not math.isfinite(norm):
        bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
        raise TrainingHalted(f"non-finite gradients in {len(bad)} tensors, e.g. {bad[:5]}")
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * np.asarray(scale, dtype=g.dtype) for k, g in grads.items()}, norm


def adam_step(params, grads, m, v, step: int, cfg: TrainConfig) -> AdamResult:
    """One bias-corrected Adam update at 1-based ``step`` on globally clipped gradients."""
    if set(params) != set(grads) or set(params) != set(m) or set(params) != set(v):
        raise ValueError("params, grads and moments must share the same names")
    grads, norm = clip_grads(grads, cfg.grad_clip)
    lr = warmup_lr(step, cfg)
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1, c2 = 1.0 - b1 ** step, 1.0 - b2 ** step
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k].astype(p.dtype, copy=False)
        mk = b1 * m[k] + (1.0 - b1) * g
        vk = b2 * v[k] + (1.0 - b2) * g * g
        new_p[k] = (p - lr * (mk / c1) / (np.sqrt(vk / c2) + cfg.adam_eps)).astype(p.dtype, copy=False)
        new_m[k], new_v[k] = mk, vk
    return AdamResult(new_p, new_m, new_v, norm, lr)


def ema_update(ema_params, params, decay: float):
    if set(ema_params) != set(params):
        raise ValueError("EMA and params must share the same names")
    return {k: (decay * e + (1.0 - decay) * params[k]).astype(e.dtype, copy=False)
            for k, e in ema_params.items()}


@dataclass
class TrainState:
    step: int
    params: dict[str, np.ndarray]
    ema: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    config: RunConfig = field(default_factory=RunConfig)


# ---------------------------------------------------------------------------
# checkpoints: b"SDCK" | u32 version | u64 step | u32 config_len | config text | SDTN container

_GROUPS = ("params", "ema", "adam_m", "adam_v")


def checkpoint_bytes(state: TrainState) -> bytes:
    text = state.config.to_text().encode("utf-8")
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<IQI", CKPT_VERSION, state.step, len(text)))
    buf.write(text)
    tensors = {}
    for group, tree in zip(_GROUPS, (state.params, state.ema, state.m, state.v)):
        for name in sorted(tree):
            tensors[f"{group}/{name}"] = tree[name]
    write_tensors(buf, tensors)
    return buf.getvalue()


def save_checkpoint(path, state: TrainState) -> None:
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(checkpoint_bytes(state))
        os.replace(tmp, path)
    except OSError as e:
        raise OSError(f"could not write checkpoint {path}: {e}") from e


def load_checkpoint(path) -> TrainState:
    try:
        f = open(path, "rb")
    except OSError as e:
        raise OSError(f"could not read checkpoint {path}: {e}") from e
    with f:
        if f.read(4) != CKPT_MAGIC:
            raise ContainerError(f"{path}: not a checkpoint (bad magic)")
        version, step, n = struct.unpack("<IQI", f.read(16))
        if version != CKPT_VERSION:
            raise ContainerError(f"{path}: unsupported checkpoint version {version}")
        config = RunConfig.from_text(f.read(n).decode("utf-8"))
        tensors = read_tensors(f)
    trees = {g: {} for g in _GROUPS}
    for key, arr in tensors.items():
        group, _, name = key.partition("/")
        if group not in trees:
            raise ContainerError(f"{path}: unexpected tensor group {group!r}")
        trees[group][name] = arr
    return TrainState(step, trees["params"], trees["ema"], trees["adam_m"], trees["adam_v"], config)


# ---------------------------------------------------------------------------
# loop


def make_dataset(cfg: RunConfig):
    if cfg["dataset"] == "folder":
        if not cfg["data_path"]:
            raise ValueError("dataset = folder needs data_path")
        ds = dataset_folder(cfg["data_path"], cfg["resolution"], channels=cfg["channels"], seed=cfg["seed"])
        if ds.num_classes != cfg["num_classes"]:
            log.info("folder has %d classes; overriding num_classes", ds.num_classes)
            cfg.set("num_classes", ds.num_classes)
        if ds.images.shape[1] != cfg["resolution"]:
            raise ValueError(f"dataset resolution {ds.images.shape[1]} != configured {cfg['resolution']}")
        return ds
    return dataset_synthetic(cfg["dataset"], cfg["resolution"], cfg["num_classes"], seed=cfg["seed"],
                             channels=cfg["channels"])


def build_model(cfg: RunConfig) -> UViT:
    return UViT(cfg.model(), cfg.schedule().endpoints())


def init_state(cfg: RunConfig, model: UViT | None = None) -> TrainState:
    model = model or build_model(cfg)
    params = model.init(stream(cfg["seed"], 0, STREAM_INIT))
    zeros = {k: np.zeros_like(p) for k, p in params.items()}
    return TrainState(0, params, {k: p.copy() for k, p in params.items()}, zeros,
                      {k: z.copy() for k, z in zeros.items()}, cfg)


@dataclass
class StepMetrics:
    step: int
    loss: float
    lr: float
    grad_norm: float
    wallclock_s: float


def train_step(state: TrainState, model: UViT, dataset, tcfg: TrainConfig, schedule, loss_cfg) -> StepMetrics:
    """Advance ``state`` by one optimizer step, in place."""
    step = state.step
    x, ids = dataset.batch(stream(tcfg.seed, step, STREAM_DATA), tcfg.batch_size)
    if model.config.num_classes == 0:
        ids = None
    leaves = {k: Tensor(p, requires_grad=True) for k, p in state.params.items()}

    def model_fn(z, logsnr, class_ids, rng):
        return model.apply(leaves, z, logsnr, class_ids, train=True, rng=rng)

    loss, _ = training_loss(x, ids, model_fn, schedule, loss_cfg, stream(tcfg.seed, step, STREAM_LOSS),
                            cond_dropout=tcfg.cond_dropout, null_id=model.null_class)
    loss_value = loss.item()
    if not math.isfinite(loss_value):
        raise TrainingHalted(f"non-finite loss {loss_value} at step {step}")
    loss.backward()
    grads = {k: t.grad if t.grad is not None else np.zeros_like(t.data) for k, t in leaves.items()}
    res = adam_step(state.params, grads, state.m, state.v, step + 1, tcfg)
    state.params, state.m, state.v = res.params, res.m, res.v
    state.ema = ema_update(state.ema, res.params, tcfg.ema_decay)
    state.step = step + 1
    return StepMetrics(step, loss_value, res.lr, res.grad_norm, 0.0)


def train(cfg: RunConfig, out_dir=None, *, state: TrainState | None = None, dataset=None,
          num_steps: int | None = None, plot: bool = True) -> tuple[TrainState, list[StepMetrics]]:
    """Train until ``num_train_steps`` (or ``num_steps`` more steps from ``state``).

    Writes ``metrics.csv``, ``ckpt_<step>.sdck`` every ``checkpoint_every`` steps,
    ``last.sdck`` and a loss-curve figure into ``out_dir`` when given.
    """
    dataset = dataset if dataset is not None else make_dataset(cfg)
    tcfg = TrainConfig.from_run(cfg)
    schedule, loss_cfg = cfg.schedule(), cfg.loss()
    model = build_model(cfg)
    if state is None:
        state = init_state(cfg, model)
    end = state.step + num_steps if num_steps is not None else tcfg.num_train_steps
    history: list[StepMetrics] = []
    writer = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_path = os.path.join(out_dir, "metrics.csv")
        fresh = state.step == 0 or not os.path.exists(metrics_path)
        fh = open(metrics_path, "w" if fresh else "a", newline="")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(METRICS_HEADER)
    t0 = time.perf_counter()
    try:
        if out_dir is not None and state.step == 0 and end == 0:
            save_checkpoint(os.path.join(out_dir, "ckpt_0.sdck"), state)
        while state.step < end:
            met = train_step(state, model, dataset, tcfg, schedule, loss_cfg)
            met.wallclock_s = time.perf_counter() - t0
            history.append(met)
            if writer is not None:
                writer.writerow([met.step, repr(met.loss), repr(met.lr), repr(met.grad_norm),
                                 f"{met.wallclock_s:.3f}"])
                if tcfg.checkpoint_every > 0 and state.step % tcfg.checkpoint_every == 0:
                    save_checkpoint(os.path.join(out_dir, f"ckpt_{state.step}.sdck"), state)
            if state.step % 100 == 0:
                log.info("step %d loss %.5f grad_norm %.3f", met.step, met.loss, met.grad_norm)
    finally:
        if writer is not None:
            fh.close()
    if out_dir is not None:
        save_checkpoint(os.path.join(out_dir, "last.sdck"), state)
        if plot and history:
            from .report import plot_loss_curve
            plot_loss_curve(os.path.join(out_dir, "loss.png"), [(m.step, m.loss) for m in history])
    return state, history
