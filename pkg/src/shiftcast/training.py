"""Joint training of the NL and Mob branches."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from . import numerics as nx
from .corpus import Sample
from .model import MODES, ModelConfig, ShiftModel, SequenceTooLong, pad_batch
from .numerics import Param, Tensor
from .template import render_prompt, render_target
from .tokenizer import PAD_ID, Vocabulary, build_vocab, encode

log = logging.getLogger(__name__)

BRANCHES = ("both", "nl", "mob")


class NonFiniteLoss(FloatingPointError):
    pass


class EmptyTarget(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "momentum"
    alpha_loss: float = 0.01
    alpha_m: float = 0.001
    batch_size: int = 64
    epochs: int = 36
    lr: float = 1e-4
    lr_decay_factor: float = 0.5
    lr_patience: int = 3
    grad_clip: float | None = 1.0
    seed: int = 0
    # "nl" drops the Mob branch, "mob" drops the NL branch (ablation variants)
    branches: str = "both"
    prompt_variant: str = "A"
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.branches not in BRANCHES:
            raise ValueError(f"branches must be one of {BRANCHES}")
        for name in ("alpha_loss", "alpha_m"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.batch_size < 1 or self.epochs < 0 or self.lr < 0:
            raise ValueError("batch_size must be positive, epochs and lr non-negative")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def loss_nl(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Token cross-entropy averaged over the non-PAD target positions."""
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise nx.ShapeMismatch(f"logits {logits.shape} do not match targets {targets.shape}")
    mask = targets != PAD_ID
    if not mask.any():
        raise EmptyTarget("every target position is padding")
    return nx.cross_entropy(logits, targets, mask)


def loss_mob(preds: Tensor, truths) -> Tensor:
    truths = np.asarray(truths, dtype=float)
    if preds.shape != truths.shape:
        raise nx.ShapeMismatch(f"predictions {preds.shape} vs truths {truths.shape}")
    diff = preds - truths
    return nx.mean(diff * diff)


def loss_total(l_n, l_m, alpha_loss: float):
    if not 0.0 <= alpha_loss <= 1.0:
        raise ValueError("alpha_loss must lie in [0, 1]")
    if alpha_loss == 0.0:
        return l_n
    if alpha_loss == 1.0:
        return l_m
    return (1.0 - alpha_loss) * l_n + alpha_loss * l_m


def momentum_update(theta_m: Sequence[Param], theta_n: Sequence[Param], alpha_m: float) -> None:
    """theta_m <- alpha_m * theta_n + (1 - alpha_m) * theta_m, tensor by tensor."""
    if len(theta_m) != len(theta_n):
        raise nx.ShapeMismatch("parameter lists differ in length")
    for m, n in zip(theta_m, theta_n):
        if m.shape != n.shape:
            raise nx.ShapeMismatch(f"{m.name} {m.shape} vs {n.name} {n.shape}")
    for m, n in zip(theta_m, theta_n):
        if m is n:
            continue
        m.data *= 1.0 - alpha_m
        m.data += alpha_m * n.data


def encoder_pairs(model: ShiftModel) -> tuple[list[Param], list[Param]]:
    suffixes = model.encoder_suffixes()
    return ([model.params["mob.enc." + s] for s in suffixes],
            [model.params["nl.enc." + s] for s in suffixes])


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass
class EncodedSet:
    prompts: list[list[int]]
    targets: list[list[int]]
    windows: np.ndarray  # raw counts, (N, obs)
    truths: np.ndarray  # raw counts, (N,)

    def __len__(self) -> int:
        return len(self.prompts)


def encode_samples(samples: Sequence[Sample], vocab: Vocabulary, variant: str = "A") -> EncodedSet:
    return EncodedSet(
        prompts=[encode(render_prompt(s, variant), vocab) for s in samples],
        targets=[encode(render_target(s), vocab, add_specials=True) for s in samples],
        windows=np.array([s.obs_values for s in samples], dtype=float),
        truths=np.array([s.target_value for s in samples], dtype=float),
    )


def corpus_vocab(samples: Sequence[Sample], variant: str = "A") -> Vocabulary:
    texts = []
    for s in samples:
        texts.append(render_prompt(s, variant))
        texts.append(render_target(s))
    return build_vocab(texts)


@dataclass
class Batch:
    src: np.ndarray
    tgt: np.ndarray
    windows: np.ndarray  # normalised
    truths: np.ndarray  # normalised


def iter_batches(data: EncodedSet, model: ShiftModel, batch_size: int,
                 rng: np.random.Generator | None = None) -> Iterator[Batch]:
    order = np.arange(len(data)) if rng is None else rng.permutation(len(data))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield Batch(
            src=pad_batch([data.prompts[i] for i in idx]),
            tgt=pad_batch([data.targets[i] for i in idx]),
            windows=model.normalize(data.windows[idx]),
            truths=model.normalize(data.truths[idx]),
        )


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, optimizer: nx.Adam, factor: float = 0.5, patience: int = 3):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, metric: float) -> None:
        if metric < self.best:
            self.best = metric
            self.bad_epochs = 0
            return
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.optimizer.lr *= self.factor
            self.bad_epochs = 0


def batch_losses(model: ShiftModel, batch: Batch, cfg: TrainConfig, train: bool = True):
    """Return (total, L_N, L_M); the unused branch's loss is None."""
    l_n = l_m = None
    if cfg.branches in ("both", "nl"):
        memory = model.encode_batch(batch.src, train)
        logits = model.decode_batch(batch.tgt[:, :-1], memory, batch.src, train)
        l_n = loss_nl(logits, batch.tgt[:, 1:])
    if cfg.branches in ("both", "mob"):
        l_m = loss_mob(model.mob_batch(batch.windows, train), batch.truths)
    if l_n is None:
        return l_m, None, l_m
    if l_m is None:
        return l_n, l_n, None
    return loss_total(l_n, l_m, cfg.alpha_loss), l_n, l_m


def train_epoch(model: ShiftModel, batches, cfg: TrainConfig, optimizer: nx.Adam) -> dict:
    """One pass: forward both branches, backward, Adam on the trainable set, then momentum."""
    sums = {"loss": 0.0, "loss_nl": 0.0, "loss_mob": 0.0}
    n = 0
    theta_m, theta_n = encoder_pairs(model)
    for batch in batches:
        model.step += 1
        model.zero_grad()
        total, l_n, l_m = batch_losses(model, batch, cfg, train=True)
        if not math.isfinite(total.item()):
            raise NonFiniteLoss(f"loss became {total.item()} at step {model.step}")
        total.backward()
        if cfg.grad_clip:
            nx.clip_grad_norm(optimizer.params, cfg.grad_clip)
        optimizer.step()
        if model.mode == "momentum" and cfg.branches == "both":
            momentum_update(theta_m, theta_n, cfg.alpha_m)
        size = len(batch.truths)
        sums["loss"] += total.item() * size
        sums["loss_nl"] += (l_n.item() if l_n is not None else 0.0) * size
        sums["loss_mob"] += (l_m.item() if l_m is not None else 0.0) * size
        n += size
    return {k: v / max(n, 1) for k, v in sums.items()}


@dataclass
class TrainReport:
    config: dict
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int | None = None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.epochs)


@dataclass
class TrainResult:
    model: ShiftModel
    vocab: Vocabulary
    report: TrainReport


def build_model(train_samples: Sequence[Sample], vocab: Vocabulary, model_cfg: ModelConfig | None,
                cfg: TrainConfig) -> ShiftModel:
    obs = train_samples[0].obs
    base = model_cfg or ModelConfig(vocab_size=len(vocab), obs=obs)
    model_cfg = replace(base, vocab_size=len(vocab), obs=obs)
    windows = np.array([s.obs_values for s in train_samples], dtype=float)
    mode = "basic" if cfg.branches == "mob" else cfg.mode
    return ShiftModel(model_cfg, seed=cfg.seed, mode=mode, norm_mean=windows.mean(),
                      norm_std=windows.std(), vocab_hash=vocab.hash)


def train(train_samples: Sequence[Sample], val_samples: Sequence[Sample],
          model_cfg: ModelConfig | None = None, cfg: TrainConfig = TrainConfig(),
          vocab: Vocabulary | None = None) -> TrainResult:
    """Run ``cfg.epochs`` epochs and keep the parameters with the best validation RMSE.

    Without validation samples the training loss is used for selection and
    the learning-rate schedule instead.
    """
    from .evaluation import evaluate_mob, evaluate_nl

    if not train_samples:
        raise ValueError("no training samples")
    vocab = vocab or corpus_vocab(train_samples, cfg.prompt_variant)
    model = build_model(train_samples, vocab, model_cfg, cfg)
    data = encode_samples(train_samples, vocab, cfg.prompt_variant)
    longest = max(len(p) for p in data.prompts)
    if longest > model.cfg.max_prompt_len:
        raise SequenceTooLong(f"longest prompt has {longest} tokens, max_prompt_len is {model.cfg.max_prompt_len}")

    optimizer = nx.Adam(model.trainable(), lr=cfg.lr)
    scheduler = PlateauScheduler(optimizer, cfg.lr_decay_factor, cfg.lr_patience)
    report = TrainReport(config=asdict(cfg))
    best_score = math.inf
    best = model.snapshot()

    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng([cfg.seed, epoch])
        lr = optimizer.lr
        metrics = train_epoch(model, iter_batches(data, model, cfg.batch_size, rng), cfg, optimizer)
        if val_samples:
            if cfg.branches == "mob":
                val = evaluate_mob(model, val_samples)
            else:
                val = evaluate_nl(model, val_samples, vocab, cfg.prompt_variant, cfg.eval_batch_size)
            rmse, mae, fail = val.rmse, val.mae, val.parse_failure_rate
            score = rmse
        else:
            # no validation data: select on training loss
            rmse = mae = fail = None
            score = metrics["loss"]
        entry = {"epoch": epoch, "lr": lr, **metrics,
                 "val_rmse": rmse, "val_mae": mae, "parse_failure_rate": fail}
        report.epochs.append(entry)
        val = "n/a" if rmse is None else f"rmse {rmse:.3f} mae {mae:.3f} fail {fail:.3f}"
        log.info("epoch %d loss %.4f (nl %.4f mob %.4f) val %s lr %.2e",
                 epoch, metrics["loss"], metrics["loss_nl"], metrics["loss_mob"], val, lr)
        if score < best_score:
            best_score = score
            best = model.snapshot()
            report.best_epoch = epoch
        scheduler.step(score)

    model.restore(best)
    return TrainResult(model=model, vocab=vocab, report=report)
