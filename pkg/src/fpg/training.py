"""AdamW optimization and the four-stage training schedule.

The stage table is fixed: stage 1 pretrains the transformer core (xi) with
NLL on plain (body, headline) pairs; stage 2 freezes xi and trains the
personalization parameters (theta) on the distant-supervision set; stage 3
trains everything on the same set; stage 4 updates xi with the contrastive
loss on the corrupted-pair set.  Parameters outside a stage's trainable
subset are bit-identical before and after the stage.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tape, Tensor, zero_grad
from .model import FpgModel, ModelConfig, write_container, read_container
from .text import TokenSeq, encode

STAGE_TABLE = {
    1: ("xi", "nll", "C"),
    2: ("theta", "nll", "Dl"),
    3: ("both", "nll", "Dl"),
    4: ("xi", "cll", "Dstar"),
}

# shipped toy-scale learning rates; the full-scale settings
# (3e-5, 1e-4, 3e-5, 1e-7) remain selectable through the config
DEFAULT_LRS = (3e-3, 1e-3, 3e-4, 1e-5)
FULL_SCALE_LRS = (3e-5, 1e-4, 3e-5, 1e-7)
DEFAULT_EPOCHS = (5, 5, 9, 1)


@dataclass(frozen=True)
class StageConfig:
    stage: int
    epochs: int
    lr: float
    batch_size: int = 8
    seed: int = 0
    weight_decay: float = 0.01
    grad_clip: float | None = 1.0

    def __post_init__(self):
        if self.stage not in STAGE_TABLE:
            raise ValueError(f"unknown stage {self.stage}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    @property
    def trainable(self) -> str:
        return STAGE_TABLE[self.stage][0]

    @property
    def loss(self) -> str:
        return STAGE_TABLE[self.stage][1]

    @property
    def dataset_key(self) -> str:
        return STAGE_TABLE[self.stage][2]


def default_schedule(
    epochs=DEFAULT_EPOCHS, lrs=DEFAULT_LRS, batch_size: int = 8, seed: int = 0, **kw
) -> list[StageConfig]:
    return [
        StageConfig(stage=k + 1, epochs=epochs[k], lr=lrs[k], batch_size=batch_size, seed=seed + k, **kw)
        for k in range(4)
    ]


class AdamW:
    """Decoupled-weight-decay Adam over a named parameter subset.

    Weight decay is lr-scaled and applied only to matrices, never to
    biases, layer-norm gains or the embedding tables.
    """

    beta1 = 0.9
    beta2 = 0.99
    eps = 1e-8
    _NO_DECAY = ("tok_emb", "pos_enc", "pos_dec")

    def __init__(self, params: dict[str, Tensor]):
        self.params = params
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.t = 0

    def _decays(self, name: str) -> bool:
        return self.params[name].data.ndim >= 2 and name not in self._NO_DECAY

    def step(self, grads: dict[str, np.ndarray], lr: float, weight_decay: float = 0.0) -> None:
        for name, g in grads.items():
            if g is not None and not np.isfinite(g).all():
                raise RuntimeError(f"NaN/inf gradient for parameter {name!r}; batch aborted")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            if g is None:
                continue
            p = self.params[name]
            m = self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if weight_decay and self._decays(name):
                p.data -= lr * weight_decay * p.data

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"opt.m.{n}": a for n, a in self.m.items()}
        out.update({f"opt.v.{n}": a for n, a in self.v.items()})
        return out


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values() if g is not None)))
    if max_norm and total > max_norm:
        scale = max_norm / total
        for name, g in grads.items():
            if g is not None:
                grads[name] = g * scale
    return total


def checksum(params: dict[str, Tensor], names) -> str:
    h = hashlib.sha256()
    for n in sorted(names):
        h.update(n.encode())
        h.update(np.ascontiguousarray(params[n].data, dtype="<f8").tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# encoded training items
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PretrainItem:
    body: TokenSeq
    target: TokenSeq


@dataclass(frozen=True)
class SupervisedItem:
    body: TokenSeq
    history: tuple[TokenSeq, ...]
    target: TokenSeq


@dataclass(frozen=True)
class ContrastiveItem:
    body: TokenSeq
    history: tuple[TokenSeq, ...]
    positive: TokenSeq
    negatives: tuple[TokenSeq, ...]


def encode_pretrain(pairs, vocab, config: ModelConfig) -> list[PretrainItem]:
    return [
        PretrainItem(
            body=encode(body, vocab, config.M),
            target=encode(headline, vocab, config.T, add_eos=True),
        )
        for body, headline in pairs
    ]


def _encode_history(corpus, history_ids, vocab, config) -> tuple[TokenSeq, ...]:
    return tuple(
        encode(corpus[nid].headline, vocab, config.T) for nid in history_ids[-config.N :]
    )


def encode_supervised(corpus, examples, vocab, config: ModelConfig) -> list[SupervisedItem]:
    return [
        SupervisedItem(
            body=encode(corpus[ex.candidate_news_id].body, vocab, config.M),
            history=_encode_history(corpus, ex.history_ids, vocab, config),
            target=encode(ex.target_headline, vocab, config.T, add_eos=True),
        )
        for ex in examples
    ]


def encode_contrastive(corpus, pairs, vocab, config: ModelConfig) -> list[ContrastiveItem]:
    return [
        ContrastiveItem(
            body=encode(corpus[p.candidate_news_id].body, vocab, config.M),
            history=_encode_history(corpus, p.history_ids, vocab, config),
            positive=encode(p.positive, vocab, config.T, add_eos=True),
            negatives=tuple(encode(n, vocab, config.T, add_eos=True) for n, _ in p.negatives),
        )
        for p in pairs
    ]


# ---------------------------------------------------------------------------
# stage execution
# ---------------------------------------------------------------------------


@dataclass
class StageReport:
    stage: int
    epoch_losses: list[float] = field(default_factory=list)
    wall_ms: float = 0.0
    checkpoints: list[str] = field(default_factory=list)


@dataclass
class FullReport:
    stage_reports: list[StageReport]
    margin_pre: float | None = None
    margin_post: float | None = None
    final_checkpoint: str | None = None


def _item_loss(model: FpgModel, stage: StageConfig, item, epoch: int, use_history: bool):
    if stage.loss == "nll":
        if isinstance(item, PretrainItem):
            return model.nll_for(item.body, None, item.target, use_history=False)
        return model.nll_for(item.body, item.history, item.target, use_history=use_history)
    negative = item.negatives[(epoch - 1) % len(item.negatives)]
    return model.cll_for(item.body, item.history, item.positive, negative, use_history=use_history)


def run_stage(
    model: FpgModel,
    stage: StageConfig,
    dataset,
    use_history: bool = True,
    out_dir=None,
    log_fh=None,
    optimizer: AdamW | None = None,
) -> StageReport:
    """One schedule stage: seeded shuffling, batched AdamW updates on the
    stage's trainable subset, per-epoch mean loss and checkpoints."""
    if not dataset and stage.epochs > 0:
        raise ValueError(f"stage {stage.stage} dataset is empty")
    trainable = model.subset(stage.trainable)
    opt = optimizer if optimizer is not None else AdamW(trainable)
    rng = np.random.default_rng(stage.seed)
    report = StageReport(stage=stage.stage)
    start = time.perf_counter()
    all_params = list(model.params.values())
    for epoch in range(1, stage.epochs + 1):
        order = rng.permutation(len(dataset))
        epoch_loss = 0.0
        for b, lo in enumerate(range(0, len(order), stage.batch_size)):
            batch = order[lo : lo + stage.batch_size]
            zero_grad(all_params)
            batch_loss = 0.0
            for idx in batch:
                with Tape():
                    loss = _item_loss(model, stage, dataset[idx], epoch, use_history)
                    T.backward(loss)
                batch_loss += loss.item()
            grads = {
                n: (t.grad / len(batch) if t.grad is not None else None)
                for n, t in trainable.items()
            }
            if stage.grad_clip:
                clip_global_norm(grads, stage.grad_clip)
            opt.step(grads, stage.lr, stage.weight_decay)
            epoch_loss += batch_loss
            if log_fh is not None:
                log_fh.write(
                    json.dumps(
                        {
                            "stage": stage.stage,
                            "epoch": epoch,
                            "batch": b,
                            "loss": batch_loss / len(batch),
                            "lr": stage.lr,
                            "wall_ms": 1000 * (time.perf_counter() - start),
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
        report.epoch_losses.append(epoch_loss / len(dataset))
        if out_dir is not None:
            path = str(out_dir / f"stage{stage.stage}_epoch{epoch}.ckpt")
            save_checkpoint(path, model, opt, {"stage": stage.stage, "epoch": epoch})
            report.checkpoints.append(path)
    report.wall_ms = 1000 * (time.perf_counter() - start)
    zero_grad(all_params)
    return report


def contrastive_margin(model: FpgModel, items, use_history: bool = True) -> float:
    """mean(log p(y+)) - mean(log p(y-)) over contrastive items, using
    token-level mean log-probabilities."""
    pos, neg = [], []
    for item in items:
        pos.append(-model.nll_for(item.body, item.history, item.positive, use_history).item())
        for negative in item.negatives:
            neg.append(-model.nll_for(item.body, item.history, negative, use_history).item())
    return float(np.mean(pos) - np.mean(neg))


def train_full(
    model: FpgModel,
    schedule,
    datasets: dict,
    use_history: bool = True,
    out_dir=None,
    log_fh=None,
    holdout_fraction: float = 0.2,
) -> FullReport:
    """Run the schedule stages in order; report the held-out contrastive
    margin before and after the contrastive stage."""
    stages = sorted(schedule, key=lambda s: s.stage)
    if [s.stage for s in stages] != sorted({s.stage for s in stages}):
        raise ValueError("duplicate stages in schedule")
    d_star = list(datasets.get("Dstar", ()))
    stride = int(round(1.0 / holdout_fraction)) if holdout_fraction > 0 else 0
    holdout = d_star[::stride] if stride else []
    d_star_train = [x for i, x in enumerate(d_star) if not stride or i % stride != 0]
    report = FullReport(stage_reports=[])
    for stage in stages:
        data = d_star_train if stage.dataset_key == "Dstar" else datasets.get(stage.dataset_key, ())
        if stage.stage == 4 and holdout:
            report.margin_pre = contrastive_margin(model, holdout, use_history)
        report.stage_reports.append(
            run_stage(model, stage, data, use_history=use_history, out_dir=out_dir, log_fh=log_fh)
        )
        if stage.stage == 4 and holdout:
            report.margin_post = contrastive_margin(model, holdout, use_history)
    if out_dir is not None:
        path = str(out_dir / "final.ckpt")
        model.save(path)
        report.final_checkpoint = path
    return report


# ---------------------------------------------------------------------------
# checkpoints (parameters + optimizer state + stage metadata)
# ---------------------------------------------------------------------------


def save_checkpoint(path, model: FpgModel, optimizer: AdamW, meta: dict) -> None:
    arrays = {n: t.data for n, t in model.params.items()}
    arrays.update(optimizer.state_arrays())
    write_container(
        path,
        model.config.to_dict(),
        arrays,
        {"checkpoint": dict(meta, step=optimizer.t)},
    )


def load_checkpoint(path) -> tuple[FpgModel, dict[str, np.ndarray], dict]:
    config_dict, arrays, meta = read_container(path)
    params = {
        n: Tensor(a, requires_grad=True) for n, a in arrays.items() if not n.startswith("opt.")
    }
    opt_state = {n: a for n, a in arrays.items() if n.startswith("opt.")}
    model = FpgModel(ModelConfig.from_dict(config_dict), params=params)
    return model, opt_state, meta.get("checkpoint", {})
