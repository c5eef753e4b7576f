"""
Training loop for the composite objective

    Loss = L_ml + lambda_semsim * L_semsim

Micro-batches are packed under a token cap, gradients are accumulated over
`update_freq` micro-batches and one bias-corrected Adam update is applied.
Scorer tensors take part in backward but are never updated.
"""

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from semsim import tensor_autodiff as ad
from semsim.checkpoint import StoredTensor, frozen_digest, read_container, to_tensors, write_container
from semsim.data import Sample
from semsim.errors import CheckpointError, ConfigError, NumericError
from semsim.semsim_scorer import (SemSimLayer, fit_agreement_head, scorer_from_model, scorer_from_tensors,
                                   semsim_loss_batch)
from semsim.seq2seq_model import (ModelConfig, SeqModel, decoder_logits, encode_batch, ml_loss_from_logits,
                                  pad_batch, teacher_forcing_batch)
from semsim.tensor_autodiff import Tensor

logger = logging.getLogger(__name__)

OBJECTIVES = ('ml_only', 'composite', 'semsim_only')


@dataclass
class TrainConfig:
    lr: float = 3e-5
    dropout: float = 0.1
    max_tokens: int = 1792
    update_freq: int = 32
    epochs: int = 6
    max_source_len: int = 256
    max_target_len: int = 256
    seed: int = 0
    objective: str = 'composite'
    lambda_semsim: float = 1.0
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_steps: int = 0
    log_every: int = 10
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if self.update_freq < 1:
            raise ConfigError(f"update frequency must be >= 1, got {self.update_freq}")
        if self.lambda_semsim < 0:
            raise ConfigError(f"lambda_semsim must be >= 0, got {self.lambda_semsim}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.max_tokens < 1:
            raise ConfigError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class LossBreakdown:
    """Differentiable total plus the logged addends"""
    total: Tensor
    ml: float
    semsim: float
    lambda_semsim: float = 1.0

    @property
    def value(self) -> float:
        return self.total.item()


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class Checkpoint:
    """
    Training state after an optimizer update

    The model, scorer and optimizer state are live references; save the
    checkpoint before resuming iteration if a snapshot is needed.
    """
    model: SeqModel
    adam: AdamState
    config: TrainConfig
    step: int
    epoch: int
    cursor: int
    scorer: Optional[SemSimLayer] = None
    losses: Dict[str, float] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Objective

def composite_loss_batch(docs: Sequence, refs: Sequence, model: SeqModel, scorer: Optional[SemSimLayer],
                         config: TrainConfig) -> LossBreakdown:
    """Summed composite loss of a micro-batch under teacher forcing"""
    pad = model.config.pad_id
    enc = encode_batch(pad_batch([d.ids for d in docs], pad), model)
    tgt_in, targets, mask = teacher_forcing_batch(refs, pad)
    logits = decoder_logits(tgt_in, enc, model)
    ml = ml_loss_from_logits(logits, targets, mask)
    if config.objective == 'ml_only' or scorer is None:
        return LossBreakdown(total=ml, ml=ml.item(), semsim=0.0, lambda_semsim=0.0)

    soft = ad.softmax(logits, axis=-1)
    semsim = semsim_loss_batch(targets, mask, soft, scorer.lm, scorer.head)
    weighted = ad.mul(semsim, float(config.lambda_semsim))
    # semsim_only keeps L_ml in the logged total but out of the gradient
    ml_term = ad.detach(ml) if config.objective == 'semsim_only' else ml
    return LossBreakdown(total=ad.add(ml_term, weighted), ml=ml.item(), semsim=semsim.item(),
                         lambda_semsim=config.lambda_semsim)


def composite_loss(doc, ref, model: SeqModel, scorer: Optional[SemSimLayer], config: TrainConfig) -> LossBreakdown:
    return composite_loss_batch([doc], [ref], model, scorer, config)


def evaluate_losses(dataset: Sequence[Sample], model: SeqModel, scorer: Optional[SemSimLayer],
                    config: TrainConfig) -> Dict[str, float]:
    """Dataset totals of L_ml and L_semsim in evaluation mode"""
    was_training = model.training
    model.eval()
    totals = {'ml': 0.0, 'semsim': 0.0, 'total': 0.0}
    try:
        for sample in dataset:
            breakdown = composite_loss(sample.doc, sample.ref, model, scorer, config)
            totals['ml'] += breakdown.ml
            totals['semsim'] += breakdown.semsim
            totals['total'] += breakdown.value
    finally:
        model.training = was_training
    return totals


# ---------------------------------------------------------------------------
# Optimizer

def init_adam(params: Dict[str, Tensor], config: TrainConfig) -> AdamState:
    m = {name: np.zeros_like(p.values) for name, p in params.items() if not p.frozen}
    v = {name: np.zeros_like(p.values) for name, p in params.items() if not p.frozen}
    return AdamState(m=m, v=v, beta1=config.beta1, beta2=config.beta2, eps=config.eps)


def adam_update(params: Dict[str, Tensor], grads: Dict[str, Optional[np.ndarray]], state: AdamState,
                lr: float) -> None:
    """
    One bias-corrected Adam step on every non-frozen parameter with a gradient

    Raises:
        NumericError: a gradient contains NaN (no parameter is touched)
    """
    for name, grad in grads.items():
        if grad is not None and not params[name].frozen and np.isnan(grad).any():
            raise NumericError(f"NaN gradient in parameter {name}")

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for name, param in params.items():
        grad = grads.get(name)
        if param.frozen or grad is None:
            continue
        m = state.m.setdefault(name, np.zeros_like(param.values))
        v = state.v.setdefault(name, np.zeros_like(param.values))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        param.values = (param.values - update).astype(param.values.dtype, copy=False)


def clip_gradients(grads: Dict[str, Optional[np.ndarray]], max_norm: float) -> Tuple[float, bool]:
    """Scale gradients in place to a global L2 norm of at most max_norm (0 disables)"""
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values() if g is not None)))
    if max_norm <= 0 or total <= max_norm:
        return total, False
    scale = max_norm / (total + 1e-6)
    for grad in grads.values():
        if grad is not None:
            grad *= scale
    return total, True


# ---------------------------------------------------------------------------
# Data handling

def filter_long_samples(dataset: Sequence[Sample], config: TrainConfig) -> List[Sample]:
    """Keep samples with source <= max_source_len and target <= max_target_len"""
    kept = [s for s in dataset
            if len(s.doc) <= config.max_source_len and len(s.ref) <= config.max_target_len]
    removed = len(dataset) - len(kept)
    logger.info(f"   📏 Length filter: kept {len(kept)}/{len(dataset)} samples ({removed} over length)")
    if not kept:
        logger.warning("   ⚠️ Every sample exceeds the length limits; dataset is empty")
    return kept


def _batch_cost(samples: Sequence[Sample]) -> int:
    width = max(max(len(s.doc), len(s.ref)) for s in samples)
    return width * len(samples)


def pack_micro_batches(dataset: Sequence[Sample], max_tokens: int) -> List[List[int]]:
    """
    Greedy packing by sorted length

    A micro-batch grows while batch size x longest sequence stays within
    max_tokens. A single sample over the cap becomes its own batch.
    """
    order = sorted(range(len(dataset)), key=lambda i: (len(dataset[i].doc), len(dataset[i].ref), i))
    batches: List[List[int]] = []
    current: List[int] = []
    for index in order:
        candidate = current + [index]
        if current and _batch_cost([dataset[i] for i in candidate]) > max_tokens:
            batches.append(current)
            candidate = [index]
        if _batch_cost([dataset[index]]) > max_tokens:
            logger.warning(f"   ⚠️ Sample {dataset[index].sample_id} alone exceeds max_tokens={max_tokens}")
        current = candidate
    if current:
        batches.append(current)
    return batches


def epoch_order(n_batches: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n_batches)


# ---------------------------------------------------------------------------
# Loop

def _named_parameters(model: SeqModel, scorer: Optional[SemSimLayer]) -> Dict[str, Tensor]:
    named = dict(model.params)
    if scorer is not None:
        named.update({f"scorer.{name}": tensor for name, tensor in scorer.named_parameters().items()})
    return named


def train(dataset: Sequence[Sample], model: SeqModel, scorer: Optional[SemSimLayer], config: TrainConfig,
          resume: Optional[Checkpoint] = None) -> Iterator[Checkpoint]:
    """
    Run training, yielding a Checkpoint after every optimizer update

    Args:
        dataset: filtered, tokenized samples
        model: generator, updated in place; trains with config.dropout
        scorer: frozen SemSim layer (ignored for ml_only)
        config: training settings
        resume: continue from this checkpoint's epoch, cursor and Adam state

    Raises:
        ConfigError: empty dataset
        CheckpointError: a frozen tensor changed during training
    """
    if not dataset:
        raise ConfigError("training dataset is empty")
    if model.config.dropout != config.dropout:
        model.config = replace(model.config, dropout=config.dropout)
    params = _named_parameters(model, scorer)
    adam = resume.adam if resume is not None else init_adam(params, config)
    step = resume.step if resume is not None else 0
    start_epoch = resume.epoch if resume is not None else 0
    start_cursor = resume.cursor if resume is not None else 0

    batches = pack_micro_batches(dataset, config.max_tokens)
    digest = frozen_digest(params.values())
    logger.info(f"   🧮 {len(dataset)} samples in {len(batches)} micro-batches, update_freq={config.update_freq}, "
                f"objective={config.objective}")
    logger.debug(f"   🔒 Frozen digest at start: {digest[:16]}")

    model.train()
    ad.zero_grads(params.values())
    pending, sums = 0, {'ml': 0.0, 'semsim': 0.0, 'total': 0.0}
    for epoch in range(start_epoch, config.epochs):
        order = epoch_order(len(batches), config.seed, epoch)
        first = start_cursor if epoch == start_epoch else 0
        for position in range(first, len(order)):
            batch = [dataset[i] for i in batches[order[position]]]
            with ad.Graph():
                breakdown = composite_loss_batch([s.doc for s in batch], [s.ref for s in batch],
                                                 model, scorer, config)
            ad.backward(breakdown.total)
            sums['ml'] += breakdown.ml
            sums['semsim'] += breakdown.semsim
            sums['total'] += breakdown.value
            pending += 1

            if pending < config.update_freq and position < len(order) - 1:
                continue
            grads = {name: p.grad for name, p in params.items() if not p.frozen}
            grad_norm, clipped = clip_gradients(grads, config.clip_norm)
            adam_update(params, grads, adam, config.lr)
            ad.zero_grads(params.values())
            step += 1

            losses = dict(sums, grad_norm=grad_norm, clipped=float(clipped), micro_batches=float(pending))
            if config.log_every and step % config.log_every == 0:
                logger.info(f"   step {step:>6} | L_ml {sums['ml']:.4f} | L_semsim {sums['semsim']:.4f} | "
                            f"loss {sums['total']:.4f} | grad_norm {grad_norm:.3f}{' (clipped)' if clipped else ''}")
            pending, sums = 0, {'ml': 0.0, 'semsim': 0.0, 'total': 0.0}

            next_epoch, next_cursor = (epoch + 1, 0) if position == len(order) - 1 else (epoch, position + 1)
            yield Checkpoint(model=model, adam=adam, config=config, step=step, epoch=next_epoch,
                             cursor=next_cursor, scorer=scorer, losses=losses)
            if config.max_steps and step >= config.max_steps:
                _finish(model, params, digest)
                return
    _finish(model, params, digest)


def _finish(model: SeqModel, params: Dict[str, Tensor], digest: str) -> None:
    model.eval()
    final = frozen_digest(params.values())
    if final != digest:
        raise CheckpointError(f"frozen tensors changed during training (digest {digest[:16]} -> {final[:16]})")
    logger.debug(f"   🔒 Frozen digest unchanged: {final[:16]}")


def run_training(dataset: Sequence[Sample], model: SeqModel, scorer: Optional[SemSimLayer], config: TrainConfig,
                 resume: Optional[Checkpoint] = None, checkpoint_dir=None) -> Optional[Checkpoint]:
    """Drain train(), saving every `checkpoint_every` steps; returns the last checkpoint"""
    last = None
    for ckpt in train(dataset, model, scorer, config, resume=resume):
        last = ckpt
        if checkpoint_dir is not None and config.checkpoint_every and ckpt.step % config.checkpoint_every == 0:
            save_checkpoint(ckpt, f"{checkpoint_dir}/checkpoint_{ckpt.step:06d}.ckpt")
    return last


def _agreement_batches(dataset: Sequence[Sample], model: SeqModel, config: TrainConfig):
    """Reference ids, mask and the model's teacher-forced distributions, one micro-batch at a time"""
    model.eval()
    pad = model.config.pad_id
    for indices in pack_micro_batches(dataset, config.max_tokens):
        batch = [dataset[i] for i in indices]
        enc = encode_batch(pad_batch([s.doc.ids for s in batch], pad), model)
        tgt_in, targets, mask = teacher_forcing_batch([s.ref for s in batch], pad)
        soft = ad.softmax(decoder_logits(tgt_in, enc, model), axis=-1).values
        yield targets, mask, [soft]


def pretrain_lite(dataset: Sequence[Sample], model: SeqModel, config: TrainConfig,
                  pooling: str = 'mean') -> SemSimLayer:
    """
    Maximum-likelihood warm start, then a frozen scorer

    The scorer encoder is a copy of the warmed-up generator encoder; its head
    is fitted to the reference agreement of the generator's own outputs and
    of reference / uniform blends.
    """
    ml_config = replace(config, objective='ml_only')
    last = run_training(dataset, model, None, ml_config)
    logger.info(f"   ✅ Pretrain-lite finished after {last.step if last else 0} updates")
    scorer = scorer_from_model(model, pooling=pooling)
    scorer.head = fit_agreement_head(scorer.lm, _agreement_batches(dataset, model, config))
    return scorer


# ---------------------------------------------------------------------------
# Persistence

def save_checkpoint(ckpt: Checkpoint, path):
    header = {
        'kind': 'training',
        'model_config': ckpt.model.config.to_dict(),
        'train_config': ckpt.config.to_dict(),
        'scorer_config': ckpt.scorer.lm.config.to_dict() if ckpt.scorer is not None else None,
        'step': ckpt.step,
        'epoch': ckpt.epoch,
        'cursor': ckpt.cursor,
        'rng_state': ckpt.model.rng.bit_generator.state,
        'adam': {'step': ckpt.adam.step, 'beta1': ckpt.adam.beta1, 'beta2': ckpt.adam.beta2,
                 'eps': ckpt.adam.eps},
        'losses': ckpt.losses,
    }
    tensors = [StoredTensor(name, p.values, p.frozen, 'model') for name, p in ckpt.model.params.items()]
    if ckpt.scorer is not None:
        tensors += [StoredTensor(name, p.values, True, 'scorer')
                    for name, p in ckpt.scorer.named_parameters().items()]
    tensors += [StoredTensor(name, values, False, 'adam.m') for name, values in ckpt.adam.m.items()]
    tensors += [StoredTensor(name, values, False, 'adam.v') for name, values in ckpt.adam.v.items()]
    return write_container(path, header, tensors)


def _read_training(path):
    header, stored = read_container(path)
    if header.get('kind') != 'training':
        raise CheckpointError(f"{path} is not a training checkpoint")
    rng = np.random.default_rng()
    rng.bit_generator.state = header['rng_state']
    model = SeqModel(config=ModelConfig(**header['model_config']), params=to_tensors(stored, 'model'), rng=rng)
    return header, stored, model


def load_model(path) -> SeqModel:
    """Generator weights from a training checkpoint, evaluation mode"""
    return _read_training(path)[2]


def load_checkpoint(path) -> Checkpoint:
    header, stored, model = _read_training(path)
    scorer = None
    if header.get('scorer_config') is not None:
        scorer = scorer_from_tensors(header['scorer_config'], to_tensors(stored, 'scorer'))
    adam_meta = header['adam']
    adam = AdamState(
        m={s.name: s.values for s in stored if s.group == 'adam.m'},
        v={s.name: s.values for s in stored if s.group == 'adam.v'},
        step=adam_meta['step'], beta1=adam_meta['beta1'], beta2=adam_meta['beta2'], eps=adam_meta['eps'],
    )
    logger.info(f"   📂 Loaded checkpoint {path} at step {header['step']} (epoch {header['epoch']}, "
                f"cursor {header['cursor']})")
    return Checkpoint(model=model, adam=adam, config=TrainConfig(**header['train_config']), step=header['step'],
                      epoch=header['epoch'], cursor=header['cursor'], scorer=scorer,
                      losses=header.get('losses', {}))
