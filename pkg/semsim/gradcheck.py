"""
Central finite-difference check of the analytic gradients

Analytic gradients are taken at the parameters' own precision; the finite
differences are always evaluated on a 64-bit copy.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional

import numpy as np

from semsim import tensor_autodiff as ad
from semsim.semsim_scorer import ScorerConfig, SemSimLayer, init_scorer
from semsim.seq2seq_model import ModelConfig, SeqModel, init_model, ml_loss_batch
from semsim.tensor_autodiff import Tensor
from semsim.tokenizer import TokenSequence
from semsim.trainer import TrainConfig, composite_loss_batch

logger = logging.getLogger(__name__)

TOLERANCE = {64: 1e-5, 32: 1e-3}
FD_STEP = 1e-5


@dataclass
class GradcheckReport:
    loss: str
    max_rel_error: float = 0.0
    worst_param: str = ''
    coordinates: int = 0
    per_param: Dict[str, float] = field(default_factory=dict)
    # tensors whose analytic gradient is zero everywhere, so only zeros were compared
    zero_gradient: List[str] = field(default_factory=list)

    def passed(self, precision: int) -> bool:
        return self.max_rel_error <= TOLERANCE[precision]


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(numeric))


def sample_coordinates(analytic: np.ndarray, count: Optional[int], rng: np.random.Generator) -> np.ndarray:
    """
    Flat indices to perturb: every index when count is None, otherwise up to
    `count` drawn from the non-zero analytic entries first, topped up with zeros
    """
    if count is None:
        return np.arange(analytic.size)
    count = min(count, analytic.size)
    nonzero = np.flatnonzero(analytic)
    zero = np.flatnonzero(analytic == 0)
    picked = rng.choice(nonzero, size=min(count, nonzero.size), replace=False)
    if picked.size < count:
        picked = np.concatenate([picked, rng.choice(zero, size=count - picked.size, replace=False)])
    return np.sort(picked.astype(np.int64))


def check_gradients(loss_fn: Callable[[], Tensor], params: Dict[str, Tensor], name: str = 'loss',
                    samples_per_tensor: Optional[int] = 4, seed: int = 0, step: float = FD_STEP) -> GradcheckReport:
    """
    Compare backward() against central differences

    Args:
        loss_fn: builds the scalar loss from the current parameter values
        params: tensors to check (frozen ones included)
        samples_per_tensor: coordinates drawn per tensor, preferring those with
            a non-zero analytic gradient; None checks all
        seed: coordinate sampling seed
    """
    ad.zero_grads(params.values())
    with ad.Graph():
        loss = loss_fn()
    ad.backward(loss)
    analytic = {n: (p.grad.astype(np.float64) if p.grad is not None else np.zeros(p.shape)) for n, p in params.items()}
    ad.zero_grads(params.values())

    report = GradcheckReport(loss=name)
    rng = np.random.default_rng(seed)
    originals = {n: p.values for n, p in params.items()}
    try:
        for p in params.values():
            p.values = p.values.astype(np.float64)
        with ad.precision(64):
            for pname, p in params.items():
                flat = p.values.reshape(-1)
                coords = sample_coordinates(analytic[pname].reshape(-1), samples_per_tensor, rng)
                count = coords.size
                if not analytic[pname].any():
                    report.zero_gradient.append(pname)
                worst = 0.0
                for i in coords:
                    original = flat[i]
                    flat[i] = original + step
                    plus = loss_fn().item()
                    flat[i] = original - step
                    minus = loss_fn().item()
                    flat[i] = original
                    numeric = (plus - minus) / (2 * step)
                    worst = max(worst, relative_error(float(analytic[pname].reshape(-1)[i]), numeric))
                report.per_param[pname] = worst
                report.coordinates += count
                if worst >= report.max_rel_error:
                    report.max_rel_error, report.worst_param = worst, pname
    finally:
        for pname, p in params.items():
            p.values = originals[pname]
    return report


def random_pair(vocab_size: int, rng: np.random.Generator, doc_len: int = 12, ref_len: int = 8,
                bos_id: int = 1, eos_id: int = 2, first_content_id: int = 4):
    """Random document / reference ids drawn from the non-special range"""
    doc = rng.integers(first_content_id, vocab_size, size=doc_len).tolist()
    ref = rng.integers(first_content_id, vocab_size, size=ref_len).tolist()
    return (TokenSequence([bos_id] + doc + [eos_id], role='document'),
            TokenSequence([bos_id] + ref + [eos_id], role='reference'))


def toy_setup(precision: int = 64, seed: int = 0, vocab_size: int = 64, pooling: str = 'mean',
              base: Optional[ModelConfig] = None):
    """Seeded toy generator and matching scorer, dropout off"""
    config = replace(base or ModelConfig(), vocab_size=vocab_size, dropout=0.0, precision=precision)
    model = init_model(config, seed=seed)
    scorer = init_scorer(ScorerConfig(vocab_size=vocab_size, layers=config.encoder_layers, d_model=config.d_model,
                                      heads=config.heads, ffn_dim=config.ffn_dim,
                                      max_positions=config.max_positions, pooling=pooling, pad_id=config.pad_id,
                                      bos_id=config.bos_id, precision=precision), seed=seed + 1)
    return model.eval(), scorer


def run_gradcheck(model: SeqModel, scorer: SemSimLayer, precision: int = 64, seed: int = 0,
                  samples_per_tensor: Optional[int] = 4, lambda_semsim: float = 1.0) -> List[GradcheckReport]:
    """Check L_ml and the composite loss over every model and scorer tensor"""
    rng = np.random.default_rng(seed)
    mc = model.config
    pairs = [random_pair(mc.vocab_size, rng, doc_len=12 - 3 * i, ref_len=8 - 2 * i, bos_id=mc.bos_id,
                         eos_id=mc.eos_id) for i in range(2)]
    docs, refs = [d for d, _ in pairs], [r for _, r in pairs]
    model.eval()

    with ad.precision(precision):
        ml_report = check_gradients(lambda: ml_loss_batch(docs, refs, model), dict(model.params), name='ml',
                                    samples_per_tensor=samples_per_tensor, seed=seed)
        logger.info(f"   L_ml: max relative error {ml_report.max_rel_error:.2e} over {ml_report.coordinates} "
                    f"coordinates (worst: {ml_report.worst_param})")

        config = TrainConfig(objective='composite', lambda_semsim=lambda_semsim)
        params = dict(model.params)
        params.update({f"scorer.{n}": t for n, t in scorer.named_parameters().items()})
        composite_report = check_gradients(
            lambda: composite_loss_batch(docs, refs, model, scorer, config).total, params, name='composite',
            samples_per_tensor=samples_per_tensor, seed=seed)
        logger.info(f"   Composite: max relative error {composite_report.max_rel_error:.2e} over "
                    f"{composite_report.coordinates} coordinates (worst: {composite_report.worst_param})")
    return [ml_report, composite_report]
