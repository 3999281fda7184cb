"""
Training objective: pairwise ranking loss, the two contrastive alignment terms, intent
independence and L2 regularization, plus the Adam update.
"""
import logging
import numpy as np
from dataclasses import dataclass, field
from typing import *

from . import autodiff as ad
from .autodiff import Tensor
from .dataset import BprBatch
from .graph import GraphOperators
from .model import AblationToggles, LayerTrace, ModelParams, multilayer_forward, predict_scores
from .utils import ConfigError, DataError, NumericalError, ShapeError


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    """
    Weights of the auxiliary terms: sequence contrast, propagation contrast, intent
    independence, node-embedding L2 and intent-embedding L2; `tau` is the contrastive
    temperature.
    """
    seq: float = 8e-2
    prop: float = 1e-1
    indep: float = 5e-3
    emb_reg: float = 2.5e-5
    intent_reg: float = 1e-5
    tau: float = 0.2

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")
        for name in ('seq', 'prop', 'indep', 'emb_reg', 'intent_reg'):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight '{name}' must be non-negative, got {getattr(self, name)}")


@dataclass
class LossTerms:
    total: Tensor
    bpr: Tensor
    seq: Tensor
    prop: Tensor
    indep: Tensor
    emb_reg: Tensor
    intent_reg: Tensor

    def as_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name).item()
                for name in ('total', 'bpr', 'seq', 'prop', 'indep', 'emb_reg', 'intent_reg')}


def _zero() -> Tensor:
    return Tensor(np.zeros((1, 1)))


# ------------------- loss terms -------------------
def bpr_loss(scores_pos: Tensor, scores_neg: Tensor) -> Tensor:
    """-mean(log sigmoid(pos - neg)) over the batch."""
    if scores_pos.rows == 0:
        raise DataError("BPR loss of an empty batch")
    return ad.scale(ad.mean(ad.log_sigmoid(ad.sub(scores_pos, scores_neg))), -1.0)


def batch_nodes(batch: BprBatch, num_users: int) -> np.ndarray:
    """Node ids contrasted in a batch: unique users, then unique positive items."""
    return np.concatenate([np.unique(batch.users), np.unique(batch.pos_items) + num_users]).astype(np.int64)


def info_nce(view_a: Sequence[Tensor], view_b: Sequence[Tensor], node_ids, num_users: int,
             tau: float = 0.2) -> Tensor:
    """
    Contrastive loss between two views, summed over layers and averaged over the in-batch
    nodes. Node i's positive is its own row in the other view; negatives are the other
    in-batch nodes of the same kind (users against users, items against items).
    Similarity is cosine divided by tau.
    """
    node_ids = np.asarray(node_ids, dtype=np.int64)
    if len(node_ids) == 0:
        raise DataError("contrastive loss over an empty node set")
    if len(view_a) != len(view_b):
        raise ShapeError(f"views have {len(view_a)} and {len(view_b)} layers")
    groups = [g for g in (node_ids[node_ids < num_users], node_ids[node_ids >= num_users]) if len(g)]
    total = _zero()
    for a_layer, b_layer in zip(view_a, view_b):
        for group in groups:
            a = ad.normalize_rows(ad.gather_rows(a_layer, group))
            b = ad.normalize_rows(ad.gather_rows(b_layer, group))
            logits = ad.scale(ad.matmul(a, ad.transpose(b)), 1.0 / tau)
            positives = ad.scale(ad.sum(ad.elementwise_mul(a, b), axis=1), 1.0 / tau)
            total = total + ad.sum(ad.sub(ad.logsumexp(logits, axis=1), positives))
    return ad.scale(total, 1.0 / len(node_ids))


def sequence_contrast(trace: LayerTrace, node_ids, num_users: int, tau: float = 0.2) -> Tensor:
    """Alignment of E_l with F_l and of E_l with S_l for l = 1..L."""
    if not trace.steps:
        return _zero()
    e = [step.e for step in trace.steps]
    return ad.add(info_nce(e, [step.f for step in trace.steps], node_ids, num_users, tau),
                  info_nce(e, [step.s for step in trace.steps], node_ids, num_users, tau))


def propagation_contrast(trace: LayerTrace, node_ids, num_users: int, tau: float = 0.2,
                         shallow_deep: bool = True, shallow_intent: bool = True) -> Tensor:
    """
    Alignment of the shallow tensors with their deep (Xd/Yd, Xh/Yh) and intent
    (Xd/Zd, Xh/Zh) counterparts for l = 1..L. Either pair family can be dropped.
    """
    pairs = []
    if shallow_deep:
        pairs += [('x_d', 'y_d'), ('x_h', 'y_h')]
    if shallow_intent:
        pairs += [('x_d', 'z_d'), ('x_h', 'z_h')]
    total = _zero()
    if not trace.steps:
        return total
    for left, right in pairs:
        total = total + info_nce([getattr(s, left) for s in trace.steps],
                                 [getattr(s, right) for s in trace.steps], node_ids, num_users, tau)
    return total


def intent_independence(intents: Tensor) -> Tensor:
    """Mean pairwise cosine similarity between distinct intent rows; 0 for a single intent."""
    k = intents.rows
    if k < 2:
        return _zero()
    unit = ad.normalize_rows(intents)
    gram = ad.sum(ad.matmul(unit, ad.transpose(unit)))
    diagonal = ad.sum(ad.elementwise_mul(unit, unit))
    return ad.scale(ad.sub(gram, diagonal), 1.0 / (k * (k - 1)))


def total_loss(bpr: Tensor, seq: Tensor, prop: Tensor, indep: Tensor, weights: LossWeights,
               params: ModelParams) -> LossTerms:
    """
    bpr + w.seq * seq + w.prop * prop + w.indep * indep + w.emb_reg * ||E0||^2
    + w.intent_reg * ||C||^2, with full Frobenius norms.
    """
    emb_reg = ad.l2_norm_sq(params.node_embeddings)
    intent_reg = ad.l2_norm_sq(params.intent_embeddings)
    total = bpr
    for term, weight in ((seq, weights.seq), (prop, weights.prop), (indep, weights.indep),
                         (emb_reg, weights.emb_reg), (intent_reg, weights.intent_reg)):
        if weight:
            total = total + ad.scale(term, weight)
    return LossTerms(total=total, bpr=bpr, seq=seq, prop=prop, indep=indep,
                     emb_reg=emb_reg, intent_reg=intent_reg)


def batch_objective(params: ModelParams, operators: GraphOperators, batch: BprBatch, num_layers: int,
                    weights: LossWeights = LossWeights(),
                    toggles: AblationToggles = AblationToggles()) -> LossTerms:
    """
    One forward pass and every loss term for a BPR batch. Run inside a `Tape` to train.
    """
    trace, final = multilayer_forward(params, operators, num_layers, toggles)
    nu = params.num_users
    pos = predict_scores(final, batch.users, batch.pos_items, nu)
    neg = predict_scores(final, batch.users, batch.neg_items, nu)
    bpr = bpr_loss(pos, neg)
    nodes = batch_nodes(batch, nu)
    seq = sequence_contrast(trace, nodes, nu, weights.tau) if toggles.use_sequence_contrast else _zero()
    if toggles.use_propagation_contrast:
        prop = propagation_contrast(trace, nodes, nu, weights.tau,
                                    shallow_deep=toggles.pcd, shallow_intent=toggles.pci)
    else:
        prop = _zero()
    indep = intent_independence(params.intent_embeddings)
    return total_loss(bpr, seq, prop, indep, weights, params)


# ------------------- optimizer -------------------
@dataclass
class OptimizerState:
    """Adam moments per parameter group, step counter and hyperparameters."""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")


def adam_step(params: ModelParams, state: OptimizerState) -> None:
    """
    Bias-corrected Adam update of every parameter group from its `grad`, in place.
    A missing gradient counts as zero.

    Raises:
        NumericalError: a gradient holds NaN or Inf; nothing is updated.
    """
    tensors = params.tensors()
    grads = {}
    for name, tensor in tensors.items():
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.values)
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient in parameter '{name}'")
        grads[name] = grad
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, tensor in tensors.items():
        g = grads[name]
        m = state.first_moment.get(name, np.zeros_like(g))
        v = state.second_moment.get(name, np.zeros_like(g))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.first_moment[name], state.second_moment[name] = m, v
        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        tensor.values -= update.astype(tensor.values.dtype, copy=False)
