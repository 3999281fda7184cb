"""
Forward pass of the recommender: shallow, deep and intent-aware message propagation
arranged as two interleaved sequences over the direct and high-order graphs, residual
aggregation across layers and dot-product scoring. Also the binary checkpoint codec.
"""
import logging
import numpy as np
from dataclasses import dataclass, field, fields
from typing import *

from . import autodiff as ad
from .autodiff import Tensor
from .graph import GraphOperators, SparseOperator
from .utils import CheckpointMismatchError, ConfigError, DataError, ShapeError


logger = logging.getLogger(__name__)

PARAM_GROUPS = ('node_embeddings', 'intent_embeddings', 'fusion_weights', 'fusion_bias')


# ------------------- ablation toggles -------------------
@dataclass
class AblationToggles:
    """
    Components of the model and objective that can be switched off. `True` means active.

    ho: high-order relations, dp: deep propagation, he: cross transmission between the
    two sequences (off stacks layers sequentially), ip: intent propagation,
    spc: both contrastive objectives, sc: sequence contrast, pc: propagation contrast,
    pcd: shallow/deep pairs of the propagation contrast, pci: shallow/intent pairs.
    """
    ho: bool = True
    dp: bool = True
    he: bool = True
    ip: bool = True
    spc: bool = True
    sc: bool = True
    pc: bool = True
    pcd: bool = True
    pci: bool = True

    def __post_init__(self):
        if not self.ip and self.pci:
            logger.debug("intent propagation off, disabling its contrastive pairs")
            self.pci = False
        if not self.dp and self.pcd:
            logger.debug("deep propagation off, disabling its contrastive pairs")
            self.pcd = False

    @classmethod
    def names(cls) -> Tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def from_variant(cls, variant: str) -> 'AblationToggles':
        key = variant.strip().lower()
        if key not in VARIANTS:
            raise ConfigError(f"unknown variant '{variant}', expected one of {sorted(VARIANTS)}")
        return cls(**{name: False for name in VARIANTS[key]})

    @property
    def use_sequence_contrast(self) -> bool:
        return self.spc and self.sc

    @property
    def use_propagation_contrast(self) -> bool:
        return self.spc and self.pc and (self.pcd or self.pci)

    @property
    def is_lightgcn(self) -> bool:
        return not (self.ho or self.dp or self.he or self.ip or self.spc)


# variant name -> toggles switched off
VARIANTS: Dict[str, Tuple[str, ...]] = {
    'ipccf': (),
    'w/o ho': ('ho',),
    'w/o dp': ('dp',),
    'w/o he': ('he',),
    'w/o ip': ('ip',),
    'w/o spc': ('spc',),
    'w/o sc': ('sc',),
    'w/o pc': ('pc',),
    'w/o pcd': ('pcd',),
    'w/o pci': ('pci',),
    'lightgcn': ('ho', 'dp', 'he', 'ip', 'spc'),
}


# ------------------- parameters -------------------
@dataclass
class ModelParams:
    """
    Trainable state: node embeddings E0 ((|U|+|I|) x d), intent embeddings C (K x d) and the
    semantic fusion layer (4d x d weights, 1 x d bias) shared by every layer.
    """
    node_embeddings: Tensor
    intent_embeddings: Tensor
    fusion_weights: Tensor
    fusion_bias: Tensor
    num_users: int
    num_items: int

    def __post_init__(self):
        n, d = self.node_embeddings.shape
        if d < 1 or self.intent_embeddings.rows < 1:
            raise ConfigError("embedding size and number of intents must be at least 1")
        if n != self.num_users + self.num_items:
            raise DataError(f"node embeddings have {n} rows for {self.num_users + self.num_items} nodes")
        if self.intent_embeddings.cols != d or self.fusion_weights.shape != (4 * d, d) \
                or self.fusion_bias.shape != (1, d):
            raise ConfigError("parameter shapes disagree with the embedding size")
        for name, tensor in self.tensors().items():
            if not np.all(np.isfinite(tensor.values)):
                raise DataError(f"parameter '{name}' holds non-finite values")

    @classmethod
    def initialize(cls, num_users: int, num_items: int, dim: int, num_intents: int,
                   rng: np.random.Generator, dtype=np.float64) -> 'ModelParams':
        """
        Uniform initialization in [-0.5/sqrt(fan), 0.5/sqrt(fan)] with fan d for E0 and C and
        4d for the fusion weights; zero fusion bias.
        """
        if dim < 1 or num_intents < 1:
            raise ConfigError(f"need d >= 1 and K >= 1, got d={dim}, K={num_intents}")
        n = num_users + num_items

        def uniform(shape, fan):
            bound = 0.5 / np.sqrt(fan)
            return rng.uniform(-bound, bound, size=shape).astype(dtype)
        return cls(node_embeddings=Tensor(uniform((n, dim), dim), True, 'node_embeddings'),
                   intent_embeddings=Tensor(uniform((num_intents, dim), dim), True, 'intent_embeddings'),
                   fusion_weights=Tensor(uniform((4 * dim, dim), 4 * dim), True, 'fusion_weights'),
                   fusion_bias=Tensor(np.zeros((1, dim), dtype=dtype), True, 'fusion_bias'),
                   num_users=num_users, num_items=num_items)

    @property
    def dim(self) -> int:
        return self.node_embeddings.cols

    @property
    def num_intents(self) -> int:
        return self.intent_embeddings.rows

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    def tensors(self) -> Dict[str, Tensor]:
        return {name: getattr(self, name) for name in PARAM_GROUPS}

    def zero_grad(self) -> None:
        for tensor in self.tensors().values():
            tensor.zero_grad()


# ------------------- traces -------------------
@dataclass
class HelixStep:
    """Tensors of one propagation step; W is None when intent propagation is off."""
    x_d: Tensor
    x_h: Tensor
    y_d: Tensor
    y_h: Tensor
    w: Optional[Tensor]
    z_d: Tensor
    z_h: Tensor
    f: Tensor
    s: Tensor
    e: Tensor


@dataclass
class LayerTrace:
    e0: Tensor
    steps: List[HelixStep] = field(default_factory=list)

    @property
    def num_layers(self) -> int:
        return len(self.steps)

    def layer_embeddings(self) -> List[Tensor]:
        """E0, E1, ..., EL."""
        return [self.e0] + [step.e for step in self.steps]


@dataclass
class IntentPropagationInputs:
    """Semantic tensor W, fixed relation pattern R (A-hat or H-hat) and message M."""
    semantic: Tensor
    pattern: SparseOperator
    message: Tensor

    def __post_init__(self):
        n = self.pattern.shape[0]
        if self.semantic.rows != n or self.message.rows != n:
            raise ShapeError(f"intent propagation inputs have {self.semantic.rows} and "
                             f"{self.message.rows} rows for a pattern of {n} rows")


# ------------------- propagation -------------------
def structural_propagation(operator: SparseOperator, input: Tensor) -> Tensor:
    """Sparse product operator @ input, differentiable in input."""
    return ad.spmm(operator, input)


def fuse_semantic(x_d: Tensor, x_h: Tensor, y_d: Tensor, y_h: Tensor, params: ModelParams) -> Tensor:
    """W = Concat(Xd, Xh, Yd, Yh) @ fusion_weights + fusion_bias, no activation."""
    return ad.affine(ad.concat_cols([x_d, x_h, y_d, y_h]), params.fusion_weights, params.fusion_bias)


def intent_edge_weights(inputs: IntentPropagationInputs, params: ModelParams) -> Tensor:
    """
    Normalized intent-aware weight of every stored edge (u, v) of the pattern, aligned
    with `pattern.rows` / `pattern.cols`.

    Intensity T = (cos(w_u, w_v) + 1) / 2 scales the pattern weight; the share of intent k is
    the softmax over k of (w_u * w_v) . c_k. Each intent's edge weights are row-normalized
    (denominator floored at 1e-12) and the K normalized matrices are averaged, so every
    non-empty row sums to 1.
    """
    pattern, w = inputs.pattern, inputs.semantic
    rows, cols = pattern.rows, pattern.cols
    intensity = ad.shift(ad.scale(ad.row_cosine_pairs(w, rows, cols), 0.5), 0.5)
    weighted = ad.elementwise_mul(intensity, Tensor(pattern.weights[:, None]))
    interaction = ad.elementwise_mul(ad.gather_rows(w, rows), ad.gather_rows(w, cols))
    shares = ad.softmax_over_axis(ad.matmul(interaction, ad.transpose(params.intent_embeddings)), axis=1)
    per_intent = ad.scale_rows(shares, weighted)
    row_totals = ad.gather_rows(ad.segment_sum(per_intent, rows, pattern.shape[0]), rows)
    normalized = ad.divide(per_intent, row_totals, floor=ad.EPS)
    return ad.scale(ad.sum(normalized, axis=1), 1.0 / params.num_intents)


def intent_propagate(inputs: IntentPropagationInputs, params: ModelParams) -> Tensor:
    """N = R-bar @ M with R-bar from `intent_edge_weights`."""
    pattern = inputs.pattern
    if pattern.nnz == 0:
        return Tensor(np.zeros_like(inputs.message.values))
    weights = intent_edge_weights(inputs, params)
    return ad.edge_spmm(pattern.rows, pattern.cols, weights, inputs.message, pattern.shape[0])


def helix_step(e_prev: Tensor, operators: GraphOperators, params: ModelParams,
               toggles: AblationToggles = AblationToggles()) -> HelixStep:
    """
    One propagation step from E_{l-1}:
        Xd = A-bar E, Xh = H-bar E, Yd = A-bar Xh, Yh = H-bar Xd,
        W = fuse(Xd, Xh, Yd, Yh), Zd = P(W, A-hat, Xd + Yh), Zh = P(W, H-hat, Xh + Yd),
        F = Xd + Yh + Zd, S = Xh + Yd + Zh, E_l = E_{l-1} + F + S.
    Switched-off components contribute zeros. Without cross transmission the deep
    tensors stay on their own graph (Yd = A-bar Xd, Yh = H-bar Xh), F and S pair each
    with its own graph and E_l = F + S.
    """
    def zeros():
        return Tensor(np.zeros_like(e_prev.values))

    x_d = structural_propagation(operators.norm_adjacency, e_prev)
    x_h = structural_propagation(operators.norm_highorder, e_prev) if toggles.ho else zeros()
    if not toggles.dp:
        y_d, y_h = zeros(), zeros()
    elif toggles.he:
        y_d = structural_propagation(operators.norm_adjacency, x_h) if toggles.ho else zeros()
        y_h = structural_propagation(operators.norm_highorder, x_d) if toggles.ho else zeros()
    else:
        y_d = structural_propagation(operators.norm_adjacency, x_d)
        y_h = structural_propagation(operators.norm_highorder, x_h) if toggles.ho else zeros()

    # message paired with each graph
    direct_partner, high_partner = (y_h, y_d) if toggles.he else (y_d, y_h)
    if toggles.ip:
        w = fuse_semantic(x_d, x_h, y_d, y_h, params)
        z_d = intent_propagate(IntentPropagationInputs(w, operators.adjacency, x_d + direct_partner), params)
        if toggles.ho:
            z_h = intent_propagate(IntentPropagationInputs(w, operators.highorder, x_h + high_partner), params)
        else:
            z_h = zeros()
    else:
        w, z_d, z_h = None, zeros(), zeros()

    f = x_d + direct_partner + z_d
    s = x_h + high_partner + z_h
    e = (e_prev + f + s) if toggles.he else (f + s)
    return HelixStep(x_d=x_d, x_h=x_h, y_d=y_d, y_h=y_h, w=w, z_d=z_d, z_h=z_h, f=f, s=s, e=e)


def multilayer_forward(params: ModelParams, operators: GraphOperators, num_layers: int,
                       toggles: AblationToggles = AblationToggles()) -> Tuple[LayerTrace, Tensor]:
    """
    Stack `num_layers` helix steps from E0 and mean-pool E0..EL into the final embeddings.

    Returns:
        (LayerTrace, Tensor): per-step tensors and E' of shape (|U|+|I|) x d.
    """
    if num_layers < 0:
        raise ConfigError(f"number of layers must be non-negative, got {num_layers}")
    if operators.num_nodes != params.num_nodes:
        raise DataError(f"graph has {operators.num_nodes} nodes, parameters {params.num_nodes}")
    trace = LayerTrace(e0=params.node_embeddings)
    current, total = params.node_embeddings, params.node_embeddings
    for _ in range(num_layers):
        step = helix_step(current, operators, params, toggles)
        trace.steps.append(step)
        current = step.e
        total = total + current
    final = ad.scale(total, 1.0 / (num_layers + 1)) if num_layers else total
    return trace, final


def predict_scores(final: Tensor, users, items, num_users: int) -> Tensor:
    """
    Scores e'_u . e'_i for aligned (user, item) pairs as a (B x 1) tensor; item indices are
    offset by `num_users` into the node space.
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if len(users) != len(items):
        raise ShapeError(f"{len(users)} users for {len(items)} items")
    if len(users) and (users.min() < 0 or users.max() >= num_users):
        raise IndexError("user index out of range")
    if len(items) and (items.min() < 0 or items.max() + num_users >= final.rows):
        raise IndexError("item index out of range")
    pairs = ad.elementwise_mul(ad.gather_rows(final, users), ad.gather_rows(final, items + num_users))
    return ad.sum(pairs, axis=1)


def final_embeddings(params: ModelParams, operators: GraphOperators, num_layers: int,
                     toggles: AblationToggles = AblationToggles()) -> np.ndarray:
    """E' values without recording, for evaluation and export."""
    if ad.active_tape() is not None:
        raise RuntimeError("final_embeddings must run outside an active tape")
    return multilayer_forward(params, operators, num_layers, toggles)[1].values


# ------------------- checkpoint -------------------
MAGIC = b'IPCCF001'
_HEADER_FIELDS = ('num_users', 'num_items', 'dim', 'num_intents', 'num_layers')


@dataclass(frozen=True)
class CheckpointHeader:
    num_users: int
    num_items: int
    dim: int
    num_intents: int
    num_layers: int

    def expect(self, **expected) -> None:
        """Raise CheckpointMismatchError when any given dimension differs."""
        diffs = [f"{key}: checkpoint {getattr(self, key)}, expected {value}"
                 for key, value in expected.items() if value is not None and getattr(self, key) != value]
        if diffs:
            raise CheckpointMismatchError("checkpoint does not match configuration (" + '; '.join(diffs) + ")")


def save_checkpoint(path: str, params: ModelParams, num_layers: int) -> CheckpointHeader:
    """
    Binary layout: magic 'IPCCF001', five little-endian uint64 counts
    (num_users, num_items, d, K, L), then E0, C, fusion weights and fusion bias as
    row-major little-endian float32.
    """
    header = CheckpointHeader(params.num_users, params.num_items, params.dim, params.num_intents, num_layers)
    counts = np.array([getattr(header, key) for key in _HEADER_FIELDS], dtype='<u8')
    with open(path, 'wb') as handle:
        handle.write(MAGIC)
        handle.write(counts.tobytes())
        for name in PARAM_GROUPS:
            handle.write(np.ascontiguousarray(getattr(params, name).values, dtype='<f4').tobytes())
    logger.info(f"Saved checkpoint {path} ({header})")
    return header


def load_checkpoint(path: str, dtype=np.float64) -> Tuple[ModelParams, CheckpointHeader]:
    try:
        with open(path, 'rb') as handle:
            blob = handle.read()
    except OSError as e:
        raise DataError(f"cannot read checkpoint '{path}': {e}")
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointMismatchError(f"{path}: bad magic, not a checkpoint")
    offset = len(MAGIC)
    if len(blob) < offset + 8 * len(_HEADER_FIELDS):
        raise CheckpointMismatchError(f"{path}: truncated header")
    counts = np.frombuffer(blob, dtype='<u8', count=len(_HEADER_FIELDS), offset=offset)
    header = CheckpointHeader(*(int(c) for c in counts))
    offset += 8 * len(_HEADER_FIELDS)
    n, d, k = header.num_users + header.num_items, header.dim, header.num_intents
    shapes = {'node_embeddings': (n, d), 'intent_embeddings': (k, d),
              'fusion_weights': (4 * d, d), 'fusion_bias': (1, d)}
    expected = offset + 4 * sum(r * c for r, c in shapes.values())
    if len(blob) != expected:
        raise CheckpointMismatchError(f"{path}: size {len(blob)} bytes, header implies {expected}")
    tensors = {}
    for name in PARAM_GROUPS:
        rows, cols = shapes[name]
        values = np.frombuffer(blob, dtype='<f4', count=rows * cols, offset=offset).reshape(rows, cols)
        tensors[name] = Tensor(values.astype(dtype), requires_grad=True, name=name)
        offset += 4 * rows * cols
    params = ModelParams(num_users=header.num_users, num_items=header.num_items, **tensors)
    logger.info(f"Loaded checkpoint {path} ({header})")
    return params, header
