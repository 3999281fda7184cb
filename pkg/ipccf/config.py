"""
Run configuration: flat `key=value` text with `#` comments, parsed into a `RunConfig`.

    data = gowalla.txt
    dim = 32
    variant = w/o ip    # named ablation, explicit toggles below it still apply
"""
import os
import logging
import numpy as np
from dataclasses import asdict, dataclass, field, fields, replace
from typing import *

from .graph import ExtractionConfig
from .model import VARIANTS, AblationToggles
from .objective import LossWeights, OptimizerState
from .utils import ConfigError, SEED_STREAMS, seed_streams


logger = logging.getLogger(__name__)

TOGGLES = AblationToggles.names()
_TRUE = {'1', 'true', 'yes', 'on'}
_FALSE = {'0', 'false', 'no', 'off'}


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise ValueError(f"not a boolean: '{text}'")


def _parse_optional_int(text: str) -> Optional[int]:
    return None if text.strip().lower() in ('', 'none') else int(text)


def _parse_int_list(text: str) -> Tuple[int, ...]:
    return tuple(int(token) for token in text.replace(' ', '').split(',') if token)


def _parse_float_list(text: str) -> Tuple[float, ...]:
    return tuple(float(token) for token in text.replace(' ', '').split(',') if token)


def _format(value) -> str:
    if isinstance(value, bool):
        return 'on' if value else 'off'
    if value is None:
        return 'none'
    if isinstance(value, tuple):
        return ','.join(_format(v) for v in value)
    if isinstance(value, float):
        return 'inf' if np.isinf(value) else repr(value)
    return str(value)


@dataclass
class RunConfig:
    """
    Every setting of a run. Defaults follow the reference hyperparameters
    (d=32, K=8, L=2, batch 10240, lr 1e-3).
    """
    # data
    data: str = ''
    test_data: str = ''
    data_format: str = 'adjacency-list'
    max_users: int = 0
    split_ratio: float = 0.8
    validation_ratio: float = 0.1
    # seeds
    seed: int = 0
    seed_split: Optional[int] = None
    seed_init: Optional[int] = None
    seed_sampling: Optional[int] = None
    seed_eval: Optional[int] = None
    # model
    dim: int = 32
    intents: int = 8
    layers: int = 2
    dtype: str = 'float64'
    # high-order extraction
    eta: float = 0.8
    q: int = 5
    workers: int = 1
    # objective
    tau: float = 0.2
    lambda1: float = 8e-2
    lambda2: float = 1e-1
    lambda3: float = 5e-3
    lambda4: float = 2.5e-5
    lambda5: float = 1e-5
    # optimization
    lr: float = 1e-3
    batch_size: int = 10240
    epochs: int = 100
    batches_per_epoch: int = 0
    eval_every: int = 0
    patience: int = 0
    # ablation
    variant: str = 'ipccf'
    ho: bool = True
    dp: bool = True
    he: bool = True
    ip: bool = True
    spc: bool = True
    sc: bool = True
    pc: bool = True
    pcd: bool = True
    pci: bool = True
    # evaluation and output
    eval_ks: Tuple[int, ...] = (20, 40)
    group_edges: Tuple[float, ...] = (0.0, 10.0, 20.0, 40.0, 80.0, float('inf'))
    mad_sample: int = 200000
    out: str = 'runs/ipccf'

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.data_format in ('adjacency-list', 'pair-per-line'), f"unknown data_format '{self.data_format}'"),
            (0.0 < self.split_ratio < 1.0, f"split_ratio must lie in (0, 1), got {self.split_ratio}"),
            (0.0 <= self.validation_ratio < 1.0, f"validation_ratio must lie in [0, 1), got {self.validation_ratio}"),
            (self.max_users >= 0, "max_users must be non-negative"),
            (self.dim >= 1 and self.intents >= 1, "dim and intents must be at least 1"),
            (self.layers >= 0, "layers must be non-negative"),
            (self.dtype in ('float64', 'float32'), f"dtype must be float64 or float32, got '{self.dtype}'"),
            (0.0 <= self.eta <= 1.0 and self.q >= 0, "eta must lie in [0, 1] and q be non-negative"),
            (self.workers >= 1, "workers must be at least 1"),
            (self.tau > 0, "tau must be positive"),
            (min(self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5) >= 0,
             "loss weights must be non-negative"),
            (self.lr > 0 and self.batch_size >= 1, "lr and batch_size must be positive"),
            (self.epochs >= 0 and self.batches_per_epoch >= 0, "epochs and batches_per_epoch must be non-negative"),
            (self.eval_every >= 0 and self.patience >= 0, "eval_every and patience must be non-negative"),
            (len(self.eval_ks) > 0 and min(self.eval_ks) >= 1, f"eval_ks must be positive integers, got {self.eval_ks}"),
            (len(self.group_edges) >= 2 and all(np.diff(self.group_edges) > 0),
             "group_edges must be strictly ascending"),
            (self.mad_sample >= 1, "mad_sample must be positive"),
            (self.variant.strip().lower() in VARIANTS, f"unknown variant '{self.variant}'"),
            (bool(self.out), "out must name a directory"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        out = os.path.abspath(self.out)
        for path in (self.data, self.test_data):
            if path and os.path.abspath(path) == out:
                raise ConfigError(f"input path '{path}' coincides with the output directory")
        if not self.ip:
            self.pci = False
        if not self.dp:
            self.pcd = False

    # ------------------- derived views -------------------
    def toggles(self) -> AblationToggles:
        return AblationToggles(**{name: getattr(self, name) for name in TOGGLES})

    def loss_weights(self) -> LossWeights:
        return LossWeights(seq=self.lambda1, prop=self.lambda2, indep=self.lambda3,
                           emb_reg=self.lambda4, intent_reg=self.lambda5, tau=self.tau)

    def extraction(self) -> ExtractionConfig:
        return ExtractionConfig(eta=self.eta, q=self.q)

    def optimizer(self) -> OptimizerState:
        return OptimizerState(lr=self.lr)

    def seeds(self) -> Dict[str, int]:
        return seed_streams(self.seed, {name: getattr(self, f"seed_{name}") for name in SEED_STREAMS})

    def numpy_dtype(self):
        return np.float32 if self.dtype == 'float32' else np.float64

    # ------------------- text codec -------------------
    def to_text(self) -> str:
        lines = ['# effective configuration']
        lines += [f"{f.name} = {_format(getattr(self, f.name))}" for f in fields(self)]
        return '\n'.join(lines) + '\n'

    def save(self, path: str) -> None:
        with open(path, 'w') as handle:
            handle.write(self.to_text())
        logger.debug(f"Effective configuration written to {path}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


_CONVERTERS: Dict[str, Callable[[str], Any]] = {}
for _f in fields(RunConfig):
    if _f.name in TOGGLES:
        _CONVERTERS[_f.name] = _parse_bool
    elif _f.name.startswith('seed_'):
        _CONVERTERS[_f.name] = _parse_optional_int
    elif _f.name == 'eval_ks':
        _CONVERTERS[_f.name] = _parse_int_list
    elif _f.name == 'group_edges':
        _CONVERTERS[_f.name] = _parse_float_list
    elif isinstance(_f.default, bool):
        _CONVERTERS[_f.name] = _parse_bool
    elif isinstance(_f.default, int):
        _CONVERTERS[_f.name] = int
    elif isinstance(_f.default, float):
        _CONVERTERS[_f.name] = float
    else:
        _CONVERTERS[_f.name] = str.strip


def parse_pairs(lines: Iterable[str], source: str = '<config>') -> Dict[str, str]:
    """Raw key -> value strings of `key = value` lines; `#` starts a comment."""
    pairs = {}
    for line_no, line in enumerate(lines, start=1):
        content = line.split('#', 1)[0].strip()
        if not content:
            continue
        if '=' not in content:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value', got '{content}'")
        key, value = (part.strip() for part in content.split('=', 1))
        if key not in _CONVERTERS:
            raise ConfigError(f"{source}:{line_no}: unknown key '{key}'")
        pairs[key] = value
    return pairs


def config_from_pairs(pairs: Mapping[str, str], base: RunConfig = None) -> RunConfig:
    """
    Apply raw key/value strings on top of `base`. A `variant` switches its toggles off
    first; explicit toggle keys are applied after it.
    """
    values = asdict(base) if base is not None else {}
    if 'variant' in pairs:
        variant = pairs['variant'].strip().lower()
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{pairs['variant']}', expected one of {sorted(VARIANTS)}")
        values['variant'] = variant
        values.update({name: name not in VARIANTS[variant] for name in TOGGLES})
    for key, raw in pairs.items():
        if key == 'variant':
            continue
        try:
            values[key] = _CONVERTERS[key](raw)
        except ValueError as e:
            raise ConfigError(f"bad value for '{key}': '{raw}' ({e})")
    values = {key: tuple(v) if isinstance(v, list) else v for key, v in values.items()}
    return RunConfig(**values)


def parse_config(text: str, source: str = '<config>') -> RunConfig:
    return config_from_pairs(parse_pairs(text.splitlines(), source))


def load_config(path: str = None, overrides: Sequence[str] = ()) -> RunConfig:
    """
    Read a config file (or start from defaults) and apply `key=value` overrides in order.
    """
    pairs = {}
    if path:
        try:
            with open(path, 'r', encoding='utf-8') as handle:
                pairs = parse_pairs(handle, source=path)
        except OSError as e:
            raise ConfigError(f"cannot read config '{path}': {e}")
    config = config_from_pairs(pairs)
    if overrides:
        config = config_from_pairs(parse_pairs(overrides, source='--set'), base=config)
    return config


def variant_help() -> str:
    """One line per named variant with the toggles it switches off."""
    return '\n'.join(f"  {name:<10} off: {', '.join(off) if off else '(none)'}" for name, off in VARIANTS.items())
