"""Plain-text ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored; unknown keys are an error.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .adjust import AdjustParams
from .hashgrid import HashGridConfig, geometric_resolutions
from .objectives import LossWeights
from .scene import OctreeConfig


@dataclass(frozen=True)
class Config:
    # octree
    base_depth: int = 11
    num_lods: int = 5
    dim_f: int = 32
    dim_s: int = 6
    dim_o: int = 10
    q0_f: float = 1.0
    q0_s: float = 0.001
    q0_o: float = 0.2
    bbox_margin: float = 0.001
    # anchor adjustment
    tau_g: float = 5e-5
    beta: float = 0.01
    tau_o: float = 0.5
    period: int = 100
    # objectives
    lambda_ssim: float = 0.2
    lambda_vol: float = 0.01
    lambda_nce: float = 0.005
    lambda_e: float = 0.001
    nce_temperature: float = 0.03
    nce_negatives: int = 100
    mi_bins: int = 16
    # hash grid and entropy model
    hash_levels_3d: int = 12
    hash_min_res_3d: int = 16
    hash_max_res_3d: int = 512
    hash_levels_2d: int = 4
    hash_min_res_2d: int = 128
    hash_max_res_2d: int = 1024
    hash_feature_dim: int = 4
    hash_log2_table_size: int = 13
    mlp_hidden: int = 128
    prior_mode: str = "fitted"
    seed: int = 0
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.prior_mode not in ("fitted", "mlp"):
            raise ValueError(f"prior_mode must be 'fitted' or 'mlp', got {self.prior_mode!r}")
        if self.bbox_margin < 0:
            raise ValueError("bbox_margin must be non-negative")
        if self.nce_negatives < 1 or self.nce_temperature <= 0:
            raise ValueError("nce_negatives must be >= 1 and nce_temperature positive")
        if self.mlp_hidden < 1 or self.mi_bins < 2:
            raise ValueError("mlp_hidden must be >= 1 and mi_bins >= 2")
        # construct once so type invariants are checked up front
        self.octree()
        self.adjust_params()
        self.loss_weights()
        self.hash_config()

    def octree(self, bbox_min=(0.0, 0.0, 0.0), bbox_side: float = 1.0) -> OctreeConfig:
        return OctreeConfig(self.base_depth, self.num_lods, tuple(bbox_min), bbox_side,
                            self.dim_f, self.dim_s, self.dim_o, self.q0_f, self.q0_s, self.q0_o)

    def adjust_params(self) -> AdjustParams:
        return AdjustParams(self.tau_g, self.beta, self.tau_o, self.period)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_ssim, self.lambda_vol, self.lambda_nce, self.lambda_e)

    def hash_config(self) -> HashGridConfig:
        return HashGridConfig(
            geometric_resolutions(self.hash_min_res_3d, self.hash_max_res_3d, self.hash_levels_3d),
            geometric_resolutions(self.hash_min_res_2d, self.hash_max_res_2d, self.hash_levels_2d),
            self.hash_feature_dim, self.hash_log2_table_size)


def _convert(name: str, text: str, kind):
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ValueError(f"config key {name!r}: cannot parse {text!r} as {kind.__name__}") from None


_TYPES = {f.name: {"int": int, "float": float, "str": str}.get(f.type, str)
          for f in fields(Config) if f.name != "extra"}


def parse_config(text: str, base: Config | None = None) -> Config:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, value, _TYPES[key])
    return replace(base or Config(), **values)


def load_config(path) -> Config:
    return parse_config(Path(path).read_text())


def dump_config(cfg: Config) -> str:
    return "".join(f"{name} = {getattr(cfg, name)}\n" for name in _TYPES)
