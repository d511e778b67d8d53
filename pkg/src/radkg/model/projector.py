"""Visual prefix projector.

A linear layer expands the image vector into k rows of LM width, a
learned n-row prefix constant is prepended, and a non-causal pre-norm
stack (feed-forward width fixed at 4x d_lm) mixes the rows. The output
slice selects either the k image rows (default) or the n prefix rows;
with n == 0 both selections return all rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from radkg.errors import ConfigError, ShapeError
from radkg.model.params import ParamSet
from radkg.model.transformer import INIT_STD, init_stack, run_stack, stack_param_count
from radkg.tensor import Tensor, add, concat_rows, matmul, reshape, slice_rows


class OutputSlice(Enum):
    IMAGE_POSITIONS = "image_positions"
    PREFIX_POSITIONS = "prefix_positions"


@dataclass(frozen=True)
class ProjectorConfig:
    d_vis: int = 512
    d_lm: int = 1024
    clip_length: int = 64
    prefix_length: int = 64
    n_layers: int = 8
    n_heads: int = 8
    output_slice: str = OutputSlice.IMAGE_POSITIONS.value
    add_positional: bool = False
    ln_eps: float = 1e-5
    seed: int = 0

    @property
    def d_ff(self) -> int:
        return 4 * self.d_lm

    def validate(self) -> None:
        if self.d_vis < 1 or self.d_lm < 1:
            raise ConfigError("d_vis and d_lm must be >= 1")
        if self.clip_length < 1:
            raise ConfigError("clip_length must be >= 1")
        if self.prefix_length < 0:
            raise ConfigError("prefix_length must be >= 0")
        if self.n_layers < 0 or self.n_heads < 1:
            raise ConfigError("n_layers must be >= 0 and n_heads >= 1")
        if self.d_lm % self.n_heads != 0:
            raise ConfigError(f"d_lm {self.d_lm} not divisible by n_heads {self.n_heads}")
        OutputSlice(self.output_slice)
        if self.ln_eps <= 0.0:
            raise ConfigError("ln_eps must be positive")


@dataclass
class ProjectorParams:
    cfg: ProjectorConfig
    ps: ParamSet


def init_projector(cfg: ProjectorConfig) -> ProjectorParams:
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    ps = ParamSet()
    k, n, d = cfg.clip_length, cfg.prefix_length, cfg.d_lm
    ps.add("expand.w", rng.normal(0.0, INIT_STD, (cfg.d_vis, k * d)), decay=True)
    ps.add("expand.b", np.zeros(k * d), decay=False)
    # prefix constant is data-like: no weight decay
    prefix_init = rng.normal(0.0, INIT_STD, (n, d)) if n > 0 else np.zeros((0, d))
    ps.add("prefix_const", prefix_init, decay=False)
    if cfg.add_positional:
        ps.add("pos_emb", rng.normal(0.0, INIT_STD, (n + k, d)), decay=True)
    init_stack(ps, rng, d, cfg.n_layers, cfg.n_heads, cfg.d_ff)
    return ProjectorParams(cfg, ps)


def count_params(cfg: ProjectorConfig) -> int:
    cfg.validate()
    k, n, d = cfg.clip_length, cfg.prefix_length, cfg.d_lm
    total = cfg.d_vis * k * d + k * d
    total += n * d
    if cfg.add_positional:
        total += (n + k) * d
    total += stack_param_count(d, cfg.n_layers, cfg.n_heads, cfg.d_ff)
    return total


def project(proj: ProjectorParams, features: np.ndarray) -> Tensor:
    """Map one image vector to prefix rows, [k or n, d_lm]."""
    cfg = proj.cfg
    vec = np.asarray(features, dtype=np.float64).reshape(-1)
    if vec.shape != (cfg.d_vis,):
        raise ShapeError(f"feature vector shape {vec.shape} does not match d_vis {cfg.d_vis}")
    k, n, d = cfg.clip_length, cfg.prefix_length, cfg.d_lm
    f = Tensor(vec.reshape(1, cfg.d_vis))
    x = add(matmul(f, proj.ps["expand.w"]), proj.ps["expand.b"])
    x = reshape(x, (k, d))
    if n > 0:
        x = concat_rows(proj.ps["prefix_const"], x)
    if cfg.add_positional:
        x = add(x, proj.ps["pos_emb"])
    x = run_stack(proj.ps, x, cfg.n_layers, cfg.n_heads, causal=False, ln_eps=cfg.ln_eps)
    if n == 0:
        return x
    if OutputSlice(cfg.output_slice) is OutputSlice.IMAGE_POSITIONS:
        return slice_rows(x, n, n + k)
    return slice_rows(x, 0, n)
