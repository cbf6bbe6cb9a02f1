"""Run configuration: one TOML file holding every hyperparameter of a run.

``RunConfig.load`` parses and validates; every divisibility and cross-field
constraint is checked before any data is touched.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .adapter import PROJECTOR_KINDS, AdapterConfig
from .ct_encoder import EncoderConfig
from .errors import ArgumentError, ConfigError, PathError
from .model import ModelConfig
from .synth_corpus import DESK_DIMS, DESK_SPACING, STYLES
from .text_lm import LmConfig, LoraConfig
from .trainer import PLANS, StageConfig, WarmStartConfig
from .volume_prep import HU_MAX, HU_MIN, PrepConfig

DEFAULT_SWEEP = (0.1, 0.3, 0.5, 0.7, 0.9)


@dataclass(frozen=True)
class CorpusSpec:
    name: str
    style: str
    n: int
    seed: int

    def validate(self) -> "CorpusSpec":
        if self.style not in STYLES:
            raise ConfigError(f"corpus {self.name}: style must be one of {STYLES}, got {self.style!r}")
        if self.n < 10:
            raise ConfigError(f"corpus {self.name}: n must be >= 10, got {self.n}")
        return self


@dataclass(frozen=True)
class RunConfig:
    volume_dims: Tuple[int, int, int] = DESK_DIMS
    target_spacing: Tuple[float, float, float] = DESK_SPACING
    hu_min: float = HU_MIN
    hu_max: float = HU_MAX
    patch: Tuple[int, int, int] = (3, 6, 6)
    embed_dim: int = 64
    encoder_depth: int = 1
    encoder_heads: int = 4
    pool_kernel: int = 2
    projector_kind: str = "linear"
    d_llm: int = 48
    lm_depth: int = 2
    lm_heads: int = 4
    max_seq: int = 256
    lora_rank: int = 8
    lora_alpha: float = 16.0
    lora_targets: Tuple[str, ...] = ("wq", "wv")
    pretrain: StageConfig = StageConfig("pretrain", 1e-3, 5)
    finetune: StageConfig = StageConfig("finetune", 2e-4, 2)
    warm_start: WarmStartConfig = WarmStartConfig()
    strategy: str = "T1"
    eval_corpus: str = "private"
    eval_split: str = "val"
    temperature: float = 0.7
    sweep: Tuple[float, ...] = DEFAULT_SWEEP
    max_new: int = 128
    seed: int = 0
    model_seed: int = 0
    corpora: Tuple[CorpusSpec, ...] = (
        CorpusSpec("public", "long_report", 120, 11),
        CorpusSpec("private", "short_report", 120, 12),
    )
    data_dir: str = "data"
    out_dir: str = "runs"
    base_checkpoint: str = "runs/base.ckpt"
    vocab_path: str = "data/vocab.tsv"
    source: Optional[str] = None

    # -- derived configs -------------------------------------------------

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(tuple(self.volume_dims), tuple(self.patch), self.embed_dim, self.encoder_depth, self.encoder_heads)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            encoder=self.encoder_config(),
            adapter=AdapterConfig(self.pool_kernel, self.projector_kind, self.d_llm),
            lm=LmConfig(vocab_size, self.d_llm, self.lm_depth, self.lm_heads, self.max_seq),
            lora=LoraConfig(self.lora_rank, self.lora_alpha, tuple(self.lora_targets)),
        )

    def prep_config(self) -> PrepConfig:
        return PrepConfig(tuple(self.target_spacing), tuple(self.volume_dims), self.hu_min, self.hu_max)

    def stage(self, name: str) -> StageConfig:
        return {"pretrain": self.pretrain, "finetune": self.finetune}[name]

    def corpus(self, name: str) -> CorpusSpec:
        for c in self.corpora:
            if c.name == name:
                return c
        raise ConfigError(f"no corpus named {name!r} in config (have {[c.name for c in self.corpora]})")

    def corpus_dir(self, name: str) -> Path:
        return Path(self.data_dir) / name

    # -- validation ------------------------------------------------------

    def validate(self) -> "RunConfig":
        dims, patch = tuple(self.volume_dims), tuple(self.patch)
        if len(dims) != 3 or len(patch) != 3 or len(self.target_spacing) != 3:
            raise ConfigError("volume_dims, patch and target_spacing need three entries (z, y, x)")
        for axis, n, p in zip("zyx", dims, patch):
            if p <= 0 or n <= 0 or n % p:
                raise ConfigError(f"volume_dims.{axis}={n} is not divisible by patch.{axis}={p}")
        if self.pool_kernel <= 0:
            raise ConfigError("pool_kernel must be positive")
        for axis, n, p in zip("zyx", dims, patch):
            if (n // p) % self.pool_kernel:
                raise ConfigError(f"token grid axis {axis} ({n // p}) is not divisible by pool_kernel={self.pool_kernel}")
        if self.embed_dim % self.encoder_heads:
            raise ConfigError(f"embed_dim={self.embed_dim} is not divisible by encoder_heads={self.encoder_heads}")
        if self.d_llm % self.lm_heads:
            raise ConfigError(f"d_llm={self.d_llm} is not divisible by lm_heads={self.lm_heads}")
        if self.projector_kind not in PROJECTOR_KINDS:
            raise ConfigError(f"projector_kind must be one of {PROJECTOR_KINDS}")
        if not self.hu_min < self.hu_max or any(not s > 0 for s in self.target_spacing):
            raise ConfigError("need hu_min < hu_max and positive target_spacing")
        if self.strategy not in PLANS:
            raise ConfigError(f"strategy must be one of {sorted(PLANS)}, got {self.strategy!r}")
        if self.temperature < 0 or any(t < 0 for t in self.sweep) or not self.sweep:
            raise ConfigError("temperatures must be >= 0 and the sweep non-empty")
        n_visual = 1
        for n, p in zip(dims, patch):
            n_visual *= n // p // self.pool_kernel
        if n_visual + 16 > self.max_seq:
            raise ConfigError(f"max_seq={self.max_seq} leaves no room beside {n_visual} visual tokens")
        names = [c.name for c in self.corpora]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate corpus names {names}")
        for c in self.corpora:
            c.validate()
        for plan in PLANS.values():
            for phase in plan.phases:
                if phase.corpus not in names:
                    raise ConfigError(f"strategy {plan.name} needs a corpus named {phase.corpus!r}")
        if self.eval_corpus not in names:
            raise ConfigError(f"eval_corpus {self.eval_corpus!r} is not a configured corpus")
        if self.eval_split not in ("train", "val", "test"):
            raise ConfigError("eval_split must be train, val or test")
        try:
            self.pretrain.validate()
            self.finetune.validate()
            self.warm_start.validate()
            LoraConfig(self.lora_rank, self.lora_alpha, tuple(self.lora_targets)).validate()
        except ArgumentError as e:
            raise ConfigError(str(e)) from None
        if self.pretrain.stage != "pretrain" or self.finetune.stage != "finetune":
            raise ConfigError("stage sections are swapped")
        return self

    # -- I/O ---------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], source: Optional[str] = None) -> "RunConfig":
        data = dict(data)
        kw: Dict[str, Any] = {}
        known = {
            "volume": {"dims": "volume_dims", "target_spacing": "target_spacing", "hu_min": "hu_min", "hu_max": "hu_max"},
            "encoder": {"patch": "patch", "embed_dim": "embed_dim", "depth": "encoder_depth", "heads": "encoder_heads"},
            "adapter": {"pool_kernel": "pool_kernel", "projector_kind": "projector_kind", "d_llm": "d_llm"},
            "lm": {"depth": "lm_depth", "heads": "lm_heads", "max_seq": "max_seq"},
            "lora": {"rank": "lora_rank", "alpha": "lora_alpha", "targets": "lora_targets"},
            "strategy": {"name": "strategy", "eval_corpus": "eval_corpus", "eval_split": "eval_split"},
            "generation": {"temperature": "temperature", "sweep": "sweep", "max_new": "max_new"},
            "run": {"seed": "seed", "model_seed": "model_seed"},
            "paths": {"data_dir": "data_dir", "out_dir": "out_dir", "base_checkpoint": "base_checkpoint", "vocab": "vocab_path"},
        }
        tuples = {"volume_dims", "target_spacing", "patch", "lora_targets", "sweep"}
        for section, fields in known.items():
            table = data.pop(section, {})
            if not isinstance(table, dict):
                raise ConfigError(f"[{section}] must be a table")
            for key, value in table.items():
                if key not in fields:
                    raise ConfigError(f"unknown key {section}.{key}")
                kw[fields[key]] = tuple(value) if fields[key] in tuples else value
        stages = data.pop("stage", {})
        defaults = cls()
        for name in ("pretrain", "finetune"):
            table = dict(stages.pop(name, {}))
            try:
                kw[name] = replace(defaults.stage(name), **table)
            except TypeError as e:
                raise ConfigError(f"[stage.{name}]: {e}") from None
        if stages:
            raise ConfigError(f"unknown stage sections {sorted(stages)}")
        warm = data.pop("warm_start", {})
        try:
            kw["warm_start"] = replace(defaults.warm_start, **warm)
        except TypeError as e:
            raise ConfigError(f"[warm_start]: {e}") from None
        corpora = data.pop("corpus", None)
        if corpora is not None:
            try:
                kw["corpora"] = tuple(CorpusSpec(name, **spec) for name, spec in corpora.items())
            except TypeError as e:
                raise ConfigError(f"[corpus.*]: {e}") from None
        if data:
            raise ConfigError(f"unknown sections {sorted(data)}")
        return cls(source=source, **kw).validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise PathError(f"config file {path} not found")
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
        return cls.from_dict(data, source=str(path))

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None}).validate()

    def snapshot(self) -> Dict[str, Any]:
        from dataclasses import asdict

        out = asdict(self)
        out.pop("source")
        return out
