"""Run configuration: a nested YAML file mapped onto dataclasses.

Unknown keys are rejected. Each pipeline stage hashes only the sections it
depends on (plus its upstream stages), so changing an inference flag reuses
trained tools and optimized agents.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .artifacts import canonical_json


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    interactions: str = ""
    items: str = ""
    delimiter: str = ","
    min_interactions: int = 0
    # "segment" or "block" generates a synthetic dataset instead of reading files
    synthetic: str = ""
    synthetic_users: int = 200


@dataclass
class SplitSection:
    k: int = 1
    c: int = 10
    k_prime: int = 20
    k_cpr: int = 10


@dataclass
class ToolSpec:
    variant: str = "mf"
    label: str = ""
    params: dict = field(default_factory=dict)
    # for variant "imported": path to a score file
    path: str = ""


def _default_tools() -> list[ToolSpec]:
    return [ToolSpec("covisitation", "G"), ToolSpec("sequential", "S"), ToolSpec("mf", "M")]


@dataclass
class AgentSection:
    alpha: float = 0.05
    beta: float = 0.05
    gamma: float = 0.05
    decay: float = 0.8
    epochs: int = 3
    sample_size: int | None = 160


@dataclass
class EnsembleSection:
    variant: str = "rc"
    epochs: int = 200
    lr: float = 0.5
    margin: float = 1.0
    n_neg: int = 4
    hidden: int = 8


@dataclass
class AblationSection:
    tool_compare: bool = True
    rank_compare: bool = True
    regular_intent: bool = True
    sc_mode: str = "dual"
    general_rerank: bool = True


@dataclass
class LlmSection:
    backend: str = "mock"  # mock | http | replay
    endpoint: str = ""
    model: str = "mock"
    cache: str = ""
    token_env: str = "TOOLRANK_API_KEY"
    domain: str = "Groceries on Instacart"
    temperature: float = 0.0
    max_tokens: int = 512
    max_concurrency: int = 8
    retries: int = 3
    timeout: float = 60.0


@dataclass
class EvalSection:
    cutoffs: list[int] = field(default_factory=lambda: [10, 20])
    vdcg_cutoffs: list[int] = field(default_factory=lambda: [5, 10])
    vdcg: bool = True
    vdcg_cap: bool = False
    baselines: bool = True


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitSection = field(default_factory=SplitSection)
    tools: list[ToolSpec] = field(default_factory=_default_tools)
    agent: AgentSection = field(default_factory=AgentSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    ablation: AblationSection = field(default_factory=AblationSection)
    llm: LlmSection = field(default_factory=LlmSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0
    workers: int = 1
    workdir: str = "run"

    def validate(self) -> "RunConfig":
        if self.ablation.sc_mode not in ("dual", "exclusive", "off"):
            raise ConfigError(f"ablation.sc_mode must be dual, exclusive or off, not {self.ablation.sc_mode!r}")
        if self.llm.backend not in ("mock", "http", "replay"):
            raise ConfigError(f"llm.backend must be mock, http or replay, not {self.llm.backend!r}")
        if self.ensemble.variant not in ("rc", "lr", "mlp", "att"):
            raise ConfigError(f"ensemble.variant must be rc, lr, mlp or att, not {self.ensemble.variant!r}")
        if not self.tools:
            raise ConfigError("at least one tool is required")
        labels = [t.label or t.variant for t in self.tools]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"tool labels must be unique: {labels}")
        if not self.data.synthetic and not (self.data.interactions and self.data.items):
            raise ConfigError("data.interactions and data.items are required unless data.synthetic is set")
        if self.data.synthetic not in ("", "segment", "block"):
            raise ConfigError(f"data.synthetic must be segment or block, not {self.data.synthetic!r}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        return self

    def tool_labels(self) -> list[str]:
        return [t.label or t.variant for t in self.tools]


def _build(cls, raw: Any, where: str):
    if not dataclasses.is_dataclass(cls):
        return raw
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(raw).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    hints = {"tools": ToolSpec}
    for name, value in raw.items():
        sub = f"{where}.{name}" if where else name
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING \
            else fields[name].default
        if name in hints and cls is RunConfig:
            if not isinstance(value, list):
                raise ConfigError(f"{sub}: expected a list")
            kwargs[name] = [_build(ToolSpec, v, f"{sub}[{i}]") for i, v in enumerate(value)]
        elif dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, sub)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    cfg = _build(RunConfig, raw, "")
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        target = cfg
        *parents, leaf = dotted.split(".")
        for p in parents:
            target = getattr(target, p)
        setattr(target, leaf, value)
    return cfg.validate()


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(asdict(cfg), sort_keys=True)


def _digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


STAGES = ("ingest", "train-tools", "optimize-agents", "infer", "evaluate")


def stage_inputs(cfg: RunConfig) -> dict[str, dict]:
    """Configuration each stage depends on, cumulative along the pipeline."""
    d = asdict(cfg)
    llm = {k: d["llm"][k] for k in ("backend", "model", "domain", "temperature", "max_tokens")}
    ab = d["ablation"]
    ingest = {"data": d["data"], "split": d["split"], "seed": cfg.seed}
    tools = dict(ingest, tools=d["tools"])
    agents = dict(tools, agent=d["agent"], llm=llm,
                  ablation={k: ab[k] for k in ("tool_compare", "rank_compare", "regular_intent")})
    infer = dict(agents, ensemble=d["ensemble"],
                 inference={k: ab[k] for k in ("sc_mode", "general_rerank")})
    evaluate = dict(infer, eval=d["eval"])
    return {"ingest": ingest, "train-tools": tools, "optimize-agents": agents, "infer": infer, "evaluate": evaluate}


def stage_hashes(cfg: RunConfig) -> dict[str, str]:
    return {stage: _digest(v) for stage, v in stage_inputs(cfg).items()}


def config_hash(cfg: RunConfig) -> str:
    d = asdict(cfg)
    # worker count and location do not change results
    d.pop("workers")
    d.pop("workdir")
    d["llm"].pop("cache")
    return _digest(d)
