"""Run configuration: a strict JSON file whose paths resolve against its own directory."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .datasets import BUILTIN_MAPPINGS, FieldMapping, Source
from .errors import ConfigError
from .llm_gateway import Gateway, HttpBackend, ReplayBackend, ReplayStore, ResponseCache
from .pipeline import PromptSettings, StageParams
from .prompt_kit import AblationFlags, load_few_shot
from .relation_core import builtin_catalog, load_catalog


@dataclass
class BackendConfig:
    base_url: str | None = None
    model_id: str = "default"
    api_key_env: str | None = "OPENAI_API_KEY"
    timeout: float = 120.0
    retries: int = 3
    backoff: float = 1.0
    parallelism: int = 4
    mode: str = "chat"
    cache_dir: Path | None = None
    replay_path: Path | None = None


@dataclass
class PromptConfig:
    catalog: Path | None = None
    few_shot: Path | None = None
    char_budget: int | None = 6000
    max_tokens: int = 2048
    # greedy decoding keeps runs reproducible
    temperature: float = 0.0
    stop: list[str] | None = None
    enforce_catalog: bool = False
    symmetric_closure: bool = False


@dataclass
class DatasetConfig:
    name: str
    path: Path
    mapping: str | dict = "canonical"
    source: str = "custom"
    expected_count: int | None = None

    def field_mapping(self) -> FieldMapping:
        if isinstance(self.mapping, dict):
            return FieldMapping.from_dict(self.mapping)
        try:
            return BUILTIN_MAPPINGS[self.mapping]
        except KeyError:
            raise ConfigError(f"unknown mapping {self.mapping!r}; use one of {sorted(BUILTIN_MAPPINGS)}") from None


@dataclass
class RunSection:
    datasets: list[DatasetConfig] = field(default_factory=list)
    flags: AblationFlags = field(default_factory=AblationFlags)
    output_dir: Path = Path("runs")


@dataclass
class FewRelConfig:
    input: Path | None = None
    output: Path | None = None
    pid_names: Path | None = None


@dataclass
class RunConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    prompts: PromptConfig = field(default_factory=PromptConfig)
    run: RunSection = field(default_factory=RunSection)
    fewrel: FewRelConfig = field(default_factory=FewRelConfig)
    base_dir: Path = Path(".")

    def snapshot(self) -> dict:
        def conv(value: Any) -> Any:
            if isinstance(value, Path):
                return str(value)
            if isinstance(value, AblationFlags):
                return value.to_dict()
            if isinstance(value, dict):
                return {k: conv(v) for k, v in value.items()}
            if isinstance(value, list):
                return [conv(v) for v in value]
            return value

        data = {
            "backend": asdict(self.backend),
            "prompts": asdict(self.prompts),
            "run": {
                "datasets": [asdict(d) for d in self.run.datasets],
                "flags": self.run.flags.to_dict(),
                "output_dir": self.run.output_dir,
            },
            "fewrel": asdict(self.fewrel),
        }
        return conv(data)

    def prompt_settings(self) -> PromptSettings:
        p = self.prompts
        return PromptSettings(
            catalog=load_catalog(p.catalog) if p.catalog else builtin_catalog(),
            few_shot=load_few_shot(p.few_shot),
            char_budget=p.char_budget,
            enforce_catalog=p.enforce_catalog,
            symmetric_closure=p.symmetric_closure,
        )

    def stage_params(self) -> StageParams:
        p = self.prompts
        return StageParams(
            model_id=self.backend.model_id,
            max_tokens=p.max_tokens,
            temperature=p.temperature,
            stop=tuple(p.stop) if p.stop else None,
        )

    def gateway(self, run_log: Path | None = None, cache_dir: Path | None = None) -> Gateway:
        b = self.backend
        if b.replay_path is not None:
            backend = ReplayBackend(ReplayStore.load(b.replay_path))
        elif b.base_url:
            backend = HttpBackend(
                b.base_url,
                api_key_env=b.api_key_env,
                timeout=b.timeout,
                retries=b.retries,
                backoff=b.backoff,
                parallelism=b.parallelism,
                mode=b.mode,
            )
        else:
            raise ConfigError("backend needs either base_url or replay_path")
        cache_root = cache_dir or b.cache_dir
        cache = ResponseCache(cache_root) if cache_root else None
        return Gateway(backend, cache=cache, run_log=run_log)


def _strict(cls, data: Any, where: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    return dict(data)


def _resolve(base: Path, value: Any) -> Path | None:
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else (base / path).resolve()


def parse_config(data: dict, base_dir: Path) -> RunConfig:
    top = _strict(RunConfig, data, "config")
    top.pop("base_dir", None)

    backend = _strict(BackendConfig, top.get("backend", {}), "backend")
    for key in ("cache_dir", "replay_path"):
        backend[key] = _resolve(base_dir, backend.get(key))

    prompts = _strict(PromptConfig, top.get("prompts", {}), "prompts")
    for key in ("catalog", "few_shot"):
        prompts[key] = _resolve(base_dir, prompts.get(key))

    run = _strict(RunSection, top.get("run", {}), "run")
    datasets = []
    for i, d in enumerate(run.get("datasets", [])):
        d = _strict(DatasetConfig, d, f"run.datasets[{i}]")
        if "name" not in d or "path" not in d:
            raise ConfigError(f"run.datasets[{i}]: name and path are required")
        d["path"] = _resolve(base_dir, d["path"])
        Source(d.get("source", "custom"))
        datasets.append(DatasetConfig(**d))
    names = [d.name for d in datasets]
    if len(set(names)) != len(names):
        raise ConfigError("dataset names must be unique")
    flags_raw = run.get("flags", {})
    if not isinstance(flags_raw, dict) or set(flags_raw) - {"use_relations", "use_infore", "use_context"}:
        raise ConfigError("run.flags accepts use_relations, use_infore, use_context")
    try:
        flags = AblationFlags(**{k: bool(v) for k, v in flags_raw.items()})
    except ValueError as exc:
        raise ConfigError(f"run.flags: {exc}") from None

    fewrel = _strict(FewRelConfig, top.get("fewrel", {}), "fewrel")
    for key in ("input", "output", "pid_names"):
        fewrel[key] = _resolve(base_dir, fewrel.get(key))

    try:
        cfg = RunConfig(
            backend=BackendConfig(**backend),
            prompts=PromptConfig(**prompts),
            run=RunSection(datasets, flags, _resolve(base_dir, run.get("output_dir", "runs"))),
            fewrel=FewRelConfig(**fewrel),
            base_dir=base_dir,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    b, p = cfg.backend, cfg.prompts
    if b.parallelism < 1:
        raise ConfigError("backend.parallelism must be >= 1")
    if b.retries < 0:
        raise ConfigError("backend.retries must be >= 0")
    if b.mode not in ("chat", "completions"):
        raise ConfigError("backend.mode must be 'chat' or 'completions'")
    if p.max_tokens < 1:
        raise ConfigError("prompts.max_tokens must be >= 1")
    if p.temperature < 0:
        raise ConfigError("prompts.temperature must be >= 0")
    if p.char_budget is not None and p.char_budget < 1:
        raise ConfigError("prompts.char_budget must be positive or null")


def load_config(path: str | Path | None) -> RunConfig:
    """Read and validate a config file; ``None`` gives defaults rooted at the cwd."""
    if path is None:
        return parse_config({}, Path.cwd())
    path = Path(path).resolve()
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return parse_config(data, path.parent)
