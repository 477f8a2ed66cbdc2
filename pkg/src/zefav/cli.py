"""Command-line entry point: ``zefav <command> --config run.json``.

Exit codes: 0 on success, 2 when at least one claim errored, 1 on fatal
configuration or backend problems.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import DatasetConfig, RunConfig, load_config
from .closure import find_evidence_relations
from .datasets import (
    FEVEROUS_CHALLENGES,
    ClaimRecord,
    Source,
    export_fewrel_instructions,
    load_records,
    load_split,
)
from .errors import ConfigError, ZefavError
from .evalkit import ablation_grid, challenge_breakdown, results_table, score
from .llm_gateway import Gateway, record_replay
from .pipeline import (
    ABLATION_CONFIGS,
    ClaimRunTrace,
    PromptSettings,
    StageParams,
    extract_relations,
    load_traces,
    reorganize_evidence,
    run_batch,
    write_traces,
)
from .prompt_kit import (
    INFORE_EXAMPLE,
    INFORE_INSTRUCTION,
    INFORE_TARGET,
    RELATION_TEMPLATE,
    VERDICT_INSTRUCTION,
    AblationFlags,
)
from .relation_core import builtin_pid_names, load_catalog

logger = logging.getLogger("zefav")

EXIT_OK, EXIT_FATAL, EXIT_CLAIM_ERRORS = 0, 1, 2


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8", newline="\n")


def write_manifest(cfg: RunConfig, prompts: PromptSettings, out: Path, command: str) -> Path:
    """Config snapshot plus digests of every prompt ingredient and dataset file."""
    few_shot = json.dumps([dataclasses.asdict(e) for e in prompts.few_shot], sort_keys=True)
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg.snapshot(),
        "prompt_digests": {
            "relation_template": _sha256(RELATION_TEMPLATE.encode()),
            "infore_template": _sha256((INFORE_INSTRUCTION + INFORE_EXAMPLE + INFORE_TARGET).encode()),
            "verdict_instruction": _sha256(VERDICT_INSTRUCTION.encode()),
            "catalog": _sha256("\n".join(prompts.catalog.names).encode()),
            "few_shot": _sha256(few_shot.encode()),
        },
        "datasets": {d.name: _sha256(d.path.read_bytes()) for d in cfg.run.datasets},
    }
    path = out / "manifest.json"
    _write_json(path, manifest)
    return path


def _load_dataset(d: DatasetConfig) -> list[ClaimRecord]:
    return load_split(d.path, d.field_mapping(), Source(d.source), d.expected_count)


def _selected(cfg: RunConfig, names: list[str] | None) -> list[DatasetConfig]:
    if not cfg.run.datasets:
        raise ConfigError("config lists no datasets under run.datasets")
    if not names:
        return cfg.run.datasets
    by_name = {d.name: d for d in cfg.run.datasets}
    missing = [n for n in names if n not in by_name]
    if missing:
        raise ConfigError(f"unknown dataset(s) {missing}; configured: {sorted(by_name)}")
    return [by_name[n] for n in names]


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    b = cfg.backend
    if getattr(args, "base_url", None):
        b.base_url = args.base_url
        b.replay_path = None
    if getattr(args, "replay", None):
        b.replay_path = Path(args.replay).resolve()
    if getattr(args, "model", None):
        b.model_id = args.model
    if getattr(args, "cache_dir", None):
        b.cache_dir = Path(args.cache_dir).resolve()
    if getattr(args, "parallelism", None) is not None:
        if args.parallelism < 1:
            raise ConfigError("--parallelism must be >= 1")
        b.parallelism = args.parallelism
    if getattr(args, "output_dir", None):
        cfg.run.output_dir = Path(args.output_dir).resolve()
    f = cfg.run.flags
    flags = {
        "use_relations": f.use_relations and not getattr(args, "no_relations", False),
        "use_infore": f.use_infore and not getattr(args, "no_infore", False),
        "use_context": f.use_context and not getattr(args, "no_context", False),
    }
    for name in ("relations", "infore", "context"):
        if getattr(args, name, False):
            flags[f"use_{name}"] = True
    try:
        cfg.run.flags = AblationFlags(**flags)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _run_dataset(
    d: DatasetConfig,
    records: list[ClaimRecord],
    flags: AblationFlags,
    gateway: Gateway,
    prompts: PromptSettings,
    params: StageParams,
    parallelism: int,
    out: Path,
):
    traces = run_batch(records, flags, gateway, prompts, params, parallelism)
    write_traces(traces, out / "traces.jsonl")
    with (out / "timings.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
        for t in traces:
            fh.write(json.dumps({"claim_id": t.claim_id, "stage_timings": t.stage_timings}, sort_keys=True) + "\n")
    report = None
    if records and all(r.gold is not None for r in records):
        report = score(traces, records, dataset=d.name, flags=flags)
        report.write(out / "report.json")
    errored = sum(t.failed for t in traces)
    return traces, report, errored


def cmd_verify(cfg: RunConfig, args: argparse.Namespace) -> int:
    prompts, params = cfg.prompt_settings(), cfg.stage_params()
    out = cfg.run.output_dir
    out.mkdir(parents=True, exist_ok=True)
    datasets = _selected(cfg, args.dataset)
    loaded = {d.name: _load_dataset(d) for d in datasets}
    gateway = cfg.gateway(run_log=out / "run_log.jsonl")
    write_manifest(cfg, prompts, out, "verify")

    errored = 0
    reports = []
    for d in datasets:
        _, report, n_err = _run_dataset(
            d, loaded[d.name], cfg.run.flags, gateway, prompts, params, cfg.backend.parallelism, out / d.name
        )
        errored += n_err
        if report is not None:
            reports.append(report)
            print(report.render())
            if any(s in report.by_stratum for s in FEVEROUS_CHALLENGES):
                print(challenge_breakdown(report))
            print()
    if reports:
        print(results_table(reports))
    if errored:
        print(f"{errored} claim(s) errored; see error fields in traces.jsonl", file=sys.stderr)
        return EXIT_CLAIM_ERRORS
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, args: argparse.Namespace) -> int:
    prompts, params = cfg.prompt_settings(), cfg.stage_params()
    out = cfg.run.output_dir
    out.mkdir(parents=True, exist_ok=True)
    datasets = _selected(cfg, args.dataset)
    loaded = {d.name: _load_dataset(d) for d in datasets}
    # one shared cache so relation extraction and InfoRE run once per prompt
    gateway = cfg.gateway(run_log=out / "run_log.jsonl", cache_dir=cfg.backend.cache_dir or out / "cache")
    write_manifest(cfg, prompts, out, "ablate")

    errored = 0
    reports = []
    for flags in ABLATION_CONFIGS:
        for d in datasets:
            _, report, n_err = _run_dataset(
                d, loaded[d.name], flags, gateway, prompts, params, cfg.backend.parallelism, out / d.name / flags.label
            )
            errored += n_err
            if report is not None:
                reports.append(report)
    grid = ablation_grid(reports)
    text = grid.render()
    (out / "ablation_grid.txt").write_text(text + "\n", encoding="utf-8", newline="\n")
    _write_json(
        out / "ablation_grid.json",
        {
            "datasets": grid.datasets,
            "rows": [{"flags": f.to_dict(), "f1_percent": cells} for f, cells in grid.rows],
            "warnings": grid.warnings,
        },
    )
    print(text)
    if errored:
        print(f"{errored} claim run(s) errored across the grid", file=sys.stderr)
        return EXIT_CLAIM_ERRORS
    return EXIT_OK


def cmd_extract_relations(cfg: RunConfig, args: argparse.Namespace) -> int:
    prompts, params = cfg.prompt_settings(), cfg.stage_params()
    out = cfg.run.output_dir
    gateway = cfg.gateway(run_log=out / "run_log.jsonl")
    errored = 0
    for d in _selected(cfg, args.dataset):
        path = out / d.name / "relations.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for rec in _load_dataset(d):
                row: dict = {"claim_id": rec.id}
                try:
                    claim_t, ev_t, warns = extract_relations(rec, gateway, prompts, params)
                    kept = find_evidence_relations(claim_t, ev_t, prompts.symmetric_closure)
                    row.update(
                        claim_triples=[t.to_dict() for t in claim_t],
                        evidence_triples_all=[t.to_dict() for t in ev_t],
                        evidence_triples_kept=[t.to_dict() for t in kept.evidence_rels_new],
                        warnings=warns,
                    )
                except ZefavError as exc:
                    errored += 1
                    row["error"] = f"{type(exc).__name__}: {exc}"
                fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
        print(f"{d.name}: wrote {path}")
    return EXIT_CLAIM_ERRORS if errored else EXIT_OK


def cmd_reorganize(cfg: RunConfig, args: argparse.Namespace) -> int:
    prompts, params = cfg.prompt_settings(), cfg.stage_params()
    out = cfg.run.output_dir
    gateway = cfg.gateway(run_log=out / "run_log.jsonl")
    errored = 0
    for d in _selected(cfg, args.dataset):
        path = out / d.name / "infore.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for rec in _load_dataset(d):
                row: dict = {"claim_id": rec.id}
                if not rec.evidence:
                    row["error"] = "no evidence"
                    errored += 1
                else:
                    try:
                        row["infore_text"], row["truncated"] = reorganize_evidence(rec.evidence, gateway, prompts, params)
                    except ZefavError as exc:
                        errored += 1
                        row["error"] = f"{type(exc).__name__}: {exc}"
                fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
        print(f"{d.name}: wrote {path}")
    return EXIT_CLAIM_ERRORS if errored else EXIT_OK


def cmd_score(cfg: RunConfig, args: argparse.Namespace) -> int:
    traces: list[ClaimRunTrace] = load_traces(args.traces)
    if args.records:
        records = load_records(args.records)
        name = args.name or Path(args.records).stem
    else:
        datasets = _selected(cfg, args.dataset)
        if len(datasets) != 1:
            raise ConfigError("score needs exactly one dataset (use --dataset or --records)")
        records = _load_dataset(datasets[0])
        name = datasets[0].name
    report = score(traces, records, dataset=name)
    if args.out:
        report.write(args.out)
    print(report.render())
    if report.by_stratum:
        print(challenge_breakdown(report))
    return EXIT_OK


def cmd_export_fewrel(cfg: RunConfig, args: argparse.Namespace) -> int:
    src = Path(args.input) if args.input else cfg.fewrel.input
    dst = Path(args.output) if args.output else cfg.fewrel.output
    if src is None or dst is None:
        raise ConfigError("export-fewrel needs an input and an output (flags or the fewrel config section)")
    catalog = cfg.prompt_settings().catalog
    pid_names = builtin_pid_names()
    if cfg.fewrel.pid_names is not None:
        raw = json.loads(cfg.fewrel.pid_names.read_text(encoding="utf-8"))
        pid_names = {k: (v[0] if isinstance(v, list) else v) for k, v in raw.items()}
    if args.catalog:
        catalog = load_catalog(args.catalog)
    count = export_fewrel_instructions(src, catalog, dst, pid_names)
    print(f"wrote {count} instruction pairs to {dst}")
    return EXIT_OK


def cmd_record_replay(cfg: RunConfig, args: argparse.Namespace) -> int:
    store = record_replay(args.log, args.out)
    print(f"replay store with {len(store)} entries written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zefav", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, run: bool = True) -> None:
        p.add_argument("-c", "--config", help="JSON run configuration")
        if not run:
            return
        p.add_argument("--dataset", action="append", help="restrict to a configured dataset (repeatable)")
        p.add_argument("--output-dir", help="override run.output_dir")
        p.add_argument("--base-url", help="OpenAI-compatible endpoint; disables replay")
        p.add_argument("--replay", help="replay store (JSON Lines); closed-world, no HTTP")
        p.add_argument("--model", help="override backend.model_id")
        p.add_argument("--cache-dir", help="response cache directory")
        p.add_argument("--parallelism", type=int, help="claims in flight and HTTP concurrency bound")

    def flag_overrides(p: argparse.ArgumentParser) -> None:
        for name in ("relations", "infore", "context"):
            g = p.add_mutually_exclusive_group()
            g.add_argument(f"--{name}", action="store_true", help=f"force-enable {name}")
            g.add_argument(f"--no-{name}", action="store_true", help=f"disable {name}")

    p = sub.add_parser("verify", help="run the full pipeline and score against gold labels")
    common(p)
    flag_overrides(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("ablate", help="run all six relation/InfoRE/context configurations")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("extract-relations", help="relation extraction and closure only")
    common(p)
    p.set_defaults(func=cmd_extract_relations)

    p = sub.add_parser("reorganize", help="InfoRE evidence reorganization only")
    common(p)
    p.set_defaults(func=cmd_reorganize)

    p = sub.add_parser("score", help="re-score an existing traces file")
    common(p, run=False)
    p.add_argument("--traces", required=True)
    p.add_argument("--dataset", action="append", help="configured dataset holding the gold labels")
    p.add_argument("--records", help="canonical ClaimRecord JSON Lines with gold labels")
    p.add_argument("--name", help="dataset name for the report")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("export-fewrel", help="write FewRel as instruction-tuning JSON Lines")
    common(p, run=False)
    p.add_argument("--input", help="FewRel JSON (relation -> instances)")
    p.add_argument("--output", help="destination JSON Lines")
    p.add_argument("--catalog", help="relation catalog for the instruction text")
    p.set_defaults(func=cmd_export_fewrel)

    p = sub.add_parser("record-replay", help="turn run logs into a replay store")
    common(p, run=False)
    p.add_argument("--log", action="append", required=True, help="run_log.jsonl (repeatable)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_record_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        if args.command in ("verify", "ablate", "extract-relations", "reorganize"):
            cfg = _apply_overrides(cfg, args)
        return args.func(cfg, args)
    except (ZefavError, OSError) as exc:
        print(f"zefav {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
