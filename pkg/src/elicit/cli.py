"""Command-line entry point wiring the full pipeline.

Subcommands: ingest, synth, run, replay, evaluate, validate, report, detect.
Exit codes: 0 success, 1 usage/validation error, 2 backend/transport failure.
All randomness flows from a single --seed per invocation.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

from . import __version__
from .backends import BackendConfig, BackendError, HttpBackend, RecordingBackend, ReplayBackend
from .bank import BankSchemaError, SynthSpec, ingest, synthesize_bank, write_bank
from .config import ConfigError, Settings, load_settings
from .detector import LlmDetector, RuleDetector
from .fidelity import FidelityConfig, InsufficientPatientsError, loo_validate
from .metrics import CorpusReport, NoValidLogsError, aggregate
from .ontology import TraitId, default_ontology, load_ontology
from .patient import EmissionParams
from .runner import EpisodeConfig, build_components, read_logs, run_batch, run_replay, write_logs


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract here is exit 1 plus help
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="elicit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[], help="validate a snippet bank file")
    p.add_argument("--in", dest="path", required=True)
    p.add_argument("--validate", action="store_true", help="accepted for compatibility; ingest always validates")

    p = sub.add_parser("synth", help="generate a synthetic snippet bank")
    p.add_argument("--patients", type=int, required=True)
    p.add_argument("--snippets", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile-seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--ontology", default=None)

    p = sub.add_parser("run", help="run assessment episodes against a bank")
    p.add_argument("--bank", required=True)
    p.add_argument("--mode", choices=["tpa", "random", "replay"], default="tpa")
    p.add_argument("--episodes", type=int, default=0, help="0 in replay mode means one per patient")
    p.add_argument("--turns", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--selector", choices=["heuristic", "llm"], default=None)
    p.add_argument("--realiser", choices=["template", "llm"], default=None)
    p.add_argument("--detector", choices=["rule", "llm"], default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--ontology", default=None)
    p.add_argument("--record", default=None, help="record backend traffic to this replay log")
    p.add_argument("--replay-log", default=None, help="serve backend traffic from this replay log")

    p = sub.add_parser("replay", help="replay an explicit transcript through detection")
    p.add_argument("--in", dest="path", required=True, help="JSON-lines of {question, response}")
    p.add_argument("--ground-truth", required=True, help="comma-separated trait ids, e.g. F2,F6")
    p.add_argument("--turns", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--detector", choices=["rule", "llm"], default="rule")
    p.add_argument("--config", default=None)
    p.add_argument("--ontology", default=None)

    p = sub.add_parser("evaluate", help="compute metrics over episode logs")
    p.add_argument("--logs", required=True)
    p.add_argument("--out", default=None, help="report JSON path")
    p.add_argument("--csv", default=None, help="per-episode CSV path")
    p.add_argument("--include-aborted", action="store_true")

    p = sub.add_parser("validate", help="leave-one-out patient-agent fidelity check")
    p.add_argument("--bank", required=True)
    p.add_argument("--episodes-per-patient", type=int, default=2)
    p.add_argument("--turns", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--ontology", default=None)

    p = sub.add_parser("report", help="emit frozen-schema CSVs from episode logs")
    p.add_argument("--logs", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--include-aborted", action="store_true")

    p = sub.add_parser("detect", help="run the trait detector over a transcript file")
    p.add_argument("--in", dest="path", required=True, help="JSON-lines of {question, response}")
    p.add_argument("--backend", choices=["rule", "llm"], default="rule")
    p.add_argument("--out", default=None, help="output JSON-lines path (default stdout)")
    p.add_argument("--config", default=None)
    p.add_argument("--ontology", default=None)

    return parser


def _load_ontology(path: str | None):
    return load_ontology(path) if path else default_ontology()


def _emission_from(settings: Settings) -> EmissionParams:
    return EmissionParams(
        M=settings.emitter_M,
        max_traits_per_turn=settings.emitter_max_traits,
        strategy_gain=settings.emitter_strategy_gain,
        affinity_enabled=settings.emitter_affinity_enabled,
        affinity_weight=settings.emitter_affinity_weight,
    )


def _make_client(settings: Settings, record: str | None, replay_log: str | None):
    if replay_log:
        return ReplayBackend(replay_log)
    client = HttpBackend(
        BackendConfig(
            endpoint=settings.backend_endpoint,
            model=settings.backend_model,
            embed_model=settings.backend_embed_model,
            timeout_s=settings.backend_timeout_s,
            max_concurrency=settings.backend_max_concurrency,
        )
    )
    if record:
        return RecordingBackend(inner=client, log_path=Path(record))
    return client


def _write_manifest(out_dir: Path, args_ns, settings: Settings, episode_ids, skipped, ontology_version: str) -> None:
    blob = json.dumps(
        {"seed": args_ns.seed, "mode": args_ns.mode, "settings": settings.to_dict()},
        sort_keys=True,
    )
    manifest = {
        "run_id": hashlib.sha256(blob.encode()).hexdigest()[:12],
        "mode": args_ns.mode,
        "seed": args_ns.seed,
        "turns": args_ns.turns,
        "episodes": sorted(episode_ids),
        "skipped": sorted(skipped),
        "settings": settings.to_dict(),
        "versions": {"artifact": __version__, "ontology": ontology_version},
        "created_unix": time.time(),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def _cmd_ingest(args) -> int:
    bank = ingest(args.path)
    for w in bank.warnings:
        print(f"warning: {w}", file=sys.stderr)
    by_patient = {p: len(v) for p, v in sorted(bank.by_patient.items())}
    print(json.dumps({"snippets": len(bank), "patients": by_patient}, sort_keys=True))
    return 0


def _cmd_synth(args) -> int:
    ont = _load_ontology(args.ontology)
    spec = SynthSpec(
        n_patients=args.patients,
        snippets_per_patient=args.snippets,
        trait_profile_seed=args.profile_seed,
    )
    bank = synthesize_bank(spec, seed=args.seed, ontology=ont)
    write_bank(bank, args.out)
    print(f"wrote {len(bank)} snippets for {args.patients} patients to {args.out}")
    return 0


def _cmd_run(args) -> int:
    settings = load_settings(args.config)
    if args.selector:
        settings.selector_kind = args.selector
    if args.realiser:
        settings.realiser_kind = args.realiser
    if args.detector:
        settings.detector_kind = args.detector
    ont = _load_ontology(args.ontology or settings.ontology_path)
    bank = ingest(args.bank)
    if not len(bank):
        print("error: bank is empty", file=sys.stderr)
        return 1

    cfg = EpisodeConfig(
        max_turns=args.turns,
        tau=settings.tau,
        seed=args.seed,
        selector_kind=settings.selector_kind,
        realiser_kind=settings.realiser_kind,
        detector_kind=settings.detector_kind,
        encoder_kind=settings.encoder_kind,
        emission=_emission_from(settings),
        selector_temperature=settings.selector_temperature,
        realiser_temperature=settings.realiser_temperature,
        prompt_dir=settings.selector_prompt_dir,
    )
    needs_client = "llm" in (settings.selector_kind, settings.realiser_kind, settings.detector_kind)
    client = _make_client(settings, args.record, args.replay_log) if needs_client else None
    components = build_components(cfg, bank, ont, client=client)

    n_episodes = args.episodes
    if args.mode != "replay" and n_episodes < 1:
        print("error: --episodes must be >= 1 for this mode", file=sys.stderr)
        return 1
    result = run_batch(cfg, bank, args.mode, n_episodes, parallel=args.parallel, components=components)
    out_dir = Path(args.out)
    write_logs(result, out_dir)
    _write_manifest(out_dir, args, settings, [l.episode_id for l in result.logs], result.skipped, ont.version)
    aborted = sum(1 for l in result.logs if l.aborted)
    print(f"wrote {len(result.logs)} episode logs to {out_dir} ({aborted} aborted, {len(result.skipped)} skipped)")
    if result.logs and aborted == len(result.logs):
        print("error: every episode aborted on backend failure", file=sys.stderr)
        return 2
    return 0


def _parse_ground_truth(text: str) -> frozenset[TraitId]:
    return frozenset(TraitId.parse(tok.strip()) for tok in text.split(",") if tok.strip())


def _read_transcript(path: str) -> list[tuple[str, str]]:
    pairs = []
    for line_no, raw in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        obj = json.loads(raw)
        if "question" not in obj or "response" not in obj:
            raise BankSchemaError(line_no, "transcript lines need question and response")
        pairs.append((obj["question"], obj["response"]))
    return pairs


def _cmd_replay(args) -> int:
    settings = load_settings(args.config)
    ont = _load_ontology(args.ontology or settings.ontology_path)
    transcript = _read_transcript(args.path)
    if not transcript:
        print("error: transcript is empty", file=sys.stderr)
        return 1
    gt = _parse_ground_truth(args.ground_truth)
    if not gt:
        print("error: ground truth is empty", file=sys.stderr)
        return 1
    cfg = EpisodeConfig(max_turns=args.turns, detector_kind=args.detector)
    client = _make_client(settings, None, None) if args.detector == "llm" else None
    components = build_components(dataclasses.replace(cfg, selector_kind="heuristic"), None, ont, client=client)
    log = run_replay(transcript, gt, cfg, components, episode_id="replay-0000-manual")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{log.episode_id}.json").write_text(log.to_json() + "\n", encoding="utf-8")
    print(f"wrote replay log to {out_dir}")
    return 0


def _write_episode_csv(report: CorpusReport, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode_id", "patient_id", "coverage", "precision", "recall", "f1", "aucc"])
        for e in report.episodes:
            writer.writerow(
                [e.episode_id, e.patient_id, f"{e.coverage:.6f}", f"{e.precision:.6f}",
                 f"{e.recall:.6f}", f"{e.f1:.6f}", f"{e.aucc:.6f}"]
            )
        writer.writerow([])
        writer.writerow(["corpus", "", f"{report.mean_coverage:.6f}", f"{report.mean_precision:.6f}",
                         f"{report.mean_recall:.6f}", f"{report.mean_f1:.6f}", f"{report.mean_aucc:.6f}"])


def _write_curves_csv(report: CorpusReport, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["turn", "mean_cov", "ci95_low", "ci95_high"])
        for i, (m, ci) in enumerate(zip(report.per_turn_mean_coverage, report.per_turn_ci95), start=1):
            writer.writerow([i, f"{m:.6f}", f"{max(m - ci, 0.0):.6f}", f"{min(m + ci, 1.0):.6f}"])


def _write_strategy_csv(report: CorpusReport, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phase", "strategy", "proportion"])
        for label, prop in report.strategy_distribution.items():
            writer.writerow(["overall", label, f"{prop:.6f}"])
        for phase, dist in report.phase_distribution.items():
            for label, prop in dist.items():
                writer.writerow([phase, label, f"{prop:.6f}"])


def _cmd_evaluate(args) -> int:
    logs = read_logs(args.logs)
    report = aggregate(logs, include_aborted=args.include_aborted)
    doc = json.dumps(report.to_dict(), sort_keys=True, indent=1)
    if args.out:
        Path(args.out).write_text(doc + "\n", encoding="utf-8")
    else:
        print(doc)
    if args.csv:
        _write_episode_csv(report, Path(args.csv))
        _write_curves_csv(report, Path(args.csv).with_name("curves.csv"))
    print(
        f"episodes={report.n_episodes} coverage={report.mean_coverage:.3f} "
        f"f1={report.mean_f1:.3f} aucc={report.mean_aucc:.3f}",
        file=sys.stderr,
    )
    return 0


def _cmd_validate(args) -> int:
    ont = _load_ontology(args.ontology)
    bank = ingest(args.bank)
    cfg = FidelityConfig(
        episodes_per_patient=args.episodes_per_patient, turns=args.turns, seed=args.seed
    )
    report = loo_validate(bank, cfg, ont)
    doc = json.dumps(report.to_dict(), sort_keys=True, indent=1)
    if args.out:
        Path(args.out).write_text(doc + "\n", encoding="utf-8")
    else:
        print(doc)
    flags = " ".join(f"{k}={'pass' if v else 'FAIL'}" for k, v in report.thresholds_met.items())
    print(f"patients={report.n_patients} {flags}", file=sys.stderr)
    return 0


def _cmd_report(args) -> int:
    logs = read_logs(args.logs)
    report = aggregate(logs, include_aborted=args.include_aborted)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_episode_csv(report, out_dir / "report.csv")
    _write_curves_csv(report, out_dir / "curves.csv")
    _write_strategy_csv(report, out_dir / "strategy_dist.csv")
    print(f"wrote report.csv, curves.csv, strategy_dist.csv to {out_dir}")
    return 0


def _cmd_detect(args) -> int:
    settings = load_settings(args.config)
    ont = _load_ontology(args.ontology or settings.ontology_path)
    if args.backend == "rule":
        detector = RuleDetector(ont)
    else:
        detector = LlmDetector(_make_client(settings, None, None), ont)
    out_fh = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for question, response in _read_transcript(args.path):
            result = detector.detect(question, response)
            out_fh.write(json.dumps(result.to_dict(), sort_keys=True) + "\n")
    finally:
        if args.out:
            out_fh.close()
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "synth": _cmd_synth,
    "run": _cmd_run,
    "replay": _cmd_replay,
    "evaluate": _cmd_evaluate,
    "validate": _cmd_validate,
    "report": _cmd_report,
    "detect": _cmd_detect,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except BackendError as e:
        print(f"backend error: {e}", file=sys.stderr)
        return 2
    except (BankSchemaError, ConfigError, NoValidLogsError, InsufficientPatientsError,
            FileNotFoundError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
