"""Episode- and corpus-level evaluation metrics.

All quantities are recomputed from the logged per-turn belief snapshots, not
from the runner's own coverage bookkeeping, so a report is an independent
reading of the raw logs. Episode scores are pooled as the unweighted mean
over episodes; a patient-level aggregation (mean within patient, then across
patients) is always emitted alongside to make the pooling convention visible.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass

from .ontology import STRATEGY_ORDER, TraitId
from .runner import EpisodeLog

PHASES: tuple[tuple[str, int, int], ...] = (("early", 1, 5), ("mid", 6, 12), ("late", 13, 20))


class EmptyGroundTruthError(ValueError):
    pass


class NoValidLogsError(ValueError):
    pass


@dataclass(frozen=True)
class EpisodeMetrics:
    episode_id: str
    patient_id: str
    coverage: float
    precision: float
    recall: float
    f1: float
    aucc: float
    per_turn_coverage: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "patient_id": self.patient_id,
            "coverage": self.coverage,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "aucc": self.aucc,
            "per_turn_coverage": list(self.per_turn_coverage),
        }


def confirmed_sets(log: EpisodeLog) -> list[frozenset[TraitId]]:
    """Cumulative confirmed set after each recorded turn, from belief snapshots."""
    out = []
    for turn in log.turns:
        out.append(
            frozenset(
                TraitId.parse(name)
                for name, entry in turn.belief_snapshot.items()
                if entry["confirmed"]
            )
        )
    return out


def episode_metrics(log: EpisodeLog) -> EpisodeMetrics:
    gt = log.ground_truth
    if not gt:
        raise EmptyGroundTruthError(f"{log.episode_id}: empty ground truth")
    per_turn = [len(c & gt) / len(gt) for c in confirmed_sets(log)]
    final_cov = per_turn[-1] if per_turn else 0.0
    # short episodes carry their final coverage forward to the turn budget
    padded = per_turn + [final_cov] * (log.max_turns - len(per_turn))
    padded = padded[: log.max_turns]

    detected = log.final_confirmed
    tp = detected & gt
    fp = detected - gt
    fn = gt - detected
    precision = len(tp) / (len(tp) + len(fp)) if (tp or fp) else 0.0
    recall = len(tp) / (len(tp) + len(fn))
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    aucc = sum(padded) / len(padded)
    return EpisodeMetrics(
        episode_id=log.episode_id,
        patient_id=log.patient_id,
        coverage=final_cov,
        precision=precision,
        recall=recall,
        f1=f1,
        aucc=aucc,
        per_turn_coverage=tuple(padded),
    )


def gain_rate(logs: list[EpisodeLog], strategy) -> float | None:
    """Fraction of a strategy's turns that raised cumulative coverage.

    Pooled across all episodes and turns jointly; None when the strategy was
    never used (the rate is undefined, not zero).
    """
    label = strategy.value if hasattr(strategy, "value") else str(strategy)
    used = 0
    effective = 0
    for log in logs:
        gt = log.ground_truth
        prev = 0.0
        for confirmed, turn in zip(confirmed_sets(log), log.turns):
            cov = len(confirmed & gt) / len(gt)
            if turn.strategy == label:
                used += 1
                if cov > prev:
                    effective += 1
            prev = cov
    if used == 0:
        return None
    return effective / used


def _phase_of(turn_no: int) -> str:
    for name, lo, hi in PHASES:
        if lo <= turn_no <= hi:
            return name
    return PHASES[-1][0]


def _distribution(counts: dict[str, int]) -> dict[str, float]:
    total = sum(counts.values())
    if total == 0:
        return {}
    return {label: n / total for label, n in sorted(counts.items())}


@dataclass(frozen=True)
class CorpusReport:
    n_episodes: int
    mean_coverage: float
    mean_precision: float
    mean_recall: float
    mean_f1: float
    mean_aucc: float
    by_patient: dict
    gain_rates: dict[str, float | None]
    strategy_distribution: dict[str, float]
    phase_distribution: dict[str, dict[str, float]]
    per_turn_mean_coverage: tuple[float, ...]
    per_turn_ci95: tuple[float, ...]
    episodes: tuple[EpisodeMetrics, ...]

    def to_dict(self) -> dict:
        return {
            "n_episodes": self.n_episodes,
            "mean_coverage": self.mean_coverage,
            "mean_precision": self.mean_precision,
            "mean_recall": self.mean_recall,
            "mean_f1": self.mean_f1,
            "mean_aucc": self.mean_aucc,
            "by_patient": self.by_patient,
            "gain_rates": self.gain_rates,
            "strategy_distribution": self.strategy_distribution,
            "phase_distribution": self.phase_distribution,
            "per_turn_mean_coverage": list(self.per_turn_mean_coverage),
            "per_turn_ci95": list(self.per_turn_ci95),
            "episodes": [e.to_dict() for e in self.episodes],
        }


def ci95_halfwidth(values: list[float]) -> float:
    if len(values) < 2:
        return 0.0
    return 1.96 * statistics.stdev(values) / math.sqrt(len(values))


def aggregate(logs: list[EpisodeLog], include_aborted: bool = False) -> CorpusReport:
    usable = [l for l in logs if include_aborted or not l.aborted]
    if not usable:
        raise NoValidLogsError("no non-aborted episode logs to aggregate")

    episodes = tuple(episode_metrics(l) for l in usable)

    def mean(attr: str) -> float:
        return sum(getattr(e, attr) for e in episodes) / len(episodes)

    per_patient: dict[str, list[EpisodeMetrics]] = {}
    for e in episodes:
        per_patient.setdefault(e.patient_id, []).append(e)
    by_patient = {
        "n_patients": len(per_patient),
        "mean_coverage": statistics.mean(
            statistics.mean(x.coverage for x in group) for group in per_patient.values()
        ),
        "mean_f1": statistics.mean(
            statistics.mean(x.f1 for x in group) for group in per_patient.values()
        ),
        "mean_aucc": statistics.mean(
            statistics.mean(x.aucc for x in group) for group in per_patient.values()
        ),
    }

    labels = {s.value for s in STRATEGY_ORDER}
    seen_labels = {t.strategy for l in usable for t in l.turns}
    labels |= seen_labels
    rates = {label: gain_rate(usable, label) for label in sorted(labels)}

    overall_counts: dict[str, int] = {}
    phase_counts: dict[str, dict[str, int]] = {name: {} for name, _, _ in PHASES}
    for l in usable:
        for t in l.turns:
            overall_counts[t.strategy] = overall_counts.get(t.strategy, 0) + 1
            pc = phase_counts[_phase_of(t.turn)]
            pc[t.strategy] = pc.get(t.strategy, 0) + 1

    horizon = max(len(e.per_turn_coverage) for e in episodes)
    per_turn_mean = []
    per_turn_ci = []
    for i in range(horizon):
        column = [
            e.per_turn_coverage[i] if i < len(e.per_turn_coverage) else e.per_turn_coverage[-1]
            for e in episodes
        ]
        per_turn_mean.append(sum(column) / len(column))
        per_turn_ci.append(ci95_halfwidth(column))

    return CorpusReport(
        n_episodes=len(episodes),
        mean_coverage=mean("coverage"),
        mean_precision=mean("precision"),
        mean_recall=mean("recall"),
        mean_f1=mean("f1"),
        mean_aucc=mean("aucc"),
        by_patient=by_patient,
        gain_rates=rates,
        strategy_distribution=_distribution(overall_counts),
        phase_distribution={name: _distribution(c) for name, c in phase_counts.items()},
        per_turn_mean_coverage=tuple(per_turn_mean),
        per_turn_ci95=tuple(per_turn_ci),
        episodes=episodes,
    )
