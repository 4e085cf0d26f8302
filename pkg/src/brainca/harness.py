"""Condition sweeps, per-condition summaries and pairwise test reports."""

from __future__ import annotations

import csv
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from itertools import permutations
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import lander_control, morphogenesis
from .records import RunRecord, append_record, read_records, write_records
from .rng import Rng
from .stats import SurvivalData, fisher_exact_one_sided, log_rank_one_sided, permutation_test_rmst, rmst

log = logging.getLogger(__name__)

TASKS = {
    "morpho": (morphogenesis.MorphConfig, morphogenesis.train_morph, morphogenesis.CONDITION_LABELS),
    "lander": (lander_control.ControlConfig, lander_control.train_lander, lander_control.CONDITION_LABELS),
}
DIRECTION_NOTE = ("one-sided tests: the first condition of each pair is better "
                  "(faster by log-rank/RMST, higher success rate by Fisher)")


CURVE_COLUMNS = ("episode", "train_reward", "eval_reward", "loss", "entropy_mean")


def _run_one(task: str, cfg, curve_dir=None) -> RunRecord:
    _, train, _ = TASKS[task]
    try:
        if curve_dir is None or task != "lander":
            return train(cfg)
        path = Path(curve_dir) / f"curve_{cfg.condition}_{cfg.seed}.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(CURVE_COLUMNS)
            return train(cfg, callback=lambda ep, tr, ev, loss, ent: w.writerow(
                [ep, repr(float(tr)), "" if ev is None else repr(float(ev)), repr(float(loss)), repr(ent)]))
    except Exception as e:  # a failed run is recorded, the sweep goes on
        return RunRecord(task, cfg.condition, cfg.seed, False, cfg.max_episodes, 0,
                         config_digest=cfg.digest(), error=f"{type(e).__name__}: {e}")


def run_condition_sweep(task: str, conditions: Sequence[str], seeds: Sequence[int],
                        base=None, parallelism: int = 1, store=None,
                        curve_dir=None) -> List[RunRecord]:
    """Train every (condition, seed) pair and return records sorted by (condition, seed).

    With ``store`` (a JSON-lines path) finished pairs already in the file are
    skipped and new records are merged into it when the sweep completes.
    Lander runs also write a per-episode training curve CSV under ``curve_dir``.
    """
    cfg_cls, _, _ = TASKS[task]
    base = base if base is not None else cfg_cls()
    existing = {(r.condition, r.seed): r for r in read_records(store)} if store else {}
    todo = [replace(base, condition=c, seed=s) for c in conditions for s in seeds
            if (c, s) not in existing]
    done: List[RunRecord] = []
    if parallelism > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            done = list(pool.map(_run_one, [task] * len(todo), todo, [curve_dir] * len(todo)))
    else:
        for cfg in todo:
            rec = _run_one(task, cfg, curve_dir)
            log.info("%s %s seed=%d success=%s episodes=%d", task, rec.condition, rec.seed,
                     rec.success, rec.episodes_to_success)
            if store:
                append_record(store, rec)
            done.append(rec)
    merged = dict(existing)
    merged.update({(r.condition, r.seed): r for r in done})
    out = sorted(merged.values(), key=lambda r: (r.condition, r.seed))
    if store:
        write_records(store, out)
    wanted = {(c, s) for c in conditions for s in seeds}
    return [r for r in out if (r.condition, r.seed) in wanted]


@dataclass
class ConditionSummary:
    condition: str
    label: str
    n_runs: int
    successes: int
    success_rate: float
    mean_episodes: float
    std_episodes: float
    rmst: float


def summarize(records: Sequence[RunRecord], tau: float) -> List[ConditionSummary]:
    out = []
    for cond in sorted({r.condition for r in records}):
        rs = [r for r in records if r.condition == cond]
        ok = np.array([r.episodes_to_success for r in rs if r.success and r.episodes_to_success <= tau],
                      dtype=np.float64)
        labels = TASKS[rs[0].task][2] if rs[0].task in TASKS else {}
        out.append(ConditionSummary(
            cond, labels.get(cond, cond), len(rs), int(ok.size), ok.size / len(rs),
            float(ok.mean()) if ok.size else float("nan"),
            float(ok.std(ddof=1)) if ok.size > 1 else float("nan"),
            rmst(SurvivalData.from_records(rs, tau), tau)))
    return out


def pairwise_tests(records: Sequence[RunRecord], tau: float, n_perm: int = 49_999, seed: int = 0):
    """Every ordered pair of conditions, first argument as the claimed-better one."""
    by_cond: Dict[str, List[RunRecord]] = {}
    for r in records:
        by_cond.setdefault(r.condition, []).append(r)
    rows = []
    for k, (a, b) in enumerate(permutations(sorted(by_cond), 2)):
        ra, rb = by_cond[a], by_cond[b]
        sa, sb = SurvivalData.from_records(ra, tau), SurvivalData.from_records(rb, tau)
        try:
            lr = log_rank_one_sided(sa, sb)
        except ValueError:
            lr = float("nan")
        labels = TASKS[ra[0].task][2] if ra[0].task in TASKS else {}
        rows.append({
            "first": a, "second": b,
            "comparison": f"{labels.get(a, a)} vs {labels.get(b, b)}",
            "rmst_first": rmst(sa, tau), "rmst_second": rmst(sb, tau),
            "logrank_p": lr,
            "rmst_perm_p": permutation_test_rmst(sa, sb, n_perm, tau, Rng(seed).spawn(k)),
            "fisher_p": fisher_exact_one_sided(sum(r.success for r in ra), len(ra),
                                               sum(r.success for r in rb), len(rb)),
        })
    return rows


def emit_report(records: Sequence[RunRecord], tau: float, out_dir, n_perm: int = 49_999,
                seed: int = 0) -> Dict[str, Path]:
    """Write summary.csv, report.txt, pairwise.csv and episodes.csv under ``out_dir``."""
    if not records:
        raise ValueError("no records to report")
    for task in {r.task for r in records}:
        caps = {r.config.get("max_episodes") for r in records if r.task == task and r.config}
        if any(c is not None and c < tau for c in caps):
            warnings.warn(f"{task}: training cap below the censoring horizon tau={tau}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(records, tau)
    pairs = pairwise_tests(records, tau, n_perm, seed)
    paths = {k: out / f"{k}.{ext}" for k, ext in
             (("summary", "csv"), ("report", "txt"), ("pairwise", "csv"), ("episodes", "csv"))}

    with open(paths["summary"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([fl.name for fl in fields(ConditionSummary)])
        for s in summary:
            w.writerow([getattr(s, fl.name) for fl in fields(ConditionSummary)])

    with open(paths["pairwise"], "w", newline="") as f:
        cols = ["first", "second", "comparison", "rmst_first", "rmst_second",
                "logrank_p", "rmst_perm_p", "fisher_p"]
        w = csv.DictWriter(f, fieldnames=cols)
        w.writeheader()
        w.writerows(pairs)

    with open(paths["episodes"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["condition", "seed", "success", "episodes_to_success"])
        for r in sorted(records, key=lambda r: (r.condition, r.seed)):
            w.writerow([r.condition, r.seed, int(r.success), r.episodes_to_success])

    lines = [f"censoring horizon tau = {tau:g}; permutations = {n_perm}", DIRECTION_NOTE, ""]
    lines.append(f"{'condition':<24}{'runs':>6}{'success':>9}{'mean':>10}{'std':>10}{'RMST':>10}")
    for s in summary:
        lines.append(f"{s.label:<24}{s.n_runs:>6}{s.success_rate:>9.3f}{s.mean_episodes:>10.1f}"
                     f"{s.std_episodes:>10.1f}{s.rmst:>10.1f}")
    if pairs:
        lines += ["", f"{'comparison':<48}{'log-rank p':>12}{'RMST perm p':>13}{'Fisher p':>11}"]
        for p in pairs:
            lines.append(f"{p['comparison']:<48}{p['logrank_p']:>12.3g}{p['rmst_perm_p']:>13.3g}"
                         f"{p['fisher_p']:>11.3g}")
    paths["report"].write_text("\n".join(lines) + "\n")
    return paths
