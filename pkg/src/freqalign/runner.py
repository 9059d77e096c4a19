"""Batch execution: attacks over source/target pairs, sweeps, defense evaluation and reports.

Work is split per (row, pair) task and may run in a process pool; results are
gathered and written by the parent in task order, so the output files do not
depend on ``parallelism``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attack import run_attack
from .config import RunConfig, to_text
from .defenses import defend
from .evaluation import holdout_similarity
from .imageio import load_image, load_tensor, save_image, save_tensor
from .rng import derive_seed
from .synthetic import smooth_image

logger = logging.getLogger(__name__)

CSV_VERSION = "# freqalign metrics v1"
METRIC_COLUMNS = [
    "row",
    "pair",
    "pair_seed",
    "source",
    "target",
    "defense",
    "holdout",
    "sim_adv_target",
    "sim_adv_source",
    "success",
    "final_total_loss",
    "linf",
    "budget_violations",
    "range_ok",
]


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


@dataclass(frozen=True)
class PairInput:
    index: int
    seed: int
    source_name: str
    target_name: str
    source: np.ndarray | None
    target: np.ndarray | None
    error: str | None = None


@dataclass
class PairResult:
    row: int
    pair: PairInput
    adversarial: np.ndarray | None = None
    trace: list = field(default_factory=list)
    records: list = field(default_factory=list)
    error: str | None = None


def load_pairs(cfg: RunConfig) -> list[PairInput]:
    """Pairs from the config, or seeded synthetic pairs when none are listed."""
    pairs = []
    if cfg.pairs:
        for i, (src, tgt) in enumerate(cfg.pairs):
            seed = derive_seed(cfg.master_seed, i)
            try:
                pairs.append(PairInput(i, seed, src, tgt, load_image(src), load_image(tgt)))
            except (OSError, ValueError) as exc:
                pairs.append(PairInput(i, seed, src, tgt, None, None, f"{type(exc).__name__}: {exc}"))
        return pairs
    for i in range(cfg.synthetic_pairs):
        seed = derive_seed(cfg.master_seed, i)
        src = smooth_image(derive_seed(seed, 0), cfg.image_size)
        tgt = smooth_image(derive_seed(seed, 1), cfg.image_size)
        pairs.append(PairInput(i, seed, f"synthetic:{i}:source", f"synthetic:{i}:target", src, tgt))
    return pairs


def evaluate_adversarial(cfg: RunConfig, pair: PairInput, adversarial, defenses=True) -> list[dict]:
    """Holdout records for the raw adversarial image and each configured defense."""
    variants = [("none", adversarial)]
    if defenses:
        variants += [(d.label, defend(adversarial, d)) for d in cfg.defenses]
    records = []
    for label, image in variants:
        for h_idx, holdout in enumerate(cfg.holdouts):
            rec = holdout_similarity(image, pair.source, pair.target, holdout, cfg.ensemble)
            records.append(
                {
                    "defense": label,
                    "holdout": f"{h_idx}:{holdout.kind}:p{holdout.patch_size}:s{holdout.seed}",
                    "sim_adv_target": rec.sim_adv_target,
                    "sim_adv_source": rec.sim_adv_source,
                    "success": rec.success,
                }
            )
    return records


def _attack_task(args) -> PairResult:
    row, cfg, pair, with_defenses = args
    result = PairResult(row, pair)
    if pair.error:
        result.error = pair.error
        return result
    try:
        adv, trace = run_attack(pair.source, pair.target, cfg.attack, cfg.ensemble)
        result.adversarial = adv
        result.trace = trace
        result.records = evaluate_adversarial(cfg, pair, adv, with_defenses)
    except Exception as exc:  # a failing pair is reported, not fatal
        logger.exception("pair %d failed", pair.index)
        result.error = f"{type(exc).__name__}: {exc}"
    return result


def _map(tasks, fn, parallelism: int):
    if parallelism <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(fn, tasks))


def budget_violations(cfg: RunConfig, trace: list) -> int:
    return sum(rec["delta_linf"] > cfg.attack.epsilon for rec in trace)


def metric_rows(cfg: RunConfig, result: PairResult) -> list[dict]:
    pair = result.pair
    base = {"row": result.row, "pair": pair.index, "pair_seed": pair.seed, "source": pair.source_name, "target": pair.target_name}
    if result.error:
        return []
    adv = result.adversarial
    linf = float(np.abs(adv - pair.source).max())
    common = {
        "final_total_loss": result.trace[-1]["total_loss"] if result.trace else float("nan"),
        "linf": linf,
        "budget_violations": budget_violations(cfg, result.trace) + int(linf > cfg.attack.epsilon),
        "range_ok": bool(adv.min() >= 0.0 and adv.max() <= 1.0),
    }
    return [{**base, **rec, **common} for rec in result.records]


def write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    buf.write(CSV_VERSION + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    path.write_text(buf.getvalue())


def summarize(rows: list[dict], group_keys: tuple[str, ...]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in group_keys), []).append(r)
    out = []
    for key, members in groups.items():
        out.append(
            {
                **dict(zip(group_keys, key)),
                "n_pairs": len(members),
                "mean_sim": float(np.mean([m["sim_adv_target"] for m in members])),
                "mean_sim_source": float(np.mean([m["sim_adv_source"] for m in members])),
                "success_rate": sum(m["success"] for m in members) / len(members),
                "budget_violations": sum(m["budget_violations"] for m in members),
            }
        )
    return out


SUMMARY_TAIL = ["n_pairs", "mean_sim", "mean_sim_source", "success_rate", "budget_violations"]


def _write_trace(path: Path, trace: list) -> None:
    path.write_text("".join(json.dumps(rec, sort_keys=True) + "\n" for rec in trace))


def _write_pair_artifacts(out: Path, result: PairResult) -> None:
    stem = f"pair_{result.pair.index:03d}"
    (out / "adv").mkdir(parents=True, exist_ok=True)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    save_tensor(out / "adv" / f"{stem}.frat", result.adversarial)
    if result.adversarial.shape[2] == 3:
        save_image(out / "adv" / f"{stem}.ppm", result.adversarial)
    _write_trace(out / "traces" / f"{stem}.jsonl", result.trace)


@dataclass
class BatchOutcome:
    rows: list[dict]
    failures: list[tuple[int, str]]
    n_pairs: int

    @property
    def exit_code(self) -> int:
        return 1 if self.n_pairs and len(self.failures) == self.n_pairs else 0


def run_batch(cfg: RunConfig, pairs: list[PairInput] | None = None, defenses: bool = True) -> BatchOutcome:
    """Attack every pair, save adversarial images and traces, write metrics and summary CSVs."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = load_pairs(cfg) if pairs is None else pairs
    (out / "effective_config.txt").write_text(to_text(cfg))
    results = _map([(0, cfg, p, defenses) for p in pairs], _attack_task, cfg.parallelism)
    rows, failures = [], []
    for res in results:
        if res.error:
            failures.append((res.pair.index, res.error))
            continue
        _write_pair_artifacts(out, res)
        rows.extend(metric_rows(cfg, res))
    columns = METRIC_COLUMNS
    write_csv(out / "metrics.csv", columns, rows)
    write_csv(out / "summary.csv", ["defense", "holdout", *SUMMARY_TAIL], summarize(rows, ("defense", "holdout")))
    _write_failures(out, failures)
    return BatchOutcome(rows, failures, len(pairs))


def _write_failures(out: Path, failures) -> None:
    path = out / "failures.txt"
    if failures:
        path.write_text("".join(f"pair {i}: {msg}\n" for i, msg in failures))
    elif path.exists():
        path.unlink()


def run_sweep(cfg: RunConfig, pairs: list[PairInput] | None = None, defenses: bool = False) -> BatchOutcome:
    """Vary ``cfg.sweep_param`` over ``cfg.sweep_values`` with the pairs held fixed."""
    if not cfg.sweep_param or not cfg.sweep_values:
        raise ValueError("sweep needs sweep.param and sweep.values")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = load_pairs(cfg) if pairs is None else pairs
    row_cfgs = [cfg.with_value(cfg.sweep_param, v) for v in cfg.sweep_values]
    tasks = [(r, rc, p, defenses) for r, rc in enumerate(row_cfgs) for p in pairs]
    results = _map(tasks, _attack_task, cfg.parallelism)
    rows, failures = [], []
    for res in results:
        if res.error:
            failures.append((res.pair.index, f"row {res.row}: {res.error}"))
            continue
        for rec in metric_rows(row_cfgs[res.row], res):
            rec["param"] = cfg.sweep_param
            rec["value"] = cfg.sweep_values[res.row]
            rows.append(rec)
    for r, rc in enumerate(row_cfgs):
        row_dir = out / f"row_{r:02d}"
        row_dir.mkdir(exist_ok=True)
        (row_dir / "effective_config.txt").write_text(to_text(rc))
        write_csv(row_dir / "metrics.csv", METRIC_COLUMNS, [x for x in rows if x["row"] == r])
    write_csv(out / "sweep_metrics.csv", ["param", "value", *METRIC_COLUMNS], rows)
    summary = summarize(rows, ("row", "param", "value", "defense", "holdout"))
    write_csv(out / "sweep_summary.csv", ["row", "param", "value", "defense", "holdout", *SUMMARY_TAIL], summary)
    _write_failures(out, failures)
    return BatchOutcome(rows, failures, len(tasks))


def defend_eval(cfg: RunConfig, adversarial_dir: Path | None = None) -> BatchOutcome:
    """Apply each configured defense to adversarial images and report holdout metrics.

    Adversarial images are read from ``adversarial_dir/adv/pair_NNN.frat`` when
    given (as written by :func:`run_batch`); otherwise the attack is run first.
    """
    out = Path(cfg.output_dir)
    if adversarial_dir is None:
        return run_batch(cfg, defenses=True)
    out.mkdir(parents=True, exist_ok=True)
    rows, failures = [], []
    pairs = load_pairs(cfg)
    for pair in pairs:
        try:
            if pair.error:
                raise ValueError(pair.error)
            adv = load_tensor(Path(adversarial_dir) / "adv" / f"pair_{pair.index:03d}.frat")
            records = evaluate_adversarial(cfg, pair, adv, defenses=True)
        except Exception as exc:
            failures.append((pair.index, f"{type(exc).__name__}: {exc}"))
            continue
        res = PairResult(0, pair, adv, [], records)
        rows.extend(metric_rows(cfg, res))
    write_csv(out / "defense_metrics.csv", METRIC_COLUMNS, rows)
    write_csv(out / "defense_summary.csv", ["defense", "holdout", *SUMMARY_TAIL], summarize(rows, ("defense", "holdout")))
    _write_failures(out, failures)
    return BatchOutcome(rows, failures, len(pairs))
