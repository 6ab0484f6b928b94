"""Run orchestration and CSV emission.

Per seed ``n`` a run directory holds:

- ``metrics_seed<n>.csv``: one row per training-progress snapshot
- ``final_seed<n>.csv``: one row per final evaluation episode
- ``ckpt_seed<n>_<tag>.txt``: tensor checkpoints (``final`` plus periodic ones)

and, across seeds, ``aggregate.csv`` (per-episode mean/std of every metric,
computed from the per-seed files as written) and ``final_aggregate.csv``.

Metric CSV example (floats use 9 significant digits, ``nan`` marks metrics
that do not apply, e.g. pole angles on FrozenLake)::

    seed,episode,return,success,max_angle_deg,risk_severity_deg,unsafe_episode,unsafe_visits,max_q_s0,mc_return
    0,1,0,0,nan,nan,0,0,0,0
"""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .metrics import fmt_float
from .runner import RECORD_FIELDS, ExperimentConfig, run_seed

INT_FIELDS = ("seed", "episode")
METRIC_FIELDS = tuple(f for f in RECORD_FIELDS if f not in INT_FIELDS)
MASTER_SEED_ENV = "SAFEQ_MASTER_SEED"


def write_records(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([str(int(r[k])) if k in INT_FIELDS else fmt_float(r[k]) for k in RECORD_FIELDS])


def read_records(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and tuple(rows[0].keys()) != RECORD_FIELDS:
        raise ValueError(f"{path}: unexpected columns {list(rows[0].keys())}")
    return [{k: int(r[k]) if k in INT_FIELDS else float(r[k]) for k in RECORD_FIELDS} for r in rows]


def _stats_rows(groups):
    rows = []
    for key in sorted(groups):
        recs = groups[key]
        row = [str(key), str(len(recs))]
        for m in METRIC_FIELDS:
            v = np.array([r[m] for r in recs], dtype=float)
            row += ["%.17g" % v.mean(), "%.17g" % v.std()]
        rows.append(row)
    return rows


def _stats_header(first):
    head = [first, "n"]
    for m in METRIC_FIELDS:
        head += [f"{m}_mean", f"{m}_std"]
    return head


def write_aggregate(path, per_seed_paths):
    """Mean and population std of every metric across seeds, per episode index."""
    groups = {}
    for p in per_seed_paths:
        for r in read_records(p):
            groups.setdefault(r["episode"], []).append(r)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_stats_header("episode"))
        w.writerows(_stats_rows(groups))


def write_final_aggregate(path, final_paths):
    """Per-seed means of the final evaluation episodes, plus their mean/std across seeds."""
    per_seed = {}
    for p in final_paths:
        recs = read_records(p)
        per_seed[recs[0]["seed"]] = {m: float(np.mean([r[m] for r in recs])) for m in METRIC_FIELDS}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", *METRIC_FIELDS])
        for s in sorted(per_seed):
            w.writerow([str(s), *("%.17g" % per_seed[s][m] for m in METRIC_FIELDS)])
        for name, fn in (("mean", np.mean), ("std", np.std)):
            vals = [fn([per_seed[s][m] for s in per_seed]) for m in METRIC_FIELDS]
            w.writerow([name, *("%.17g" % v for v in vals)])


def resolve_seeds(cfg: ExperimentConfig, seed_offset=0):
    """Config seeds, or the master seed from the environment (expanded to as many seeds), plus an offset."""
    env = os.environ.get(MASTER_SEED_ENV)
    if env is not None:
        base = int(env)
        seeds = [base + i for i in range(len(cfg.seeds))]
    else:
        seeds = list(cfg.seeds)
    return [int(s) + int(seed_offset) for s in seeds]


def train(cfg: ExperimentConfig, out_dir, seed_offset=0, resume=True, log=None):
    """Train every seed, writing per-seed CSVs, checkpoints and the aggregates.

    With ``resume`` a seed whose final CSV and final checkpoint already exist
    is skipped, so an interrupted run can be restarted in place.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = resolve_seeds(cfg, seed_offset)
    (out / "config.json").write_text(json.dumps({**cfg.to_dict(), "seeds": seeds}, indent=2, sort_keys=True) + "\n")
    metric_paths, final_paths, results = [], [], []
    for s in seeds:
        mp, fp = out / f"metrics_seed{s}.csv", out / f"final_seed{s}.csv"
        metric_paths.append(mp)
        final_paths.append(fp)
        if resume and mp.exists() and fp.exists() and (out / f"ckpt_seed{s}_final.txt").exists():
            if log:
                log(f"seed {s}: already complete, skipping")
            continue
        res = run_seed(cfg, s, out)
        write_records(mp, res.records)
        write_records(fp, res.final_records)
        results.append(res)
        if log:
            ret = np.mean([r["return"] for r in res.final_records])
            log(f"seed {s}: final mean return {ret:.1f}, training unsafe visits {res.unsafe_visits}")
    write_aggregate(out / "aggregate.csv", metric_paths)
    write_final_aggregate(out / "final_aggregate.csv", final_paths)
    return results


def policy_from_checkpoint(path):
    """Rebuild ``(env, act, max_q, gamma)`` from a final checkpoint for evaluation."""
    from .behavior import PidDiscreteBehavior, smooth_rows
    from .envs import CARTPOLE_STATE_SCALE, CartPoleEnv, FrozenLakeEnv
    from .extract import TANH_MARGIN
    from .neural import DenseNet, load_checkpoint

    meta, t = load_checkpoint(path)
    cfg = ExperimentConfig.from_dict(meta["config"])
    lam, kind = cfg.resolved_lam, meta["kind"]
    greedy = meta.get("greedy", "argmax")

    def pick(q, prior):
        if greedy == "mode" and prior is not None:
            return int(np.argmax(q / lam + np.log(prior)))
        return int(np.argmax(q))

    if kind == "tabular":
        q, prior = t["q"], t.get("prior")
        act = lambda s: pick(q[s], None if prior is None else prior[s])  # noqa: E731
        return FrozenLakeEnv(), act, lambda s: float(q[s].max()), cfg.gamma

    scale = CARTPOLE_STATE_SCALE
    qnet = DenseNet.from_tensors(meta["spec"], t, "q")
    if kind == "dqn":
        if cfg.method != "safe":
            prior_fn = None
        elif "b.0" in t:
            bnet = DenseNet.from_tensors(meta["behavior_spec"], t, "b")

            def prior_fn(s):
                z = bnet.predict(np.atleast_2d(s) / scale)
                p = np.exp(z - z.max(axis=1, keepdims=True))
                return smooth_rows(p / p.sum(axis=1, keepdims=True), cfg.eta)[0]
        else:
            hc = PidDiscreteBehavior()
            prior_fn = lambda s: smooth_rows(hc.proba(s), cfg.eta)[0]  # noqa: E731
        qf = lambda s: qnet.predict(np.atleast_2d(s) / scale)[0]  # noqa: E731
        act = lambda s: pick(qf(s), None if prior_fn is None else prior_fn(s))  # noqa: E731
        return CartPoleEnv("discrete", cfg.horizon), act, lambda s: float(qf(s).max()), cfg.gamma

    pnet = DenseNet.from_tensors(meta["policy_spec"], t, "pi")
    m = TANH_MARGIN if meta.get("prior") == "distributional" else 0.0
    act = lambda s: np.clip(pnet.predict(np.atleast_2d(s) / scale)[0], -1 + m, 1 - m)  # noqa: E731
    grid = np.linspace(-1.0, 1.0, 101)[:, None]

    def max_q(s):
        x = np.concatenate([np.repeat(np.atleast_2d(s) / scale, len(grid), axis=0), grid], axis=1)
        return float(qnet.predict(x).max())

    return CartPoleEnv("continuous", cfg.horizon), act, max_q, cfg.gamma
