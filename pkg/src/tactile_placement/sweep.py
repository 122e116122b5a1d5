"""Sweep scheduling: configuration x seed runs with a resumable manifest.

Layout of a sweep directory:

    config.snapshot.cfg     resolved config, immutable after first write
    manifest.jsonl          append-only; one header record plus one record
                            per run status change (latest wins)
    runs/<label>__s<i>/     per-run outputs written by learner.train

Runs are independent and scheduled over a bounded process pool; manifest
writes happen only in the parent. Completed runs are detected by config
hash and skipped on resume; a crashed run is marked failed and the sweep
continues.
"""

import hashlib
import json
import os
import re
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass

from .configs import Config
from .env import ReorientEnv
from .experiments import ExperimentSpec
from .hand import build_hand
from .learner import TrainingDiverged, train


class SnapshotMismatch(RuntimeError):
    pass


def _sanitize(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_+.-]", "-", label)


def run_seed(experiment_id: str, label: str, seed_index: int) -> int:
    """Stable per-run master seed, independent of scheduling order."""
    digest = hashlib.sha256(f"{experiment_id}|{label}|{seed_index}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % 2**62


@dataclass
class RunJob:
    run_id: str
    label: str
    mask: int
    seed_index: int
    master_seed: int
    out_dir: str
    config: Config
    config_hash: str


def _execute_job(job: RunJob) -> dict:
    """Worker-side: train one run. Returns a manifest payload."""
    model = build_hand(job.config.env.hand_file)
    cfg = job.config

    def make_env(seed):
        return ReorientEnv(
            model,
            cfg.object,
            sensor_mask=job.mask,
            reward=cfg.env.reward,
            physics=cfg.physics,
            randomization=cfg.env.randomization,
            noise=cfg.env.noise,
            action_delta=cfg.env.action_delta,
            seed=seed,
        )

    try:
        result = train(
            make_env,
            cfg.learner,
            master_seed=job.master_seed,
            out_dir=job.out_dir,
            config_hash=job.config_hash,
        )
        return {"status": "done", "summary": result.summary}
    except TrainingDiverged as e:
        return {"status": "failed", "error": str(e)}
    except Exception as e:  # noqa: BLE001 - a failed run must not kill the sweep
        return {"status": "failed", "error": f"{type(e).__name__}: {e}"}


class Manifest:
    """Append-only JSONL with one header and latest-wins run records."""

    def __init__(self, path):
        self.path = path

    def read(self):
        header, runs = None, {}
        if os.path.exists(self.path):
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    if rec.get("kind") == "sweep":
                        header = rec
                    else:
                        runs[rec["run_id"]] = rec
        return header, runs

    def append(self, record):
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())


def prepare_sweep(spec: ExperimentSpec, config: Config, out_dir):
    """Write the immutable snapshot + header; return (manifest, jobs)."""
    os.makedirs(os.path.join(out_dir, "runs"), exist_ok=True)
    config = _with_experiment_object(config, spec)
    snapshot = config.snapshot_text()
    snap_path = os.path.join(out_dir, "config.snapshot.cfg")
    if os.path.exists(snap_path):
        with open(snap_path, "r", encoding="utf-8") as fh:
            if fh.read() != snapshot:
                raise SnapshotMismatch(
                    f"{snap_path} differs from the resolved configuration; "
                    "use a fresh --out directory or restore the original config"
                )
    else:
        with open(snap_path, "w", encoding="utf-8") as fh:
            fh.write(snapshot)
    chash = config.hash()

    manifest = Manifest(os.path.join(out_dir, "manifest.jsonl"))
    header, _ = manifest.read()
    if header is None:
        manifest.append({
            "kind": "sweep",
            "experiment": spec.id,
            "description": spec.description,
            "labels": [c.label for c in spec.configurations],
            "varied_pool": [r.name for r in spec.varied_pool] if spec.varied_pool else None,
            "baseline_label": spec.baseline_label,
            "seeds_per_config": spec.seeds_per_config,
            "config_hash": chash,
        })

    jobs = []
    for cfg_entry in spec.configurations:
        for i in range(spec.seeds_per_config):
            run_id = f"{_sanitize(cfg_entry.label)}__s{i}"
            jobs.append(RunJob(
                run_id=run_id,
                label=cfg_entry.label,
                mask=cfg_entry.mask,
                seed_index=i,
                master_seed=run_seed(spec.id, cfg_entry.label, i),
                out_dir=os.path.join(out_dir, "runs", run_id),
                config=config,
                config_hash=chash,
            ))
    return manifest, jobs, chash


def _with_experiment_object(config: Config, spec: ExperimentSpec) -> Config:
    """The experiment preset owns the object; the config file owns the rest."""
    return Config(config.env, config.physics, spec.object, config.learner, config.sweep)


def run_sweep(spec: ExperimentSpec, config: Config, out_dir, workers=1,
              resume=True, progress=None) -> dict:
    """Execute (or resume) every configuration x seed run of an experiment.

    Returns {"done": n, "skipped": n, "failed": n, "interrupted": n}.
    """
    manifest, jobs, chash = prepare_sweep(spec, config, out_dir)
    _, existing = manifest.read()

    pending = []
    skipped = 0
    for job in jobs:
        prev = existing.get(job.run_id)
        if resume and prev and prev.get("status") == "done" and prev.get("config_hash") == chash:
            skipped += 1
            continue
        pending.append(job)

    def base_record(job, status, extra=None):
        rec = {
            "kind": "run",
            "run_id": job.run_id,
            "label": job.label,
            "mask": job.mask,
            "seed": job.seed_index,
            "master_seed": job.master_seed,
            "status": status,
            "config_hash": chash,
            "curve": os.path.join("runs", job.run_id, "curve.csv"),
            "checkpoint": os.path.join("runs", job.run_id, "checkpoint.npz"),
        }
        if extra:
            rec.update(extra)
        return rec

    counts = {"done": 0, "skipped": skipped, "failed": 0, "interrupted": 0}
    if not pending:
        return counts

    try:
        if workers <= 1:
            for job in pending:
                manifest.append(base_record(job, "started"))
                outcome = _execute_job(job)
                _finish(manifest, base_record, job, outcome, counts, progress)
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = {}
                for job in pending:
                    manifest.append(base_record(job, "started"))
                    futures[pool.submit(_execute_job, job)] = job
                not_done = set(futures)
                while not_done:
                    done, not_done = wait(not_done, return_when=FIRST_COMPLETED)
                    for fut in done:
                        job = futures[fut]
                        try:
                            outcome = fut.result()
                        except Exception as e:  # worker crashed hard
                            outcome = {"status": "failed", "error": f"{type(e).__name__}: {e}"}
                        _finish(manifest, base_record, job, outcome, counts, progress)
    except KeyboardInterrupt:
        # graceful flush: everything still marked "started" becomes interrupted
        _, latest = manifest.read()
        for job in pending:
            if latest.get(job.run_id, {}).get("status") == "started":
                manifest.append(base_record(job, "interrupted"))
                counts["interrupted"] += 1
        raise
    return counts


def _finish(manifest, base_record, job, outcome, counts, progress):
    status = outcome.get("status", "failed")
    extra = {}
    if status == "done":
        extra["summary"] = outcome.get("summary", {})
    else:
        extra["error"] = outcome.get("error", "unknown error")
    manifest.append(base_record(job, status, extra))
    counts[status] = counts.get(status, 0) + 1
    if progress:
        progress(job.run_id, status, outcome)
