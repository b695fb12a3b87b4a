"""Experiment orchestration behind the CLI: config files, run wrappers,
metrics records, and the benchmark sweep."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .datasets import (
    AdversaryStrategy,
    atomic_write_text,
    generate,
    read_dataset,
)
from .filtering import FilterParams
from .oracle import CenterConfig, verify_centers
from .pipeline import (
    CoarseParams,
    PipelineConfig,
    TournamentInput,
    estimate,
    thread_count,
    tournament,
)
from .search import SearchParams, SolverParams


def config_digest(config: PipelineConfig) -> str:
    return hashlib.sha256(config.to_json().encode("ascii")).hexdigest()[:16]


def _build(cls, payload: dict):
    fields = set(cls.__dataclass_fields__)
    unknown = set(payload) - fields
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**payload)


def config_from_dict(payload: dict) -> PipelineConfig:
    """PipelineConfig from the JSON layout produced by ``to_json``."""
    payload = dict(payload)
    filt = _build(FilterParams, payload.pop("filter", {}))
    coarse = _build(CoarseParams, payload.pop("coarse", {}))
    search_payload = payload.pop("search", None)
    search = None
    if search_payload is not None:
        search_payload = dict(search_payload)
        solver = _build(SolverParams, search_payload.pop("solver", {}))
        search = SearchParams(solver=solver, **search_payload)
    return PipelineConfig(filter=filt, coarse=coarse, search=search, **payload)


def read_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as f:
        return config_from_dict(json.load(f))


@dataclass
class ExperimentResult:
    """One estimator run, summarized for benchmarking."""

    config_digest: str
    seed: int
    list_size: int
    min_error: float | None
    runtime_ms: dict
    filter_removals: int
    tournament_winner_error: float | None = None

    def to_dict(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "seed": self.seed,
            "list_size": self.list_size,
            "min_error": self.min_error,
            "runtime_ms": self.runtime_ms,
            "filter_removals": self.filter_removals,
            "tournament_winner_error": self.tournament_winner_error,
        }


def run_estimate_files(dataset_file, config_file, out_file,
                       weights_out=None) -> int:
    """CLI body for ``estimate``: 0 on success, 2 on an empty list."""
    data = read_dataset(dataset_file)
    config = read_config(config_file)
    t0 = time.perf_counter()
    candidates, report = estimate(data, config)
    total_ms = 1000.0 * (time.perf_counter() - t0)
    min_error = None
    if data.true_mean is not None:
        err = candidates.min_error(data.true_mean)
        min_error = None if err == float("inf") else err
    result = ExperimentResult(
        config_digest=config_digest(config), seed=config.seed,
        list_size=len(candidates.entries), min_error=min_error,
        runtime_ms={**report.runtime_ms, "wall": total_ms},
        filter_removals=sum(b.filter_removals for b in report.branches))
    payload = {
        "candidates": json.loads(candidates.to_json()),
        "report": json.loads(report.to_json()),
        "result": result.to_dict(),
    }
    atomic_write_text(out_file, json.dumps(payload, sort_keys=True))
    if weights_out is not None:
        candidates.write_weights_sidecar(weights_out)
    return 0 if candidates.entries else 2


def run_verify_files(centers_file, n_samples, seed, out_file,
                     fattening_trials=10_000) -> int:
    with open(centers_file, "r", encoding="utf-8") as f:
        payload = json.load(f)
    cfg = CenterConfig(centers=np.asarray(payload["centers"], dtype=float),
                       beta=float(payload.get("beta", 0.0)))
    report = verify_centers(cfg, n_samples, seed,
                            fattening_trials=fattening_trials)
    atomic_write_text(out_file, report.to_json())
    return 0


def _load_candidate_means(path):
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if "candidates" in payload:
        payload = payload["candidates"]
    return [np.asarray(e["mu"], dtype=float) for e in payload["entries"]]


def run_tournament_files(list_file, trusted_file, eps, delta, out_file,
                         seed=0) -> int:
    means = _load_candidate_means(list_file)
    trusted = read_dataset(trusted_file).points
    winner, rep = tournament(
        TournamentInput(means=means, trusted=trusted, eps=eps, delta=delta),
        seed=seed)
    atomic_write_text(out_file, json.dumps({
        "winner": [float(v) for v in winner],
        "winner_index": rep.winner_index,
        "undefeated": rep.undefeated,
        "tested_pairs": [list(p) for p in rep.tested_pairs],
    }, sort_keys=True))
    return 0


def _adversary_from_dict(payload: dict) -> AdversaryStrategy:
    return AdversaryStrategy(kind=payload["kind"],
                             params=dict(payload.get("params", {})))


def _bench_trial(entry: dict, seed: int) -> ExperimentResult:
    config = config_from_dict({**entry["pipeline"], "seed": seed})
    gen_spec = entry["generate"]
    d = int(gen_spec["d"])
    mean_spec = gen_spec.get("true_mean")
    if mean_spec is None:
        from . import rng as rng_mod
        direction = rng_mod.stream(seed, "bench-mean").standard_normal(d)
        direction /= np.linalg.norm(direction)
        mean = float(gen_spec.get("mean_norm", 2.0)) * direction
    else:
        mean = np.asarray(mean_spec, dtype=float)
    data = generate(config.alpha, int(gen_spec["n"]), d, mean,
                    _adversary_from_dict(gen_spec["adversary"]), seed)
    candidates, report = estimate(data, config)
    err = candidates.min_error(mean)
    winner_error = None
    trusted_count = gen_spec.get("trusted")
    if trusted_count and candidates.entries:
        from . import rng as rng_mod
        from .oracle import sample_gaussian
        trusted = sample_gaussian(mean, int(trusted_count),
                                  rng_mod.stream(seed, "bench-trusted"))
        winner, _ = tournament(TournamentInput(
            means=[c.mu for c in candidates.entries], trusted=trusted,
            eps=config.eps))
        winner_error = float(np.linalg.norm(winner - mean))
    return ExperimentResult(
        config_digest=config_digest(config), seed=seed,
        list_size=len(candidates.entries),
        min_error=None if err == float("inf") else err,
        runtime_ms=report.runtime_ms,
        filter_removals=sum(b.filter_removals for b in report.branches),
        tournament_winner_error=winner_error)


BENCH_COLUMNS = ["config_digest", "seed", "list_size", "min_error",
                 "runtime_total_ms", "runtime_coarse_ms", "runtime_branches_ms",
                 "runtime_merge_ms", "filter_removals", "tournament_winner_error"]


def run_bench_files(matrix_file, out_csv) -> int:
    """One CSV row per (config, seed); trials run in parallel but rows are
    written in matrix order."""
    with open(matrix_file, "r", encoding="utf-8") as f:
        matrix = json.load(f)
    seeds = [int(s) for s in matrix["seeds"]]
    entries = matrix["configs"]
    jobs = [(entry, seed) for entry in entries for seed in seeds]
    workers = min(thread_count(), max(1, len(jobs)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_bench_trial, e, s) for e, s in jobs]
            results = [f.result() for f in futures]
    else:
        results = [_bench_trial(e, s) for e, s in jobs]
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(BENCH_COLUMNS)
    for res in results:
        writer.writerow([
            res.config_digest, res.seed, res.list_size,
            "" if res.min_error is None else f"{res.min_error:.17g}",
            f"{res.runtime_ms.get('total', 0.0):.3f}",
            f"{res.runtime_ms.get('coarse', 0.0):.3f}",
            f"{res.runtime_ms.get('branches', 0.0):.3f}",
            f"{res.runtime_ms.get('merge', 0.0):.3f}",
            res.filter_removals,
            "" if res.tournament_winner_error is None
            else f"{res.tournament_winner_error:.17g}",
        ])
    atomic_write_text(out_csv, buf.getvalue())
    return 0
