"""Synthetic dataset generation with pluggable adversaries, plus file I/O.

Datasets serialize as a single JSON document: plain header fields
(d, n, alpha, optional ground truth) plus the point matrix as a base64
little-endian float64 block (C order), so round-trips are byte-exact.
"""

from __future__ import annotations

import base64
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_mod
from .filtering import Dataset
from .oracle import LowerBoundInstance, log_density_gaussian, lower_bound_instance

ADVERSARY_KINDS = ("none", "far_cluster", "mirror", "uniform_shell",
                   "duplicate_shift", "lb_construction")


@dataclass
class AdversaryStrategy:
    """Outlier generator: a kind plus kind-specific parameters.

    * ``far_cluster``: tight Gaussian blob at ``offset`` (scale ``spread``)
    * ``mirror``: fresh inlier-law draws reflected about ``about``
    * ``uniform_shell``: uniform on the sphere of ``radius`` around ``center``
    * ``duplicate_shift``: inlier points repeated cyclically plus ``shift``
    * ``lb_construction``: the hard-mixture instance conditioned away from
      its inlier component (needs ``eps``; dimension is the planted count)
    * ``none``: no outliers (alpha must be 1)
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ADVERSARY_KINDS:
            raise ValueError(f"unknown adversary kind {self.kind!r}")


def _outliers(adv: AdversaryStrategy, count: int, d: int, true_mean: np.ndarray,
              inliers: np.ndarray, gen: np.random.Generator,
              instance: LowerBoundInstance | None):
    p = adv.params
    if adv.kind == "none":
        if count:
            raise ValueError("adversary 'none' requires alpha = 1")
        return np.zeros((0, d))
    if adv.kind == "far_cluster":
        offset = np.asarray(p.get("offset", np.full(d, 50.0)), dtype=float)
        spread = float(p.get("spread", 0.5))
        return offset + spread * gen.standard_normal((count, d))
    if adv.kind == "mirror":
        about = np.asarray(p.get("about", np.zeros(d)), dtype=float)
        fresh = true_mean + gen.standard_normal((count, d))
        return 2.0 * about - fresh
    if adv.kind == "uniform_shell":
        radius = float(p.get("radius", 10.0))
        center = np.asarray(p.get("center", np.zeros(d)), dtype=float)
        dirs = gen.standard_normal((count, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return center + radius * dirs
    if adv.kind == "duplicate_shift":
        shift = np.asarray(p.get("shift", np.full(d, 5.0)), dtype=float)
        reps = inliers[np.arange(count) % inliers.shape[0]]
        return reps + shift
    if adv.kind == "lb_construction":
        # draw from the mixture conditioned out of alpha * N(mu, I):
        # propose x ~ D, accept with probability 1 - alpha N_mu(x) / D(x)
        assert instance is not None
        alpha = instance.alpha
        out = np.empty((count, d))
        filled = 0
        while filled < count:
            prop = instance.sample(max(1024, 2 * (count - filled)), gen)
            ref = alpha * np.exp(log_density_gaussian(prop, true_mean))
            acc = 1.0 - ref / instance.density(prop)
            keep = prop[gen.random(prop.shape[0]) < acc]
            take = min(keep.shape[0], count - filled)
            if take:
                out[filled:filled + take] = keep[:take]
                filled += take
        return out
    raise AssertionError("unreachable")


def generate(alpha: float, n: int, d: int, true_mean, adversary: AdversaryStrategy,
             seed: int) -> Dataset:
    """round(alpha n) inliers from N(true_mean, I) plus adversary outliers,
    shuffled by the seed; the inlier mask is recorded."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    n_in = round(alpha * n)
    if n_in < 1:
        raise ValueError("round(alpha n) must be at least 1")
    instance = None
    if adversary.kind == "lb_construction":
        eps = float(adversary.params["eps"])
        d_planted = int(adversary.params.get("d_planted", d))
        if d_planted != d:
            raise ValueError("lb_construction dimension must equal d")
        instance = lower_bound_instance(
            alpha, eps, d_planted, int(adversary.params.get("instance_seed", seed)),
            mc_samples=int(adversary.params.get("mc_samples", 200_000)))
        planted = instance.planted_means[int(adversary.params.get("planted_index", 0))]
        if true_mean is None:
            true_mean = planted
        elif not np.allclose(np.asarray(true_mean, dtype=float), planted):
            raise ValueError("lb_construction requires true_mean = planted mean")
    if true_mean is None:
        raise ValueError("true_mean is required")
    true_mean = np.asarray(true_mean, dtype=float)
    if true_mean.shape != (d,):
        raise ValueError("true_mean dimension mismatch")
    gen_in = rng_mod.stream(seed, "inliers")
    inliers = true_mean + gen_in.standard_normal((n_in, d))
    gen_out = rng_mod.stream(seed, "outliers")
    outliers = _outliers(adversary, n - n_in, d, true_mean, inliers, gen_out,
                         instance)
    points = np.vstack([inliers, outliers])
    mask = np.zeros(n, dtype=bool)
    mask[:n_in] = True
    perm = rng_mod.stream(seed, "shuffle").permutation(n)
    return Dataset(points=points[perm], alpha=alpha, true_mean=true_mean,
                   inlier_mask=mask[perm])


FORMAT_TAG = "listmean-dataset-v1"


def atomic_write_text(path, text: str) -> None:
    """Whole-file atomic write: temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dataset_to_json(ds: Dataset) -> str:
    block = np.ascontiguousarray(ds.points, dtype="<f8").tobytes()
    payload = {
        "format": FORMAT_TAG,
        "d": ds.dim,
        "n": ds.n,
        "alpha": ds.alpha,
        "true_mean": None if ds.true_mean is None else [float(v) for v in ds.true_mean],
        "inlier_mask": None if ds.inlier_mask is None else base64.b64encode(
            np.packbits(ds.inlier_mask).tobytes()).decode("ascii"),
        "points": base64.b64encode(block).decode("ascii"),
    }
    return json.dumps(payload, sort_keys=True)


def dataset_from_json(text: str) -> Dataset:
    payload = json.loads(text)
    if payload.get("format") != FORMAT_TAG:
        raise ValueError("not a listmean dataset file")
    n, d = payload["n"], payload["d"]
    raw = base64.b64decode(payload["points"])
    points = np.frombuffer(raw, dtype="<f8").reshape(n, d).astype(float)
    mask = None
    if payload.get("inlier_mask") is not None:
        bits = np.frombuffer(base64.b64decode(payload["inlier_mask"]), dtype=np.uint8)
        mask = np.unpackbits(bits)[:n].astype(bool)
    mean = payload.get("true_mean")
    return Dataset(points=points, alpha=payload["alpha"],
                   true_mean=None if mean is None else np.asarray(mean, dtype=float),
                   inlier_mask=mask)


def write_dataset(path, ds: Dataset) -> None:
    atomic_write_text(path, dataset_to_json(ds))


def read_dataset(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as f:
        return dataset_from_json(f.read())
