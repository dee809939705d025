"""Monte Carlo dropout inference: repeated stochastic forward passes and
per-sample summary statistics.

Trial j draws its dropout masks from a stream labeled "mcd/{j}" under the
run's master seed, so any trial can be replayed in isolation. Trials run
outermost; every batch inside one trial re-derives the same stream and
therefore sees the same masks (one mask per layer per trial, shared
across all samples), regardless of inference batching.

Summaries hold the mean and sample standard deviation of each sample's
trial vector in the model's output space. For log-MSE models that is
log1p space; conversion to raw amounts happens at the metrics boundary.
ZILN heads are reduced to their expected raw amount per trial.
"""

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from . import losses
from .numcore import RngStream, ShapeError


@dataclass
class McdConfig:
    trials: int
    master_seed: int = 0
    batch_size: int = 0  # rows per inference pass; 0 means the whole dataset

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trial count must be >= 1")
        if self.batch_size < 0:
            raise ValueError("batch_size must be >= 0")


@dataclass
class PredictionSummary:
    """One sample's MCD output: mean and spread of its T trial values."""

    sample_id: str
    mean: float
    std: float  # sample std (T-1 denominator); 0 when T == 1
    n_trials: int
    trials: np.ndarray | None = None  # retained only on request


def _scalarize(kind, out):
    if kind == "log_mse":
        return out[:, 0]
    if kind == "ziln":
        return losses.ziln_predict(out)
    raise ValueError(f"unknown loss kind {kind!r}")


def mcd_predict(net, data, cfg: McdConfig, loss_kind="log_mse", keep_trials=False):
    """Run T mc_sample forward passes over the dataset, then per-sample
    mean and sample std of the resulting trial vectors, aggregated in
    ascending trial order.

    A network without active dropout short-circuits to one eval pass per
    chunk: every trial would return the identical output, whose exact
    mean is that output itself, with zero spread. Deterministic given
    (model, data, seed, T).
    """
    x = data.features
    if x.shape[1] != net.input_dim:
        raise ShapeError(f"feature width {x.shape[1]} != network input {net.input_dim}")
    n = x.shape[0]
    t = cfg.trials
    step = cfg.batch_size if cfg.batch_size > 0 else n
    degenerate = hasattr(net, "stochastic") and not net.stochastic()
    if degenerate:
        means = np.empty(n)
        for start in range(0, n, step):
            out, _ = net.forward(x[start : start + step], "eval")
            means[start : start + step] = _scalarize(loss_kind, out)
        stds = np.zeros(n)
        trials = np.tile(means[:, None], (1, t))
    else:
        trials = np.empty((n, t))
        for j in range(t):
            for start in range(0, n, step):
                # fresh stream per chunk: replays the trial's mask sequence
                rng = RngStream(cfg.master_seed, f"mcd/{j}")
                out, _ = net.forward(x[start : start + step], "mc_sample", rng)
                trials[start : start + step, j] = _scalarize(loss_kind, out)
        means = trials.mean(axis=1)
        if t > 1:
            devs = trials - means[:, None]
            stds = np.sqrt((devs * devs).sum(axis=1) / (t - 1))
        else:
            stds = np.zeros(n)
    return [
        PredictionSummary(
            sample_id=data.ids[i],
            mean=float(means[i]),
            std=float(stds[i]),
            n_trials=t,
            trials=trials[i].copy() if keep_trials else None,
        )
        for i in range(n)
    ]


def confidence_interval(summary: PredictionSummary, z, quantile=False):
    """Closed interval mean ± z·std/sqrt(T).

    By default z is the literal multiplier in [0, 1]. With quantile=True,
    z is instead read as a central coverage level and mapped through the
    standard normal quantile function.
    """
    if quantile:
        if not 0.0 <= z < 1.0:
            raise ValueError("coverage level must be in [0, 1) in quantile mode")
        mult = NormalDist().inv_cdf(0.5 * (1.0 + z))
    else:
        if not 0.0 <= z <= 1.0:
            raise ValueError("confidence threshold z must be in [0, 1]")
        mult = z
    half = mult * summary.std / math.sqrt(summary.n_trials)
    return summary.mean - half, summary.mean + half
