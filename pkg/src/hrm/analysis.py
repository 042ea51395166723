"""Diagnostics: forward residuals, PCA, participation ratio, intermediate decoding, sweeps."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np
import torch

from .act import Trainer, evaluate, initial_carry, run_segment
from .baselines import FeedForwardNet, RecurrentNet, count_parameters
from .config import ModelConfig
from .core import init_params
from .data.sudoku import violation_mask
from .data.tokens import TokenDataset, detokenize
from .dynamics import StateTrace, h_step

logger = logging.getLogger(__name__)


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------- participation ratio

def participation_ratio(states) -> float:
    """``(sum l)^2 / sum l^2`` over eigenvalues ``l`` of the sample covariance.

    ``states`` is ``[n_samples, dim]``. Uses the trace identities
    ``sum l = tr C`` and ``sum l^2 = ||C||_F^2``, evaluated on the Gram
    matrix when there are fewer samples than dimensions.
    """
    X = np.asarray(states, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise AnalysisError("participation ratio needs at least two samples of equal dimension")
    X = X - X.mean(axis=0, keepdims=True)
    G = X @ X.T if X.shape[0] <= X.shape[1] else X.T @ X
    total = np.trace(G)
    if total <= 0 or not np.isfinite(total):
        raise AnalysisError("zero-variance states: participation ratio undefined")
    return float(total ** 2 / np.sum(G * G))


@dataclass
class TrajectoryBundle:
    """Per-trajectory state sequences, each ``[steps, dim]`` (flattened over positions)."""

    z_H: list[np.ndarray] = field(default_factory=list)
    z_L: list[np.ndarray] = field(default_factory=list)
    labels: list[Any] = field(default_factory=list)

    def pooled(self, module: str, k: int | None = None) -> np.ndarray:
        seqs = getattr(self, module)[:k]
        return np.concatenate(seqs, axis=0)


@torch.no_grad()
def collect_trajectories(net, inputs: torch.Tensor, n_segments: int = 1,
                         labels: Iterable | None = None, batch_size: int = 32) -> TrajectoryBundle:
    """Run ``n_segments`` segments from the initial carry, recording every timestep."""
    bundle = TrajectoryBundle()
    for start in range(0, len(inputs), batch_size):
        trace = trace_segments(net, inputs[start:start + batch_size], n_segments)
        zl, zh = trace.z_L(), trace.z_H()  # [steps, B, L, d]
        for b in range(zl.shape[1]):
            bundle.z_L.append(zl[1:, b].flatten(1).double().numpy())
            bundle.z_H.append(zh[1:, b].flatten(1).double().numpy())
    bundle.labels = list(labels) if labels is not None else list(range(len(bundle.z_H)))
    return bundle


def pr_scaling_curve(bundle: TrajectoryBundle, counts: Iterable[int]) -> list[dict[str, float]]:
    """PR of z_H and z_L using the first ``k`` trajectories, for each ``k`` in counts."""
    rows = []
    for k in counts:
        if k < 1 or k > len(bundle.z_H):
            raise AnalysisError(f"requested {k} trajectories, have {len(bundle.z_H)}")
        rows.append({"tasks": int(k),
                     "pr_z_H": participation_ratio(bundle.pooled("z_H", k)),
                     "pr_z_L": participation_ratio(bundle.pooled("z_L", k))})
    return rows


# ---------------------------------------------------------------- residuals

@torch.no_grad()
def trace_segments(net, tokens: torch.Tensor, n_segments: int = 1) -> StateTrace:
    """Full state trace over ``n_segments`` consecutive segments."""
    carry = initial_carry(net, tokens.shape[0])
    full = StateTrace(T=getattr(net.config, "T", 1))
    for _ in range(n_segments):
        res = run_segment(net, carry, tokens, trace=True)
        full.extend(res.trace)
        carry = res.carry
    return full


def residual_series(trace: StateTrace | None) -> dict[str, np.ndarray]:
    """Per-step forward residuals and cycle-boundary spike flags.

    ``r_i = sqrt(mean((z^i - z^{i-1})^2))`` per sample, for i = 1..S.
    ``spikes[:, k]`` compares the first step of cycle ``k+2`` with the last
    step of cycle ``k+1``.
    """
    if trace is None or len(trace) < 2:
        raise AnalysisError("a captured state trace is required")
    out: dict[str, np.ndarray] = {}
    for name, stack in (("z_L", trace.z_L()), ("z_H", trace.z_H())):
        diff = (stack[1:] - stack[:-1]).double()
        r = diff.pow(2).flatten(2).mean(dim=-1).sqrt()  # [S, B] or [S]
        out[name] = r.T.numpy() if r.ndim == 2 else r.numpy()
    T = trace.T
    rL = np.atleast_2d(out["z_L"])
    S = rL.shape[1]
    boundaries = [b for b in range(T, S, T)]  # r index b is step b+1 = first step of a cycle
    if boundaries:
        out["spikes"] = np.stack([rL[:, b] > rL[:, b - 1] for b in boundaries], axis=1)
    else:
        out["spikes"] = np.zeros((rL.shape[0], 0), dtype=bool)
    return out


def spike_fraction(residuals: dict[str, np.ndarray]) -> float:
    s = residuals["spikes"]
    return float(s.mean()) if s.size else float("nan")


# ---------------------------------------------------------------- PCA

def pca_project(states, k: int):
    """Top-``k`` principal directions of pooled states.

    Returns ``(projections [n, k], components [k, dim], variances [k])`` with
    variances non-increasing. Directions beyond the data rank get zero variance.
    """
    X = np.asarray(states, dtype=np.float64)
    if k > X.shape[1] or X.shape[0] < k + 1:
        raise AnalysisError("need k <= dim and at least k+1 samples")
    mean = X.mean(axis=0, keepdims=True)
    Xc = X - mean
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    comps = Vt[:k]
    var = (s[:k] ** 2) / (X.shape[0] - 1)
    return Xc @ comps.T, comps, var


# ---------------------------------------------------------------- intermediate decoding

@torch.no_grad()
def intermediate_predictions(net, trace: StateTrace, task: str | None = None,
                             givens=None) -> list[dict[str, Any]]:
    """Decode a prediction at every recorded timestep ``i >= 1``.

    One extra H-step is run on the L-state of step ``i`` against the H-state
    that step was conditioned on, then the output head and argmax. At the
    last step of a segment this reproduces the segment's own prediction.
    For Sudoku each entry also carries a constraint-violation mask and a
    changed-cell mask relative to the previous decode.
    """
    out = []
    prev = None
    for (_, _, zh_prev), (i, zl, _) in zip(trace.steps[:-1], trace.steps[1:]):
        z_bar = h_step(net, zh_prev, zl)
        tokens = net.output_head(z_bar).argmax(dim=-1)
        entry: dict[str, Any] = {"step": i, "tokens": tokens}
        if task is not None:
            rows = tokens if tokens.ndim == 2 else tokens[None]
            entry["decoded"] = [detokenize(t.tolist(), task) for t in rows]
            if task == "sudoku":
                entry["violations"] = [violation_mask(g) for g in entry["decoded"]]
                entry["changed"] = ([[0] * 81 for _ in rows] if prev is None else
                                    [[int(a != b) for a, b in zip(g, pg)]
                                     for g, pg in zip(entry["decoded"], prev)])
                prev = entry["decoded"]
        out.append(entry)
    return out


# ---------------------------------------------------------------- sweeps

def _train_and_eval(net, train: TokenDataset, test: TokenDataset, config: ModelConfig,
                    steps: int, M_eval: int, use_act: bool = True) -> dict[str, Any]:
    trainer = Trainer(net, train, config, use_act=use_act)
    hist = trainer.train(steps)
    ev = evaluate(net, test, M_eval, halting="act" if use_act else "fixed")
    return {"params": count_parameters(net), "final_loss": hist[-1]["loss"] if hist else float("nan"),
            "exact_match": ev["exact_match"], "token_accuracy": ev["token_accuracy"],
            "mean_segments": ev["mean_segments"]}


def depth_width_sweep(train: TokenDataset, test: TokenDataset, base: ModelConfig,
                      depths: Iterable[int] = (), widths: Iterable[int] = (),
                      steps: int = 200, include_hrm: bool = True) -> list[dict[str, Any]]:
    """Feed-forward baselines over a depth and a width grid, plus HRM.

    The HRM row uses ``base`` as is; the matched feed-forward row has
    ``2 * blocks_per_module`` layers at the same width (equal block
    parameters). Every variant gets the same number of optimizer steps.
    A failing variant is recorded with its error and the sweep continues.
    """
    variants: list[tuple[str, dict]] = []
    if include_hrm:
        variants.append(("hrm", {}))
        variants.append(("feedforward", {"depth": 2 * base.blocks_per_module}))
    variants += [("feedforward", {"depth": d}) for d in depths]
    variants += [("feedforward", {"depth": 2 * base.blocks_per_module, "width": w}) for w in widths]
    rows = []
    for kind, opts in variants:
        width = opts.get("width", base.hidden_dim)
        row = {"variant": kind, "depth": opts.get("depth", 2 * base.blocks_per_module),
               "width": width, "steps": steps}
        try:
            cfg = base.replace(hidden_dim=width)
            if kind == "hrm":
                row.update(_train_and_eval(init_params(cfg), train, test, cfg, steps, cfg.M_max))
            else:
                net = FeedForwardNet(cfg, opts["depth"])
                row.update(_train_and_eval(net, train, test, cfg.replace(M_max=1, epsilon_explore=0.0),
                                           steps, 1, use_act=False))
        except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
            logger.warning("variant %s failed: %s", row, exc)
            row["error"] = repr(exc)
        rows.append(row)
    return rows


def act_comparison(net_act, net_fixed, test: TokenDataset, M_list: Iterable[int]) -> list[dict]:
    """Accuracy and mean segments per segment limit for an ACT and a fixed-compute model."""
    rows = []
    for M in M_list:
        for name, net, halting in (("act", net_act, "act"), ("fixed", net_fixed, "fixed")):
            if net is None:
                continue
            ev = evaluate(net, test, M, halting=halting)
            rows.append({"model": name, "M_max_eval": int(M), "exact_match": ev["exact_match"],
                         "token_accuracy": ev["token_accuracy"], "mean_segments": ev["mean_segments"]})
    return rows


def recurrent_baseline(config: ModelConfig, loops: int) -> RecurrentNet:
    return RecurrentNet(config, 2 * config.blocks_per_module, loops)


# ---------------------------------------------------------------- plot data

def plot_records(series: str, xs, ys) -> list[dict[str, Any]]:
    return [{"series": series, "x": _plain(x), "y": _plain(y)} for x, y in zip(xs, ys)]


def _plain(v):
    if isinstance(v, (np.generic,)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def dumps_plot_data(records: Iterable[dict[str, Any]]) -> str:
    return "".join(json.dumps(r) + "\n" for r in records)
