"""Deep supervision, Q-learned halting, losses and the Adam-atan2 optimizer."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any

import numpy as np
import torch
import torch.nn.functional as F

from .config import ConfigError, ModelConfig
from .core import log_stablemax
from .data.tokens import PAD, TokenDataset
from .dynamics import CarryState, SegmentResult, init_carry, segment_forward

logger = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""


# ---------------------------------------------------------------- losses

def token_log_probs(logits: torch.Tensor, use_stablemax: bool = False) -> torch.Tensor:
    if use_stablemax:
        return log_stablemax(logits)
    return F.log_softmax(logits, dim=-1)


def sequence_loss(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor | None = None,
                  use_stablemax: bool = False, per_sample: bool = False) -> torch.Tensor:
    """Negative log-likelihood averaged over supervised positions.

    ``mask`` defaults to ``targets != PAD``. The average is taken per sequence
    and then over the batch.
    """
    if mask is None:
        mask = targets != PAD
    counts = mask.sum(dim=-1)
    if bool((counts == 0).any()):
        raise ValueError("every target position is padding; loss is undefined")
    logp = token_log_probs(logits, use_stablemax)
    nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    per_seq = (nll * mask).sum(dim=-1) / counts
    return per_seq if per_sample else per_seq.mean()


def q_bce(q_logits: torch.Tensor, targets: torch.Tensor, per_sample: bool = False) -> torch.Tensor:
    """Binary cross-entropy of sigmoid(q_logits) against targets, mean over (halt, continue)."""
    bce = F.binary_cross_entropy_with_logits(q_logits, targets.to(q_logits.dtype), reduction="none")
    per = bce.mean(dim=-1)
    return per if per_sample else per.mean()


def act_loss(logits, targets, q_logits, q_target, mask=None, use_stablemax: bool = False):
    """Sequence loss plus the Q-head BCE. ``q_target`` is treated as a constant."""
    return (sequence_loss(logits, targets, mask, use_stablemax)
            + q_bce(q_logits, q_target.detach()))


def exact_match(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor | None = None):
    """Per-sequence flag: greedy argmax equals the target on every supervised position."""
    if mask is None:
        mask = targets != PAD
    hit = (logits.argmax(dim=-1) == targets) | ~mask
    return hit.all(dim=-1)


# ---------------------------------------------------------------- halting

def sample_m_min(epsilon: float, M_max: int, rng: np.random.Generator, size=None):
    """1 with probability 1 - epsilon, else uniform on {2, ..., M_max}."""
    if epsilon > 0 and M_max < 2:
        raise ConfigError("exploration needs M_max >= 2")
    explore = rng.random(size) < epsilon
    longer = rng.integers(2, max(M_max, 2) + 1, size=size)
    return np.where(explore, longer, 1) if size is not None else int(longer if explore else 1)


def halt_decision(m, q_halt, q_continue, M_min, M_max):
    """Halt at the segment cap, or when halting looks better and m >= M_min.

    Works element-wise on scalars, numpy arrays or tensors.
    """
    return (m >= M_max) | ((q_halt > q_continue) & (m >= M_min))


def q_targets(correct, next_q, m, M_max):
    """Targets ``(G_halt, G_continue)``; ``next_q`` holds the (halt, continue) values of segment m+1."""
    if isinstance(next_q, torch.Tensor):
        next_q = next_q.detach()
        correct = torch.as_tensor(correct, dtype=next_q.dtype, device=next_q.device)
        m = torch.as_tensor(m, device=next_q.device)
        g_cont = torch.where(m >= M_max, next_q[..., 0], next_q.max(dim=-1).values)
        return torch.stack((correct, g_cont), dim=-1)
    q_h, q_c = next_q
    g_cont = q_h if m >= M_max else max(q_h, q_c)
    return (1.0 if correct else 0.0, g_cont)


# ---------------------------------------------------------------- optimizer

def warmup_lr(step: int, lr: float, warmup_steps: int) -> float:
    """Learning rate for the ``step``-th update (1-based): linear ramp, then constant."""
    if warmup_steps <= 0:
        return lr
    return lr * step / warmup_steps if step < warmup_steps else lr


class AdamAtan2(torch.optim.Optimizer):
    """Adam whose update direction is ``atan2(m_hat, sqrt(v_hat))``.

    No epsilon is needed and each coordinate moves by at most ``lr * pi / 2``
    per step. Weight decay is decoupled (applied as ``p *= 1 - lr * wd``).
    """

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.95), weight_decay: float = 0.0):
        if lr < 0:
            raise ValueError("lr must be non-negative")
        super().__init__(params, dict(lr=lr, betas=betas, weight_decay=weight_decay))

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        # check everything first so a bad gradient never leaves a half-applied update
        for group in self.param_groups:
            for p in group["params"]:
                if p.grad is not None and not torch.isfinite(p.grad).all():
                    raise NumericalError("non-finite gradient")
        for group in self.param_groups:
            lr, wd = group["lr"], group["weight_decay"]
            b1, b2 = group["betas"]
            for p in group["params"]:
                grad = p.grad if p.grad is not None else torch.zeros_like(p)
                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(p)
                    state["exp_avg_sq"] = torch.zeros_like(p)
                state["step"] += 1
                t = state["step"]
                m, v = state["exp_avg"], state["exp_avg_sq"]
                m.mul_(b1).add_(grad, alpha=1 - b1)
                v.mul_(b2).addcmul_(grad, grad, value=1 - b2)
                m_hat = m / (1 - b1 ** t)
                v_hat = v / (1 - b2 ** t)
                if wd:
                    p.mul_(1 - lr * wd)
                p.add_(torch.atan2(m_hat, v_hat.sqrt()), alpha=-lr)
        return loss


def make_optimizer(net: torch.nn.Module, config: ModelConfig) -> AdamAtan2:
    return AdamAtan2(net.parameters(), lr=config.lr, betas=(config.beta1, config.beta2),
                     weight_decay=config.weight_decay)


def optimizer_step(net, opt: AdamAtan2, step: int, config: ModelConfig) -> float:
    """Set the warmed-up learning rate for update number ``step`` and apply it."""
    lr = warmup_lr(step, config.lr, config.warmup_steps)
    for group in opt.param_groups:
        group["lr"] = lr
    opt.step()
    return lr


# ---------------------------------------------------------------- training loop

def run_segment(net, carry: CarryState, tokens: torch.Tensor, trace: bool = False) -> SegmentResult:
    if hasattr(net, "segment"):
        return net.segment(carry, tokens, trace=trace)
    return segment_forward(net, carry, tokens, trace=trace)


def initial_carry(net, batch_size: int) -> CarryState:
    if hasattr(net, "initial_carry"):
        return net.initial_carry(batch_size)
    return init_carry(net, batch_size)


@dataclass
class SegmentOutcome:
    logits: torch.Tensor
    q: torch.Tensor
    halted: torch.Tensor
    m: torch.Tensor
    correct: torch.Tensor


class Trainer:
    """Batched deep-supervision trainer with ACT slot recycling.

    Each of the ``batch_size`` slots holds one example, its carry, its
    segment counter and its sampled ``M_min``. Every :meth:`step` runs one
    segment for all slots, applies exactly one optimizer update, and swaps
    halted slots for fresh examples drawn from a seeded shuffle of the data.

    ``use_act=False`` gives the fixed-compute variant: every example runs
    exactly ``M_max`` segments and the Q-head is not trained.
    """

    def __init__(self, net, data: TokenDataset, config: ModelConfig, *, use_act: bool = True,
                 seed: int | None = None, batch_size: int | None = None):
        self.net = net
        self.data = data
        self.config = config
        self.use_act = use_act
        self.batch_size = min(batch_size or config.batch_size, len(data)) if len(data) else 0
        if len(data) == 0:
            raise ValueError("empty training set")
        self.opt = make_optimizer(net, config)
        self.rng = np.random.default_rng(config.seed if seed is None else seed)
        self.step_count = 0
        self._order = np.empty(0, dtype=np.int64)
        self._cursor = 0
        B = self.batch_size
        self.slot_index = torch.tensor([self._next_example() for _ in range(B)], dtype=torch.long)
        self.carry = initial_carry(net, B)
        self.m = torch.ones(B, dtype=torch.long)
        self.m_min = torch.as_tensor(self._sample_m_min(B), dtype=torch.long)

    def _sample_m_min(self, n: int) -> np.ndarray:
        if not self.use_act:
            return np.full(n, self.config.M_max)
        return sample_m_min(self.config.epsilon_explore, self.config.M_max, self.rng, size=n)

    def _next_example(self) -> int:
        if self._cursor >= len(self._order):
            self._order = self.rng.permutation(len(self.data))
            self._cursor = 0
        idx = int(self._order[self._cursor])
        self._cursor += 1
        return idx

    def step(self) -> dict[str, Any]:
        cfg, net = self.config, self.net
        net.train()
        x = self.data.inputs[self.slot_index]
        y = self.data.targets[self.slot_index]
        mask = self.data.mask[self.slot_index]
        res = run_segment(net, self.carry, x)
        seq = sequence_loss(res.logits, y, mask, cfg.use_stablemax)
        with torch.no_grad():
            correct = exact_match(res.logits, y, mask)
            q = res.q
        if self.use_act:
            with torch.no_grad():
                next_q = run_segment(net, res.carry, x).q
            target = q_targets(correct, next_q, self.m, cfg.M_max)
            bce = q_bce(res.q_logits, target)
            halted = halt_decision(self.m, q[:, 0], q[:, 1], self.m_min, cfg.M_max)
        else:
            bce = torch.zeros((), dtype=seq.dtype)
            halted = self.m >= cfg.M_max
        loss = seq + bce
        if not torch.isfinite(loss):
            raise NumericalError(
                f"non-finite loss at step {self.step_count + 1}: seq={float(seq.detach())} bce={float(bce.detach())}")
        self.opt.zero_grad(set_to_none=True)
        loss.backward()
        self.step_count += 1
        lr = optimizer_step(net, self.opt, self.step_count, cfg)

        metrics = {
            "step": self.step_count,
            "loss": float(loss.detach()),
            "seq_loss": float(seq.detach()),
            "bce": float(bce.detach()),
            "mean_segments": float(self.m.double().mean()),
            "lr": lr,
            "exact_match": float(correct.double().mean()),
        }
        self.last_outcome = SegmentOutcome(res.logits.detach(), q, halted, self.m.clone(), correct)

        # advance slots; halted ones get a fresh example and the initial carry
        self.carry = res.carry
        self.m = self.m + 1
        done = halted.nonzero().flatten().tolist()
        if done:
            fresh = initial_carry(net, len(done))
            for k, slot in enumerate(done):
                self.slot_index[slot] = self._next_example()
                self.carry.z_H[slot] = fresh.z_H[k]
                self.carry.z_L[slot] = fresh.z_L[k]
                self.m[slot] = 1
            self.m_min[done] = torch.as_tensor(self._sample_m_min(len(done)), dtype=torch.long)
        return metrics

    def train(self, n_steps: int, callback=None) -> list[dict[str, Any]]:
        history = []
        for _ in range(n_steps):
            metrics = self.step()
            history.append(metrics)
            if callback is not None and callback(metrics) is False:
                break
        return history

    def state_dict(self) -> dict[str, Any]:
        return {
            "net": self.net.state_dict(),
            "opt": self.opt.state_dict(),
            "rng": self.rng.bit_generator.state,
            "step": self.step_count,
            "order": self._order.copy(),
            "cursor": self._cursor,
            "slot_index": self.slot_index.clone(),
            "carry_H": self.carry.z_H.clone(),
            "carry_L": self.carry.z_L.clone(),
            "m": self.m.clone(),
            "m_min": self.m_min.clone(),
            "use_act": self.use_act,
        }

    def load_state_dict(self, state: dict[str, Any]) -> None:
        self.net.load_state_dict(state["net"])
        self.opt.load_state_dict(state["opt"])
        self.rng.bit_generator.state = state["rng"]
        self.step_count = int(state["step"])
        self._order = np.asarray(state["order"], dtype=np.int64)
        self._cursor = int(state["cursor"])
        self.slot_index = state["slot_index"].clone()
        self.carry = CarryState(state["carry_H"].clone(), state["carry_L"].clone())
        self.m = state["m"].clone()
        self.m_min = state["m_min"].clone()
        self.use_act = bool(state["use_act"])


# ---------------------------------------------------------------- evaluation

@torch.no_grad()
def predict_segments(net, inputs: torch.Tensor, M_max_eval: int, halting: str = "act",
                     batch_size: int = 64):
    """Greedy predictions with per-example halting (``M_min = 1``).

    ``halting="fixed"`` ignores the Q-head and always runs ``M_max_eval``
    segments. Returns ``(predictions [n, L], segments [n])``.
    """
    if M_max_eval < 1:
        raise ValueError("M_max_eval must be >= 1")
    net.eval()
    preds, segs = [], []
    for start in range(0, len(inputs), batch_size):
        x = inputs[start:start + batch_size]
        B = len(x)
        carry = initial_carry(net, B)
        pred = torch.zeros_like(x)
        used = torch.zeros(B, dtype=torch.long)
        active = torch.ones(B, dtype=torch.bool)
        for m in range(1, M_max_eval + 1):
            res = run_segment(net, carry, x)
            carry = res.carry
            q = res.q
            if halting == "fixed":
                halt = torch.full((B,), m >= M_max_eval)
            else:
                halt = halt_decision(m, q[:, 0], q[:, 1], 1, M_max_eval)
            newly = active & halt
            pred[newly] = res.logits.argmax(dim=-1)[newly]
            used[newly] = m
            active &= ~halt
            if not active.any():
                break
        preds.append(pred)
        segs.append(used)
    return torch.cat(preds), torch.cat(segs)


def evaluate(net, data: TokenDataset, M_max_eval: int, halting: str = "act",
             batch_size: int = 64) -> dict[str, Any]:
    """Exact-match rate, token accuracy (supervised positions) and mean segments."""
    if len(data) == 0:
        return {"exact_match": math.nan, "token_accuracy": math.nan, "mean_segments": math.nan,
                "n": 0, "predictions": data.targets.clone(), "segments": torch.zeros(0)}
    preds, segs = predict_segments(net, data.inputs, M_max_eval, halting, batch_size)
    hit = (preds == data.targets) & data.mask
    exact = (hit | ~data.mask).all(dim=-1)
    return {
        "exact_match": float(exact.double().mean()),
        "token_accuracy": float(hit.sum()) / float(data.mask.sum()),
        "mean_segments": float(segs.double().mean()),
        "n": len(data),
        "predictions": preds,
        "segments": segs,
        "correct": exact,
    }
