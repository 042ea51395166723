"""Two-timescale recurrence and the one-step gradient segment."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .core import HRMNet


class ContractError(RuntimeError):
    """A carry that still holds autograd history was passed between segments."""


@dataclass
class CarryState:
    z_H: torch.Tensor
    z_L: torch.Tensor

    @property
    def severed(self) -> bool:
        return not (self.z_H.requires_grad or self.z_L.requires_grad)

    def detach(self) -> "CarryState":
        return CarryState(self.z_H.detach(), self.z_L.detach())

    def clone(self) -> "CarryState":
        return CarryState(self.z_H.clone(), self.z_L.clone())


@dataclass
class StateTrace:
    """Snapshots ``(i, z_L^i, z_H^i)``; index 0 is the incoming carry."""

    steps: list[tuple[int, torch.Tensor, torch.Tensor]] = field(default_factory=list)
    T: int = 1

    def record(self, i: int, z_L: torch.Tensor, z_H: torch.Tensor) -> None:
        self.steps.append((i, z_L.detach().clone(), z_H.detach().clone()))

    def extend(self, other: "StateTrace") -> None:
        # skip other's step 0, it duplicates our last snapshot
        offset = self.steps[-1][0] if self.steps else 0
        start = 1 if self.steps else 0
        for i, zl, zh in other.steps[start:]:
            self.steps.append((offset + i, zl, zh))

    def __len__(self) -> int:
        return len(self.steps)

    def z_L(self) -> torch.Tensor:
        return torch.stack([s[1] for s in self.steps])

    def z_H(self) -> torch.Tensor:
        return torch.stack([s[2] for s in self.steps])


@dataclass
class SegmentResult:
    carry: CarryState
    logits: torch.Tensor
    q_logits: torch.Tensor
    trace: StateTrace | None = None
    l_updates: int = 0
    h_updates: int = 0

    @property
    def q(self) -> torch.Tensor:
        """``[..., 2]`` sigmoid values (halt, continue)."""
        return torch.sigmoid(self.q_logits)


def init_carry(net: HRMNet, batch_size: int | None = None) -> CarryState:
    """Fixed initial state of the net, optionally broadcast to a batch."""
    z_H, z_L = net.z_H0, net.z_L0
    if batch_size is not None:
        z_H = z_H.expand(batch_size, *z_H.shape).clone()
        z_L = z_L.expand(batch_size, *z_L.shape).clone()
    return CarryState(z_H.detach(), z_L.detach())


def l_step(net: HRMNet, z_L, z_H, x_emb):
    return net.f_L(z_L, z_H, x_emb)


def h_step(net: HRMNet, z_H, z_L):
    return net.f_H(z_H, z_L)


def segment_forward(net, carry: CarryState, tokens: torch.Tensor, trace: bool = False) -> SegmentResult:
    """One forward pass of N cycles x T low-level steps.

    The first ``N*T - 1`` low-level steps (and the ``N - 1`` high-level steps
    they trigger) run without autograd; only the final L-step and H-step are
    recorded. The returned carry is detached.
    """
    if not carry.severed:
        raise ContractError("carry must be detached from the autograd graph")
    cfg = net.config
    N, T = cfg.N, cfg.T
    x_emb = net.embed_input(tokens)
    z_H, z_L = carry.z_H, carry.z_L
    tr = StateTrace(T=T) if trace else None
    if tr is not None:
        tr.record(0, z_L, z_H)
    n_l = n_h = 0
    with torch.no_grad():
        for i in range(1, N * T):
            z_L = l_step(net, z_L, z_H, x_emb)
            n_l += 1
            if i % T == 0:
                z_H = h_step(net, z_H, z_L)
                n_h += 1
            if tr is not None:
                tr.record(i, z_L, z_H)
    # 1-step gradient
    z_L = l_step(net, z_L, z_H, x_emb)
    z_H = h_step(net, z_H, z_L)
    n_l += 1
    n_h += 1
    if tr is not None:
        tr.record(N * T, z_L, z_H)
    logits = net.output_head(z_H)
    q_logits = net.q_logits(z_H)
    return SegmentResult(CarryState(z_H.detach(), z_L.detach()), logits, q_logits, tr, n_l, n_h)


def _param_groups(net: HRMNet) -> dict[str, list[tuple[str, torch.nn.Parameter]]]:
    groups: dict[str, list] = {"theta_O": [], "theta_H": [], "theta_L": [], "theta_I": [], "theta_Q": []}
    for name, p in net.named_parameters():
        if name == "w_out":
            groups["theta_O"].append((name, p))
        elif name.startswith("H_module"):
            groups["theta_H"].append((name, p))
        elif name.startswith("L_module"):
            groups["theta_L"].append((name, p))
        elif name == "embedding":
            groups["theta_I"].append((name, p))
        elif name == "w_q":
            groups["theta_Q"].append((name, p))
        else:  # pragma: no cover - new parameters must be assigned a group
            raise KeyError(name)
    return groups


def one_step_gradient_check(net: HRMNet, tokens: torch.Tensor, targets: torch.Tensor,
                            carry: CarryState | None = None, step: float = 1e-5,
                            max_entries: int | None = None, seed: int = 0,
                            q_targets: tuple[float, float] = (1.0, 0.0)) -> dict[str, float]:
    """Compare autograd gradients with central finite differences.

    The finite-difference oracle evaluates the loss as a plain function of the
    parameters in which the ``N*T - 1`` unrecorded steps are frozen at the
    current parameters, i.e. the exact function whose gradient the one-step
    scheme defines. Returns the relative error ``|g_ad - g_fd| / |g_fd|`` (L2
    over the checked entries) per parameter group; ``"max"`` holds the worst.
    """
    from .act import act_loss  # local: act depends on this module

    if next(net.parameters()).dtype != torch.float64:
        raise TypeError("gradient check requires a float64 network (net.double())")
    if carry is None:
        carry = init_carry(net, tokens.shape[0])
    qt = torch.tensor(q_targets, dtype=torch.float64).expand(tokens.shape[0], 2)

    def loss_of(result):
        return act_loss(result.logits, targets, result.q_logits, qt,
                        use_stablemax=net.config.use_stablemax)

    net.zero_grad(set_to_none=True)
    loss = loss_of(segment_forward(net, carry, tokens))
    if not torch.isfinite(loss):
        raise FloatingPointError("non-finite loss in gradient check")
    loss.backward()

    # frozen prefix: states entering the final recorded L/H steps
    cfg = net.config
    with torch.no_grad():
        x_emb = net.embed_input(tokens)
        z_H, z_L = carry.z_H, carry.z_L
        for i in range(1, cfg.N * cfg.T):
            z_L = l_step(net, z_L, z_H, x_emb)
            if i % cfg.T == 0:
                z_H = h_step(net, z_H, z_L)
    z_H_pre, z_L_pre = z_H.clone(), z_L.clone()

    def frozen_loss() -> float:
        with torch.no_grad():
            zl = l_step(net, z_L_pre, z_H_pre, net.embed_input(tokens))
            zh = h_step(net, z_H_pre, zl)
            r = SegmentResult(CarryState(zh, zl), net.output_head(zh), net.q_logits(zh))
            return float(loss_of(r))

    rng = torch.Generator().manual_seed(seed)
    errors: dict[str, float] = {}
    for group, params in _param_groups(net).items():
        ad, fd = [], []
        for _, p in params:
            flat = p.data.view(-1)
            grad = p.grad.view(-1) if p.grad is not None else torch.zeros_like(flat)
            idx = torch.arange(flat.numel())
            if max_entries is not None and flat.numel() > max_entries:
                idx = torch.randperm(flat.numel(), generator=rng)[:max_entries]
            for j in idx.tolist():
                orig = flat[j].item()
                flat[j] = orig + step
                up = frozen_loss()
                flat[j] = orig - step
                down = frozen_loss()
                flat[j] = orig
                fd.append((up - down) / (2 * step))
                ad.append(grad[j].item())
        ad_t, fd_t = torch.tensor(ad, dtype=torch.float64), torch.tensor(fd, dtype=torch.float64)
        scale = max(float(fd_t.norm()), float(ad_t.norm()), 1e-12)
        errors[group] = float((ad_t - fd_t).norm()) / scale
    errors["max"] = max(errors.values())
    net.zero_grad(set_to_none=True)
    return errors
