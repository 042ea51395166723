"""scikit-learn style wrapper around the training and inference pipeline."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .act import Trainer, evaluate, predict_segments
from .analysis import collect_trajectories
from .checkpoint import build_model
from .config import ModelConfig
from .data.tokens import TokenDataset


def check_tokens(X, vocab_size: int | None = None, seq_len: int | None = None,
                 name: str = "X") -> np.ndarray:
    """Validate a 2-D integer token matrix; returns an int64 copy."""
    arr = check_array(X, dtype=None, ensure_2d=True, ensure_all_finite=True, input_name=name)
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError(f"{name} must contain integer token ids")
    arr = arr.astype(np.int64)
    if arr.min(initial=0) < 0:
        raise ValueError(f"{name} contains negative token ids")
    if vocab_size is not None and arr.max(initial=0) >= vocab_size:
        raise ValueError(f"{name} has token ids >= vocab_size={vocab_size}")
    if seq_len is not None and arr.shape[1] != seq_len:
        raise ValueError(f"{name} has sequence length {arr.shape[1]}, expected {seq_len}")
    return arr


def check_token_pair(X, y, vocab_size=None, seq_len=None):
    X = check_tokens(X, vocab_size, seq_len, "X")
    y = check_tokens(y, vocab_size, seq_len, "y")
    if X.shape != y.shape:
        raise ValueError(f"X and y shapes differ: {X.shape} vs {y.shape}")
    return X, y


class HRMSeq2Seq(BaseEstimator):
    """Token-to-token HRM (or baseline) trained with deep supervision.

    ``fit`` runs ``n_steps`` optimizer updates; ``predict`` decodes greedily
    with Q-head halting; ``transform`` returns the final high-level state of
    the first recorded segment, flattened per example.
    """

    def __init__(self, hidden_dim=128, n_heads=4, blocks_per_module=2, expansion=4.0, N=2, T=2,
                 M_max=8, epsilon_explore=0.1, use_stablemax=False, lr=1e-4, warmup_steps=200,
                 weight_decay=0.1, batch_size=16, n_steps=1000, variant="hrm", depth=None,
                 loops=1, use_act=True, M_max_eval=None, vocab_size=None, random_state=0):
        self.hidden_dim = hidden_dim
        self.n_heads = n_heads
        self.blocks_per_module = blocks_per_module
        self.expansion = expansion
        self.N = N
        self.T = T
        self.M_max = M_max
        self.epsilon_explore = epsilon_explore
        self.use_stablemax = use_stablemax
        self.lr = lr
        self.warmup_steps = warmup_steps
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.n_steps = n_steps
        self.variant = variant
        self.depth = depth
        self.loops = loops
        self.use_act = use_act
        self.M_max_eval = M_max_eval
        self.vocab_size = vocab_size
        self.random_state = random_state

    def _config(self, vocab: int, seq: int) -> ModelConfig:
        act = self.use_act and self.variant == "hrm"
        return ModelConfig(
            vocab_size=vocab, seq_len=seq, hidden_dim=self.hidden_dim, n_heads=self.n_heads,
            blocks_per_module=self.blocks_per_module, expansion=self.expansion, N=self.N, T=self.T,
            M_max=self.M_max, epsilon_explore=self.epsilon_explore if act else 0.0,
            use_stablemax=self.use_stablemax, lr=self.lr, warmup_steps=self.warmup_steps,
            weight_decay=self.weight_decay, batch_size=self.batch_size,
            seed=int(self.random_state or 0))

    def fit(self, X, y, mask=None):
        X, y = check_token_pair(X, y)
        vocab = self.vocab_size or int(max(X.max(), y.max())) + 1
        check_token_pair(X, y, vocab)
        self.config_ = self._config(vocab, X.shape[1])
        self.net_ = build_model(self.config_, self.variant, self.depth, self.loops)
        data = TokenDataset.from_arrays(X, y, mask)
        trainer = Trainer(self.net_, data, self.config_, use_act=self.use_act and self.variant == "hrm")
        self.history_ = trainer.train(int(self.n_steps))
        self.n_features_in_ = X.shape[1]
        return self

    def _eval_limit(self) -> int:
        return int(self.M_max_eval or self.config_.M_max)

    def _halting(self) -> str:
        return "act" if self.use_act and self.variant == "hrm" else "fixed"

    def _check_X(self, X) -> torch.Tensor:
        check_is_fitted(self, "net_")
        arr = check_tokens(X, self.config_.vocab_size, self.config_.seq_len)
        return torch.as_tensor(arr)

    @torch.no_grad()
    def predict(self, X) -> np.ndarray:
        x = self._check_X(X)
        preds, _ = predict_segments(self.net_, x, self._eval_limit(), self._halting())
        return preds.numpy()

    def score(self, X, y, mask=None) -> float:
        """Exact-match rate over supervised positions."""
        x = self._check_X(X)
        y = check_tokens(y, self.config_.vocab_size, self.config_.seq_len, "y")
        data = TokenDataset.from_arrays(x.numpy(), y, mask)
        return evaluate(self.net_, data, self._eval_limit(), self._halting())["exact_match"]

    def transform(self, X) -> np.ndarray:
        x = self._check_X(X)
        bundle = collect_trajectories(self.net_, x, 1)
        return np.stack([seq[-1] for seq in bundle.z_H])
