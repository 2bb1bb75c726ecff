"""Soft actor-critic on numpy: squashed-Gaussian policy, twin Q, EMA value target.

Action sampling follows the two-phase rule: uniform random over the span while
an agent is inside its warmup budget, then the reparameterized tanh-squashed
Gaussian rescaled to the span. The three objectives are

    J_V  = E[ 1/2 (V(s) - (min Q(s, a~) - alpha * log pi(a~|s)))^2 ]
    J_Q  = E[ 1/2 (Q(s, a) - (r + gamma * (1 - done) * V_target(s')))^2 ]
    J_pi = E[ alpha * log pi(a~|s) - min Q(s, a~) ]

with a~ a fresh reparameterized sample. Gradients are composed by hand from
the Mlp backward passes; ``losses``/``gradients`` evaluate everything for a
frozen noise draw so finite-difference checks can replay them exactly. The
temperature alpha is tuned toward a target entropy of -action_dim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .mlp import Adam, Mlp, ScalarAdam, ema_update
from .replay import ReplayMemory

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_SQUASH_EPS = 1e-6


class UpdateDiverged(RuntimeError):
    """A SAC objective became non-finite."""


@dataclass
class SacConfig:
    hidden: Tuple[int, ...] = (64, 64)
    lr: float = 3e-4
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 256
    alpha_init: float = 0.2
    auto_alpha: bool = True
    target_entropy: Optional[float] = None  # default: -action_dim
    warmup_decisions: int = 1000
    memory_capacity: int = 500_000


class SacAgent:
    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        span: Tuple[float, float],
        config: Optional[SacConfig] = None,
        seed: int = 0,
        input_scale: Optional[np.ndarray] = None,
    ):
        self.config = config or SacConfig()
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        lo, hi = float(span[0]), float(span[1])
        if not hi > lo:
            raise ValueError("action span must have hi > lo")
        self.span = (lo, hi)
        self.center = (hi + lo) / 2.0
        self.half = (hi - lo) / 2.0
        cfg = self.config

        rng = np.random.default_rng(seed)
        sizes_v = [state_dim, *cfg.hidden, 1]
        sizes_q = [state_dim + action_dim, *cfg.hidden, 1]
        sizes_pi = [state_dim, *cfg.hidden, 2 * action_dim]
        self.v_net = Mlp(sizes_v, rng)
        self.v_target = Mlp(sizes_v, rng)
        self.v_target.copy_from(self.v_net)
        self.q1 = Mlp(sizes_q, rng)
        self.q2 = Mlp(sizes_q, rng)
        self.policy = Mlp(sizes_pi, rng)

        self.opt_v = Adam(self.v_net, cfg.lr)
        self.opt_q1 = Adam(self.q1, cfg.lr)
        self.opt_q2 = Adam(self.q2, cfg.lr)
        self.opt_pi = Adam(self.policy, cfg.lr)
        self.log_alpha = float(np.log(cfg.alpha_init))
        self.opt_alpha = ScalarAdam(cfg.lr)
        self.target_entropy = (
            cfg.target_entropy if cfg.target_entropy is not None else -float(action_dim)
        )

        self.memory = ReplayMemory(cfg.memory_capacity, state_dim, action_dim)
        self.rng = np.random.default_rng(seed + 101)
        self.update_rng = np.random.default_rng(seed + 202)
        self.decisions = 0
        self.updates = 0
        if input_scale is None:
            self.input_scale = np.ones(state_dim)
        else:
            self.input_scale = np.asarray(input_scale, dtype=np.float64).ravel()
            if self.input_scale.size != state_dim:
                raise ValueError("input_scale size mismatch")

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))

    # ------------------------------------------------------------------ policy

    def _scale(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        if s.ndim == 1:
            s = s[None, :]
        return s / self.input_scale

    def _policy_heads(self, s_scaled: np.ndarray):
        out, cache = self.policy.forward(s_scaled)
        mu = out[:, : self.action_dim]
        raw = out[:, self.action_dim :]
        t_raw = np.tanh(raw)
        log_std = LOG_STD_MIN + 0.5 * (t_raw + 1.0) * (LOG_STD_MAX - LOG_STD_MIN)
        return mu, log_std, t_raw, cache

    def _squash(self, mu, log_std, eps):
        std = np.exp(log_std)
        u = mu + std * eps
        t = np.tanh(u)
        a = self.center + self.half * t
        logp = (
            -0.5 * eps ** 2
            - log_std
            - 0.5 * math.log(2.0 * math.pi)
            - np.log(1.0 - t ** 2 + _SQUASH_EPS)
            - math.log(self.half)
        ).sum(axis=1)
        return a, logp, u, t, std

    def sample_action(self, state, deterministic: bool = False):
        """Action in the span plus its log-probability.

        While the agent is inside its warmup budget (and not evaluating), the
        action is uniform over the span.
        """
        state = np.asarray(state, dtype=np.float64).ravel()
        if not np.all(np.isfinite(state)):
            raise ValueError("non-finite state passed to sample_action")
        self.decisions += 1
        if not deterministic and self.decisions <= self.config.warmup_decisions:
            a = self.rng.uniform(self.span[0], self.span[1], size=self.action_dim)
            logp = -self.action_dim * math.log(self.span[1] - self.span[0])
            return a, float(logp)
        mu, log_std, _, _ = self._policy_heads(self._scale(state))
        eps = (
            np.zeros((1, self.action_dim))
            if deterministic
            else self.rng.standard_normal((1, self.action_dim))
        )
        a, logp, _, _, _ = self._squash(mu, log_std, eps)
        return a[0], float(logp[0])

    def log_prob_of(self, state, action) -> float:
        """Density of an arbitrary in-span action under the current policy."""
        state = np.asarray(state, dtype=np.float64).ravel()
        a = np.asarray(action, dtype=np.float64).ravel()
        t = np.clip((a - self.center) / self.half, -1.0 + 1e-12, 1.0 - 1e-12)
        u = np.arctanh(t)
        mu, log_std, _, _ = self._policy_heads(self._scale(state))
        std = np.exp(log_std[0])
        z = (u - mu[0]) / std
        logp = (
            -0.5 * z ** 2
            - log_std[0]
            - 0.5 * math.log(2.0 * math.pi)
            - np.log(1.0 - t ** 2 + _SQUASH_EPS)
            - math.log(self.half)
        ).sum()
        return float(logp)

    # ----------------------------------------------------------------- update

    def _objectives(self, batch: Dict[str, np.ndarray], eps: np.ndarray, want_grads: bool):
        """Losses (and optionally grads) of Eqs. J_V / J_Q / J_pi at one noise draw."""
        s = self._scale(batch["s"])
        s2 = self._scale(batch["s2"])
        a = np.asarray(batch["a"], dtype=np.float64)
        r = np.asarray(batch["r"], dtype=np.float64).ravel()
        done = np.asarray(batch["done"], dtype=np.float64).ravel()
        B = s.shape[0]
        alpha = self.alpha

        # fresh reparameterized sample
        mu, log_std, t_raw, cache_pi = self._policy_heads(s)
        a_new, logp, u, t, std = self._squash(mu, log_std, eps)

        sa_new = np.concatenate([s, a_new], axis=1)
        q1_new, cache_q1n = self.q1.forward(sa_new)
        q2_new, cache_q2n = self.q2.forward(sa_new)
        q1_new = q1_new[:, 0]
        q2_new = q2_new[:, 0]
        use_q1 = q1_new <= q2_new
        q_min = np.where(use_q1, q1_new, q2_new)

        v_s, cache_v = self.v_net.forward(s)
        v_s = v_s[:, 0]
        v_target_val = q_min - alpha * logp
        j_v = 0.5 * float(np.mean((v_s - v_target_val) ** 2))

        v2, _ = self.v_target.forward(s2)
        backup = r + self.config.gamma * (1.0 - done) * v2[:, 0]
        sa = np.concatenate([s, a], axis=1)
        q1_pred, cache_q1 = self.q1.forward(sa)
        q2_pred, cache_q2 = self.q2.forward(sa)
        j_q1 = 0.5 * float(np.mean((q1_pred[:, 0] - backup) ** 2))
        j_q2 = 0.5 * float(np.mean((q2_pred[:, 0] - backup) ** 2))

        j_pi = float(np.mean(alpha * logp - q_min))

        losses = {
            "J_V": j_v,
            "J_Q1": j_q1,
            "J_Q2": j_q2,
            "J_Q": j_q1 + j_q2,
            "J_pi": j_pi,
            "alpha": alpha,
            "entropy": float(np.mean(-logp)),
        }
        if not want_grads:
            return losses, None

        grads = {}
        grads["v"], _ = self.v_net.backward(cache_v, ((v_s - v_target_val) / B)[:, None])
        grads["q1"], _ = self.q1.backward(cache_q1, ((q1_pred[:, 0] - backup) / B)[:, None])
        grads["q2"], _ = self.q2.backward(cache_q2, ((q2_pred[:, 0] - backup) / B)[:, None])

        # d J_pi / d a_new via the per-sample minimum of the twin critics
        g1 = (-(use_q1.astype(np.float64)) / B)[:, None]
        g2 = (-((~use_q1).astype(np.float64)) / B)[:, None]
        _, gx1 = self.q1.backward(cache_q1n, g1)
        _, gx2 = self.q2.backward(cache_q2n, g2)
        grad_a = gx1[:, self.state_dim :] + gx2[:, self.state_dim :]

        dlogp_du = 2.0 * t * (1.0 - t ** 2) / (1.0 - t ** 2 + _SQUASH_EPS)
        da_du = self.half * (1.0 - t ** 2)
        g_mu = (alpha / B) * dlogp_du + grad_a * da_du
        g_log_std = (alpha / B) * (-1.0 + dlogp_du * std * eps) + grad_a * da_du * std * eps
        g_raw = g_log_std * 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (1.0 - t_raw ** 2)
        grads["policy"], _ = self.policy.backward(cache_pi, np.concatenate([g_mu, g_raw], axis=1))

        grads["log_alpha"] = -float(np.mean(logp + self.target_entropy))
        grads["logp_mean"] = float(np.mean(logp))
        return losses, grads

    def losses(self, batch, eps) -> Dict[str, float]:
        losses, _ = self._objectives(batch, eps, want_grads=False)
        return losses

    def gradients(self, batch, eps):
        return self._objectives(batch, eps, want_grads=True)

    def update(self, batch: Optional[Dict[str, np.ndarray]] = None) -> Dict[str, float]:
        """One gradient step on every objective plus EMA and temperature."""
        cfg = self.config
        if batch is None:
            batch = self.memory.sample(cfg.batch_size, self.update_rng)
        eps = self.update_rng.standard_normal((batch["s"].shape[0], self.action_dim))
        losses, grads = self._objectives(batch, eps, want_grads=True)
        for key in ("J_V", "J_Q1", "J_Q2", "J_pi"):
            if not math.isfinite(losses[key]):
                raise UpdateDiverged("%s is %r at update %d" % (key, losses[key], self.updates))

        self.opt_v.step(grads["v"])
        self.opt_q1.step(grads["q1"])
        self.opt_q2.step(grads["q2"])
        self.opt_pi.step(grads["policy"])
        if cfg.auto_alpha:
            self.log_alpha = self.opt_alpha.step(self.log_alpha, grads["log_alpha"])
            losses["alpha_loss"] = -self.log_alpha * (grads["logp_mean"] + self.target_entropy)
        else:
            losses["alpha_loss"] = 0.0
        ema_update(self.v_target, self.v_net, cfg.tau)
        self.updates += 1
        losses["alpha"] = self.alpha
        return losses

    def ready(self) -> bool:
        return len(self.memory) >= self.config.batch_size
