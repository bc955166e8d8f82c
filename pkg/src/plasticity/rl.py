"""Double DQN on Catch with intervention schedules.

Every scheduled intervention is applied to the online and the target
network with the same seed, so both keep the same structure (including
injected head generations).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigError, DivergenceError, UsageError
from .injection import AdaptiveTriggerState, adaptive_trigger, inject, injection_optimizer_state
from .interventions import (
    InterventionSpec,
    reset_last_layers,
    reset_optimizer_state,
    shrink_and_perturb,
    widen_last_layers,
    widen_optimizer_state,
)
from .nn import (
    InitSpec,
    RmsPropState,
    add_grads,
    apply_gradients,
    build_network,
    l2_penalty_grads,
    mse_loss,
    weight_norm,
)
from .runlog import MetricSeries

LEFT, STAY, RIGHT = 0, 1, 2
N_ACTIONS = 3
SWITCH_KINDS = ("none", "mirror_observation", "permute_actions")


@dataclass
class EnvConfig:
    rows: int = 10
    cols: int = 5
    switch_step: int | None = None
    switch_kind: str = "none"

    def __post_init__(self):
        if self.rows < 2 or self.cols < 1:
            raise ConfigError("need rows >= 2 and cols >= 1", "rows")
        if self.switch_kind not in SWITCH_KINDS:
            raise ConfigError(f"unknown switch_kind {self.switch_kind!r}", "switch_kind")


class CatchEnv:
    """Ball falls one row per step from a random top column; the paddle sits
    on the bottom row. Reward +1/-1 on the final step for catch/miss."""

    def __init__(self, cfg: EnvConfig | None = None, seed: int = 0):
        self.cfg = cfg or EnvConfig()
        self.rows, self.cols = self.cfg.rows, self.cfg.cols
        self.rng = np.random.default_rng(seed)
        self.global_step = 0
        self.ball_row = self.ball_col = self.paddle_col = 0
        self.done = True

    @property
    def obs_dim(self) -> int:
        return self.rows * self.cols

    def switched(self) -> bool:
        c = self.cfg
        return c.switch_kind != "none" and c.switch_step is not None and self.global_step >= c.switch_step

    def reset(self, ball_col: int | None = None):
        self.ball_row = 0
        self.ball_col = int(self.rng.integers(self.cols)) if ball_col is None else ball_col
        self.paddle_col = self.cols // 2
        self.done = False
        return self.observe()

    def observe(self):
        return render(self.rows, self.cols, self.ball_row, self.ball_col, self.paddle_col,
                      self.switched() and self.cfg.switch_kind == "mirror_observation")

    def step(self, action: int):
        if self.done:
            raise UsageError("step after episode end; call reset()")
        if self.switched() and self.cfg.switch_kind == "permute_actions":
            action = 2 - action
        self.paddle_col = min(max(self.paddle_col + action - 1, 0), self.cols - 1)
        self.ball_row += 1
        self.global_step += 1
        reward = 0.0
        if self.ball_row == self.rows - 1:
            self.done = True
            reward = 1.0 if self.paddle_col == self.ball_col else -1.0
        return self.observe(), reward, self.done


def render(rows, cols, ball_row, ball_col, paddle_col, mirror=False):
    """Batched-or-scalar one-hot grid, flattened row-major."""
    ball_row, ball_col, paddle_col = np.broadcast_arrays(ball_row, ball_col, paddle_col)
    if mirror:
        ball_col, paddle_col = cols - 1 - ball_col, cols - 1 - paddle_col
    obs = np.zeros(ball_row.shape + (rows * cols,))
    flat = obs.reshape(-1, rows * cols)
    idx = np.arange(flat.shape[0])
    flat[idx, (ball_row * cols + ball_col).ravel()] = 1.0
    flat[idx, ((rows - 1) * cols + paddle_col).ravel()] = 1.0
    return obs


def env_step(env: CatchEnv, action: int):
    return env.step(action)


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int):
        if capacity < 1:
            raise ConfigError("capacity must be >= 1", "buffer_capacity")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.cursor = 0
        self.size = 0
        self.added = 0

    def add(self, obs, action, reward, next_obs, done):
        i = self.cursor
        self.obs[i], self.actions[i], self.rewards[i] = obs, action, reward
        self.next_obs[i], self.dones[i] = next_obs, float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.added += 1

    def sample(self, rng, batch_size: int) -> dict:
        if self.size == 0:
            raise UsageError("sampling from an empty buffer")
        idx = rng.integers(0, self.size, batch_size)
        return {
            "obs": self.obs[idx], "actions": self.actions[idx], "rewards": self.rewards[idx],
            "next_obs": self.next_obs[idx], "dones": self.dones[idx],
        }


@dataclass
class AgentConfig:
    widths: list = field(default_factory=lambda: [50, 64, 64, 3])
    split_k: int | None = None  # default: last two layers form the head
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int | None = None  # default: 10% of the budget
    target_update_period: int = 200
    replay_ratio: float = 1.0
    batch_size: int = 32
    buffer_capacity: int = 10_000
    learning_starts: int = 500
    learning_rate: float = 1e-3
    decay_rho: float = 0.99
    epsilon_rms: float = 1e-8
    loss: str = "mse"
    huber_delta: float = 1.0
    l2: float = 0.0
    spectral_norm: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)", "gamma")
        if self.replay_ratio <= 0:
            raise ConfigError("replay_ratio must be > 0", "replay_ratio")
        if self.target_update_period < 1:
            raise ConfigError("target_update_period must be >= 1", "target_update_period")
        if self.loss not in ("mse", "huber"):
            raise ConfigError(f"unknown loss {self.loss!r}", "loss")
        if self.split_k is None:
            self.split_k = max(0, len(self.widths) - 3)

    @property
    def penultimate(self) -> int:
        return len(self.widths) - 3


class DoubleDqnAgent:
    def __init__(self, cfg: AgentConfig, seed: int = 0):
        self.cfg = cfg
        sn = (cfg.penultimate,) if cfg.spectral_norm else ()
        self.online = build_network(cfg.widths, init=InitSpec(_sub_seed(seed, 1)), spectral_norm_layers=sn)
        self.target = self.online.copy()
        self.opt = RmsPropState(cfg.learning_rate, cfg.decay_rho, cfg.epsilon_rms)
        self.rng = np.random.default_rng([seed, 2])
        self.grad_steps = 0

    def q_values(self, obs):
        return self.online(obs)

    def sync_target(self):
        self.target = self.online.copy()

    def train_step(self, batch) -> float:
        self.online.update_spectral()
        y = double_q_targets(batch, self.online, self.target, self.cfg.gamma)
        q, cache = self.online.forward(batch["obs"])
        rows = np.arange(q.shape[0])
        pred = q[rows, batch["actions"]]
        if self.cfg.loss == "mse":
            loss, dpred = mse_loss(pred, y)
        else:
            loss, dpred = huber_loss(pred, y, self.cfg.huber_delta)
        dq = np.zeros_like(q)
        dq[rows, batch["actions"]] = dpred
        grads, _ = self.online.backward(cache, dq)
        if self.cfg.l2 > 0:
            grads = add_grads(grads, l2_penalty_grads(self.online, self.cfg.l2))
        self.opt = apply_gradients(self.online, self.opt, grads)
        self.grad_steps += 1
        if self.grad_steps % self.cfg.target_update_period == 0:
            self.sync_target()
        return loss


def huber_loss(pred, target, delta=1.0):
    diff = pred - target
    a = np.abs(diff)
    quad = np.minimum(a, delta)
    loss = 0.5 * quad**2 + delta * (a - quad)
    return float(loss.mean()), np.clip(diff, -delta, delta) / diff.size


def double_q_targets(batch, online, target, gamma: float):
    """r + gamma * Q_target(s', argmax_a Q_online(s', a)); r alone at terminals."""
    rewards = np.asarray(batch["rewards"], dtype=np.float64)
    if rewards.size == 0:
        raise UsageError("empty batch")
    q_online = online(batch["next_obs"])
    q_target = target(batch["next_obs"])
    if not (np.all(np.isfinite(q_online)) and np.all(np.isfinite(q_target))):
        raise DivergenceError("non-finite Q-values")
    best = np.argmax(q_online, axis=1)
    bootstrap = q_target[np.arange(rewards.size), best]
    return rewards + gamma * (1.0 - np.asarray(batch["dones"], dtype=np.float64)) * bootstrap


def act(agent, obs, epsilon: float, rng=None) -> int:
    """Epsilon-greedy; argmax ties go to the lowest action index."""
    rng = agent.rng if rng is None else rng
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(N_ACTIONS))
    return int(np.argmax(agent.q_values(obs)[0]))


def epsilon_at(cfg: AgentConfig, step: int, budget: int) -> float:
    decay = cfg.epsilon_decay_steps or max(1, budget // 10)
    frac = min(1.0, step / decay)
    return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start)


def evaluate(model, env_cfg: EnvConfig, n_episodes: int, rng, switched: bool = False) -> float:
    """Mean greedy return; all episodes run in lockstep (equal lengths)."""
    rows, cols = env_cfg.rows, env_cfg.cols
    mirror = switched and env_cfg.switch_kind == "mirror_observation"
    permute = switched and env_cfg.switch_kind == "permute_actions"
    ball = rng.integers(0, cols, n_episodes)
    paddle = np.full(n_episodes, cols // 2)
    for ball_row in range(rows - 1):
        q = model(render(rows, cols, np.full(n_episodes, ball_row), ball, paddle, mirror))
        a = np.argmax(q, axis=1)
        if permute:
            a = 2 - a
        paddle = np.clip(paddle + a - 1, 0, cols - 1)
    return float(np.mean(np.where(paddle == ball, 1.0, -1.0)))


def _sub_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1, np.uint64)[0])


def apply_intervention(agent: DoubleDqnAgent, spec: InterventionSpec, seed: int) -> None:
    """Transform online and target identically; online optimizer state follows."""
    init = InitSpec(seed)
    old = agent.online
    if spec.kind == "inject":
        agent.online = inject(old, spec.injection, init)
        agent.target = inject(agent.target, spec.injection, init)
        agent.opt = injection_optimizer_state(agent.opt, old, agent.online, spec.injection.optimizer_state_policy)
    elif spec.kind == "reset":
        agent.online = reset_last_layers(old, spec.n_layers, init)
        agent.target = reset_last_layers(agent.target, spec.n_layers, init)
        agent.opt = reset_optimizer_state(agent.opt, old, agent.online)
    elif spec.kind == "snp":
        agent.online = shrink_and_perturb(old, spec.shrink, spec.sigma, seed)
        agent.target = shrink_and_perturb(agent.target, spec.shrink, spec.sigma, seed)
    elif spec.kind == "widen":
        agent.online = widen_last_layers(old, init, spec.zero_new_outgoing)
        agent.target = widen_last_layers(agent.target, init, spec.zero_new_outgoing)
        agent.opt = widen_optimizer_state(agent.opt, old, agent.online)


def run_rl_experiment(agent_cfg: AgentConfig, env_cfg: EnvConfig, schedule=(), budget_steps: int = 20_000,
                      eval_every: int = 1000, seed: int = 0, run_id: str = "run", eval_episodes: int = 100,
                      probe_hook=None, adaptive_check_every: int = 100) -> MetricSeries:
    """Train for ``budget_steps`` environment steps.

    Logged metrics: ``return`` (greedy mean over ``eval_episodes``),
    ``weight_norm``, ``train_loss`` (mean since the last eval) and
    ``grad_steps`` at every eval point, plus one ``intervention`` row per
    applied intervention. ``probe_hook(event, agent, step)`` is called
    just before and after each intervention.
    """
    series = MetricSeries(run_id, seed)
    env = CatchEnv(env_cfg, _sub_seed(seed, 3))
    agent = DoubleDqnAgent(agent_cfg, seed)
    buffer = ReplayBuffer(agent_cfg.buffer_capacity, env.obs_dim)
    ratio = Fraction(agent_cfg.replay_ratio).limit_denominator(1 << 20)
    credit = 0
    triggers = {}
    for i, spec in enumerate(schedule):
        if spec.adaptive_factor is not None:
            triggers[i] = AdaptiveTriggerState(weight_norm(agent.online), spec.adaptive_factor)
    losses = []

    def log_eval(step):
        rng = np.random.default_rng([seed, 4, step])
        series.add(step, "return", evaluate(agent.online, env_cfg, eval_episodes, rng, env.switched()), "eval")
        series.add(step, "weight_norm", weight_norm(agent.online), "eval")
        series.add(step, "grad_steps", agent.grad_steps, "eval")
        if losses:
            series.add(step, "train_loss", float(np.mean(losses)), "eval")
            losses.clear()

    obs = env.reset()
    step = 0
    try:
        log_eval(0)
        for step in range(budget_steps):
            for i, spec in enumerate(schedule):
                due = step in spec.apply_steps
                if i in triggers and step % adaptive_check_every == 0:
                    due = adaptive_trigger(triggers[i], weight_norm(agent.online))
                if due:
                    if probe_hook:
                        probe_hook("before", agent, step)
                    apply_intervention(agent, spec, _sub_seed(seed, 5, i, step))
                    series.add(step, "intervention", 1.0, spec.kind)
                    if probe_hook:
                        probe_hook("after", agent, step)
            action = act(agent, obs, epsilon_at(agent_cfg, step, budget_steps))
            next_obs, reward, done = env.step(action)
            buffer.add(obs, action, reward, next_obs, done)
            obs = env.reset() if done else next_obs
            if step + 1 > agent_cfg.learning_starts:
                credit += ratio.numerator
                while credit >= ratio.denominator:
                    credit -= ratio.denominator
                    losses.append(agent.train_step(buffer.sample(agent.rng, agent_cfg.batch_size)))
            if (step + 1) % eval_every == 0:
                log_eval(step + 1)
        if budget_steps % eval_every:
            log_eval(budget_steps)
    except (DivergenceError, FloatingPointError) as exc:
        series.abort(step, "divergence", str(exc))
    return series
