"""Double DQN with the handcrafted shield and the learned lookahead penalty.

One environment step of training does, in order:

1. epsilon-greedy proposal from the online network;
2. if the shield is on and the proposal breaks the gap rule, store
   ``(s, a, -, -R_handcraft)`` in the collision buffer and execute the
   fallback instead;
3. step the world; a real collision stores ``(s, a, -, -R_handcraft)`` and
   ends the episode, otherwise ``(s, a, s', r)`` goes to the safe buffer;
4. with the lookahead module on, predict ``k`` states ahead and store
   ``(s, a, s_hat, -R_dynamic)`` in the collision buffer on a predicted
   violation;
5. one gradient step on a half-safe / half-collision minibatch, and a hard
   target-network copy every ``target_sync`` gradient steps.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .actions import N_ACTIONS, Action
from .affordance import AFFORDANCE_DIM, extract_affordance, normalize
from .config import AgentConfig, Config
from .lookahead import dynamic_check, encode_inputs, predict_horizon, state_violation
from .neural import (
    AdamState,
    NetworkParams,
    RnnParams,
    adam_step,
    init_mlp,
    mlp_batch_gradient,
    mlp_forward,
)
from .replay import COLLISION, SAFE, Batch, ReplayBuffer, Transition, sample_minibatch
from .reward import reward_components
from .shield import filter_action
from .sim import WorldState, spawn_episode, step_world


class Variant(str, enum.Enum):
    NONE = "none"
    HANDCRAFTED = "handcrafted"
    BOTH = "both"

    @property
    def handcrafted(self) -> bool:
        return self is not Variant.NONE

    @property
    def dynamic(self) -> bool:
        return self is Variant.BOTH


def select_action(q_out: np.ndarray, epsilon: float, rng: np.random.Generator) -> Action:
    """Epsilon-greedy; greedy ties go to the lowest action id."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if rng.random() < epsilon:
        return Action(int(rng.integers(N_ACTIONS)))
    return Action(int(np.argmax(q_out)))


def epsilon_at(episode: int, cfg: AgentConfig) -> float:
    if episode < 0:
        raise ValueError("episode index must be non-negative")
    decay = cfg.eps_decay_fraction * cfg.episodes
    if decay <= 0 or episode >= decay:
        return cfg.eps_end
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * episode / decay


def td_target(
    t: Transition,
    from_collision: bool,
    q_online: NetworkParams,
    q_target: NetworkParams,
    gamma: float,
) -> float:
    """Collision-buffer samples do not bootstrap; safe ones use the double-Q rule."""
    if from_collision:
        return float(t.r)
    if t.s_next is None:
        raise ValueError("safe-buffer transition without s_next")
    a_star = int(np.argmax(mlp_forward(q_online, t.s_next)))
    return float(t.r + gamma * mlp_forward(q_target, t.s_next)[a_star])


def td_targets(batch: Batch, q_online: NetworkParams, q_target: NetworkParams, gamma: float):
    a_star = np.argmax(mlp_forward(q_online, batch.s_next), axis=1)
    boot = mlp_forward(q_target, batch.s_next)[np.arange(len(batch)), a_star]
    return np.where(batch.from_collision, batch.r, batch.r + gamma * boot)


def train_step(
    batch: Batch,
    q_online: NetworkParams,
    q_target: NetworkParams,
    adam: AdamState,
    gamma: float,
) -> tuple[NetworkParams, AdamState, float]:
    y = td_targets(batch, q_online, q_target, gamma)
    grad, loss = mlp_batch_gradient(q_online, batch.s, batch.a, y)
    q_online, adam = adam_step(q_online, grad, adam)
    return q_online, adam, loss


def sync_target(q_online: NetworkParams) -> NetworkParams:
    return q_online.copy()


@dataclass
class EpisodeMetrics:
    episode: int
    cumulative_reward: float
    steps: int
    collided: bool
    violations: int = 0
    dynamic_penalties: int = 0
    collision_fallback_batches: int = 0
    epsilon: float = 0.0
    safe_size: int = 0
    collision_size: int = 0
    mean_loss: float = 0.0

    def score(self, episode_length: int, forfeit: float) -> float:
        """Cumulative reward with forfeited steps of a crashed episode charged at ``forfeit``."""
        missing = episode_length - self.steps if self.collided else 0
        return self.cumulative_reward + forfeit * missing


TRACE_HEADER = (
    ["step"]
    + [f"s{i}" for i in range(AFFORDANCE_DIM)]
    + ["proposed", "executed", "violated", "collided", "r_speed", "r_lane", "r_headway", "reward"]
)


@dataclass
class DDQNAgent:
    cfg: Config
    variant: Variant
    online: NetworkParams
    target: NetworkParams
    adam: AdamState
    safe: ReplayBuffer
    collision: ReplayBuffer
    rng: np.random.Generator
    rnn: RnnParams | None = None
    grad_steps: int = 0
    syncs: int = 0
    losses: list[float] = field(default_factory=list)

    @classmethod
    def create(
        cls, cfg: Config, variant: Variant | str, seed: int, rnn: RnnParams | None = None
    ) -> "DDQNAgent":
        variant = Variant(variant)
        if variant.dynamic and rnn is None:
            raise ValueError("the 'both' variant needs a trained predictor")
        a = cfg.agent
        init_rng, agent_rng = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)]
        online = init_mlp((AFFORDANCE_DIM, *a.hidden, N_ACTIONS), init_rng, a.leaky_slope)
        return cls(
            cfg=cfg,
            variant=variant,
            online=online,
            target=sync_target(online),
            adam=AdamState.fresh(online, lr=a.lr),
            safe=ReplayBuffer(a.buffer_capacity, SAFE),
            collision=ReplayBuffer(a.buffer_capacity, COLLISION),
            rng=agent_rng,
            rnn=rnn if variant.dynamic else None,
        )

    def learn(self) -> bool:
        """One gradient step if the safe buffer has data; returns the fallback flag."""
        if len(self.safe) == 0:
            return False
        batch = sample_minibatch(self.safe, self.collision, self.cfg.agent.batch_size, self.rng)
        self.online, self.adam, loss = train_step(
            batch, self.online, self.target, self.adam, self.cfg.agent.gamma
        )
        self.losses.append(loss)
        self.grad_steps += 1
        if self.grad_steps % self.cfg.agent.target_sync == 0:
            self.target = sync_target(self.online)
            self.syncs += 1
        return batch.collision_fallback

    def run_episode(self, world: WorldState, episode: int, trace: list | None = None) -> EpisodeMetrics:
        cfg = self.cfg
        eps = epsilon_at(episode, cfg.agent)
        m = EpisodeMetrics(episode=episode, cumulative_reward=0.0, steps=0, collided=False, epsilon=eps)
        hist_s: list[np.ndarray] = []
        hist_a: list[int] = []
        first_loss = len(self.losses)
        raw = extract_affordance(world, cfg.sim)
        while not world.done:
            s = normalize(raw, cfg.sim)
            proposed = select_action(mlp_forward(self.online, s), eps, self.rng)
            executed, violated = proposed, False
            if self.variant.handcrafted:
                out = filter_action(world, proposed, cfg.safety, cfg.sim)
                if out.violated:
                    violated = True
                    m.violations += 1
                    self.collision.push(Transition(s, int(proposed), None, -cfg.agent.R_handcraft, True))
                    executed = out.executed
            world, ev = step_world(world, executed, cfg.sim, cfg.traffic)
            raw_next = extract_affordance(world, cfg.sim)
            if ev.collided:
                r = -cfg.agent.R_handcraft
                comps = (0.0, 0.0, 0.0)
                m.collided = True
                self.collision.push(Transition(s, int(executed), None, r, True))
            else:
                comps = reward_components(world, cfg.reward, cfg.sim, raw_next)
                r = sum(comps)
                self.safe.push(Transition(s, int(executed), normalize(raw_next, cfg.sim), r, False))
            hist_s.append(s)
            hist_a.append(int(executed))
            if self.rnn is not None:
                rec = dynamic_check(hist_s, hist_a, self.rnn, cfg)
                if rec is not None:
                    m.dynamic_penalties += 1
                    self.collision.push(rec)
            if self.learn():
                m.collision_fallback_batches += 1
            if trace is not None:
                trace.append(_trace_row(m.steps, raw, proposed, executed, violated, ev.collided, comps, r))
            m.cumulative_reward += r
            m.steps += 1
            raw = raw_next
        if len(self.losses) > first_loss:
            m.mean_loss = float(np.mean(self.losses[first_loss:]))
        m.safe_size = len(self.safe)
        m.collision_size = len(self.collision)
        return m


def _trace_row(step, raw, proposed, executed, violated, collided, comps, r) -> list:
    return (
        [step]
        + [repr(float(v)) for v in raw]
        + [int(proposed), int(executed), int(violated), int(collided)]
        + [repr(float(c)) for c in comps]
        + [repr(float(r))]
    )


def shield_action(
    q: np.ndarray,
    proposed: Action,
    hist_s: list[np.ndarray],
    hist_a: list[int],
    s: np.ndarray,
    rnn: RnnParams,
    cfg: Config,
) -> Action:
    """Optional lookahead veto: the best-valued action without a predicted violation."""
    h = cfg.lookahead.history
    if len(hist_a) < h - 1:
        return proposed
    past_s = np.asarray(hist_s[len(hist_s) - (h - 1) :] + [s]) if h > 1 else np.asarray([s])
    for a in [int(proposed)] + [int(i) for i in np.argsort(-q, kind="stable") if i != int(proposed)]:
        acts = np.asarray(hist_a[len(hist_a) - (h - 1) :] + [a]) if h > 1 else np.asarray([a])
        if not predict_horizon(rnn, encode_inputs(past_s, acts), cfg).violation:
            return Action(a)
    return proposed


def greedy_episode(
    world: WorldState,
    q: NetworkParams,
    cfg: Config,
    use_filter: bool,
    rnn_shield: RnnParams | None = None,
    record: list | None = None,
    trace: list | None = None,
) -> EpisodeMetrics:
    """Frozen greedy rollout; never touches parameters or buffers.

    ``record`` collects ``(raw_state, executed_action, next_state_unsafe)``
    tuples for predictor training.
    """
    m = EpisodeMetrics(episode=0, cumulative_reward=0.0, steps=0, collided=False)
    hist_s: list[np.ndarray] = []
    hist_a: list[int] = []
    raw = extract_affordance(world, cfg.sim)
    while not world.done:
        s = normalize(raw, cfg.sim)
        q_out = mlp_forward(q, s)
        proposed = Action(int(np.argmax(q_out)))
        executed, violated = proposed, False
        if rnn_shield is not None:
            executed = shield_action(q_out, proposed, hist_s, hist_a, s, rnn_shield, cfg)
        if use_filter:
            out = filter_action(world, executed, cfg.safety, cfg.sim)
            violated = out.violated
            m.violations += int(violated)
            executed = out.executed
        world, ev = step_world(world, executed, cfg.sim, cfg.traffic)
        raw_next = extract_affordance(world, cfg.sim)
        if ev.collided:
            comps = (0.0, 0.0, 0.0)
            r = -cfg.agent.R_handcraft
            m.collided = True
        else:
            comps = reward_components(world, cfg.reward, cfg.sim, raw_next)
            r = sum(comps)
        if record is not None:
            unsafe = ev.collided or state_violation(
                raw_next, cfg.safety, cfg.sim, cfg.lookahead.sentinel_tol, cfg.lookahead.slots
            )
            record.append((raw, int(executed), unsafe))
        if trace is not None:
            trace.append(_trace_row(m.steps, raw, proposed, executed, violated, ev.collided, comps, r))
        hist_s.append(s)
        hist_a.append(int(executed))
        m.cumulative_reward += r
        m.steps += 1
        raw = raw_next
    return m


def world_rng(seed: int, *path: int) -> np.random.Generator:
    """Independent, reproducible stream for one episode, addressed by a path."""
    return np.random.default_rng(np.random.SeedSequence([seed, *path]))


def spawn(cfg: Config, rng: np.random.Generator, traffic_range: tuple[int, int] | None = None):
    return spawn_episode(cfg.sim, cfg.traffic, rng, traffic_range)
