"""Learned lookahead safety: driving data, the recurrent predictor, horizon checks."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actions import N_ACTIONS
from .affordance import (
    AFFORDANCE_DIM,
    CENTER_FRONT,
    CENTER_REAR,
    FEATURE_NAMES,
    denormalize,
    normalize,
    slot_index,
)
from .config import Config, LookaheadConfig, SafetyParams, SimConfig
from .neural import (
    AdamState,
    CheckpointError,
    NetworkParams,
    RnnParams,
    adam_step,
    init_rnn,
    load_params,
    rnn_forward,
    rnn_gradient,
)
from .replay import Transition
from .safety import gap_rule

INPUT_DIM = AFFORDANCE_DIM + N_ACTIONS


@dataclass
class DrivingDataset:
    """Per-episode raw affordance states, executed actions and next-state labels.

    ``labels[e][t]`` is True when the true state after step ``t`` of episode
    ``e`` violates the gap rule (or the step ended in a collision).
    """

    states: list[np.ndarray] = field(default_factory=list)
    actions: list[np.ndarray] = field(default_factory=list)
    labels: list[np.ndarray] = field(default_factory=list)

    def add_episode(self, states, actions, labels) -> None:
        states = np.asarray(states, dtype=float).reshape(-1, AFFORDANCE_DIM)
        actions = np.asarray(actions, dtype=np.int64)
        labels = np.asarray(labels, dtype=bool)
        if not len(states) == len(actions) == len(labels):
            raise ValueError("states, actions and labels must have equal length")
        self.states.append(states)
        self.actions.append(actions)
        self.labels.append(labels)

    @property
    def lengths(self) -> list[int]:
        return [len(a) for a in self.actions]

    def __len__(self) -> int:
        return sum(self.lengths)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "step", *FEATURE_NAMES, "action", "violation"])
            for e, (S, A, L) in enumerate(zip(self.states, self.actions, self.labels)):
                for t in range(len(A)):
                    w.writerow([e, t, *map(repr, S[t].tolist()), int(A[t]), int(L[t])])

    @classmethod
    def from_csv(cls, path: str | Path) -> "DrivingDataset":
        ds = cls()
        rows: dict[int, list] = {}
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:2] != ["episode", "step"] or len(header) != AFFORDANCE_DIM + 4:
                raise ValueError(f"{path}: unexpected dataset header")
            for row in reader:
                rows.setdefault(int(row[0]), []).append(row)
        for e in sorted(rows):
            ep = sorted(rows[e], key=lambda r: int(r[1]))
            ds.add_episode(
                [[float(v) for v in r[2 : 2 + AFFORDANCE_DIM]] for r in ep],
                [int(r[-2]) for r in ep],
                [bool(int(r[-1])) for r in ep],
            )
        return ds


def collect_dataset(
    policy: NetworkParams | str | Path,
    n_episodes: int,
    cfg: Config,
    rng: np.random.Generator,
    traffic_range: tuple[int, int] | None = None,
) -> DrivingDataset:
    """Roll out a frozen greedy policy with the shield on and record every step.

    ``policy`` is either Q-network parameters or a checkpoint path. Episodes
    are spawned one after another from ``rng``.
    """
    from .agent import greedy_episode, spawn

    if not isinstance(policy, NetworkParams):
        policy, _ = load_params(policy)
        if not isinstance(policy, NetworkParams):
            raise CheckpointError("checkpoint does not hold a Q-network")
    if n_episodes < 0:
        raise ValueError("n_episodes must be non-negative")
    ds = DrivingDataset()
    for _ in range(n_episodes):
        record: list = []
        greedy_episode(spawn(cfg, rng, traffic_range), policy, cfg, use_filter=True, record=record)
        ds.add_episode(
            [r[0] for r in record], [r[1] for r in record], [r[2] for r in record]
        )
    return ds


def encode_inputs(states_norm: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Concatenate normalised states with one-hot actions."""
    onehot = np.eye(N_ACTIONS)[np.asarray(actions, dtype=np.int64)]
    return np.concatenate([np.asarray(states_norm, dtype=float), onehot], axis=-1)


def make_windows(
    d: DrivingDataset, h: int, k: int, sim: SimConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Sliding (input window, next-k targets) pairs that stay inside one episode.

    Returns inputs of shape ``(n, h, 28)`` and normalised targets of shape
    ``(n, k, 20)``. An episode of length ``T`` yields ``max(0, T - h - k + 1)``
    windows.
    """
    if h < 1 or k < 1:
        raise ValueError("history and horizon must be >= 1")
    xs, ys = [], []
    for S, A in zip(d.states, d.actions):
        n = len(A) - h - k + 1
        if n <= 0:
            continue
        Sn = normalize(S, sim)
        enc = encode_inputs(Sn, A)
        idx = np.arange(n)[:, None]
        xs.append(enc[idx + np.arange(h)])
        ys.append(Sn[idx + h + np.arange(k)])
    if not xs:
        return np.zeros((0, h, INPUT_DIM)), np.zeros((0, k, AFFORDANCE_DIM))
    return np.concatenate(xs), np.concatenate(ys)


@dataclass
class PredictorReport:
    train_windows: int
    val_windows: int
    epoch_loss: list[float]
    val_rmse_one_step: list[float]
    val_rmse_all: float

    @property
    def max_one_step_rmse(self) -> float:
        return max(self.val_rmse_one_step)

    def to_dict(self) -> dict:
        return {
            "train_windows": self.train_windows,
            "val_windows": self.val_windows,
            "epoch_loss": self.epoch_loss,
            "val_rmse_one_step": dict(zip(FEATURE_NAMES, self.val_rmse_one_step)),
            "val_rmse_one_step_max": self.max_one_step_rmse,
            "val_rmse_all": self.val_rmse_all,
        }


MIN_WINDOWS = 100


def train_predictor(
    inputs: np.ndarray,
    targets: np.ndarray,
    cfg: LookaheadConfig,
    rng: np.random.Generator,
    epochs: int | None = None,
) -> tuple[RnnParams, PredictorReport]:
    """Fit the recurrent predictor with minibatch Adam on a 90/10 split."""
    n = len(inputs)
    if n < MIN_WINDOWS:
        raise ValueError(f"need at least {MIN_WINDOWS} windows, got {n}")
    epochs = cfg.epochs if epochs is None else epochs
    k, state_dim = targets.shape[1], targets.shape[2]
    order = rng.permutation(n)
    n_val = max(1, n // 10)
    val, train = order[:n_val], order[n_val:]
    params = init_rnn(inputs.shape[2], cfg.hidden, state_dim, k, rng)
    adam = AdamState.fresh(params, lr=cfg.lr)
    flat_targets = targets.reshape(n, -1)
    losses = []
    for _ in range(epochs):
        perm = train[rng.permutation(len(train))]
        total = 0.0
        for start in range(0, len(perm), cfg.batch_size):
            b = perm[start : start + cfg.batch_size]
            grad, loss = rnn_gradient(params, inputs[b], flat_targets[b])
            params, adam = adam_step(params, grad, adam)
            total += loss * len(b)
        losses.append(total / len(perm))
    pred = rnn_forward(params, inputs[val])
    err = pred - targets[val]
    one_step = np.sqrt(np.mean(err[:, 0, :] ** 2, axis=0))
    report = PredictorReport(
        train_windows=len(train),
        val_windows=len(val),
        epoch_loss=losses,
        val_rmse_one_step=one_step.tolist(),
        val_rmse_all=float(np.sqrt(np.mean(err**2))),
    )
    return params, report


_CHECKED_SLOTS = {"lane": (CENTER_FRONT, CENTER_REAR), "all": tuple(range(6))}


def state_violation(
    state: np.ndarray,
    safety: SafetyParams,
    sim: SimConfig,
    sentinel_tol: float = 0.1,
    slots: str = "lane",
) -> bool:
    """Gap rule on the present neighbour slots of a raw affordance vector.

    ``slots`` picks the ego-lane front and rear (``"lane"``) or all six
    (``"all"``). Slots whose distance is within ``sentinel_tol * d_max`` of
    the sensing range count as absent. A centre-front distance below one car
    length is a violation on its own.
    """
    far = (1.0 - sentinel_tol) * sim.sensing_range
    for slot in _CHECKED_SLOTS[slots]:
        dx = float(state[slot_index(slot, 0)])
        dv = float(state[slot_index(slot, 1)])
        if abs(dx) >= far:
            continue
        if slot == CENTER_FRONT and dx < sim.car_length:
            return True
        front = slot < 3
        gap = max((dx if front else -dx) - sim.car_length, 0.0)
        closing = -dv if front else dv
        if not gap_rule(gap, closing, safety):
            return True
    return False


@dataclass(frozen=True)
class HorizonPrediction:
    states: np.ndarray
    violation: bool
    first_violation_step: int | None
    states_norm: np.ndarray


def predict_horizon(
    rnn: RnnParams, history: np.ndarray, cfg: Config
) -> HorizonPrediction:
    """Predict the next ``k`` states from an encoded history and check them."""
    pred_norm = rnn_forward(rnn, history, expected_length=cfg.lookahead.history)
    states = denormalize(pred_norm, cfg.sim)
    first = None
    for i, s in enumerate(states):
        if state_violation(s, cfg.safety, cfg.sim, cfg.lookahead.sentinel_tol, cfg.lookahead.slots):
            first = i
            break
    return HorizonPrediction(states, first is not None, first, pred_norm)


def dynamic_check(
    history_states: list[np.ndarray],
    history_actions: list[int],
    rnn: RnnParams,
    cfg: Config,
) -> Transition | None:
    """Penalty record when any predicted future state is unsafe.

    The history lists hold this episode's normalised states and executed
    actions up to and including the current step; fewer than ``h`` entries
    means warm-up and no check.
    """
    h = cfg.lookahead.history
    if len(history_actions) < h:
        return None
    window = encode_inputs(np.asarray(history_states[-h:]), np.asarray(history_actions[-h:]))
    pred = predict_horizon(rnn, window, cfg)
    if not pred.violation:
        return None
    return Transition(
        s=np.asarray(history_states[-1]).copy(),
        a=int(history_actions[-1]),
        s_next=pred.states_norm[0].copy(),
        r=-cfg.agent.R_dynamic,
        terminal=True,
    )


def write_dataset_manifest(path: str | Path, d: DrivingDataset, extra: dict) -> None:
    manifest = {"episodes": len(d.lengths), "rows": len(d), "lengths": d.lengths, **extra}
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
