"""Training, evaluation, data collection and export workflows.

Every workflow writes into one output directory: a ``manifest.json``
(:class:`RunManifest`) plus plain CSV tables. Each CSV row carries the
manifest's ``run`` id. All outputs are a pure function of the config, the
seed and the input artifacts, so reruns are byte-identical.

Random streams are addressed by purpose so they never interact:

=====================  ============================================
``(seed, 0, ep)``      training world of episode ``ep``
``(seed, 1, d, j)``    evaluation episode ``j`` at density ``d``
``(seed, 2, n, j)``    partial-evaluation episode ``j`` after ``n`` episodes
``(seed, 3)``          dataset collection
``(seed, 4)``          predictor training
=====================  ============================================

Partial-evaluation worlds do not depend on the variant, so curves of the
three variants at the same seed are compared on identical traffic.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .agent import DDQNAgent, EpisodeMetrics, Variant, greedy_episode, spawn, world_rng
from .config import Config, dump_config
from .lookahead import (
    DrivingDataset,
    PredictorReport,
    collect_dataset,
    make_windows,
    train_predictor,
)
from .neural import CheckpointError, NetworkParams, RnnParams, load_params, save_params

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
TRAINING_CSV = "training.csv"
PARTIAL_CSV = "partial_eval.csv"
EVAL_CSV = "eval.csv"
DATASET_CSV = "dataset.csv"
RNN_CKPT = "predictor.ckpt"
FINAL_CKPT = "final.ckpt"
CURVES_CSV = "learning_curves.csv"
COLLISIONS_CSV = "collisions.csv"
EVAL_TABLE_CSV = "eval_table.csv"

TRAINING_HEADER = [
    "run",
    "variant",
    "episode",
    "steps",
    "cumulative_reward",
    "collided",
    "violations",
    "dynamic_penalties",
    "collision_fallback_batches",
    "epsilon",
    "safe_size",
    "collision_size",
    "mean_loss",
]
PARTIAL_HEADER = ["run", "episode", "mean_score", "mean_reward", "collisions", "mean_steps"]
EVAL_HEADER = ["run", "density", "episodes", "collisions", "mean_reward", "mean_steps"]


class HarnessError(RuntimeError):
    """A workflow input breaks its contract (missing file, wrong artifact kind)."""


# ------------------------------------------------------------------ manifest


@dataclass
class RunManifest:
    command: str
    seed: int
    config: dict[str, Any]
    config_hash: str
    toggles: dict[str, bool] = field(default_factory=dict)
    # sha256 of each input file; the run id depends on content, not location
    inputs: dict[str, str] = field(default_factory=dict)
    input_paths: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    label: str = ""
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def run_id(self) -> str:
        key = json.dumps(
            [self.command, self.seed, self.config_hash, self.toggles, self.inputs, self.label],
            sort_keys=True,
        )
        return hashlib.sha256(key.encode()).hexdigest()[:12]

    def write(self, out: Path) -> Path:
        data = asdict(self)
        data["run_id"] = self.run_id
        path = out / MANIFEST
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path: Path) -> "RunManifest":
        if not path.is_file():
            raise HarnessError(f"missing manifest: {path}")
        data = json.loads(path.read_text())
        data.pop("run_id", None)
        return cls(**data)


def _manifest(command: str, cfg: Config, seed: int, files: dict | None = None, **kw) -> RunManifest:
    files = {k: Path(v) for k, v in (files or {}).items() if v is not None}
    return RunManifest(
        command,
        seed,
        cfg.to_dict(),
        cfg.content_hash(),
        inputs={k: file_digest(v) for k, v in files.items()},
        input_paths={k: str(v) for k, v in files.items()},
        **kw,
    )


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_q_network(path: str | Path) -> tuple[NetworkParams, dict]:
    params, meta = load_params(path)
    if not isinstance(params, NetworkParams):
        raise CheckpointError(f"{path} does not hold a Q-network")
    return params, meta


def load_predictor(path: str | Path) -> RnnParams:
    params, _ = load_params(path)
    if not isinstance(params, RnnParams):
        raise CheckpointError(f"{path} does not hold a recurrent predictor")
    return params


# ------------------------------------------------------------------ training


@dataclass
class PartialEval:
    episode: int
    mean_score: float
    mean_reward: float
    collisions: int
    mean_steps: float


@dataclass
class TrainResult:
    agent: DDQNAgent
    episodes: list[EpisodeMetrics]
    partial: list[PartialEval]


def partial_evaluate(
    q: NetworkParams, cfg: Config, variant: Variant, seed: int, episode: int, rnn: RnnParams | None
) -> PartialEval:
    """Greedy rollouts of the current policy; the shield matches the training variant."""
    a = cfg.agent
    shield = rnn if (variant.dynamic and cfg.lookahead.shield) else None
    runs = [
        greedy_episode(
            spawn(cfg, world_rng(seed, 2, episode, j)), q, cfg, variant.handcrafted, rnn_shield=shield
        )
        for j in range(a.eval_episodes)
    ]
    return PartialEval(
        episode=episode,
        mean_score=float(np.mean([m.score(cfg.sim.episode_length, a.eval_forfeit_reward) for m in runs])),
        mean_reward=float(np.mean([m.cumulative_reward for m in runs])),
        collisions=sum(m.collided for m in runs),
        mean_steps=float(np.mean([m.steps for m in runs])),
    )


def train(
    cfg: Config,
    variant: Variant | str,
    seed: int,
    rnn: RnnParams | None = None,
    episodes: int | None = None,
    checkpoint_dir: Path | None = None,
) -> TrainResult:
    """Run the training loop; checkpoints land next to each partial evaluation.

    ``episodes`` overrides ``agent.episodes`` (the epsilon schedule follows
    the override so short runs still anneal fully).
    """
    variant = Variant(variant)
    if episodes is not None:
        cfg = cfg.replace(agent={"episodes": episodes})
    n = cfg.agent.episodes
    agent = DDQNAgent.create(cfg, variant, seed, rnn)
    history: list[EpisodeMetrics] = []
    partial: list[PartialEval] = []
    every = cfg.agent.eval_every
    for ep in range(n):
        m = agent.run_episode(spawn(cfg, world_rng(seed, 0, ep)), ep)
        history.append(m)
        if every > 0 and (ep + 1) % every == 0:
            pe = partial_evaluate(agent.online, cfg, variant, seed, ep + 1, rnn)
            partial.append(pe)
            log.info("%s seed %d episode %d: partial score %.2f", variant.value, seed, pe.episode, pe.mean_score)
            if checkpoint_dir is not None:
                save_params(
                    checkpoint_dir / f"episode_{ep + 1:05d}.ckpt",
                    agent.online,
                    {"variant": variant.value, "seed": seed, "episode": ep + 1, "config_hash": cfg.content_hash()},
                )
    return TrainResult(agent, history, partial)


def cmd_train(
    cfg: Config,
    variant: Variant | str,
    seed: int,
    out: Path,
    episodes: int | None = None,
    rnn_path: str | Path | None = None,
) -> RunManifest:
    variant = Variant(variant)
    if variant.dynamic and rnn_path is None:
        raise HarnessError("variant 'both' needs --rnn pointing at a trained predictor")
    rnn = load_predictor(rnn_path) if variant.dynamic else None
    if episodes is not None:
        cfg = cfg.replace(agent={"episodes": episodes})
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    man = _manifest(
        "train",
        cfg,
        seed,
        toggles={"handcrafted": variant.handcrafted, "dynamic": variant.dynamic, "lookahead_shield": cfg.lookahead.shield},
        files={"rnn": rnn_path},
        label=variant.value,
    )
    result = train(cfg, variant, seed, rnn, checkpoint_dir=ckpt_dir)
    save_params(
        out / FINAL_CKPT,
        result.agent.online,
        {"variant": variant.value, "seed": seed, "episode": cfg.agent.episodes, "config_hash": cfg.content_hash()},
    )
    rid = man.run_id
    write_csv(
        out / TRAINING_CSV,
        TRAINING_HEADER,
        (
            [rid, variant.value, m.episode, m.steps, m.cumulative_reward, m.collided, m.violations, m.dynamic_penalties,
             m.collision_fallback_batches, m.epsilon, m.safe_size, m.collision_size, m.mean_loss]
            for m in result.episodes
        ),
    )
    write_csv(
        out / PARTIAL_CSV,
        PARTIAL_HEADER,
        ([rid, p.episode, p.mean_score, p.mean_reward, p.collisions, p.mean_steps] for p in result.partial),
    )
    dump_config(cfg, out / "config.yaml")
    man.outputs = {
        "training": TRAINING_CSV,
        "partial_eval": PARTIAL_CSV,
        "checkpoint": FINAL_CKPT,
        "checkpoints": "checkpoints",
        "config": "config.yaml",
    }
    man.extra = {"grad_steps": result.agent.grad_steps, "target_syncs": result.agent.syncs}
    man.write(out)
    return man


# ---------------------------------------------------------------- evaluation


@dataclass(frozen=True)
class EvalRow:
    density: int
    episodes: int
    collisions: int
    mean_reward: float
    mean_steps: float


@dataclass
class EvalReport:
    rows: list[EvalRow]

    def collisions(self) -> dict[int, int]:
        return {r.density: r.collisions for r in self.rows}


def _eval_density(args) -> EvalRow:
    q, cfg, density, episodes, seed, shield = args
    runs = [
        greedy_episode(spawn(cfg, world_rng(seed, 1, density, j), (density, density)), q, cfg, True, rnn_shield=shield)
        for j in range(episodes)
    ]
    return EvalRow(
        density=density,
        episodes=episodes,
        collisions=sum(m.collided for m in runs),
        mean_reward=float(np.mean([m.cumulative_reward for m in runs])) if runs else 0.0,
        mean_steps=float(np.mean([m.steps for m in runs])) if runs else 0.0,
    )


def evaluate(
    q: NetworkParams,
    cfg: Config,
    densities: Iterable[int],
    episodes: int,
    seed: int,
    rnn_shield: RnnParams | None = None,
    workers: int = 1,
) -> EvalReport:
    """Frozen greedy policy with the shield on, ``episodes`` runs per density.

    Episode worlds depend only on ``(seed, density, j)``, so the report is
    the same for any worker count.
    """
    densities = list(densities)
    for d in densities:
        if not 0 <= d <= 6:
            raise ValueError(f"density must lie in [0, 6], got {d}")
    if episodes < 0:
        raise ValueError("episodes must be non-negative")
    jobs = [(q, cfg, d, episodes, seed, rnn_shield) for d in densities]
    if workers > 1 and len(jobs) > 1:
        with Pool(min(workers, len(jobs))) as pool:
            rows = pool.map(_eval_density, jobs)
    else:
        rows = [_eval_density(j) for j in jobs]
    return EvalReport(rows)


def cmd_evaluate(
    checkpoint: str | Path,
    cfg: Config,
    densities: Iterable[int],
    episodes: int,
    seed: int,
    out: Path,
    rnn_path: str | Path | None = None,
    workers: int = 1,
    label: str | None = None,
) -> RunManifest:
    q, meta = load_q_network(checkpoint)
    shield = load_predictor(rnn_path) if rnn_path is not None else None
    densities = list(densities)
    out.mkdir(parents=True, exist_ok=True)
    if label is None:
        label = str(meta.get("variant", Path(checkpoint).stem))
    man = _manifest(
        "evaluate",
        cfg,
        seed,
        toggles={"handcrafted": True, "dynamic": shield is not None},
        files={"checkpoint": checkpoint, "rnn": rnn_path},
        label=label,
        extra={"densities": densities, "episodes": episodes},
    )
    report = evaluate(q, cfg, densities, episodes, seed, shield, workers)
    rid = man.run_id
    write_csv(
        out / EVAL_CSV,
        EVAL_HEADER,
        ([rid, r.density, r.episodes, r.collisions, r.mean_reward, r.mean_steps] for r in report.rows),
    )
    man.outputs = {"eval": EVAL_CSV}
    man.write(out)
    return man


# ----------------------------------------------------- collection, predictor


def cmd_collect(checkpoint: str | Path, cfg: Config, episodes: int, seed: int, out: Path) -> RunManifest:
    q, _ = load_q_network(checkpoint)
    out.mkdir(parents=True, exist_ok=True)
    ds = collect_dataset(q, episodes, cfg, world_rng(seed, 3))
    ds.to_csv(out / DATASET_CSV)
    man = _manifest(
        "collect",
        cfg,
        seed,
        toggles={"handcrafted": True},
        files={"checkpoint": checkpoint},
        extra={"episodes": len(ds.lengths), "rows": len(ds), "lengths": ds.lengths},
    )
    man.outputs = {"dataset": DATASET_CSV}
    man.write(out)
    return man


def fit_predictor(
    ds: DrivingDataset, cfg: Config, seed: int, epochs: int | None = None
) -> tuple[RnnParams, PredictorReport]:
    la = cfg.lookahead
    X, Y = make_windows(ds, la.history, la.horizon, cfg.sim)
    return train_predictor(X, Y, la, world_rng(seed, 4), epochs)


def cmd_train_rnn(
    dataset: str | Path, cfg: Config, seed: int, out: Path, epochs: int | None = None
) -> RunManifest:
    path = Path(dataset)
    if path.is_dir():
        path = path / DATASET_CSV
    if not path.is_file():
        raise HarnessError(f"missing dataset: {path}")
    ds = DrivingDataset.from_csv(path)
    out.mkdir(parents=True, exist_ok=True)
    rnn, report = fit_predictor(ds, cfg, seed, epochs)
    save_params(out / RNN_CKPT, rnn, {"seed": seed, "config_hash": cfg.content_hash()})
    man = _manifest("train-rnn", cfg, seed, files={"dataset": path}, extra={"report": report.to_dict()})
    man.outputs = {"predictor": RNN_CKPT}
    man.write(out)
    return man


# -------------------------------------------------------------------- export


def _find_manifests(run_dir: Path) -> list[tuple[Path, RunManifest]]:
    if not run_dir.is_dir():
        raise HarnessError(f"run directory does not exist: {run_dir}")
    found = []
    for table in sorted(list(run_dir.rglob(TRAINING_CSV)) + list(run_dir.rglob(EVAL_CSV))):
        found.append((table.parent, RunManifest.read(table.parent / MANIFEST)))
    if not found:
        raise HarnessError(f"no training or evaluation manifests under {run_dir}")
    return found


def cmd_export(run_dir: Path, out: Path | None = None) -> dict[str, Path]:
    """Merge training curves and evaluation reports into tidy tables."""
    out = out or run_dir
    runs = _find_manifests(run_dir)
    curves, evals = [], []
    for d, man in runs:
        if man.command == "train":
            for row in read_csv(d / man.outputs["partial_eval"]):
                curves.append([man.label, man.seed, int(row["episode"]), row["mean_score"],
                               row["mean_reward"], row["collisions"], man.run_id])
        elif man.command == "evaluate":
            for row in read_csv(d / man.outputs["eval"]):
                evals.append([man.label, man.seed, int(row["density"]), row["episodes"],
                              row["collisions"], row["mean_reward"], man.run_id])
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    if curves:
        curves.sort(key=lambda r: (r[0], r[1], r[2]))
        write_csv(out / CURVES_CSV,
                  ["variant", "seed", "episode", "mean_score", "mean_reward", "collisions", "run"], curves)
        written["curves"] = out / CURVES_CSV
    if evals:
        evals.sort(key=lambda r: (r[0], r[1], r[2]))
        write_csv(out / EVAL_TABLE_CSV,
                  ["policy", "seed", "density", "episodes", "collisions", "mean_reward", "run"], evals)
        columns = sorted({f"{r[0]}_seed{r[1]}" for r in evals})
        table: dict[int, dict[str, str]] = {}
        for r in evals:
            table.setdefault(r[2], {})[f"{r[0]}_seed{r[1]}"] = r[4]
        write_csv(out / COLLISIONS_CSV, ["density", *columns],
                  ([d, *(table[d].get(c, "") for c in columns)] for d in sorted(table)))
        written["eval_table"] = out / EVAL_TABLE_CSV
        written["collisions"] = out / COLLISIONS_CSV
    return written
