"""Shared-autonomy orchestration.

Demonstration collection drives the environment with an expert and records
one packet per controlled tick, closing each episode with the terminal
packet. The shared-autonomy run alternates policy-driven chunk execution
with expert takeovers; only expert-controlled ticks produce correction
packets, which are merged into the dataset, and the policy is refreshed
between epochs with gradient passes over everything collected so far.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import hsn as hsn_mod
from .autodiff import AdamState
from .demo_store import (
    RolloutMemory,
    Trajectory,
    close_episode,
    merge,
    Packet,
    record_packet,
    training_arrays,
)
from .sim_env import InterventionTracker, ScriptedExpert, SimEnv, TaskSpec
from .uncertainty import ConservativePlanner, scale_action

log = logging.getLogger(__name__)

HANDBACK_TICKS = 10
HANDBACK_FRACTION = 0.4


@dataclass(frozen=True)
class SapConfig:
    epochs: int = 3
    rollouts_per_epoch: int = 6
    mc_samples: int = 16
    epsilon: float = 2e-3
    update_steps: int = 50
    eval_trials: int = 20
    expert_kind: str = "scripted"
    task: str = "pour"
    dynamic: bool = False
    conservative: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.rollouts_per_epoch < 1 or self.mc_samples < 1:
            raise ValueError("epochs, rollouts, and sample counts must be >= 1")


def collect_demonstrations(n: int, expert: ScriptedExpert, task: TaskSpec,
                           memory: RolloutMemory, env: SimEnv | None = None,
                           seed0: int = 0, source: str = "scripted_expert") -> RolloutMemory:
    """Run ``n`` expert episodes and append the finalized trajectories."""
    env = env or SimEnv()
    for i in range(n):
        seed = seed0 + i
        obs, state = env.reset(task, seed)
        traj = Trajectory(task=task.name, seed=seed, source=source)
        while env.active:
            action = expert.action(env)
            record_packet(traj, Packet(t=env.tick, o=obs, s=state, a=action, u=False))
            obs, state, _ = env.step(action)
        close_episode(traj, obs, state)
        memory.add(traj)
    return memory


def train_policy(params: dict, opt_state: AdamState, memory: RolloutMemory,
                 cfg: hsn_mod.HsnConfig, epochs: int, seed: int,
                 batches_per_epoch: int = 2) -> list:
    """Minibatch passes over the chunked dataset; one epoch draws up to
    ``batches_per_epoch`` fresh batches from a reshuffled window pool."""
    obs, states, chunks = training_arrays(memory, cfg.horizon)
    n = obs.shape[0]
    if n == 0:
        raise ValueError("no training windows; dataset too short for the horizon")
    history = []
    step_index = 0
    order = np.random.default_rng([seed, 0]).permutation(n)
    pos = 0
    refill = 0
    for epoch in range(epochs):
        parts = None
        for _ in range(batches_per_epoch):
            if pos + cfg.batch_size > n:
                refill += 1
                order = np.random.default_rng([seed, refill]).permutation(n)
                pos = 0
            take = order[pos:pos + cfg.batch_size]
            pos += cfg.batch_size
            batch = (obs[take], states[take], chunks[take])
            parts = hsn_mod.train_step(params, opt_state, batch, cfg, seed, step_index)
            step_index += 1
        history.append({"epoch": epoch, **parts})
    return history


def execute_skill_chunk(env: SimEnv, chunk: np.ndarray, u: float,
                        interrupt_check=None) -> list:
    """Execute up to H slowed-down steps; abandon the rest on interruption.

    Returns per-step records with the raw and executed translation speeds so
    the slow-down inequality can be audited offline.
    """
    steps = []
    for h in range(chunk.shape[0]):
        if not env.active:
            break
        if interrupt_check is not None and interrupt_check(env):
            break
        scaled = scale_action(chunk[h], u)
        obs, state, events = env.step(scaled)
        steps.append({
            "raw_speed": float(np.linalg.norm(chunk[h][:3])),
            "exec_speed": float(np.linalg.norm(scaled[:3])),
            "uncertainty": u,
            "obs": obs,
            "state": state,
            "events": events,
        })
    return steps


@dataclass
class RolloutResult:
    success: bool
    ticks: int
    interventions: int
    correction_packets: int
    violations: int
    uncertainty_trace: list = field(default_factory=list)
    speed_log: list = field(default_factory=list)
    final_obs: np.ndarray | None = None
    final_state: np.ndarray | None = None


def _policy_rollout(env: SimEnv, task: TaskSpec, seed: int, params: dict,
                    cfg: hsn_mod.HsnConfig, sap: SapConfig,
                    expert: ScriptedExpert | None,
                    correction: Trajectory | None) -> RolloutResult:
    """One rollout: policy executes chunks, the expert may seize control.

    With ``expert`` None this is a pure evaluation episode. Expert-controlled
    ticks are recorded into ``correction``; policy ticks are never recorded.
    """
    obs, state = env.reset(task, seed)
    planner = ConservativePlanner(params, cfg, mc_samples=sap.mc_samples,
                                  epsilon=sap.epsilon, seed=seed,
                                  enabled=sap.conservative)
    tracker = InterventionTracker(expert) if expert is not None else None
    owner = "policy"
    interventions = 0
    calm_ticks = 0
    result = RolloutResult(False, 0, 0, 0, 0)
    while env.active:
        if owner == "expert":
            action = expert.action(env)
            record_packet(correction, Packet(t=env.tick, o=obs, s=state, a=action, u=False))
            obs, state, _ = env.step(action)
            if tracker.should_intervene(env):
                calm_ticks = 0
            else:
                calm_ticks += 1
                if calm_ticks >= HANDBACK_TICKS:
                    owner = "policy"
                    planner.reset()  # skill history is stale after corrections
        else:
            z_hat, trace = planner.infer(obs, state)
            result.uncertainty_trace.append(
                {"tick": env.tick, **trace.as_dict()})
            chunk = hsn_mod.decode(params, z_hat, cfg)
            u = trace.normalized if sap.conservative else 0.0
            interrupt = tracker.should_intervene if tracker is not None else None
            steps = execute_skill_chunk(env, chunk, u, interrupt)
            for s in steps:
                result.speed_log.append({k: s[k] for k in
                                         ("raw_speed", "exec_speed", "uncertainty")})
            if steps:
                obs, state = steps[-1]["obs"], steps[-1]["state"]
            if env.active and tracker is not None and tracker.should_intervene(env):
                owner = "expert"
                interventions += 1
                calm_ticks = 0
    result.success = env.success()
    result.ticks = env.tick
    result.interventions = interventions
    result.correction_packets = len(correction.packets) if correction is not None else 0
    result.violations = env.bound_violations
    result.final_obs, result.final_state = obs, state
    return result


def evaluate(params: dict, cfg: hsn_mod.HsnConfig, task: TaskSpec, n_trials: int,
             conservative: bool, seed: int, env: SimEnv | None = None,
             mc_samples: int = 16, epsilon: float = 2e-3) -> dict:
    """Seeded policy-only episodes; no expert, no recording."""
    env = env or SimEnv()
    sap = SapConfig(task=task.name, dynamic=task.dynamic, conservative=conservative,
                    mc_samples=mc_samples, epsilon=epsilon, seed=seed)
    episodes = []
    for i in range(n_trials):
        r = _policy_rollout(env, task, seed + i, params, cfg, sap,
                            expert=None, correction=None)
        norm_values = [t["normalized"] for t in r.uncertainty_trace] or [0.0]
        episodes.append({
            "seed": seed + i,
            "success": r.success,
            "ticks": r.ticks,
            "violations": r.violations,
            "mean_uncertainty": float(np.mean(norm_values)),
            "max_uncertainty": float(np.max(norm_values)),
            "speed_log": r.speed_log,
        })
    return {
        "task": task.name,
        "dynamic": task.dynamic,
        "conservative": conservative,
        "trials": n_trials,
        "success_rate": float(np.mean([e["success"] for e in episodes])),
        "total_violations": int(sum(e["violations"] for e in episodes)),
        "mean_uncertainty": float(np.mean([e["mean_uncertainty"] for e in episodes])),
        "episodes": episodes,
    }


def run_sap(sap: SapConfig, params: dict, cfg: hsn_mod.HsnConfig,
            memory: RolloutMemory, task: TaskSpec, env: SimEnv | None = None,
            opt_state: AdamState | None = None,
            expert: ScriptedExpert | None = None) -> tuple[dict, dict]:
    """Expert-in-the-loop improvement over a pretrained policy.

    Per epoch: M rollouts under shared control (corrections recorded and
    merged into the dataset after each rollout), one training update over the
    grown dataset, then a seeded evaluation. Returns the updated parameters
    and a structured report.
    """
    env = env or SimEnv()
    expert = expert or ScriptedExpert()
    opt_state = opt_state or AdamState()
    eval_task = task
    report = {"config": sap.__dict__.copy(), "epochs": []}
    initial = evaluate(params, cfg, eval_task, sap.eval_trials, sap.conservative,
                       seed=sap.seed + 900_000, env=env,
                       mc_samples=sap.mc_samples, epsilon=sap.epsilon)
    report["initial_success_rate"] = initial["success_rate"]
    rollout_seed = sap.seed + 10_000
    for epoch in range(sap.epochs):
        epoch_rec = {"epoch": epoch, "rollouts": [], "packets_before": memory.packet_count,
                     "trajs_before": len(memory)}
        for j in range(sap.rollouts_per_epoch):
            correction = Trajectory(task=task.name, seed=rollout_seed,
                                    source="correction")
            r = _policy_rollout(env, task, rollout_seed, params, cfg, sap,
                                expert=expert, correction=correction)
            rollout_seed += 1
            if correction.packets:
                close_episode(correction, r.final_obs, r.final_state)
                merge(memory, [correction])
            norm_values = [t["normalized"] for t in r.uncertainty_trace] or [0.0]
            epoch_rec["rollouts"].append({
                "success": r.success,
                "ticks": r.ticks,
                "interventions": r.interventions,
                "correction_packets": r.correction_packets,
                "violations": r.violations,
                "mean_uncertainty": float(np.mean(norm_values)),
                "max_uncertainty": float(np.max(norm_values)),
                "speed_log": r.speed_log,
            })
        losses = train_policy(params, opt_state, memory, cfg,
                              epochs=1, seed=sap.seed + 500 + epoch,
                              batches_per_epoch=sap.update_steps)
        evaluation = evaluate(params, cfg, eval_task, sap.eval_trials,
                              sap.conservative, seed=sap.seed + 900_000, env=env,
                              mc_samples=sap.mc_samples, epsilon=sap.epsilon)
        epoch_rec.update({
            "packets_after": memory.packet_count,
            "trajs_after": len(memory),
            "loss": losses[-1]["loss"],
            "rec_loss": losses[-1]["rec"],
            "kl_loss": losses[-1]["kl"],
            "success_rate": evaluation["success_rate"],
            "interventions": sum(r["interventions"] for r in epoch_rec["rollouts"]),
        })
        report["epochs"].append(epoch_rec)
        log.info("epoch %d: success %.2f, dataset %d packets", epoch,
                 evaluation["success_rate"], memory.packet_count)
    report["final_success_rate"] = report["epochs"][-1]["success_rate"]
    return params, report
