"""Command-line surface.

Config precedence is flags > config file > environment > defaults; the
resolved configuration is printed at startup and embedded into every output
artifact so a run can be reconstructed from its products. All randomness
flows from the single --seed.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import hsn as hsn_mod
from .autodiff import AdamState
from .constraints import ConstraintTable
from .demo_store import RolloutMemory, load_memory, save_memory
from .kinematics import ChainSpec
from .sap_loop import SapConfig, collect_demonstrations, evaluate, run_sap, train_policy
from .sim_env import OBS_DIM, ScriptedExpert, SimEnv, load_task

DEFAULTS = {
    "seed": 0,
    "data_dir": "data",
    "task": "pour",
    "episodes": 10,
    "epochs": 2000,
    "batches_per_epoch": 2,
    "trials": 10,
    "mc_samples": 16,
    "epsilon": 2e-3,
    "sap_epochs": 3,
    "rollouts": 6,
    "update_steps": 50,
    "eval_trials": 20,
    "beta_kl": 5e-4,
    "lr": 1e-3,
    "endpoint": "127.0.0.1:8787",
}


class ConfigResolver:
    """flags > file > environment > defaults, with conflict reporting."""

    ENV_KEYS = {"data_dir": "DATA_DIR", "endpoint": "URSA_ENDPOINT"}

    def __init__(self, args: argparse.Namespace):
        self.args = vars(args)
        self.file_cfg = {}
        if self.args.get("config"):
            with open(self.args["config"]) as f:
                self.file_cfg = yaml.safe_load(f) or {}
        self.resolved = {}
        self.notes = []

    def get(self, key, default=None):
        flag = self.args.get(key)
        file_val = self.file_cfg.get(key)
        env_var = self.ENV_KEYS.get(key)
        env_val = os.environ.get(env_var) if env_var else None
        fallback = DEFAULTS.get(key, default)
        if flag is not None and file_val is not None and flag != file_val:
            self.notes.append(f"'{key}': flag value {flag!r} overrides "
                              f"config-file value {file_val!r}")
        for value in (flag, file_val, env_val, fallback):
            if value is not None:
                self.resolved[key] = value
                return value
        return None

    def snapshot(self, command: str) -> dict:
        return {"command": command, **{k: self.resolved[k] for k in sorted(self.resolved)}}


def _print_config(cfg: dict, notes: list):
    print("run config: " + json.dumps(cfg, sort_keys=True, default=str))
    for note in notes:
        print("config note: " + note)


def _env_from(resolver: ConfigResolver) -> SimEnv:
    chain = ChainSpec.load(resolver.args["chain"]) if resolver.args.get("chain") \
        else ChainSpec.default()
    table = ConstraintTable.load(resolver.args["table"]) if resolver.args.get("table") \
        else ConstraintTable.default()
    return SimEnv(chain, table)


def _write_report(path, report: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        if "epochs" in report:
            for rec in report["epochs"]:
                slim = {k: v for k, v in rec.items() if k != "rollouts"}
                f.write(json.dumps({"record": "epoch", **slim}, sort_keys=True) + "\n")
        summary = {k: v for k, v in report.items() if k not in ("epochs", "episodes")}
        for ep in report.get("episodes", []):
            slim = {k: v for k, v in ep.items() if k != "speed_log"}
            f.write(json.dumps({"record": "episode", **slim}, sort_keys=True) + "\n")
        f.write(json.dumps({"record": "summary", **summary}, sort_keys=True,
                           default=str) + "\n")


def cmd_collect(args) -> int:
    r = ConfigResolver(args)
    seed = int(r.get("seed"))
    task_name = r.get("task")
    episodes = int(r.get("episodes"))
    data_dir = Path(r.get("data_dir")) / task_name
    expert_kind = r.get("expert", "scripted")
    dynamic = bool(r.get("dynamic", False))
    cfg = r.snapshot("collect")
    _print_config(cfg, r.notes)
    task = load_task(task_name, dynamic=dynamic)
    env = _env_from(r)
    memory = RolloutMemory()
    if expert_kind == "scripted":
        collect_demonstrations(episodes, ScriptedExpert(), task, memory, env, seed0=seed)
    elif expert_kind == "human":
        return _serve_session(r, params=None, hsn_cfg=None, record_dir=data_dir)
    else:
        print(f"unknown expert '{expert_kind}'", file=sys.stderr)
        return 2
    save_memory(memory, data_dir, extra_manifest={"config": cfg})
    print(f"collected {len(memory)} episodes ({memory.packet_count} packets) "
          f"into {data_dir}")
    return 0


def cmd_train(args) -> int:
    r = ConfigResolver(args)
    seed = int(r.get("seed"))
    task_name = r.get("task")
    epochs = int(r.get("epochs"))
    data_dir = Path(r.get("data_dir"))
    out = r.get("out") or "checkpoint.ursa"
    cfg_run = r.snapshot("train")
    _print_config(cfg_run, r.notes)
    root = data_dir / task_name if (data_dir / task_name).is_dir() else data_dir
    memory = load_memory(root, expected_task=None)
    if len(memory) == 0:
        print(f"no episodes under {root}", file=sys.stderr)
        return 2
    obs_dim = memory.in_order()[0].packets[0].o.shape[0]
    if args.resume:
        params, hsn_cfg, _ = hsn_mod.load_hsn_checkpoint(args.resume)
    else:
        hsn_cfg = hsn_mod.HsnConfig(obs_dim=obs_dim,
                                    beta_kl=float(r.get("beta_kl")),
                                    lr=float(r.get("lr")))
        params = hsn_mod.init_params(hsn_cfg, seed=seed)
    opt = AdamState()
    if epochs > 0:
        history = train_policy(params, opt, memory, hsn_cfg, epochs=epochs, seed=seed,
                               batches_per_epoch=int(r.get("batches_per_epoch")))
        print(f"trained {epochs} epochs: loss {history[0]['loss']:.5f} -> "
              f"{history[-1]['loss']:.5f}")
    hsn_mod.save_hsn_checkpoint(out, params, hsn_cfg, extra_meta={"config": cfg_run})
    print(f"checkpoint written to {out}")
    return 0


def cmd_eval(args) -> int:
    r = ConfigResolver(args)
    seed = int(r.get("seed"))
    trials = int(r.get("trials"))
    cfg_run = r.snapshot("eval")
    _print_config(cfg_run, r.notes)
    params, hsn_cfg, _ = hsn_mod.load_hsn_checkpoint(args.checkpoint)
    task = load_task(r.get("task"), dynamic=bool(r.get("dynamic", False)))
    report = evaluate(params, hsn_cfg, task, trials,
                      conservative=not args.no_csi, seed=seed, env=_env_from(r),
                      mc_samples=int(r.get("mc_samples")),
                      epsilon=float(r.get("epsilon")))
    report["config"] = cfg_run
    if args.report:
        _write_report(args.report, report)
    print(f"success rate {report['success_rate']:.2f} over {trials} trials; "
          f"violations {report['total_violations']}; "
          f"mean uncertainty {report['mean_uncertainty']:.4f}")
    return 0 if report["total_violations"] == 0 else 1


def cmd_rollout(args) -> int:
    r = ConfigResolver(args)
    seed = int(r.get("seed"))
    episodes = int(r.get("episodes"))
    cfg_run = r.snapshot("rollout")
    _print_config(cfg_run, r.notes)
    params, hsn_cfg, _ = hsn_mod.load_hsn_checkpoint(args.checkpoint)
    task = load_task(r.get("task"), dynamic=bool(r.get("dynamic", False)))
    report = evaluate(params, hsn_cfg, task, episodes,
                      conservative=not args.no_csi, seed=seed, env=_env_from(r),
                      mc_samples=int(r.get("mc_samples")),
                      epsilon=float(r.get("epsilon")))
    for ep in report["episodes"]:
        print(json.dumps({k: ep[k] for k in
                          ("seed", "success", "ticks", "mean_uncertainty")},
                         sort_keys=True))
    print(f"{sum(e['success'] for e in report['episodes'])}/{episodes} succeeded")
    return 0


def cmd_sap(args) -> int:
    r = ConfigResolver(args)
    seed = int(r.get("seed"))
    cfg_run = r.snapshot("sap")
    _print_config(cfg_run, r.notes)
    params, hsn_cfg, _ = hsn_mod.load_hsn_checkpoint(args.checkpoint)
    task_name = r.get("task")
    task = load_task(task_name, dynamic=bool(r.get("dynamic", False)))
    data_dir = Path(r.get("data_dir"))
    root = data_dir / task_name if (data_dir / task_name).is_dir() else data_dir
    memory = load_memory(root) if root.is_dir() else RolloutMemory()
    if r.get("expert", "scripted") == "human":
        print("human-expert SAP runs through `ursa serve`", file=sys.stderr)
        return 2
    sap_cfg = SapConfig(epochs=int(r.get("sap_epochs")),
                        rollouts_per_epoch=int(r.get("rollouts")),
                        mc_samples=int(r.get("mc_samples")),
                        epsilon=float(r.get("epsilon")),
                        update_steps=int(r.get("update_steps")),
                        eval_trials=int(r.get("eval_trials")),
                        task=task_name, dynamic=task.dynamic,
                        conservative=not args.no_csi, seed=seed)
    params, report = run_sap(sap_cfg, params, hsn_cfg, memory, task, env=_env_from(r))
    report["config"] = cfg_run
    if args.report:
        _write_report(args.report, report)
    if args.out:
        hsn_mod.save_hsn_checkpoint(args.out, params, hsn_cfg,
                                    extra_meta={"config": cfg_run})
    print(f"success {report['initial_success_rate']:.2f} -> "
          f"{report['final_success_rate']:.2f}; dataset "
          f"{report['epochs'][-1]['packets_after']} packets")
    return 0


def _serve_session(r: ConfigResolver, params, hsn_cfg, record_dir=None) -> int:
    from .gateway import LiveSession, run_server
    endpoint = r.get("endpoint")
    host, _, port = endpoint.rpartition(":")
    task = load_task(r.get("task"), dynamic=bool(r.get("dynamic", False)))
    env = _env_from(r)
    memory = RolloutMemory()
    session = LiveSession(env, task, memory, params=params, cfg=hsn_cfg,
                          seed=int(r.get("seed")),
                          conservative=not r.args.get("no_csi", False),
                          record_dir=record_dir)
    static_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    print(f"serving operator console on http://{host}:{port} "
          f"(ws endpoint /ws); static={static_dir if static_dir.is_dir() else 'none'}")
    run_server(session, host or "127.0.0.1", int(port))
    return 0


def cmd_serve(args) -> int:
    r = ConfigResolver(args)
    cfg_run = r.snapshot("serve")
    _print_config(cfg_run, r.notes)
    params = hsn_cfg = None
    if args.checkpoint:
        params, hsn_cfg, _ = hsn_mod.load_hsn_checkpoint(args.checkpoint)
    record_dir = Path(r.get("data_dir")) / r.get("task") if args.record else None
    return _serve_session(r, params, hsn_cfg, record_dir)


def cmd_inspect(args) -> int:
    target = Path(args.path)
    if target.is_file():
        params, cfg, meta = hsn_mod.load_hsn_checkpoint(target)
        n = sum(int(np.prod(p.data.shape)) for p in params.values())
        print(json.dumps({"kind": "checkpoint", "tensors": len(params),
                          "parameters": n, "config": meta.get("hsn_config"),
                          "run_config": meta.get("config", {})},
                         sort_keys=True, indent=1))
        return 0
    if target.is_dir():
        memory = load_memory(target)
        by_source = {}
        for t in memory.in_order():
            by_source[t.source] = by_source.get(t.source, 0) + 1
        print(json.dumps({"kind": "dataset", "episodes": len(memory),
                          "packets": memory.packet_count, "by_source": by_source},
                         sort_keys=True, indent=1))
        return 0
    print(f"{target}: not a checkpoint file or episode directory", file=sys.stderr)
    return 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ursa",
                                description="Uncertainty-aware shared autonomy "
                                            "for a simulated manipulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--config", default=None, help="YAML config file")
        sp.add_argument("--data-dir", dest="data_dir", default=None)
        sp.add_argument("--table", default=None, help="constraint table YAML")
        sp.add_argument("--chain", default=None, help="chain spec YAML")
        sp.add_argument("--task", default=None)

    sp = sub.add_parser("collect", help="record expert demonstrations")
    common(sp)
    sp.add_argument("--episodes", type=int, default=None)
    sp.add_argument("--expert", choices=("scripted", "human"), default=None)
    sp.add_argument("--dynamic", action="store_true", default=None)
    sp.set_defaults(fn=cmd_collect)

    sp = sub.add_parser("train", help="train the skill networks")
    common(sp)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--batches-per-epoch", dest="batches_per_epoch", type=int, default=None)
    sp.add_argument("--beta-kl", dest="beta_kl", type=float, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--resume", default=None, help="continue from a checkpoint")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="seeded policy evaluation")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--trials", type=int, default=None)
    sp.add_argument("--dynamic", action="store_true", default=None)
    sp.add_argument("--no-csi", dest="no_csi", action="store_true")
    sp.add_argument("--mc-samples", dest="mc_samples", type=int, default=None)
    sp.add_argument("--epsilon", type=float, default=None)
    sp.add_argument("--report", default=None)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("rollout", help="run policy episodes and print outcomes")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--episodes", type=int, default=None)
    sp.add_argument("--dynamic", action="store_true", default=None)
    sp.add_argument("--no-csi", dest="no_csi", action="store_true")
    sp.add_argument("--mc-samples", dest="mc_samples", type=int, default=None)
    sp.add_argument("--epsilon", type=float, default=None)
    sp.set_defaults(fn=cmd_rollout)

    sp = sub.add_parser("sap", help="expert-in-the-loop improvement")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--expert", choices=("scripted", "human"), default=None)
    sp.add_argument("--sap-epochs", dest="sap_epochs", type=int, default=None)
    sp.add_argument("--rollouts", type=int, default=None)
    sp.add_argument("--mc-samples", dest="mc_samples", type=int, default=None)
    sp.add_argument("--epsilon", type=float, default=None)
    sp.add_argument("--update-steps", dest="update_steps", type=int, default=None)
    sp.add_argument("--eval-trials", dest="eval_trials", type=int, default=None)
    sp.add_argument("--dynamic", action="store_true", default=None)
    sp.add_argument("--no-csi", dest="no_csi", action="store_true")
    sp.add_argument("--report", default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_sap)

    sp = sub.add_parser("serve", help="attach the live operator console")
    common(sp)
    sp.add_argument("--endpoint", default=None, help="host:port")
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--record", action="store_true",
                    help="persist operator episodes under the data dir")
    sp.set_defaults(fn=cmd_serve)

    sp = sub.add_parser("inspect", help="summarize a dataset or checkpoint")
    sp.add_argument("path")
    sp.set_defaults(fn=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:  # invariant violations exit nonzero
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
