"""Command-line front end: generate, train, evaluate, profile, sweep,
mitigate, ablate, serve, and report.

A single JSON config file carries sections {env, energy, dynamics, agent,
latency, safety}; flags override file values, and the resolved snapshot is
written into every run directory alongside a manifest. Re-running a command
whose manifest is already complete with the same request is a no-op.

Exit codes: 0 success, 2 config error, 3 infeasible environment,
4 transport error, 5 resume mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import dataclass

from . import __version__, envgen, hilnet, latency as latmod, qof
from .agents import (DqnConfig, PpoConfig, evaluate, train)
from .agents.train import ResumeMismatchError
from .dynamics import DynamicsParams
from .energy import EnergyCoefficients
from .envgen import ConfigError, CurriculumZone, EnvConfig, PlacementInfeasibleError
from .latency import (LatencyModel, SafetyParams, TransportError, load_trace,
                      max_safe_velocity, parse_latency_spec, profile_inference)
from .nn import AblationMask, CheckpointError, PolicyTemplate, load_checkpoint

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_TRANSPORT = 4
EXIT_RESUME = 5


@dataclass
class ResolvedConfig:
    env: EnvConfig
    energy: EnergyCoefficients
    dynamics: DynamicsParams
    agent_kind: str
    template: PolicyTemplate
    curriculum: bool
    total_steps: int | None
    run_seed: int
    dqn: DqnConfig
    ppo: PpoConfig
    latency: LatencyModel | None
    safety: SafetyParams

    def snapshot(self) -> dict:
        return {
            "env": self.env.to_dict(),
            "energy": self.energy.to_dict(),
            "dynamics": self.dynamics.to_dict(),
            "agent": {
                "kind": self.agent_kind,
                "template": f"{self.template.num_layers}x{self.template.num_filters}",
                "curriculum": self.curriculum,
                "total_steps": self.total_steps,
                "seed": self.run_seed,
                "dqn": {k: getattr(self.dqn, k) for k in self.dqn.__dataclass_fields__},
                "ppo": {k: getattr(self.ppo, k) for k in self.ppo.__dataclass_fields__},
            },
            "latency": self.latency.to_dict() if self.latency else None,
            "safety": {"a_brake": self.safety.a_brake, "d_sense": self.safety.d_sense},
        }


def _parse_latency_section(section, t3: float) -> LatencyModel | None:
    if section is None:
        return None
    if isinstance(section, str):
        return parse_latency_spec(section, t3)
    if isinstance(section, dict):
        if "spec" in section:
            return parse_latency_spec(section["spec"], t3)
        return LatencyModel.from_dict(section).with_t3(t3)
    raise ConfigError(["latency section must be null, a spec string, or a model object"])


def load_run_config(path: str | None, *, seed_override: int | None = None,
                    algo: str | None = None, template: str | None = None,
                    steps: int | None = None, curriculum: bool | None = None,
                    latency_spec: str | None = None) -> ResolvedConfig:
    doc = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError(["config file must hold a JSON object"])
    known = {"env", "energy", "dynamics", "agent", "latency", "safety"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError([f"unknown config section {k!r}" for k in sorted(unknown)])

    env_doc = dict(doc.get("env", {}))
    env_seed = os.environ.get("AIRGAP_SEED")
    if env_seed is not None:
        env_doc["seed"] = int(env_seed)
    elif seed_override is not None:
        env_doc["seed"] = seed_override
    env = envgen.validate_config(env_doc)

    try:
        coeffs = EnergyCoefficients.from_dict(doc.get("energy"))
        dyn = DynamicsParams.from_dict(doc.get("dynamics"))
        safety_doc = doc.get("safety") or {}
        if "d_sense" not in safety_doc:
            safety_doc = dict(safety_doc, d_sense=dyn.max_range)
        if "a_brake" not in safety_doc:
            safety_doc = dict(safety_doc, a_brake=dyn.a_max)
        safety = SafetyParams.from_dict(safety_doc)

        agent_doc = dict(doc.get("agent", {}))
        agent_kind = algo or agent_doc.get("kind", "dqn")
        template_text = template or agent_doc.get("template", "5x32")
        tmpl = PolicyTemplate.parse(template_text, n_rays=dyn.n_rays)
        curr = curriculum if curriculum is not None else bool(agent_doc.get("curriculum", False))
        total = steps if steps is not None else agent_doc.get("total_steps")
        run_seed = int(agent_doc.get("seed", env.seed))
        if os.environ.get("AIRGAP_SEED") is not None:
            run_seed = int(os.environ["AIRGAP_SEED"])
        elif seed_override is not None:
            run_seed = seed_override
        dqn_cfg = DqnConfig.from_dict(agent_doc.get("dqn"))
        ppo_cfg = PpoConfig.from_dict(agent_doc.get("ppo"))

        if latency_spec is not None:
            lat = parse_latency_spec(latency_spec, dyn.t3) if latency_spec != "none" else None
        else:
            lat = _parse_latency_section(doc.get("latency"), dyn.t3)
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError([str(exc)]) from exc

    return ResolvedConfig(env=env, energy=coeffs, dynamics=dyn,
                          agent_kind=agent_kind, template=tmpl, curriculum=curr,
                          total_steps=total, run_seed=run_seed,
                          dqn=dqn_cfg, ppo=ppo_cfg, latency=lat, safety=safety)


# --- manifests -----------------------------------------------------------------

def _manifest_path(out_dir: str) -> str:
    return os.path.join(out_dir, "manifest.json")


def _request_fingerprint(command: str, request: dict) -> str:
    return json.dumps({"command": command, "request": request},
                      sort_keys=True, separators=(",", ":"))


def manifest_start(out_dir: str, command: str, request: dict,
                   snapshot: dict | None, seed: int | None) -> dict | None:
    """Write the manifest before work begins; None means already complete."""
    os.makedirs(out_dir, exist_ok=True)
    path = _manifest_path(out_dir)
    fingerprint = _request_fingerprint(command, request)
    if os.path.exists(path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                old = json.load(fh)
        except (OSError, json.JSONDecodeError):
            old = {}
        if old.get("status") == "complete" and old.get("fingerprint") == fingerprint:
            print(f"{command}: already complete in {out_dir} (manifest match); nothing to do")
            return None
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "fingerprint": fingerprint,
        "resolved_config": snapshot,
        "seed": seed,
        "code_version": __version__,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "finished_at": None,
        "outputs": [],
        "status": "running",
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def manifest_finish(out_dir: str, manifest: dict, outputs: list[str]) -> None:
    for rel in outputs:
        full = os.path.join(out_dir, rel)
        if not os.path.exists(full):
            raise RuntimeError(f"manifest names missing artifact: {full}")
    manifest["outputs"] = outputs
    manifest["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    manifest["status"] = "complete"
    with open(_manifest_path(out_dir), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _write_snapshot(out_dir: str, resolved: ResolvedConfig) -> None:
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(resolved.snapshot(), fh, indent=2, sort_keys=True)


# --- subcommands ---------------------------------------------------------------

def cmd_generate(args) -> int:
    resolved = load_run_config(args.config, seed_override=args.seed)
    zone = (CurriculumZone.for_arena(args.zone, resolved.env.arena_size[0])
            if args.zone is not None else None)
    request = {"config": resolved.env.to_dict(), "n": args.n,
               "zone": args.zone}
    manifest = manifest_start(args.out, "generate", request,
                              resolved.snapshot(), resolved.env.seed)
    if manifest is None:
        return EXIT_OK
    outputs = []
    for i in range(args.n):
        instance = envgen.generate(resolved.env, i, zone)
        name = f"env_{i:05d}.json"
        with open(os.path.join(args.out, name), "w", encoding="utf-8") as fh:
            fh.write(instance.to_json())
        outputs.append(name)
    _write_snapshot(args.out, resolved)
    manifest_finish(args.out, manifest, outputs + ["config.json"])
    print(f"generated {args.n} environments in {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    resolved = load_run_config(args.config, seed_override=args.seed,
                               algo=args.algo, template=args.template,
                               steps=args.steps, curriculum=args.curriculum,
                               latency_spec=args.latency)
    v_cap = None
    if args.scale_actions:
        if resolved.latency is None:
            raise ConfigError(["--scale-actions needs a latency model"])
        v_cap = max_safe_velocity(resolved.latency.response_latency(), resolved.safety)
    request = {"snapshot": resolved.snapshot(), "v_cap": v_cap}
    if not args.resume:
        manifest = manifest_start(args.out, "train", request,
                                  resolved.snapshot(), resolved.run_seed)
        if manifest is None:
            return EXIT_OK
    else:
        manifest = manifest_start(args.out + "/.resume-tmp", "train", request,
                                  resolved.snapshot(), resolved.run_seed) or {}
    _write_snapshot(args.out, resolved)
    result = train(resolved.agent_kind, resolved.env, resolved.template, args.out,
                   dyn_params=resolved.dynamics, energy_coeffs=resolved.energy,
                   latency_model=resolved.latency, v_cap=v_cap,
                   curriculum=resolved.curriculum,
                   dqn_config=resolved.dqn, ppo_config=resolved.ppo,
                   run_seed=resolved.run_seed, resume=args.resume,
                   total_steps=resolved.total_steps)
    if not args.resume:
        manifest_finish(args.out, manifest,
                        [os.path.relpath(result.final_checkpoint, args.out),
                         "train_log.csv", "config.json"])
    print(f"trained {result.steps} steps over {result.episodes} episodes; "
          f"final checkpoint: {result.final_checkpoint}")
    return EXIT_OK


def _eval_once(args, ablate_names) -> int:
    resolved = load_run_config(args.config, seed_override=args.seed,
                               latency_spec=args.latency)
    mask = AblationMask.from_names(ablate_names) if ablate_names else None
    report, _ = evaluate(args.checkpoint, resolved.env, args.n,
                         latency_model=resolved.latency, ablation=mask,
                         dyn_params=resolved.dynamics,
                         energy_coeffs=resolved.energy,
                         traj_dir=args.traj_dir, workers=args.workers,
                         episode_base=args.episode_base)
    print(qof.render_report(report, title=f"Evaluation of {args.checkpoint}"))
    if args.out:
        report.save(args.out)
        print(f"report written to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    names = [s.strip() for s in (args.ablate or "").split(",") if s.strip()]
    return _eval_once(args, names)


def cmd_ablate(args) -> int:
    names = [s.strip() for s in args.ablate.split(",") if s.strip()]
    if not names:
        raise ConfigError(["ablate requires --ablate depth|velocity|position"])
    return _eval_once(args, names)


def cmd_profile(args) -> int:
    net, _, _ = load_checkpoint(args.checkpoint)
    transport = "remote_endpoint" if args.remote else "in_process"
    if args.remote and args.push_checkpoint:
        host, port = args.remote.rsplit(":", 1)
        with hilnet.PolicyClient(host, int(port)) as client:
            client.load_checkpoint(args.checkpoint)
    model = profile_inference(net, args.n, transport, endpoint=args.remote)
    latmod.save_trace(model, args.out)
    t2s = model.t2.samples
    mean_ms = sum(t2s) / len(t2s) * 1e3
    print(f"profiled {len(t2s)} samples ({transport}); mean t2 {mean_ms:.3f} ms; "
          f"trace written to {args.out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    grid = []
    for item in args.grid.split(","):
        tmpl = PolicyTemplate.parse(item.strip(), n_rays=args.n_rays)
        grid.append((tmpl.num_layers, tmpl.num_filters))
    transport = "remote_endpoint" if args.remote else "in_process"
    rows = latmod.latency_sweep(grid, transport, endpoint=args.remote,
                                n_samples=args.n, n_rays=args.n_rays)
    latmod.write_sweep_csv(rows, args.out)
    for r in rows:
        print(f"  {r.num_layers}x{r.num_filters}: mean t2 {r.mean_t2_s*1e3:.3f} ms, "
              f"p95 {r.p95_t2_s*1e3:.3f} ms, {r.parameter_count} params")
    print(f"sweep written to {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    hilnet.serve(args.listen, args.checkpoint)
    return EXIT_OK


def _resolve_target_model(target: str, t3: float, template: PolicyTemplate,
                          n_profile: int) -> LatencyModel:
    if target.startswith("trace:"):
        return load_trace(target[len("trace:"):]).with_t3(t3)
    if target.startswith("constant:"):
        return parse_latency_spec(target, t3)
    if target.startswith("gaussian:"):
        return parse_latency_spec(target, t3)
    # host:port -> profile the candidate policy on the live endpoint
    from .nn import build_policy, save_checkpoint
    import tempfile
    net = build_policy(template, "discrete", init_seed=0)
    host, port = target.rsplit(":", 1)
    with tempfile.NamedTemporaryFile(suffix=".ckpt") as tmp:
        save_checkpoint(net, tmp.name, metadata={"purpose": "latency-profile"})
        with hilnet.PolicyClient(host, int(port)) as client:
            client.load_checkpoint(tmp.name)
    return profile_inference(net, n_profile, "remote_endpoint", endpoint=target,
                             t3=t3)


def cmd_mitigate(args) -> int:
    resolved = load_run_config(args.config, seed_override=args.seed,
                               template=args.template, steps=args.steps)
    request = {"snapshot": resolved.snapshot(), "target": args.target,
               "episodes": args.episodes}
    manifest = manifest_start(args.out, "mitigate", request,
                              resolved.snapshot(), resolved.run_seed)
    if manifest is None:
        return EXIT_OK
    _write_snapshot(args.out, resolved)

    # Phase 1: target latency distribution and the safe-velocity cap.
    model = _resolve_target_model(args.target, resolved.dynamics.t3,
                                  resolved.template, args.profile_samples)
    latmod.save_trace(model, os.path.join(args.out, "latency.json"))
    v_cap = max_safe_velocity(model.response_latency(), resolved.safety)
    print(f"phase 1: response latency {model.response_latency()*1e3:.1f} ms, "
          f"safe velocity cap {v_cap:.2f} m/s")

    # Phase 2: train with injected delays and the scaled action space,
    # plus the zero-latency control policy.
    mitigated = train(resolved.agent_kind, resolved.env, resolved.template,
                      os.path.join(args.out, "mitigated"),
                      dyn_params=resolved.dynamics, energy_coeffs=resolved.energy,
                      latency_model=model, v_cap=v_cap,
                      curriculum=resolved.curriculum, dqn_config=resolved.dqn,
                      ppo_config=resolved.ppo, run_seed=resolved.run_seed,
                      total_steps=resolved.total_steps)
    if args.control_checkpoint:
        control_ckpt = args.control_checkpoint
    else:
        control = train(resolved.agent_kind, resolved.env, resolved.template,
                        os.path.join(args.out, "control"),
                        dyn_params=resolved.dynamics, energy_coeffs=resolved.energy,
                        latency_model=None, v_cap=None,
                        curriculum=resolved.curriculum, dqn_config=resolved.dqn,
                        ppo_config=resolved.ppo, run_seed=resolved.run_seed,
                        total_steps=resolved.total_steps)
        control_ckpt = control.final_checkpoint

    # Phase 3: evaluate on the training host (zero latency) and under the
    # target latency, for both policies.
    def run_eval(ckpt, lat, name):
        report, _ = evaluate(ckpt, resolved.env, args.episodes, latency_model=lat,
                             dyn_params=resolved.dynamics,
                             energy_coeffs=resolved.energy, workers=args.workers)
        report.save(os.path.join(args.out, name))
        return report

    host_report = run_eval(mitigated.final_checkpoint, None, "eval_host.json")
    with_report = run_eval(mitigated.final_checkpoint, model, "eval_with_mitigation.json")
    without_report = run_eval(control_ckpt, model, "eval_without_mitigation.json")
    run_eval(control_ckpt, None, "eval_control_host.json")

    rep = qof.mitigation_report(host_report, with_report, without_report)
    with open(os.path.join(args.out, "mitigation_report.json"), "w",
              encoding="utf-8") as fh:
        fh.write(rep.to_json())
    print(qof.render_mitigation(rep))
    manifest_finish(args.out, manifest,
                    ["latency.json", "mitigation_report.json", "eval_host.json",
                     "eval_with_mitigation.json", "eval_without_mitigation.json",
                     "config.json"])
    return EXIT_OK


def cmd_report(args) -> int:
    if args.eval:
        for path in args.eval:
            print(qof.render_report(qof.QofReport.load(path), title=path))
            print()
    if args.gap:
        baseline = qof.QofReport.load(args.gap[0])
        target = qof.QofReport.load(args.gap[1])
        print(qof.render_gap(qof.perf_gap(baseline, target)))
    if args.traj_svg:
        trajectories, labels = [], []
        for path in args.traj:
            points = []
            with open(path, "r", encoding="utf-8", newline="") as fh:
                for row in csv.DictReader(fh):
                    points.append((float(row["x"]), float(row["y"])))
            trajectories.append(points)
            labels.append(os.path.basename(path))
        qof.trajectory_svg(trajectories, (args.arena, args.arena), args.traj_svg,
                           labels)
        print(f"svg written to {args.traj_svg}")
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def _add_eval_flags(p) -> None:
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("-n", type=int, default=100, help="evaluation episodes")
    p.add_argument("--latency", default=None,
                   help="constant:<ms> | trace:<file> | gaussian:<mu_ms>,<sigma_ms>")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="write eval_report.json here")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--traj-dir", default=None)
    p.add_argument("--episode-base", type=int, default=1_000_000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airgap",
        description="Renderless UAV navigation benchmark with latency-in-the-loop "
                    "training (AIRGAP_SEED overrides every seed)")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="serialize seeded environments")
    p.add_argument("--config", required=True)
    p.add_argument("-n", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--zone", type=int, default=None, choices=(0, 1, 2))
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a policy")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--algo", choices=("dqn", "ppo"), default=None)
    p.add_argument("--template", default=None, help="LxF, e.g. 5x32")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--curriculum", action="store_true", default=None)
    p.add_argument("--latency", default=None)
    p.add_argument("--scale-actions", action="store_true",
                   help="cap the action space at the latency-derived safe velocity")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint")
    _add_eval_flags(p)
    p.add_argument("--ablate", default=None,
                   help="comma-separated: depth, velocity, position")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="evaluate with sensor inputs zeroed")
    _add_eval_flags(p)
    p.add_argument("--ablate", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("profile", help="capture a latency trace for a policy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--remote", default=None, help="host:port of a serve instance")
    p.add_argument("--push-checkpoint", action="store_true",
                   help="load the checkpoint onto the remote server first")
    p.add_argument("-n", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("sweep", help="policy-size vs latency sweep")
    p.add_argument("--grid", required=True, help="comma-separated LxF templates")
    p.add_argument("--remote", default=None)
    p.add_argument("-n", type=int, default=1000)
    p.add_argument("--n-rays", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("mitigate", help="three-phase latency-gap mitigation")
    p.add_argument("--config", required=True)
    p.add_argument("--template", default=None)
    p.add_argument("--target", required=True,
                   help="trace:<file> | constant:<ms> | host:port")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--profile-samples", type=int, default=1000)
    p.add_argument("--control-checkpoint", default=None,
                   help="reuse an existing zero-latency policy as the control")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_mitigate)

    p = sub.add_parser("serve", help="run the TCP inference server")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--listen", default="127.0.0.1:9521")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="render tables/SVG from report files")
    p.add_argument("--eval", nargs="*", default=None)
    p.add_argument("--gap", nargs=2, default=None,
                   metavar=("BASELINE", "TARGET"))
    p.add_argument("--traj-svg", default=None)
    p.add_argument("--traj", nargs="*", default=[])
    p.add_argument("--arena", type=float, default=25.0)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for message in exc.errors:
            print(f"config error: {message}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, CheckpointError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PlacementInfeasibleError as exc:
        print(f"infeasible environment: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (TransportError, hilnet.TransportError, hilnet.ProtocolError) as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except ResumeMismatchError as exc:
        print(f"resume mismatch: {exc}", file=sys.stderr)
        return EXIT_RESUME


if __name__ == "__main__":
    sys.exit(main())
