"""Command-line entry points.

Four operations: `simulate` runs the closed loop under a policy, `train`
fits the accuracy and update-latency predictors from logged collection
episodes, `adapt` reports which branches a device/target can deploy, and
`compare` runs the scheduling policies side by side.

All inputs come from a run manifest (JSON). Every emitted artifact embeds
the tool version and a fingerprint of the fully resolved configuration, and
contains no timestamps or absolute paths, so a rerun with the same manifest
and seed is byte-identical.

Exit codes: 0 success, 2 invalid configuration or manifest, 3 runtime
failure (infeasible schedule, unwritable output).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .branches import (
    BranchConfig,
    DeviceProfile,
    ProfileError,
    adapt,
    branch_latency,
    enumerate_branches,
    fixed_latency,
)
from .core import Box3D, CameraRig, DistributionVector, view_of
from .metrics import EvalConfig, evaluate_frame, summarize
from .predictors import (
    GBRTParams,
    PerformanceModels,
    accuracy_features,
    fit_update_latency,
    train_gbrt,
)
from .scheduler import InfeasibleError
from .simulator import (
    CapabilityError,
    CapabilityProfile,
    EpisodeLog,
    ScenarioConfig,
    SystemConfig,
    rng_stream,
    run_episode,
    synth_detect,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

_BUILTIN_PREFIX = "builtin:"


class ConfigError(Exception):
    """Manifest or referenced configuration is invalid."""


def _setup_logging() -> None:
    # the environment variable controls verbosity and nothing else
    level_name = os.environ.get("VIEWSCHED_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_ref(ref: str, base_dir: str) -> dict:
    """Resolve a manifest reference: packaged name or path relative to it."""
    if ref.startswith(_BUILTIN_PREFIX):
        name = ref[len(_BUILTIN_PREFIX):]
        try:
            text = resources.files("viewsched").joinpath(f"data/{name}.json").read_text("utf-8")
        except FileNotFoundError as exc:
            raise ConfigError(f"unknown builtin {name!r}") from exc
    else:
        path = ref if os.path.isabs(ref) else os.path.join(base_dir, ref)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read {ref!r}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{ref!r} is not valid JSON: {exc}") from exc


@dataclass
class RunManifest:
    name: str
    scenario: ScenarioConfig
    device: DeviceProfile
    capability: CapabilityProfile
    model_path: Optional[str]  # resolved; None means train in-process
    target_ms: float
    alpha: float
    latency_noise_sigma: float
    sched_margin_ms: float
    training: dict
    fingerprint: str  # sha256 over the fully resolved configuration


_DEFAULT_TRAINING = {
    "seeds": [101, 202],
    "rounds": 80,
    "max_depth": 3,
    "learning_rate": 0.1,
    "min_samples_leaf": 5,
}


def load_manifest(
    path: str,
    seed_override: Optional[int] = None,
    target_override: Optional[float] = None,
) -> RunManifest:
    """Parse and fully resolve a run manifest.

    CLI overrides are folded in before fingerprinting, so two runs hash
    equal exactly when every effective setting is equal.
    """
    if path.startswith(_BUILTIN_PREFIX):
        base_dir = "."
        data = _load_ref(path, base_dir)
    else:
        base_dir = os.path.dirname(os.path.abspath(path))
        data = _load_ref(os.path.abspath(path), base_dir)
    if not isinstance(data, dict):
        raise ConfigError("manifest must be a JSON object")

    try:
        scenario_dict = _load_ref(data["scenario"], base_dir)
        device_dict = _load_ref(data["device"], base_dir)
        capability_dict = _load_ref(data["capability"], base_dir)
    except KeyError as exc:
        raise ConfigError(f"manifest is missing required key {exc}") from exc

    memory_limit = data.get("memory_limit_mb")
    if memory_limit is not None:
        device_dict = dict(device_dict)
        device_dict["memory_limit_mb"] = float(memory_limit)

    try:
        scenario = ScenarioConfig.from_dict(scenario_dict)
        if seed_override is not None:
            scenario = replace(scenario, seed=int(seed_override))
        device = DeviceProfile.from_dict(device_dict)
        capability = CapabilityProfile.from_dict(capability_dict)
        target_ms = float(target_override if target_override is not None else data.get("target_ms", 33.0))
        alpha = float(data.get("alpha", 1.0))
        sigma = float(data.get("latency_noise_sigma", 0.0))
        margin = float(data.get("sched_margin_ms", 0.0))
        training = {**_DEFAULT_TRAINING, **data.get("training", {})}
        if target_ms <= 0:
            raise ValueError("target_ms must be positive")
    except (ValueError, TypeError, KeyError, ProfileError, CapabilityError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc

    model_ref = data.get("model")
    model_path = None
    if model_ref:
        model_path = (
            model_ref if os.path.isabs(model_ref) else os.path.join(base_dir, model_ref)
        )

    canonical = {
        "tool_version": __version__,
        "name": data.get("name", "unnamed"),
        "scenario": scenario.to_dict(),
        "device": device.to_dict(),
        "capability": capability.to_dict(),
        "target_ms": target_ms,
        "alpha": alpha,
        "latency_noise_sigma": sigma,
        "sched_margin_ms": margin,
        "training": training,
        "model": bool(model_ref),
    }
    fingerprint = hashlib.sha256(
        json.dumps(canonical, sort_keys=True, separators=(",", ":")).encode("utf-8")
    ).hexdigest()

    return RunManifest(
        name=data.get("name", "unnamed"),
        scenario=scenario,
        device=device,
        capability=capability,
        model_path=model_path,
        target_ms=target_ms,
        alpha=alpha,
        latency_noise_sigma=sigma,
        sched_margin_ms=margin,
        training=training,
        fingerprint=fingerprint,
    )


def _envelope(man: RunManifest, op: str) -> dict:
    return {
        "tool": {"name": "viewsched", "version": __version__},
        "manifest": {"name": man.name, "hash": man.fingerprint},
        "op": op,
    }


def _emit(report: dict, out: Optional[str]) -> None:
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- predictor training --------------------------------------------------------


def _collection_system(man: RunManifest) -> SystemConfig:
    # data collection runs the full catalog, offline, noise-free
    return SystemConfig(
        branches=enumerate_branches(),
        device=man.device,
        capability=man.capability,
        models=None,
        target_ms=man.target_ms,
        alpha=man.alpha,
    )


def collect_training_episodes(man: RunManifest) -> List[EpisodeLog]:
    system = _collection_system(man)
    episodes = []
    for s in man.training["seeds"]:
        scenario = replace(man.scenario, seed=int(s))
        episodes.append(run_episode(scenario, system, policy="round_robin"))
    return episodes


def build_training_set(
    episodes: Sequence[EpisodeLog],
    capability: CapabilityProfile,
    rig: Optional[CameraRig] = None,
    eval_config: Optional[EvalConfig] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Score every (frame, view, branch) cell against per-view ground truth.

    Detection branches are re-synthesized from a dedicated rng stream (the
    logged detections only cover whichever branch the collection policy ran);
    the tracker branch is scored on the logged forecasts. Returns features,
    detection-score targets, and the per-frame track counts for the latency
    fit.
    """
    rig = rig or CameraRig.default()
    eval_config = eval_config or EvalConfig()
    catalog = enumerate_branches()
    feats: List[np.ndarray] = []
    targets: List[float] = []
    counts: List[int] = []

    for ep in episodes:
        rng = rng_stream(ep.scenario.seed, "training")
        max_range = ep.scenario.despawn_radius_m
        for log in ep.frames:
            counts.append(log.track_count_pre)
            gt_by_view: List[List[Box3D]] = [[] for _ in range(rig.view_count)]
            for box in log.gt_boxes:
                gt_by_view[view_of(box.center, rig)].append(box)
            fc_by_view: List[List[Box3D]] = [[] for _ in range(rig.view_count)]
            for box, v in zip(log.forecast_boxes, log.forecast_views):
                fc_by_view[v].append(box)

            for j in range(rig.view_count):
                dist = np.asarray(log.distributions[j], dtype=np.float64)
                conf = (
                    float(np.mean([b.confidence for b in fc_by_view[j]]))
                    if fc_by_view[j]
                    else 0.0
                )
                for branch in catalog:
                    if branch.is_tracker:
                        preds: Sequence[Box3D] = fc_by_view[j]
                    else:
                        preds = synth_detect(
                            branch,
                            gt_by_view[j],
                            capability,
                            rng,
                            rig.sectors[j],
                            max_range,
                        )
                    fe = evaluate_frame(preds, gt_by_view[j], eval_config)
                    ds = summarize([fe], eval_config)["DS"]
                    feats.append(
                        accuracy_features(DistributionVector(dist), branch.index, conf)
                    )
                    targets.append(float(ds))

    return (
        np.asarray(feats, dtype=np.float64),
        np.asarray(targets, dtype=np.float64),
        np.asarray(counts, dtype=np.float64),
    )


def train_models(man: RunManifest) -> Tuple[PerformanceModels, dict]:
    """Two-phase fit, deterministic for a fixed manifest.

    Phase one fits on rotating-coverage collection episodes. Those only
    exhibit short tracker dwells, so a provisional model overrates stale
    forecasts; phase two therefore re-collects under the provisional model's
    own closed-loop policy (long dwells included) and refits on the union.
    """
    params = GBRTParams(
        rounds=int(man.training["rounds"]),
        max_depth=int(man.training["max_depth"]),
        learning_rate=float(man.training["learning_rate"]),
        min_samples_leaf=int(man.training["min_samples_leaf"]),
    )

    episodes = collect_training_episodes(man)
    x, y, counts = build_training_set(episodes, man.capability)
    update = fit_update_latency(
        counts.astype(int),
        man.device.update_intercept_ms + man.device.update_slope_ms_per_track * counts,
    )
    provisional = PerformanceModels(
        accuracy=train_gbrt(x, y, params), update_latency=update
    )

    policy_seeds = [int(s) + 50000 for s in man.training["seeds"]]
    on_policy_system = SystemConfig(
        branches=adapt(man.device, man.target_ms),
        device=man.device,
        capability=man.capability,
        models=provisional,
        target_ms=man.target_ms,
        alpha=man.alpha,
    )
    on_policy = [
        run_episode(replace(man.scenario, seed=s), on_policy_system, policy="adaptive")
        for s in policy_seeds
    ]
    x2, y2, counts2 = build_training_set(on_policy, man.capability)
    x_all = np.concatenate([x, x2])
    y_all = np.concatenate([y, y2])
    counts_all = np.concatenate([counts, counts2])

    accuracy = train_gbrt(x_all, y_all, params)
    update = fit_update_latency(
        counts_all.astype(int),
        man.device.update_intercept_ms
        + man.device.update_slope_ms_per_track * counts_all,
    )
    models = PerformanceModels(accuracy=accuracy, update_latency=update)
    var = float(np.var(y_all))
    mse = accuracy.training_mse[-1] if accuracy.training_mse else var
    info = {
        "samples": int(len(y_all)),
        "episodes": len(episodes) + len(on_policy),
        "seeds": [int(s) for s in man.training["seeds"]],
        "on_policy_seeds": policy_seeds,
        "final_training_mse": mse,
        "r2_train": (1.0 - mse / var) if var > 0 else 1.0,
        "manifest_hash": man.fingerprint,
        "tool_version": __version__,
    }
    return models, info


def _get_models(man: RunManifest) -> PerformanceModels:
    if man.model_path and os.path.exists(man.model_path):
        return PerformanceModels.load(man.model_path)
    if man.model_path:
        raise ConfigError(f"model file {man.model_path!r} does not exist")
    logger.info("no model in manifest; training in-process")
    return train_models(man)[0]


# -- operations ------------------------------------------------------------


def _deploy(man: RunManifest) -> Tuple[BranchConfig, ...]:
    return adapt(man.device, man.target_ms)


def _system(man: RunManifest, branches: Tuple[BranchConfig, ...], models) -> SystemConfig:
    return SystemConfig(
        branches=branches,
        device=man.device,
        capability=man.capability,
        models=models,
        target_ms=man.target_ms,
        alpha=man.alpha,
        latency_noise_sigma=man.latency_noise_sigma,
        sched_margin_ms=man.sched_margin_ms,
    )


def _episode_block(ep: EpisodeLog) -> dict:
    s = ep.summary
    return {
        "policy": ep.policy,
        "frames": len(ep.frames),
        "mAP": s["mAP"],
        "mATE": s["mATE"],
        "mAVE": s["mAVE"],
        "DS": s["DS"],
        "compliance": ep.compliance,
        "mean_actual_ms": s["latency"]["mean_actual_ms"],
    }


def cmd_simulate(man: RunManifest, out: Optional[str], policy: str = "adaptive") -> dict:
    branches = _deploy(man)
    models = _get_models(man) if policy in ("adaptive", "per_frame") else None
    ep = run_episode(man.scenario, _system(man, branches, models), policy=policy)

    decisions = [
        {
            "frame": f.index,
            "assignment": list(f.assignment),
            "predicted_objective": f.predicted_objective,
            "predicted_latency_ms": f.predicted_marginal_ms,
            "t_max_ms": f.t_max_ms,
        }
        for f in ep.scheduled_frames
    ]
    histogram: Dict[str, int] = {}
    for f in ep.scheduled_frames:
        for idx in f.assignment:
            histogram[str(idx)] = histogram.get(str(idx), 0) + 1

    report = _envelope(man, "simulate")
    report.update(
        {
            "policy": policy,
            "target_ms": man.target_ms,
            "seed": ep.scenario.seed,
            "deployed_branches": [
                {"index": b.index, "label": b.label} for b in branches
            ],
            "summary": ep.summary,
            "decisions": decisions,
            "assignment_histogram": histogram,
        }
    )
    _emit(report, out)
    return report


def cmd_train_predictor(man: RunManifest, out: Optional[str]) -> dict:
    models, info = train_models(man)
    if out:
        models.save(out, training_info=info)
    report = _envelope(man, "train")
    report.update(
        {
            "samples": info["samples"],
            "episodes": info["episodes"],
            "seeds": info["seeds"],
            "final_training_mse": info["final_training_mse"],
            "r2_train": info["r2_train"],
            "update_model": {
                "slope_ms_per_track": models.update_latency.slope_ms_per_track,
                "intercept_ms": models.update_latency.intercept_ms,
            },
            "model_written": bool(out),
        }
    )
    # the model artifact goes to --out; the report always goes to stdout
    _emit(report, None)
    return report


def cmd_adapt(man: RunManifest, out: Optional[str]) -> dict:
    branches = _deploy(man)
    fixed_ms = fixed_latency(man.device)
    report = _envelope(man, "adapt")
    report.update(
        {
            "target_ms": man.target_ms,
            "memory_limit_mb": man.device.memory_limit_mb,
            "fixed_latency_ms": fixed_ms,
            "deployable": [
                {
                    "index": b.index,
                    "label": b.label,
                    "marginal_ms": branch_latency(b, man.device),
                }
                for b in branches
            ],
            "degenerate": len(branches) == 1,
        }
    )
    _emit(report, out)
    return report


def cmd_compare(
    man: RunManifest,
    out: Optional[str],
    policies: Sequence[str] = ("adaptive", "per_frame", "all_tracker"),
) -> dict:
    branches = _deploy(man)
    models = _get_models(man)
    system = _system(man, branches, models)

    runs = {}
    adaptive_ep: Optional[EpisodeLog] = None
    for policy in policies:
        ep = run_episode(man.scenario, system, policy=policy)
        runs[policy] = _episode_block(ep)
        if policy == "adaptive":
            adaptive_ep = ep

    dominance = None
    if adaptive_ep is not None:
        checked = [
            f
            for f in adaptive_ep.scheduled_frames
            if f.predicted_objective is not None and f.uniform_objective is not None
        ]
        violations = sum(
            1 for f in checked if f.predicted_objective < f.uniform_objective
        )
        dominance = {"frames_checked": len(checked), "violations": violations}

    best = max(runs, key=lambda p: runs[p]["DS"]) if runs else None
    report = _envelope(man, "compare")
    report.update(
        {
            "target_ms": man.target_ms,
            "seed": man.scenario.seed,
            "policies": runs,
            "predicted_dominance": dominance,
            "best_policy_by_ds": best,
        }
    )
    _emit(report, out)
    return report


# -- argument handling -------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewsched",
        description="Budgeted per-view detector scheduling over a simulated scene.",
    )
    sub = parser.add_subparsers(dest="op", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument(
            "--manifest",
            default=_BUILTIN_PREFIX + "manifest_quickstart",
            help="run manifest path or builtin:<name>",
        )
        p.add_argument("--seed", type=int, default=None, help="override scenario seed")
        p.add_argument(
            "--target-ms", type=float, default=None, help="override latency target"
        )
        p.add_argument("--out", default=None, help="output file (default stdout)")

    p_sim = sub.add_parser("simulate", help="run one closed-loop episode")
    common(p_sim)
    p_sim.add_argument(
        "--policy",
        default="adaptive",
        help="adaptive | per_frame | round_robin | all_tracker | fixed:<index>",
    )

    p_train = sub.add_parser("train", help="fit accuracy and latency predictors")
    common(p_train)

    p_adapt = sub.add_parser("adapt", help="report the deployable branch set")
    common(p_adapt)

    p_cmp = sub.add_parser("compare", help="run scheduling policies side by side")
    common(p_cmp)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    args = _build_parser().parse_args(argv)
    try:
        man = load_manifest(args.manifest, args.seed, args.target_ms)
        if args.op == "simulate":
            cmd_simulate(man, args.out, policy=args.policy)
        elif args.op == "train":
            cmd_train_predictor(man, args.out)
        elif args.op == "adapt":
            cmd_adapt(man, args.out)
        else:
            cmd_compare(man, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleError, ProfileError, CapabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError) as exc:
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
