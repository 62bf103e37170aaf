"""Command-line surface: gen-data, train, eval, subsample, gradcheck.

Configuration is a single JSON document; command-line flags override file
fields, and the effective config is copied into the output directory of
every run. Machine-readable JSON goes to stdout, human summaries to
stderr. Exit codes: 0 success, 2 usage/parameter problems, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path
from typing import Optional

from . import gradcheck as gradcheck_mod
from .autodiff import Rng
from .data import (
    SyntheticSpec,
    bundle_summary,
    fewshot_subsample,
    gen_synthetic,
    load_zsb,
    minmax_scale_attributes,
    save_zsb,
)
from .downstream import SynthesisSpec, eval_gzsl, eval_zsl
from .episodes import EpisodeSpec
from .errors import NonFiniteError, ParameterError, ZsmlError
from .training import (
    HyperParams,
    ModelSpec,
    load_state,
    train_loop,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

DEFAULT_CONFIG: dict = {
    "dataset": None,
    "seed": None,
    "output_dir": None,
    "preset": None,
    "classifier": "softmax",
    "scale_attributes": False,
    "checkpoint_every": 0,
    "episodes": {
        "n_way_train": 10,
        "k_shot_train": 5,
        "n_way_val": 10,
        "k_shot_val": 3,
        "mode": "zsml",
        "tasks_per_batch": 10,
    },
    "hyperparams": {
        "inner_lr_d": 0.001,
        "inner_lr_gc": 0.001,
        "meta_lr_d": 0.00001,
        "meta_lr_gc": 0.00001,
        "inner_steps": 1,
        "n_critic": 1,
        "clip_c": 0.01,
        "iterations": 1000,
        "train_noise_std": 0.5,
        "shared_inner": False,
    },
    "model": {
        "g_hidden": [2048, 2048],
        "d_hidden": [1024, 1024, 512],
        "c_hidden": [512, 512],
        "noise_dim": None,
        "dropout_p": 0.5,
    },
    "synthesis": {"per_class_count": 200, "noise_std": 0.25},
}

# Named presets: iteration budgets and per-class synthesis counts for the
# three full-scale regimes, plus the small fully-tuned desk-scale run.
PRESETS: dict[str, dict] = {
    "awa-like": {
        "hyperparams": {"iterations": 20000},
        "synthesis": {"per_class_count": 200},
    },
    "cub-like": {
        "hyperparams": {"iterations": 5000},
        "synthesis": {"per_class_count": 100},
    },
    "apy-like": {
        "hyperparams": {"iterations": 500},
        "synthesis": {"per_class_count": 200},
    },
    "synthetic": {
        "episodes": {
            "n_way_train": 5,
            "k_shot_train": 5,
            "n_way_val": 5,
            "k_shot_val": 3,
            "tasks_per_batch": 10,
        },
        "hyperparams": {
            "meta_lr_d": 0.001,
            "meta_lr_gc": 0.001,
            "iterations": 2000,
        },
        "model": {
            "g_hidden": [64, 64],
            "d_hidden": [64, 64, 32],
            "c_hidden": [64, 64],
        },
        "synthesis": {"per_class_count": 200},
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def build_config(
    config_path: Optional[str], flag_overrides: dict, preset_flag: Optional[str]
) -> dict:
    """defaults <- preset <- config file <- explicit flags."""
    file_cfg: dict = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ParameterError(f"config file not found: {path}")
        file_cfg = json.loads(path.read_text())
    preset = preset_flag or file_cfg.get("preset")
    cfg = DEFAULT_CONFIG
    if preset is not None:
        if preset not in PRESETS:
            raise ParameterError(
                f"unknown preset {preset!r}; choose from {sorted(PRESETS)}"
            )
        cfg = _deep_merge(cfg, PRESETS[preset])
        cfg["preset"] = preset
    cfg = _deep_merge(cfg, file_cfg)
    cfg = _deep_merge(cfg, flag_overrides)
    return cfg


def _episode_spec(cfg: dict) -> EpisodeSpec:
    return EpisodeSpec(**cfg["episodes"])


def _hyper_params(cfg: dict) -> HyperParams:
    return HyperParams(**cfg["hyperparams"])


def _model_spec(cfg: dict, bundle) -> ModelSpec:
    m = cfg["model"]
    return ModelSpec.for_dataset(
        feat_dim=bundle.feat_dim,
        attr_dim=bundle.attr_dim,
        n_classes=bundle.n_classes,
        noise_dim=m["noise_dim"],
        g_hidden=tuple(m["g_hidden"]),
        d_hidden=tuple(m["d_hidden"]),
        c_hidden=tuple(m["c_hidden"]),
        dropout_p=m["dropout_p"],
    )


def _require(cfg: dict, key: str, flag: str):
    if cfg.get(key) is None:
        raise ParameterError(f"{flag} is required (no wall-clock defaults)")
    return cfg[key]


def _load_bundle(cfg: dict):
    path = Path(_require(cfg, "dataset", "--dataset"))
    if not path.exists():
        raise ParameterError(f"dataset file not found: {path}")
    bundle = load_zsb(path)
    if cfg.get("scale_attributes"):
        bundle = minmax_scale_attributes(bundle)
    return bundle


def _prepare_output_dir(cfg: dict) -> Path:
    out_dir = Path(_require(cfg, "output_dir", "--out-dir"))
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg, indent=2) + "\n")
    return out_dir


def _emit(doc: dict) -> None:
    print(json.dumps(doc, indent=2))


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args: argparse.Namespace) -> int:
    spec = SyntheticSpec(
        n_classes=args.n_classes,
        attr_dim=args.attr_dim,
        feat_dim=args.feat_dim,
        samples_per_class=args.samples_per_class,
        noise_sigma=args.noise_sigma,
        seen_fraction=args.seen_fraction,
        seed=args.seed,
    )
    bundle = gen_synthetic(spec)
    save_zsb(bundle, args.out)
    summary = bundle_summary(bundle)
    summary["path"] = str(args.out)
    summary["checksum"] = bundle.checksum()
    _emit(summary)
    _say(f"wrote synthetic benchmark with {summary['n_samples']} samples to {args.out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = build_config(args.config, _train_flag_overrides(args), args.preset)
    seed = _require(cfg, "seed", "--seed")
    bundle = _load_bundle(cfg)
    out_dir = _prepare_output_dir(cfg)
    checkpoint_path = out_dir / "checkpoint.zsmp"
    metrics_path = out_dir / "metrics.jsonl"
    hp = _hyper_params(cfg)

    with metrics_path.open("w") as metrics_file:

        def sink(record: dict) -> None:
            metrics_file.write(json.dumps(record) + "\n")

        state = train_loop(
            dataset=bundle,
            episode_spec=_episode_spec(cfg),
            hp=hp,
            model_spec=_model_spec(cfg, bundle),
            rng=Rng(seed),
            metric_sink=sink,
            checkpoint_path=checkpoint_path,
            checkpoint_every=int(cfg.get("checkpoint_every") or 0),
        )
    _emit(
        {
            "checkpoint": str(checkpoint_path),
            "metrics": str(metrics_path),
            "iterations": state.iteration,
            "state_checksum": state.checksum(),
        }
    )
    _say(f"trained {state.iteration} iterations; checkpoint at {checkpoint_path}")
    return EXIT_OK


def _train_flag_overrides(args: argparse.Namespace) -> dict:
    over: dict = {}
    if args.dataset is not None:
        over["dataset"] = args.dataset
    if args.out_dir is not None:
        over["output_dir"] = args.out_dir
    if args.seed is not None:
        over["seed"] = args.seed
    if args.checkpoint_every is not None:
        over["checkpoint_every"] = args.checkpoint_every
    hp: dict = {}
    for key in (
        "iterations",
        "inner_lr_d",
        "inner_lr_gc",
        "meta_lr_d",
        "meta_lr_gc",
        "n_critic",
        "inner_steps",
        "clip_c",
        "train_noise_std",
    ):
        value = getattr(args, key)
        if value is not None:
            hp[key] = value
    if args.shared_inner:
        hp["shared_inner"] = True
    if hp:
        over["hyperparams"] = hp
    ep: dict = {}
    if args.episode_mode is not None:
        ep["mode"] = args.episode_mode
    if args.tasks_per_batch is not None:
        ep["tasks_per_batch"] = args.tasks_per_batch
    if ep:
        over["episodes"] = ep
    return over


def cmd_eval(args: argparse.Namespace) -> int:
    over: dict = {}
    if args.dataset is not None:
        over["dataset"] = args.dataset
    if args.out_dir is not None:
        over["output_dir"] = args.out_dir
    if args.seed is not None:
        over["seed"] = args.seed
    if args.classifier is not None:
        over["classifier"] = args.classifier
    cfg = build_config(args.config, over, args.preset)
    seed = _require(cfg, "seed", "--seed")
    bundle = _load_bundle(cfg)
    rng = Rng(seed)
    if args.fewshot is not None:
        bundle = fewshot_subsample(bundle, args.fewshot, rng)
    model_spec = _model_spec(cfg, bundle)
    state = load_state(args.checkpoint, model_spec, rng)
    synth = SynthesisSpec(
        per_class_count=cfg["synthesis"]["per_class_count"],
        noise_std=cfg["synthesis"]["noise_std"],
    )
    kind = cfg["classifier"]
    if args.protocol == "zsl":
        report = eval_zsl(state, bundle, synth, kind, rng)
    else:
        report = eval_gzsl(state, bundle, synth, kind, rng, use_real_seen=args.real_seen)
    doc = report.to_json_dict()
    doc["provenance"] = {
        "dataset": cfg["dataset"],
        "checkpoint": str(args.checkpoint),
        "seed": seed,
        "protocol": args.protocol,
        "classifier": kind,
        "fewshot_k": args.fewshot,
        "train_size": int(len(bundle.train_indices)),
    }
    out_dir = _prepare_output_dir(cfg)
    (out_dir / f"eval_{args.protocol}.json").write_text(json.dumps(doc, indent=2) + "\n")
    _emit(doc)
    if report.protocol == "gzsl":
        _say(
            f"gzsl: U={report.unseen_mean:.4f} S={report.seen_mean:.4f} "
            f"H={report.harmonic:.4f}"
        )
    else:
        _say(f"zsl: U={report.unseen_mean:.4f}")
    return EXIT_OK


def cmd_subsample(args: argparse.Namespace) -> int:
    bundle = load_zsb(args.dataset)
    out = fewshot_subsample(bundle, args.k, Rng(args.seed))
    save_zsb(out, args.out)
    summary = bundle_summary(out)
    summary["path"] = str(args.out)
    _emit(summary)
    _say(f"kept {summary['n_train']} train samples ({args.k} per seen class cap)")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.inject_fault:
        with gradcheck_mod.corrupted_backward():
            results = gradcheck_mod.run_suite(seed=args.seed, n_configs=args.configs)
    else:
        results = gradcheck_mod.run_suite(seed=args.seed, n_configs=args.configs)
    rows = [
        {"check": r.name, "max_rel_err": r.max_rel_err, "pass": r.passed} for r in results
    ]
    _emit({"checks": rows, "all_pass": all(r.passed for r in results)})
    worst = max(results, key=lambda r: r.max_rel_err)
    _say(
        f"{sum(r.passed for r in results)}/{len(results)} gradient checks passed; "
        f"worst: {worst.name} rel_err={worst.max_rel_err:.2e}"
    )
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERICAL


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zsml",
        description="Meta-learned adversarial feature synthesis for zero-shot classification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-classes", type=int, default=20, dest="n_classes")
    p.add_argument("--attr-dim", type=int, default=8, dest="attr_dim")
    p.add_argument("--feat-dim", type=int, default=32, dest="feat_dim")
    p.add_argument("--samples-per-class", type=int, default=100, dest="samples_per_class")
    p.add_argument("--noise-sigma", type=float, default=0.05, dest="noise_sigma")
    p.add_argument("--seen-fraction", type=float, default=0.75, dest="seen_fraction")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", help="meta-train on a dataset bundle")
    p.add_argument("--config")
    p.add_argument("--dataset")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--iterations", type=int)
    p.add_argument("--inner-lr-d", type=float, dest="inner_lr_d")
    p.add_argument("--inner-lr-gc", type=float, dest="inner_lr_gc")
    p.add_argument("--meta-lr-d", type=float, dest="meta_lr_d")
    p.add_argument("--meta-lr-gc", type=float, dest="meta_lr_gc")
    p.add_argument("--n-critic", type=int, dest="n_critic")
    p.add_argument("--inner-steps", type=int, dest="inner_steps")
    p.add_argument("--clip-c", type=float, dest="clip_c")
    p.add_argument("--train-noise-std", type=float, dest="train_noise_std")
    p.add_argument("--shared-inner", action="store_true", dest="shared_inner")
    p.add_argument("--episode-mode", choices=("zsml", "maml"), dest="episode_mode")
    p.add_argument("--tasks-per-batch", type=int, dest="tasks_per_batch")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint under zsl or gzsl")
    p.add_argument("--config")
    p.add_argument("--dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--protocol", choices=("zsl", "gzsl"), required=True)
    p.add_argument("--classifier", choices=("softmax", "svm"))
    p.add_argument("--fewshot", type=int)
    p.add_argument("--real-seen", action="store_true", dest="real_seen")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("subsample", help="write a few-shot train subset of a bundle")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(handler=cmd_subsample)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward rule")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(handler=cmd_gradcheck)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except NonFiniteError as exc:
        _say(f"numerical failure: {exc}")
        return EXIT_NUMERICAL
    except (ZsmlError, FileNotFoundError, json.JSONDecodeError) as exc:
        _say(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
