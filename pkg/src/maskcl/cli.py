"""Command-line entry point: experiment dispatch, seeding, artifact paths.

Subcommands: gg, gnu, nns, hopfield, abatche, export-mask, inspect. Runs
write a metrics CSV and a binary snapshot under --out. Exit codes: 0 on
success, 2 for configuration problems, 3 for data problems.
"""

from __future__ import annotations

import argparse
import os
import sys

from .data import (
    DATA_DIR_ENV,
    BaseDataset,
    find_mnist_dir,
    load_mnist,
    make_permuted,
    make_rotated,
    make_split,
    make_synthetic,
    standardize_task,
)
from .errors import ConfigurationError, DataError, MaskclError
from .harness import (
    MetricsRecord,
    ScenarioConfig,
    run_abatche,
    run_gg,
    run_gnu,
    run_hopfield,
    run_nns,
)
from .net import ENTROPY, GSUMEXP, NetConfig, build_fixed_net
from .serialization import (
    deserialize_mask,
    load_snapshot,
    save_snapshot,
    serialize_mask,
    storage_report,
)

ARCHES = {
    "lenet-300-100": (300, 100),
    "fc-1024-1024": (1024, 1024),
}

OBJECTIVES = {"H": ENTROPY, "G": GSUMEXP, "M": "max_conf"}

INFER_ALGS = {
    "one-shot": "one_shot",
    "binary": "binary",
    "gamma": "gamma",
    "alpha-descent": "alpha_descent",
}


def _add_run_flags(p):
    p.add_argument("--dataset", default="synthetic",
                   choices=["mnist-permuted", "mnist-rotated", "mnist-split", "synthetic"])
    p.add_argument("--tasks", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--arch", default="lenet-300-100", choices=sorted(ARCHES))
    p.add_argument("--output-size", type=int, default=None,
                   help="default 100 for lenet-300-100, 500 for fc-1024-1024")
    p.add_argument("--objective", default=None, choices=sorted(OBJECTIVES),
                   help="default G for gg/gnu, H elsewhere")
    p.add_argument("--infer-alg", default="one-shot", choices=sorted(INFER_ALGS))
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--epsilon", type=float, default=2.0 ** -3)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=None,
                   help="default 1e-4 for score training, 0.01 for fast weights")
    p.add_argument("--cadence", type=int, default=100)
    p.add_argument("--budget", type=int, default=2500)
    p.add_argument("--granularity", default="single-image",
                   choices=["single-image", "full-batch"])
    p.add_argument("--mask-alg", default="threshold0",
                   help="threshold0, or topk:FRAC (e.g. topk:0.5)")
    p.add_argument("--transfer", action="store_true")
    p.add_argument("--shared-labels", action="store_true")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--data-dir", default=None,
                   help=f"MNIST directory; also read from ${DATA_DIR_ENV}")
    p.add_argument("--dim", type=int, default=64, help="synthetic feature count")
    p.add_argument("--classes", type=int, default=10, help="classes per task")
    p.add_argument("--out", default="out")
    p.add_argument("--config", default=None, help="key = value file of flag defaults")
    p.add_argument("--wall-time", action="store_true",
                   help="emit measured seconds instead of the deterministic 0.0")


def build_parser():
    parser = argparse.ArgumentParser(prog="maskcl")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gg", "gnu", "nns", "hopfield", "abatche"):
        _add_run_flags(sub.add_parser(name))
    exp = sub.add_parser("export-mask")
    exp.add_argument("--in", dest="snapshot", required=True)
    exp.add_argument("--task", type=int, required=True)
    exp.add_argument("--out", required=True)
    ins = sub.add_parser("inspect")
    ins.add_argument("--in", dest="snapshot", required=True)
    return parser


def _apply_config_file(parser, argv):
    """Flat `key = value` files become defaults, still overridable by flags."""
    if "--config" not in argv:
        return argv
    path = argv[argv.index("--config") + 1]
    if not os.path.exists(path):
        raise ConfigurationError(f"config file {path} does not exist")
    injected = []
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{line_no}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            flag = "--" + key.replace("_", "-")
            if value.lower() in ("true", "false"):
                if value.lower() == "true":
                    injected.append(flag)
            else:
                injected.extend([flag, value])
    # file-provided tokens go first so explicit flags win
    return [argv[0]] + injected + argv[1:]


def _parse_mask_alg(raw):
    if raw == "threshold0":
        return "threshold0", None
    if raw.startswith("topk"):
        _, _, frac = raw.partition(":")
        if not frac:
            raise ConfigurationError("topk needs a fraction, e.g. topk:0.5")
        return "topk", float(frac)
    raise ConfigurationError(f"unknown mask algorithm {raw!r}")


def _build_tasks(args, command=None):
    if args.dataset == "synthetic":
        if command == "hopfield":
            # mirror the class-split protocol: two-way pairs over one base
            base_task = make_synthetic(
                1, args.dim, 2 * args.tasks, args.seed,
                train_per_class=300, test_per_class=60,
            )[0]
            base = BaseDataset(
                base_task.train_x, base_task.train_y,
                base_task.test_x, base_task.test_y, 2 * args.tasks,
            )
            tasks = [make_split(base, (2 * t, 2 * t + 1)) for t in range(args.tasks)]
        else:
            tasks = make_synthetic(args.tasks, args.dim, args.classes, args.seed)
    else:
        data_dir = find_mnist_dir(args.data_dir)
        if data_dir is None:
            raise DataError(
                "MNIST files not found; pass --data-dir or set "
                f"${DATA_DIR_ENV} (need {args.dataset})"
            )
        base = load_mnist(data_dir)
        if args.dataset == "mnist-permuted":
            tasks = [make_permuted(base, 0 if t == 0 else args.seed * 100003 + t)
                     for t in range(args.tasks)]
        elif args.dataset == "mnist-rotated":
            tasks = [make_rotated(base, 10 * t) for t in range(args.tasks)]
        else:
            pairs = [(2 * t, 2 * t + 1) for t in range(args.tasks)]
            if args.tasks > 5:
                raise ConfigurationError("mnist-split offers at most 5 two-way tasks")
            tasks = [make_split(base, pair) for pair in pairs]
    if args.standardize:
        tasks = [standardize_task(t) for t in tasks]
    return tasks


def _scenario_config(args, command):
    rule, keep_frac = _parse_mask_alg(args.mask_alg)
    hidden = ARCHES[args.arch]
    output_size = args.output_size
    if output_size is None:
        output_size = 500 if args.arch == "fc-1024-1024" else 100
    lr = args.lr
    if lr is None:
        lr = 0.01 if command == "abatche" else 1e-4
    objective = args.objective
    if objective is None:
        objective = "G" if command in ("gg", "gnu") else "H"
    args.objective = objective
    return ScenarioConfig(
        scenario=command,
        hidden_dims=hidden,
        output_size=output_size,
        objective=OBJECTIVES[args.objective],
        infer_alg=INFER_ALGS[args.infer_alg],
        granularity=args.granularity.replace("-", "_"),
        steps_per_task=args.steps,
        batch_size=args.batch,
        lr=lr,
        mask_rule=rule,
        keep_frac=keep_frac,
        transfer=args.transfer,
        shared_labels=args.shared_labels,
        gamma_frac=args.gamma,
        epsilon=args.epsilon,
        cadence=args.cadence,
        mask_budget=args.budget,
        seed=args.seed,
    )


def _write_artifacts(args, config, tasks, record: MetricsRecord, masks, store=None):
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "metrics.csv")
    with open(csv_path, "w", newline="") as f:
        f.write(record.to_csv(include_timing=args.wall_time))
    input_dim = tasks[0].train_x.shape[1]
    ell = max(t.num_classes for t in tasks)
    if config.scenario == "hopfield":
        net_config = NetConfig(
            (input_dim, *config.hidden_dims, ell * len(tasks)),
            seed=config.seed, nonlinearity="swish",
            mask_placement="layer_outputs", real_labels=ell * len(tasks),
        )
    else:
        net_config = NetConfig(
            (input_dim, *config.hidden_dims, config.output_size),
            seed=config.seed, nonlinearity=config.nonlinearity, real_labels=ell,
        )
    snap_path = os.path.join(args.out, "snapshot.bin")
    save_snapshot(snap_path, net_config, masks, store)
    print(f"wrote {csv_path} and {snap_path}")
    print(f"mean accuracy {record.mean_accuracy:.4f}, "
          f"task-id accuracy {record.id_accuracy:.4f}, "
          f"{record.masks_allocated} masks, {record.bytes_stored} bytes")


def _run_scenario(args, command) -> int:
    if args.tasks < 1:
        raise ConfigurationError(f"--tasks must be >= 1, got {args.tasks}")
    config = _scenario_config(args, command)
    tasks = _build_tasks(args, command)
    runner = {
        "gg": run_gg,
        "gnu": run_gnu,
        "nns": run_nns,
        "hopfield": run_hopfield,
        "abatche": run_abatche,
    }[command]
    artifacts = {}
    record = runner(config, tasks, artifacts=artifacts)
    _write_artifacts(args, config, tasks, record,
                     artifacts.get("masks", []), artifacts.get("store"))
    return 0


def _export_mask(args) -> int:
    config, masks, _ = load_snapshot(args.snapshot)
    if not 0 <= args.task < len(masks):
        raise ConfigurationError(
            f"snapshot holds {len(masks)} masks; task {args.task} out of range"
        )
    data = serialize_mask(masks[args.task])
    with open(args.out, "wb") as f:
        f.write(data)
    print(f"wrote {args.out} ({len(data)} bytes)")
    return 0


def _inspect(args) -> int:
    config, masks, store = load_snapshot(args.snapshot)
    print(f"layer_dims: {list(config.layer_dims)}")
    print(f"seed: {config.seed}")
    print(f"nonlinearity: {config.nonlinearity}")
    print(f"mask_placement: {config.mask_placement}")
    print(f"real_labels: {config.real_labels}")
    print(f"masks: {len(masks)}")
    for i, mask in enumerate(masks):
        sparsity = ", ".join(f"{s:.3f}" for s in mask.sparsity())
        print(f"  mask {i}: ones fraction per layer [{sparsity}]")
    report = storage_report(masks)
    print(f"storage: {report.total_bytes} bytes (masks + net seed)")
    if store is not None:
        print(f"store: d={store.d}, patterns={store.count}")
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if argv and argv[0] in ("gg", "gnu", "nns", "hopfield", "abatche"):
            argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        if args.command == "export-mask":
            return _export_mask(args)
        if args.command == "inspect":
            return _inspect(args)
        return _run_scenario(args, args.command)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except MaskclError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
