"""Command-line entry point: ``stratntf fit|synth|eval|export|params``.

Exit codes: 0 success, 2 usage/format/config errors, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .model import (
    FitConfig, StratifiedDataset, param_count, reconstruct, stratum_losses, strata_tensor,
)
from .solver import NonFiniteObjectiveError, fit, relative_loss
from .synth import PlantedSpec, apply_block_watermark, generate_planted, rescale_to_unit, salt_and_pepper
from .tensor_core import outer_product
from .tensor_io import (
    MODEL_VERSION, TENSOR_VERSION, FormatError, export_loss_csv, export_pgm,
    load_dataset, load_model, save_dataset, save_model,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def read_key_values(path) -> list[tuple[int, str, str]]:
    out = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out.append((lineno, key.strip(), value.strip()))
    return out


def _int_list(value: str) -> list[int]:
    return [int(v) for v in value.split(",") if v.strip()]


RUN_KEYS = {
    "topic_rank", "strata_rank", "iterations", "strata_sweeps", "lambda",
    "regularized_modes", "seed", "clip_floor", "normalization", "early_stop",
    "regularization",
}


def parse_run_config(path, seed_override=None) -> FitConfig:
    """Parse a key=value run configuration into a :class:`FitConfig`."""
    kwargs = {}
    for lineno, key, value in read_key_values(path):
        if key not in RUN_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            if key == "topic_rank":
                kwargs["topic_rank"] = int(value)
            elif key == "strata_rank":
                ranks = _int_list(value)
                kwargs["strata_ranks"] = ranks[0] if len(ranks) == 1 else ranks
            elif key == "iterations":
                kwargs["outer_iterations"] = int(value)
            elif key == "strata_sweeps":
                kwargs["strata_sweeps"] = int(value)
            elif key == "lambda":
                kwargs["reg_strength"] = float(value)
            elif key == "regularized_modes":
                kwargs["regularized_modes"] = tuple(_int_list(value))
            elif key == "seed":
                kwargs["seed"] = int(value)
            elif key == "clip_floor":
                kwargs["clip_floor"] = float(value)
            elif key == "normalization":
                kwargs["normalization"] = value
            elif key == "regularization":
                kwargs["regularization"] = value
            elif key == "early_stop":
                if value != "off":
                    tol, patience = value.split(",")
                    kwargs["early_stop"] = (float(tol), int(patience))
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    if "topic_rank" not in kwargs:
        raise UsageError(f"{path}: topic_rank is required")
    if seed_override is not None:
        kwargs["seed"] = seed_override
    try:
        return FitConfig(**kwargs)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def format_run_config(config: FitConfig, n_strata: int, ndim: int) -> str:
    """Canonical key=value text that parses back to the same config."""
    ranks = config.ranks_for(n_strata)
    early = "off" if config.early_stop is None else f"{config.early_stop[0]!r},{config.early_stop[1]}"
    lines = [
        f"topic_rank={config.topic_rank}",
        "strata_rank=" + ",".join(str(r) for r in ranks),
        f"iterations={config.outer_iterations}",
        f"strata_sweeps={config.strata_sweeps}",
        f"lambda={config.reg_strength!r}",
        "regularized_modes=" + ",".join(str(m) for m in config.modes_to_regularize(ndim)),
        f"regularization={'tv' if config.regularized else 'none'}",
        f"seed={config.seed}",
        f"clip_floor={config.clip_floor!r}",
        f"normalization={config.normalization}",
        f"early_stop={early}",
    ]
    return "\n".join(lines) + "\n"


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("STRAT_NTF_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"STRAT_NTF_THREADS must be an integer, got {env!r}") from None
    return None


def cmd_fit(args) -> int:
    dataset = load_dataset(args.manifest)
    config = parse_run_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    threads = _threads(args.threads)

    def progress(it, value, elapsed):
        if not args.quiet:
            print(f"iter {it:6d}  objective {value:.10g}  {elapsed:.2f}s", file=sys.stderr)

    start = time.perf_counter()
    try:
        result = fit(dataset, config, progress=progress, threads=threads)
    except NonFiniteObjectiveError as exc:
        dump = out / "state_dump.sntm"
        save_model(dump, exc.model)
        print(f"error: {exc}; state dumped to {dump}", file=sys.stderr)
        return EXIT_NUMERIC
    wall = time.perf_counter() - start

    save_model(out / "model.sntm", result.model)
    export_loss_csv(result.trace, out / "loss.csv")
    (out / "run_config.txt").write_text(format_run_config(config, len(dataset), dataset.ndim))
    meta = [
        f"stratntf_version={__version__}",
        f"manifest={Path(args.manifest).resolve()}",
        f"config={Path(args.config).resolve()}",
        f"seed={config.seed}",
        f"threads={threads if threads is not None else 'all'}",
        f"tensor_format_version={TENSOR_VERSION}",
        f"model_format_version={MODEL_VERSION}",
        f"normalization={result.model.meta.get('normalization', 'none')}",
        f"termination={result.reason}",
        f"iterations_run={result.trace.iterations[-1]}",
        f"final_objective={result.final_objective:.17g}",
        f"relative_loss={relative_loss(result, dataset):.17g}",
        f"wall_seconds={wall:.3f}",
    ]
    (out / "run_meta.txt").write_text("\n".join(meta) + "\n")
    if not args.quiet:
        print(f"final objective {result.final_objective:.17g}")
    return EXIT_OK


SYNTH_KEYS = {
    "strata_sizes", "dims", "topic_rank", "strata_rank", "distribution", "density",
    "noise", "seed", "topic_support", "rescale", "watermark", "salt_pepper",
}


def _parse_watermark(value: str):
    # <stratum>:<start>-<stop>,<start>-<stop>[:<value>]
    parts = value.split(":")
    if len(parts) not in (2, 3):
        raise ValueError(f"watermark needs stratum:ranges[:value], got {value!r}")
    stratum = int(parts[0])
    region = []
    for rg in parts[1].split(","):
        start, stop = rg.split("-")
        region.append((int(start), int(stop)))
    level = float(parts[2]) if len(parts) == 3 else 1.0
    return stratum, region, level


def parse_synth_spec(path):
    opts = {"watermarks": [], "salt_pepper": 0.0, "rescale": None}
    planted = {}
    for lineno, key, value in read_key_values(path):
        if key not in SYNTH_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            if key == "strata_sizes":
                planted["leading_dims"] = _int_list(value)
            elif key == "dims":
                planted["trailing_dims"] = _int_list(value)
            elif key == "topic_rank":
                planted["topic_rank"] = int(value)
            elif key == "strata_rank":
                ranks = _int_list(value)
                planted["strata_ranks"] = ranks[0] if len(ranks) == 1 else ranks
            elif key == "distribution":
                planted["distribution"] = value
            elif key in ("density", "noise"):
                planted[key] = float(value)
            elif key == "seed":
                planted["seed"] = int(value)
            elif key == "topic_support":
                planted["topic_support"] = [_int_list(part.replace(" ", ",")) for part in value.split(";")]
            elif key == "rescale":
                if value not in ("on", "off"):
                    raise ValueError("rescale must be on or off")
                opts["rescale"] = value == "on"
            elif key == "watermark":
                opts["watermarks"].append(_parse_watermark(value))
            elif key == "salt_pepper":
                opts["salt_pepper"] = float(value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    for required in ("leading_dims", "trailing_dims", "topic_rank"):
        if required not in planted:
            raise UsageError(f"{path}: missing {required.replace('leading_dims', 'strata_sizes').replace('trailing_dims', 'dims')}")
    try:
        spec = PlantedSpec(**planted)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    return spec, opts


def cmd_synth(args) -> int:
    spec, opts = parse_synth_spec(args.spec)
    dataset, truth = generate_planted(spec)
    corrupting = bool(opts["watermarks"]) or opts["salt_pepper"] > 0
    rescale = corrupting if opts["rescale"] is None else opts["rescale"]
    if rescale:
        dataset, truth = rescale_to_unit(dataset, truth)
    strata = list(dataset)
    try:
        for stratum, region, level in opts["watermarks"]:
            if not 0 <= stratum < len(strata):
                raise UsageError(f"watermark refers to stratum {stratum} of {len(strata)}")
            strata[stratum] = apply_block_watermark(strata[stratum], region, level)
        if opts["salt_pepper"] > 0:
            if any(a.max() > 1 for a in strata):
                raise UsageError("salt_pepper needs data in [0, 1]; set rescale=on")
            strata = [salt_and_pepper(a, opts["salt_pepper"], spec.seed, stream=i)
                      for i, a in enumerate(strata)]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    manifest = save_dataset(out, StratifiedDataset(strata))
    save_model(out / "truth.sntm", truth)
    print(manifest)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.manifest)
    try:
        model.check_against(dataset)
    except ValueError as exc:
        raise UsageError(f"model does not match data: {exc}") from None
    losses = stratum_losses(model, dataset)
    total = float(sum(losses))
    count = param_count(dataset.leading_dims, dataset.trailing_shape, model.topic_rank,
                        list(model.strata_ranks))
    print(f"objective {total:.17g}")
    norm = dataset.sq_norm()
    print(f"relative_loss {total / norm:.17g}" if norm > 0 else "relative_loss nan")
    for i, loss in enumerate(losses):
        print(f"stratum {i} loss {loss:.17g}")
    print(f"parameters {count:,}")
    return EXIT_OK


def cmd_params(args) -> int:
    ranks = _int_list(args.strata_rank)
    leading = _int_list(args.strata_sizes)
    if len(leading) == 1 and args.strata > 1:
        leading = leading * args.strata
    if len(ranks) == 1:
        ranks = ranks * len(leading)
    try:
        count = param_count(leading, _int_list(args.dims), args.topic_rank, ranks)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"parameters {count:,}")
    return EXIT_OK


def top_k(vector, k: int) -> list[int]:
    """Indices of the ``k`` largest entries, descending; ties by ascending index."""
    vector = np.asarray(vector)
    order = sorted(range(len(vector)), key=lambda j: (-vector[j], j))
    return order[:k]


def _parse_indices(text, limit, what):
    if text is None:
        return list(range(limit))
    try:
        idx = _int_list(text)
    except ValueError:
        raise UsageError(f"bad {what} indices {text!r}") from None
    bad = [j for j in idx if not 0 <= j < limit]
    if bad:
        raise UsageError(f"{what} indices {bad} out of range 0..{limit - 1}")
    return idx


def _parse_pairs(text, model):
    if text is None:
        raise UsageError("reconstruction export needs --indices stratum:sample,...")
    pairs = []
    for part in text.split(","):
        try:
            i, j = (int(v) for v in part.split(":"))
        except ValueError:
            raise UsageError(f"bad reconstruction index {part!r}, expected stratum:sample") from None
        if not 0 <= i < model.n_strata or not 0 <= j < model.codings[i].shape[0]:
            raise UsageError(f"reconstruction index {part} out of range")
        pairs.append((i, j))
    return pairs


def cmd_export(args) -> int:
    model = load_model(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    image_model = model.ndim == 3
    fmt = args.format or ("pgm" if image_model else "topk")
    if fmt == "pgm" and not image_model:
        raise UsageError("PGM export needs a model with exactly two image modes")
    written = []
    if args.what == "reconstruction":
        if fmt != "pgm":
            raise UsageError("reconstruction export is only available as PGM")
        for i, j in _parse_pairs(args.indices, model):
            path = out / f"reconstruction_{i}_{j}.pgm"
            export_pgm(reconstruct(model, i)[j], path)
            written.append(path)
    elif args.what == "topics":
        idx = _parse_indices(args.indices, model.topic_rank, "topic")
        if fmt == "pgm":
            for j in idx:
                path = out / f"topic_{j}.pgm"
                export_pgm(outer_product([model.topics[0][:, j], model.topics[1][:, j]]), path)
                written.append(path)
        else:
            lines = []
            for j in idx:
                for t, h in enumerate(model.topics):
                    lines.append(_topk_line(f"topic {j} mode {t + 2}", h[:, j], args.top_k))
            written.append(_write_report(out / "topk_topics.txt", lines))
    else:
        idx = _parse_indices(args.indices, model.n_strata, "stratum")
        if fmt == "pgm":
            for i in idx:
                path = out / f"strata_{i}.pgm"
                export_pgm(strata_tensor(model, i), path)
                written.append(path)
        else:
            lines = []
            for i in idx:
                for j in range(model.strata_ranks[i]):
                    for t, v in enumerate(model.strata_factors[i]):
                        lines.append(_topk_line(f"stratum {i} feature {j} mode {t + 2}",
                                                v[:, j], args.top_k))
            written.append(_write_report(out / "topk_strata.txt", lines))
    for path in written:
        print(path)
    return EXIT_OK


def _topk_line(label, vector, k):
    best = top_k(vector, k)
    return label + ": " + " ".join(f"{j}={vector[j]:.6g}" for j in best)


def _write_report(path, lines):
    path.write_text("\n".join(lines) + "\n")
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stratntf", description="Stratified non-negative tensor factorization")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model to a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("synth", help="write a synthetic planted dataset")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="evaluate a model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="export topics, strata features or reconstructions")
    p.add_argument("--model", required=True)
    p.add_argument("--what", choices=["topics", "strata", "reconstruction"], required=True)
    p.add_argument("--indices", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["pgm", "topk"], default=None)
    p.add_argument("--top-k", type=int, default=3)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("params", help="count learnable parameters for a model shape")
    p.add_argument("--strata", type=int, default=1)
    p.add_argument("--strata-sizes", required=True, help="d1 per stratum (or one value for all)")
    p.add_argument("--dims", required=True, help="trailing dims, comma separated")
    p.add_argument("--topic-rank", type=int, required=True)
    p.add_argument("--strata-rank", default="1")
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if getattr(args, "quiet", False) else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, FormatError, ValueError, IndexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
