"""Command-line surface.

Subcommands: gen-data, fit, sample, eval, sweep, verify. Global flags
--seed, --config, --out-dir; flags override config values. Exit codes:
0 success, 1 verification failure, 2 configuration/input error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Any

import numpy as np

from .config import config_get, load_config
from .dist import Alphabet, format_float_short, load_table, sample_states, save_table
from .errors import ConfigError, MaskDiffError
from .harness import (
    SyntheticSpec,
    elbo_bound,
    expected_nll,
    gen_data,
    induced_distribution,
    kl_to_data,
    run_sweep,
)
from .models import (
    ARCopulaModel,
    DiffusionMarginalModel,
    fit_counts_table,
    load_corpus,
    save_corpus,
)
from .noising import make_schedule
from .sampler import MODES, SamplerConfig, sample
from . import verify as verify_mod


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskdiff",
        description="Exact desk-scale absorbing-mask diffusion with copula-corrected denoising.",
    )
    parser.add_argument("--seed", type=int, default=None, help="global seed override")
    parser.add_argument("--config", type=str, default=None, help="config file (INI sections)")
    parser.add_argument("--out-dir", type=str, default=".", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic joint table")
    p.add_argument("--kind", type=str, default=None)
    p.add_argument("--num-positions", type=int, default=None)
    p.add_argument("--num-categories", type=int, default=None)
    p.add_argument("--correlation-strength", type=float, default=None)
    p.add_argument("--out", type=str, default=None, help="table file (default data.json)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("fit", help="fit a counts model from a corpus, or wrap a table")
    p.add_argument("--corpus", type=str, default=None, help="corpus file, one sequence per line")
    p.add_argument("--num-categories", type=int, default=None, help="category count for --corpus")
    p.add_argument("--smoothing", type=float, default=None, help="additive smoothing (default 1.0)")
    p.add_argument("--from-table", type=str, default=None, help="wrap a table file as an exact model")
    p.add_argument("--sample-from", type=str, default=None,
                   help="draw a corpus of --corpus-size sequences from this table first")
    p.add_argument("--corpus-size", type=int, default=10000)
    p.add_argument("--out", type=str, default=None, help="model file (default model.json)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sample", help="draw sequences")
    _add_model_flags(p)
    _add_sampler_flags(p)
    p.add_argument("--num-samples", type=int, default=None)
    p.add_argument("--out", type=str, default=None, help="samples file (default samples.txt)")
    p.add_argument("--trace", type=str, default=None, help="write per-step traces here")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="exact metrics for one (mode, T, beta) cell")
    _add_model_flags(p)
    _add_sampler_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="exact metrics across modes, step counts, betas")
    _add_model_flags(p)
    p.add_argument("--modes", type=str, default=None, help="comma-separated modes")
    p.add_argument("--steps-list", type=str, default=None, help="comma-separated step counts")
    p.add_argument("--beta-list", type=str, default=None, help="comma-separated betas")
    p.add_argument("--family", type=str, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--chunk-size", type=int, default=None)
    p.add_argument("--emit-timings", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run property suites (exit 1 on failure)")
    p.add_argument("suite", nargs="?", default="all",
                   help="all or one of: " + ", ".join(sorted(verify_mod.REGISTRY)))
    p.set_defaults(func=cmd_verify)
    return parser


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=str, default=None, help="data table file")
    p.add_argument("--dm-model", type=str, default=None,
                   help="marginal-model file (default: exact model from --data)")
    p.add_argument("--copula-model", type=str, default=None,
                   help="copula-model file (default: exact model from --data)")


def _add_sampler_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", type=str, default=None, choices=MODES)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--family", type=str, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--chunk-size", type=int, default=None)


def _pick(flag: Any, cfg: dict, section: str, key: str, default: Any) -> Any:
    if flag is not None:
        return flag
    return config_get(cfg, section, key, default)


def _resolve_models(
    args: argparse.Namespace, need_dm: bool, need_copula: bool
) -> tuple[DiffusionMarginalModel | None, ARCopulaModel | None, Any]:
    data = load_table(args.data) if args.data else None
    dm = None
    copula = None
    if args.dm_model:
        dm = DiffusionMarginalModel.load(args.dm_model)
    elif need_dm:
        if data is None:
            raise ConfigError("need --dm-model or --data for this mode")
        dm = DiffusionMarginalModel.exact(data.floored())
    if args.copula_model:
        copula = ARCopulaModel.load(args.copula_model)
    elif need_copula:
        if data is None:
            raise ConfigError("need --copula-model or --data for this mode")
        copula = ARCopulaModel.exact(data.floored())
    return dm, copula, data


def _sampler_config(args: argparse.Namespace, cfg: dict, seed: int) -> SamplerConfig:
    mode = _pick(args.mode, cfg, "sampler", "mode", "dcd")
    steps = int(_pick(args.steps, cfg, "schedule", "steps", 2))
    family = _pick(args.family, cfg, "schedule", "family", "linear")
    epsilon = float(_pick(args.epsilon, cfg, "schedule", "epsilon", 1e-3))
    chunk = int(_pick(args.chunk_size, cfg, "schedule", "chunk_size", 1))
    beta = float(_pick(args.beta, cfg, "sampler", "beta", 1.0))
    sched = make_schedule(family, steps, epsilon, chunk)
    return SamplerConfig(steps=steps, schedule=sched, mode=mode, beta=beta,
                         chunk_size=chunk, seed=seed)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args: argparse.Namespace, cfg: dict) -> int:
    spec = SyntheticSpec(
        kind=_pick(args.kind, cfg, "data", "kind", "correlated_phrases"),
        num_positions=int(_pick(args.num_positions, cfg, "data", "num_positions", 2)),
        num_categories=int(_pick(args.num_categories, cfg, "data", "num_categories", 2)),
        correlation_strength=float(
            _pick(args.correlation_strength, cfg, "data", "correlation_strength", 0.9)
        ),
        seed=int(args.seed if args.seed is not None else config_get(cfg, "data", "seed", 0)),
    )
    table = gen_data(spec)
    out = Path(args.out) if args.out else Path(args.out_dir) / "data.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_table(table, out)
    print(f"wrote {out} ({spec.kind}, N={spec.num_positions}, C={spec.num_categories})")
    return 0


def cmd_fit(args: argparse.Namespace, cfg: dict) -> int:
    out = Path(args.out) if args.out else Path(args.out_dir) / "model.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.from_table:
        table = load_table(args.from_table)
        DiffusionMarginalModel.exact(table.floored()).save(out)
        print(f"wrote exact model {out}")
        return 0
    smoothing = float(_pick(args.smoothing, cfg, "fit", "smoothing", 1.0))
    if args.sample_from:
        table = load_table(args.sample_from)
        rng = np.random.default_rng(args.seed if args.seed is not None else 0)
        seqs = sample_states(table, args.corpus_size, rng)
        corpus_path = Path(args.out_dir) / "corpus.txt"
        save_corpus(seqs, corpus_path)
        print(f"wrote {corpus_path} ({args.corpus_size} sequences)")
        alphabet = table.alphabet
    elif args.corpus:
        seqs = load_corpus(args.corpus)
        if args.num_categories is None:
            raise ConfigError("--corpus needs --num-categories")
        alphabet = Alphabet(seqs.shape[1], args.num_categories)
    else:
        raise ConfigError("fit needs one of --corpus, --from-table, --sample-from")
    model_table = fit_counts_table(seqs, alphabet, smoothing)
    DiffusionMarginalModel(model_table, "counts").save(out)
    print(f"wrote counts model {out} (smoothing={format_float_short(smoothing)})")
    return 0


def cmd_sample(args: argparse.Namespace, cfg: dict) -> int:
    seed = args.seed if args.seed is not None else int(config_get(cfg, "sampler", "seed", 0))
    scfg = _sampler_config(args, cfg, seed)
    need_dm = scfg.mode in ("dcd", "diffusion_only", "dcd_ar_unmask")
    need_cop = scfg.mode in ("dcd", "ar_only", "dcd_ar_unmask")
    dm, copula, _ = _resolve_models(args, need_dm, need_cop)
    num = int(_pick(args.num_samples, cfg, "sampler", "num_samples", 1))
    rng = np.random.default_rng(seed)
    lines = []
    traces = []
    for k in range(num):
        x0, trace = sample(dm, copula, scfg, rng)
        lines.append(" ".join(str(t) for t in x0.tokens))
        if args.trace:
            traces.append(f"# sample {k}\n" + trace.dumps())
    out = Path(args.out) if args.out else Path(args.out_dir) / "samples.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out} ({num} samples, mode={scfg.mode}, T={scfg.steps})")
    if args.trace:
        Path(args.trace).write_text("".join(traces), encoding="utf-8")
        print(f"wrote {args.trace}")
    return 0


def cmd_eval(args: argparse.Namespace, cfg: dict) -> int:
    if not args.data:
        raise ConfigError("eval needs --data to score against")
    seed = args.seed if args.seed is not None else int(config_get(cfg, "sampler", "seed", 0))
    scfg = _sampler_config(args, cfg, seed)
    dm, copula, data = _resolve_models(args, need_dm=scfg.mode != "ar_only", need_copula=scfg.mode != "diffusion_only")
    assert data is not None
    induced = induced_distribution(dm, copula, scfg)
    klv = kl_to_data(data, induced.table)
    nll = expected_nll(data, induced.table)
    bound = elbo_bound(data, scfg.schedule)
    print(f"mode={scfg.mode} T={scfg.steps} beta={format_float_short(scfg.beta)}")
    print(f"kl_to_data={format_float_short(klv)}")
    print(f"nll={format_float_short(nll)}")
    print(f"elbo_bound={format_float_short(bound)}")
    return 0


def cmd_sweep(args: argparse.Namespace, cfg: dict) -> int:
    if not args.data:
        raise ConfigError("sweep needs --data to score against")
    modes = (
        [m.strip() for m in args.modes.split(",") if m.strip()]
        if args.modes
        else config_get(cfg, "sweep", "modes", ["dcd", "diffusion_only"])
    )
    steps_list = (
        [int(v) for v in args.steps_list.split(",") if v.strip()]
        if args.steps_list
        else config_get(cfg, "sweep", "steps_list", [1, 2, 4])
    )
    beta_list = (
        [float(v) for v in args.beta_list.split(",") if v.strip()]
        if args.beta_list
        else config_get(cfg, "sweep", "beta_list", [1.0])
    )
    emit_timings = args.emit_timings or bool(config_get(cfg, "sweep", "emit_timings", False))
    family = _pick(args.family, cfg, "schedule", "family", "linear")
    epsilon = float(_pick(args.epsilon, cfg, "schedule", "epsilon", 1e-3))
    chunk = int(_pick(args.chunk_size, cfg, "schedule", "chunk_size", 1))
    seed = args.seed if args.seed is not None else int(config_get(cfg, "sampler", "seed", 0))
    need_dm = any(m != "ar_only" for m in modes)
    need_cop = any(m != "diffusion_only" for m in modes)
    dm, copula, data = _resolve_models(args, need_dm, need_cop)
    assert data is not None
    results = run_sweep(
        data, dm, copula, modes, steps_list, beta_list,
        family=family, epsilon=epsilon, chunk_size=chunk, seed=seed,
        out_dir=args.out_dir, emit_timings=emit_timings,
    )
    for r in results:
        wall = "" if r.wall_ms is None else f" wall_ms={r.wall_ms:.1f}"
        print(
            f"{r.mode} T={r.steps} beta={format_float_short(r.beta)} "
            f"kl={format_float_short(r.kl_to_data)} nll={format_float_short(r.nll)}"
            f" bound={format_float_short(r.elbo_bound)}{wall}"
        )
    print(f"wrote {Path(args.out_dir) / 'results.csv'}")
    return 0


def cmd_verify(args: argparse.Namespace, cfg: dict) -> int:
    try:
        results, ok = verify_mod.run(args.suite)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        detail = f"  ({r.detail})" if r.detail else ""
        print(f"{status} {r.suite}:{r.name}{detail}")
    print(f"{'OK' if ok else 'FAILED'}: {sum(r.passed for r in results)}/{len(results)} checks")
    return 0 if ok else 1


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else {}
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MaskDiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
