"""Command-line pipeline: simulate, fit, infer (frozen topics), evaluate.

All commands read one JSON config file; a handful of flags override the
matching config fields (flags win).  Every output file embeds the hash of
the resolved config and the seed, so runs are attributable and repeatable.
Exit codes: 0 success, 1 configuration/validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import copy
import csv
import glob
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import data_io, gibbs, metrics
from .errors import ConfigError, TstopicsError
from .gibbs import ChainState, GibbsConfig
from .model import Corpus, Hyperparameters, sample_prior_params, simulate_corpus

DEFAULT_CONFIG = {
    "hyper": {"D": 4},
    "gibbs": {
        "n_iter": 2000,
        "burn_in": 0,
        "thin": 1,
        "n_chains": 1,
        "seed": 0,
        "checkpoint_every": 50,
    },
    "preprocess": {"basal_window": 40},
    "mode": "unsupervised",
    "paths": {"corpus": None, "metadata": None, "out": ".", "topics_checkpoint": None},
    "simulate": {
        "n_series": 0,
        "length": 100,
        "lengths": None,
        "m": 1,
        "grades": None,
        "labels": None,
        "params_file": None,
    },
    "evaluate": {"healthy_topic": 0, "smooth_window": 120, "archives": None},
}

MODES = ("unsupervised", "supervised", "fixed-topics")


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path) -> dict:
    try:
        with open(path) as f:
            user = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    return _deep_merge(DEFAULT_CONFIG, user)


def apply_flag_overrides(cfg: dict, args) -> dict:
    cfg = copy.deepcopy(cfg)
    if getattr(args, "seed", None) is not None:
        cfg["gibbs"]["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        cfg["paths"]["out"] = args.out
    if getattr(args, "chains", None) is not None:
        cfg["gibbs"]["n_chains"] = args.chains
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _build_hyper(cfg: dict) -> Hyperparameters:
    return data_io.hyper_from_dict(cfg["hyper"])


def _build_gibbs_config(cfg: dict, fixed_topics=None) -> GibbsConfig:
    g = cfg["gibbs"]
    return GibbsConfig(
        n_iter=int(g["n_iter"]),
        burn_in=int(g["burn_in"]),
        thin=int(g["thin"]),
        n_chains=int(g["n_chains"]),
        seed=int(g["seed"]),
        supervised=cfg["mode"] == "supervised",
        fixed_topics=fixed_topics,
    )


def _require_path(cfg: dict, key: str, purpose: str) -> str:
    path = cfg["paths"].get(key)
    if not path:
        raise ConfigError(f"paths.{key} is required for {purpose}")
    if not os.path.exists(path):
        raise ConfigError(f"paths.{key}: no such file: {path}")
    return path


def validate_config(cfg: dict, command: str) -> None:
    """Reject statically detectable problems before any work starts."""
    if cfg["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {cfg['mode']!r}")
    hyper = _build_hyper(cfg)  # raises ParameterError on bad values
    _build_gibbs_config(cfg)
    window = cfg["preprocess"]["basal_window"]
    if not (isinstance(window, int) and window >= 0):
        raise ConfigError("preprocess.basal_window must be a nonnegative integer")
    if command == "simulate":
        sim = cfg["simulate"]
        n = sim["n_series"]
        if not (isinstance(n, int) and n >= 0):
            raise ConfigError("simulate.n_series must be a nonnegative integer")
        lengths = sim["lengths"] if sim["lengths"] is not None else [sim["length"]] * n
        if len(lengths) != n:
            raise ConfigError(f"simulate.lengths must list {n} entries")
        if any(t <= hyper.p for t in lengths):
            raise ConfigError(f"all simulated lengths must exceed p={hyper.p}")
        if sim["m"] < 1:
            raise ConfigError("simulate.m must be >= 1")
        for field in ("grades", "labels"):
            if sim[field] is not None and len(sim[field]) != n:
                raise ConfigError(f"simulate.{field} must list {n} entries")
        if sim["labels"] is not None:
            for s in sim["labels"]:
                if s is not None and (len(s) != hyper.D or set(s) - {"0", "1"} or "1" not in s):
                    raise ConfigError(
                        f"simulate.labels entries must be 0/1 strings of length {hyper.D} "
                        "with at least one 1"
                    )
        if sim["params_file"] is not None and not os.path.exists(sim["params_file"]):
            raise ConfigError(f"simulate.params_file: no such file: {sim['params_file']}")
    if command in ("fit", "infer"):
        _require_path(cfg, "corpus", command)
        if cfg["mode"] == "supervised":
            if command == "infer":
                raise ConfigError("infer runs unsupervised; use mode unsupervised or fixed-topics")
            meta_path = _require_path(cfg, "metadata", "supervised fitting")
            meta = data_io.load_metadata(meta_path)
            masks = [m for _, m in meta.values() if m is not None]
            if not masks:
                raise ConfigError("supervised mode but metadata has no label masks")
            for mask in masks:
                if mask.shape[0] != hyper.D:
                    raise ConfigError(
                        f"label masks must have length D={hyper.D}, found {mask.shape[0]}"
                    )
                if mask.sum() < 1:
                    raise ConfigError("label masks must allow at least one topic")
    if command == "infer":
        path = _require_path(cfg, "topics_checkpoint", "infer")
        cp = data_io.load_checkpoint(path)
        if cp.hyper.D != hyper.D or cp.hyper.L != hyper.L or cp.hyper.p != hyper.p:
            raise ConfigError(
                "topics checkpoint disagrees with config on D/L/p: "
                f"checkpoint ({cp.hyper.D},{cp.hyper.L},{cp.hyper.p}) vs "
                f"config ({hyper.D},{hyper.L},{hyper.p})"
            )
    if command == "evaluate":
        if not _evaluate_archives(cfg):
            raise ConfigError("no sample archives found for evaluation")
        _require_path(cfg, "corpus", "evaluate")


def _evaluate_archives(cfg: dict) -> list:
    explicit = cfg["evaluate"]["archives"]
    if explicit:
        missing = [a for a in explicit if not os.path.exists(a)]
        if missing:
            raise ConfigError(f"evaluate.archives: missing files {missing}")
        return list(explicit)
    return sorted(glob.glob(os.path.join(cfg["paths"]["out"], "chain*.archive")))


def _load_params_json(path):
    params, _, _ = data_io.load_truth(path)
    return params


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: dict) -> int:
    h = config_hash(cfg)
    seed = cfg["gibbs"]["seed"]
    hyper = _build_hyper(cfg)
    sim = cfg["simulate"]
    out = cfg["paths"]["out"]
    os.makedirs(out, exist_ok=True)
    rng = np.random.default_rng(seed)
    n = sim["n_series"]
    lengths = sim["lengths"] if sim["lengths"] is not None else [sim["length"]] * n
    if sim["params_file"] is not None:
        params = _load_params_json(sim["params_file"])
        m = params.m
    else:
        m = int(sim["m"])
        params = sample_prior_params(hyper, m, rng)
    labels = None
    if sim["labels"] is not None:
        labels = [
            None if s is None else np.array([int(c) for c in s], dtype=np.int8)
            for s in sim["labels"]
        ]
    corpus, states = simulate_corpus(params, hyper, n, lengths, rng, labels=labels)
    if sim["grades"] is not None:
        corpus.grades = [int(g) for g in sim["grades"]]
    comment = f"config_hash={h} seed={seed}"
    corpus_path = os.path.join(out, "corpus.csv")
    meta_path = os.path.join(out, "metadata.csv")
    write_meta = corpus.grades is not None or corpus.labels is not None
    data_io.save_corpus(
        corpus,
        corpus_path,
        metadata_path=meta_path if write_meta else None,
        header_comment=comment,
        m=m,
    )
    data_io.save_truth(
        os.path.join(out, "truth.json"),
        params,
        states,
        meta={"config_hash": h, "seed": seed},
    )
    print(f"wrote {corpus_path} ({n} series) and truth.json")
    return 0


def _chain_paths(out: str, c: int) -> tuple:
    stem = os.path.join(out, f"chain{c:02d}")
    return f"{stem}.archive", f"{stem}.ckpt", f"{stem}.progress.log"


def _load_fit_corpus(cfg: dict) -> Corpus:
    meta = cfg["paths"]["metadata"] if cfg["mode"] == "supervised" else cfg["paths"].get("metadata")
    meta = meta if meta and os.path.exists(meta) else None
    corpus = data_io.load_corpus(cfg["paths"]["corpus"], metadata_path=meta)
    return data_io.preprocess_corpus(corpus, cfg["preprocess"]["basal_window"])


def _run_one_chain(
    c: int,
    corpus: Corpus,
    hyper: Hyperparameters,
    config: GibbsConfig,
    cfg: dict,
    resume: bool,
) -> None:
    out = cfg["paths"]["out"]
    h = config_hash(cfg)
    archive_path, ckpt_path, log_path = _chain_paths(out, c)
    checkpoint_every = int(cfg["gibbs"]["checkpoint_every"])
    chain = None
    if resume and os.path.exists(ckpt_path):
        cp = data_io.load_checkpoint(ckpt_path)
        if cp.meta["hyper"] != data_io.hyper_to_dict(hyper):
            raise ConfigError(f"chain {c}: checkpoint hyperparameters differ from config")
        if cp.config.seed != config.seed or cp.config.thin != config.thin:
            raise ConfigError(f"chain {c}: checkpoint seed/thin differ from config")
        chain = cp.chain
        if os.path.exists(archive_path):
            data_io.rewrite_archive_upto(archive_path, chain.iteration)
            writer = data_io.ArchiveWriter(archive_path, append=True)
        else:
            writer = data_io.ArchiveWriter(
                archive_path, meta={"config_hash": h, "seed": config.seed, "chain": c}
            )
    else:
        child = np.random.SeedSequence(config.seed).spawn(config.n_chains)[c]
        rng = np.random.default_rng(child)
        chain = gibbs.init_chain(corpus, hyper, config, rng)
        writer = data_io.ArchiveWriter(
            archive_path, meta={"config_hash": h, "seed": config.seed, "chain": c}
        )
    try:
        with open(log_path, "a") as logf:
            while chain.iteration < config.n_iter:
                gibbs.gibbs_sweep(chain, corpus, hyper, config)
                it = chain.iteration
                if it > config.burn_in and (it - config.burn_in) % config.thin == 0:
                    writer.append_sample(it, chain.params, chain.states)
                lj = gibbs.log_joint(corpus, hyper, chain.params, chain.states)
                stamp = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
                logf.write(f"iter={it} log_joint={lj:.6f} time={stamp}\n")
                logf.flush()
                if checkpoint_every and it % checkpoint_every == 0:
                    data_io.save_checkpoint(ckpt_path, chain, hyper, config)
            data_io.save_checkpoint(ckpt_path, chain, hyper, config)
    finally:
        writer.close()


def _run_chains(cfg: dict, config: GibbsConfig, corpus, hyper, resume: bool, threads: int) -> int:
    os.makedirs(cfg["paths"]["out"], exist_ok=True)
    ids = list(range(config.n_chains))
    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as ex:
            futures = [
                ex.submit(_run_one_chain, c, corpus, hyper, config, cfg, resume) for c in ids
            ]
            for f in futures:
                f.result()
    else:
        for c in ids:
            _run_one_chain(c, corpus, hyper, config, cfg, resume)
    print(f"finished {config.n_chains} chain(s) at {config.n_iter} iterations")
    return 0


def cmd_fit(cfg: dict, resume: bool = False, threads: int = 1) -> int:
    hyper = _build_hyper(cfg)
    config = _build_gibbs_config(cfg)
    corpus = _load_fit_corpus(cfg)
    return _run_chains(cfg, config, corpus, hyper, resume, threads)


def cmd_infer(cfg: dict, resume: bool = False, threads: int = 1) -> int:
    hyper = _build_hyper(cfg)
    cp = data_io.load_checkpoint(cfg["paths"]["topics_checkpoint"])
    config = _build_gibbs_config(cfg, fixed_topics=cp.chain.params)
    corpus = _load_fit_corpus(cfg)
    return _run_chains(cfg, config, corpus, hyper, resume, threads)


def _write_csv(path, comment: str, header: list, rows) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# {comment}\n")
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def cmd_evaluate(cfg: dict) -> int:
    h = config_hash(cfg)
    seed = cfg["gibbs"]["seed"]
    comment = f"config_hash={h} seed={seed}"
    hyper = _build_hyper(cfg)
    out = cfg["paths"]["out"]
    os.makedirs(out, exist_ok=True)
    meta_path = cfg["paths"].get("metadata")
    meta_path = meta_path if meta_path and os.path.exists(meta_path) else None
    corpus = data_io.load_corpus(cfg["paths"]["corpus"], metadata_path=meta_path)
    corpus = data_io.preprocess_corpus(corpus, cfg["preprocess"]["basal_window"])
    archives = _evaluate_archives(cfg)
    chains = []
    for a in archives:
        _, samples = data_io.read_archive(a, strict=False)
        chains.append([(params, states) for _, params, states in samples])
    flat = [s for chain in chains for s in chain]
    if not flat:
        raise TstopicsError("archives contain no emitted samples")
    topic = int(cfg["evaluate"]["healthy_topic"])
    window = int(cfg["evaluate"]["smooth_window"])
    report = {
        "config_hash": h,
        "seed": seed,
        "archives": archives,
        "n_chains": len(chains),
        "n_samples": len(flat),
        "healthy_topic": topic,
    }
    props = metrics.topic_proportion_features(flat, hyper.D)
    _write_csv(
        os.path.join(out, "topic_features.csv"),
        comment,
        ["series_id"] + [f"topic{d}" for d in range(hyper.D)],
        (
            [corpus.series_ids[n]] + [repr(float(v)) for v in props[n]]
            for n in range(corpus.n_series)
        ),
    )
    fft_rows = []
    periods = list(metrics.DEFAULT_PERIOD_GRID)
    for n in range(corpus.n_series):
        feats = np.atleast_2d(metrics.fft_features(corpus.residuals[n], periods).T).T
        row = [corpus.series_ids[n]]
        for j in range(len(periods)):
            row.extend(repr(float(v)) for v in np.atleast_1d(feats[j]))
        fft_rows.append(row)
    m = corpus.m
    fft_header = ["series_id"] + [
        f"period{v}_ch{j + 1}" for v in periods for j in range(m)
    ]
    _write_csv(os.path.join(out, "fft_features.csv"), comment, fft_header, fft_rows)
    counts = metrics.pooled_word_start_counts(flat, hyper.D, hyper.L)
    mi = metrics.word_topic_mi(counts)
    _write_csv(
        os.path.join(out, "mi_table.csv"),
        comment,
        ["word", "topic", "pmi", "p_topic_given_word"],
        (
            [l, d, repr(float(mi.pmi[l, d])), repr(float(mi.p_topic_given_word[l, d]))]
            for l in range(hyper.L)
            for d in range(hyper.D)
        ),
    )
    curve_rows = []
    for n in range(corpus.n_series):
        posterior, smoothed = metrics.smooth_topic_posterior(chains, n, topic, window)
        for i in range(posterior.shape[0]):
            curve_rows.append(
                [
                    corpus.series_ids[n],
                    hyper.p + i,
                    repr(float(posterior[i])),
                    repr(float(smoothed[i])),
                ]
            )
    _write_csv(
        os.path.join(out, "posterior_curves.csv"),
        comment,
        ["series_id", "t", "posterior", "smoothed"],
        curve_rows,
    )
    if corpus.grades is not None and all(g is not None for g in corpus.grades):
        ranks = metrics.healthy_ranking(flat, topic)
        rs = metrics.rank_score(
            metrics.RankInput(health_rank=ranks, grades=np.array(corpus.grades))
        )
        report["rank"] = {
            "score": rs.score,
            "max_score": rs.max_score,
            "percent": rs.percent,
            "ranks": ranks.tolist(),
        }
    else:
        report["rank"] = {"error": "no grades available; rank score not computed"}
        print("warning: no grades available; rank score not computed", file=sys.stderr)
    with open(os.path.join(out, "report.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote evaluation outputs to {out}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tstopics", description="Time-series topic model pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "generate a synthetic corpus plus ground truth"),
        ("fit", "run Gibbs chains on a corpus"),
        ("infer", "run chains with topic/word parameters frozen from a checkpoint"),
        ("evaluate", "compute rank score, features, MI, and posterior curves"),
    ):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--seed", type=int, default=None, help="override gibbs.seed")
        sp.add_argument("--out", default=None, help="override paths.out")
        if name in ("fit", "infer"):
            sp.add_argument("--resume", action="store_true", help="continue from checkpoints")
            sp.add_argument("--chains", type=int, default=None, help="override gibbs.n_chains")
            sp.add_argument("--threads", type=int, default=1, help="parallel chain workers")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = apply_flag_overrides(cfg, args)
        validate_config(cfg, args.command)
    except TstopicsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "fit":
            return cmd_fit(cfg, resume=args.resume, threads=args.threads)
        if args.command == "infer":
            return cmd_infer(cfg, resume=args.resume, threads=args.threads)
        return cmd_evaluate(cfg)
    except TstopicsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # unexpected: still a runtime failure
        import traceback

        traceback.print_exc()
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
