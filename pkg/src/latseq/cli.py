"""Command-line entry point.

Exit codes: 0 success, 2 invalid input (config, files, arguments),
1 failure during a run. Errors print a single ``error: ...`` line.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .baselines import cmaes_optimize, distance_prioritized_search, greedy_evolution, random_search
from .core import Dataset, Vocabulary, pairwise_hamming, percentile_subset, substream
from .driver import LatProtRL, top_distinct
from .landscape import CsvParseError, NkLandscape, SurrogatePredictor, TabularOracle, load_csv_dataset, save_csv_dataset
from .eval import METRIC_COLUMNS, compute_metrics, dataset_stats, high_fitness_subset, mds_embed
from .neuralnet import save_checkpoint
from .ppo import PpoConfig
from .report import write_report
from .tasks import make_nk_task
from .ved import VariantEncoderDecoder, default_latent_dim

log = logging.getLogger("latseq")

LATENT_METHODS = ("cmaes-ved",)


class UsageError(Exception):
    pass


class InputError(Exception):
    """Bad user input detected outside config parsing (exit code 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class Task:
    oracle: object
    pool: Dataset
    data: Dataset
    vocabulary: Vocabulary
    high: np.ndarray
    landscape: NkLandscape | None = None


# -- task / model construction ----------------------------------------------------

def build_task(cfg: dict) -> Task:
    t = cfg["task"]
    lo, hi = cfgmod.band_range(t["band"])
    if t["oracle"] == "nk":
        seed = cfg["seed"] if t["landscape_seed"] is None else t["landscape_seed"]
        nk = make_nk_task(t["L"], t["K"], t["vocabulary"] or "ACGT", t["pool_size"], (lo, hi), t["expected_mutations"], seed)
        pool, data, oracle, land = nk.pool, nk.data, nk.landscape, nk.landscape
    else:
        land = None
        if t["oracle"] == "nk-file":
            land = NkLandscape.load(t["landscape"])
            vocab = land.vocabulary
        else:
            vocab = Vocabulary(t["vocabulary"]) if t["vocabulary"] else Vocabulary()
        pool = load_csv_dataset(t["path"], vocab, normalize=t["normalize"])
        if land is not None:
            if pool.length != land.L:
                raise InputError(f"{t['path']}: sequence length {pool.length} != landscape L={land.L}")
            oracle = land
        elif t["oracle"] == "csv":
            oracle = TabularOracle(pool, t["lookup"])
        else:
            params = dict(cfg["run"]["predictor"])
            oracle = SurrogatePredictor(vocab_size=pool.vocabulary.size, random_state=cfg["seed"], **params)
            oracle.fit(pool.sequences, pool.fitness)
        data = percentile_subset(pool, lo, hi)
    return Task(oracle, pool, data, pool.vocabulary, high_fitness_subset(pool, 0.1), land)


def build_ved(cfg: dict, data: Dataset) -> VariantEncoderDecoder:
    v = cfg["ved"]
    if v["checkpoint"] is not None:
        ved = VariantEncoderDecoder.load(v["checkpoint"])
        if ved.seq_len_ != data.length or ved.vocab_size != data.vocabulary.size:
            raise InputError(f"{v['checkpoint']}: checkpoint does not match the task's sequence length or vocabulary")
        return ved
    latent = v["latent_dim"] if v["latent_dim"] is not None else default_latent_dim(data.length)
    ved = VariantEncoderDecoder(latent_dim=latent, vocab_size=data.vocabulary.size, augmentation=v["augmentation"],
                                expected_mutations=v["expected_mutations"], holdout_fraction=v["holdout_fraction"],
                                epochs=v["epochs"], batch_size=v["batch_size"], lr=v["lr"],
                                weight_decay=v["weight_decay"], decoder_hidden=tuple(v["decoder_hidden"]),
                                random_state=cfg["seed"])
    return ved.fit(data.sequences)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class RunWriter:
    """metrics.csv, per-round buffer snapshots and checkpoints of one run."""

    def __init__(self, out: Path, vocabulary: Vocabulary):
        self.out = out
        self.vocabulary = vocabulary
        out.mkdir(parents=True, exist_ok=True)
        self._fh = (out / "metrics.csv").open("w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh)
        self._w.writerow(METRIC_COLUMNS)
        self.rows = []

    def row(self, row: dict):
        self._w.writerow([_cell(row[c]) for c in METRIC_COLUMNS])
        self._fh.flush()
        self.rows.append(row)

    def snapshot(self, round_index, seqs, fitness, visits=None):
        with (self.out / f"buffer_round_{round_index}.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["sequence", "fitness", "visits"])
            for i, (s, f) in enumerate(zip(seqs, fitness)):
                w.writerow([self.vocabulary.decode(s), repr(float(f)), "" if visits is None else visits[i]])

    def close(self):
        self._fh.close()


def run_latprotrl(cfg, task: Task, ved, writer: RunWriter, mode: str) -> dict:
    r, env, buf = cfg["run"], cfg["env"], cfg["buffer"]
    ckpt_dir = writer.out / "checkpoints"
    if r["save_checkpoints"]:
        ckpt_dir.mkdir(exist_ok=True)

    def on_round(model, k, row):
        writer.row(row)
        b = model.buffer_
        writer.snapshot(k, b.sequences, b.fitness, b.visits)
        if r["save_checkpoints"]:
            pol = model.learner_.policy
            extra = {"round": k, "log_std": pol.log_std.tolist() if hasattr(pol, "log_std") else None}
            save_checkpoint(ckpt_dir / f"round_{k}.json", {"policy": pol.net, "value": model.learner_.value_fn.net}, extra)

    model = LatProtRL(
        oracle=task.oracle, ved=None if r["state_action_mode"] == "seq/mut" else ved,
        vocab_size=task.vocabulary.size, rounds=r["rounds"], calls_per_round=r["calls_per_round"],
        delta=env["delta"], T_ep=env["T_ep"], m_step=env["m_step"], m_total=env["m_total"],
        m_decode=env["m_decode"], buffer_size=buf["size"], epsilon_decay=buf["epsilon_decay"],
        update_period=buf["update_period"], temperature=buf["temperature"], ppo_config=PpoConfig(**cfg["ppo"]),
        mode=mode, predictor_params=dict(r["predictor"]), total_timesteps=r["total_timesteps"],
        rollout_steps=r["rollout_steps"], double_loop=tuple(r["double_loop"]), no_buffer=r["no_buffer"],
        no_calibration=r["no_calibration"], state_action_mode=r["state_action_mode"],
        random_state=cfg["seed"], callback=on_round)
    model.fit(task.data.sequences, task.data.fitness, high_set=task.high)
    return {"oracle_calls": model.n_oracle_calls_, "evaluation_calls": model.evaluation_calls_,
            "round_kinds": model.round_kinds_, "round_reports": model.round_reports_,
            "env_clamp_events": model.env_.clamp_events}


def run_baseline(cfg, task: Task, ved, writer: RunWriter) -> dict:
    r = cfg["run"]
    k = cfg["buffer"]["size"]
    seeds = top_distinct(task.data, k)
    init = task.data.sequences

    def on_round(round_index, seqs, fit, budget):
        m = compute_metrics(seqs, fit, init, task.high, round_index, oracle_calls=budget.total_calls)
        writer.row(m.as_row())
        writer.snapshot(round_index, seqs, fit)

    common = dict(vocab_size=task.vocabulary.size, rounds=r["rounds"], calls_per_round=r["calls_per_round"],
                  top_k=k, rng=substream(cfg["seed"], "baseline"), callback=on_round)
    method = r["method"]
    if method == "cmaes-onehot":
        res = cmaes_optimize(task.oracle, seeds.sequences, seeds.fitness, encoding="onehot",
                             sigma0=r["cmaes_sigma"], **common)
    elif method == "cmaes-ved":
        res = cmaes_optimize(task.oracle, seeds.sequences, seeds.fitness, encoding="latent", ved=ved,
                             m_decode=cfg["env"]["m_decode"], sigma0=r["cmaes_sigma"], **common)
    elif method == "greedy":
        res = greedy_evolution(task.oracle, seeds.sequences, seeds.fitness, threshold=r["greedy_threshold"], **common)
    elif method == "pex-style":
        reference = ved.reference_ if ved is not None else seeds.sequences[0]
        res = distance_prioritized_search(task.oracle, reference, seeds.sequences, seeds.fitness, **common)
    else:
        res = random_search(task.oracle, seeds.sequences, seeds.fitness, radius=r["random_radius"], **common)
    return {"oracle_calls": res.oracle_calls, "evaluation_calls": 0, "stalled": res.stalled,
            "history": res.history}


# -- commands ---------------------------------------------------------------------

def _load_config(args, need_m_decode=True) -> dict:
    if args.config:
        cfg = cfgmod.load(args.config, need_m_decode=need_m_decode)
    else:
        cfg = cfgmod.resolve({}, need_m_decode=need_m_decode)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _out_dir(args, default: str) -> Path:
    return Path(args.out) if args.out else Path(default)


def _check_workers(args):
    if args.workers < 1:
        raise InputError("--workers must be at least 1")
    if args.workers > 1:
        log.info("runs execute serially; --workers %d recorded but not used", args.workers)


def cmd_gen_landscape(args) -> int:
    cfg = _load_config(args, need_m_decode=False)
    if cfg["task"]["oracle"] != "nk":
        raise InputError("gen-landscape needs task.oracle = 'nk'")
    task = build_task(cfg)
    out = _out_dir(args, f"landscape-seed{cfg['seed']}")
    out.mkdir(parents=True, exist_ok=True)
    task.landscape.save(out / "landscape.json")
    save_csv_dataset(task.pool, out / "pool.csv")
    save_csv_dataset(task.data, out / "data.csv")
    stats = {"pool": dataset_stats(task.pool), "data": dataset_stats(task.data), "config": cfg,
             "wild_type": task.pool.meta.get("wild_type")}
    (out / "stats.json").write_text(json.dumps(stats, indent=2))
    print(f"pool {len(task.pool)} sequences, median fitness {stats['pool']['median']:.4f}; "
          f"data {len(task.data)} sequences, top-{cfg['buffer']['size']} median "
          f"{np.median(task.data.top(cfg['buffer']['size']).fitness):.4f}; written to {out}")
    return 0


def cmd_train_ved(args) -> int:
    _check_workers(args)
    cfg = _load_config(args, need_m_decode=False)
    task = build_task(cfg)
    cfg["ved"]["checkpoint"] = None
    ved = build_ved(cfg, task.data)
    out = _out_dir(args, f"ved-seed{cfg['seed']}")
    out.mkdir(parents=True, exist_ok=True)
    ved.save(out / "ved.json", task.vocabulary)
    rep = ved.report_
    (out / "ved_report.json").write_text(json.dumps({"report": rep, "config": cfg}, indent=2))
    print("positions      accuracy")
    for name in ("mutated", "non_mutated", "overall"):
        v = rep.get(f"{name}_accuracy")
        print(f"{name:<14} {'n/a' if v is None else f'{v:.4f}'}")
    print(f"checkpoint written to {out / 'ved.json'}")
    return 0


def _optimize(args, mode: str | None) -> int:
    _check_workers(args)
    cfg = _load_config(args)
    r = cfg["run"]
    if mode is not None:
        if r["method"] != "latprotrl":
            raise InputError(f"{mode} runs need run.method = 'latprotrl'")
        r["mode"] = mode
    needs_ved = (r["method"] == "latprotrl" and r["state_action_mode"] != "seq/mut") or r["method"] in LATENT_METHODS
    t0 = time.time()
    task = build_task(cfg)
    out = _out_dir(args, f"run-{r['method']}-seed{cfg['seed']}")
    out.mkdir(parents=True, exist_ok=True)
    ved = None
    if needs_ved or r["method"] == "pex-style":
        ved = build_ved(cfg, task.data)
        if cfg["ved"]["checkpoint"] is None:
            ved.save(out / "ved.json", task.vocabulary)
    writer = RunWriter(out, task.vocabulary)
    try:
        if r["method"] == "latprotrl":
            result = run_latprotrl(cfg, task, ved, writer, r["mode"])
        else:
            result = run_baseline(cfg, task, ved, writer)
    finally:
        writer.close()
    meta = {
        "schema_version": cfgmod.SCHEMA_VERSION,
        "package_version": __version__,
        "command": "double-loop" if mode == "double-loop" else "optimize",
        "seed": cfg["seed"],
        "workers": args.workers,
        "config": cfg,
        "vocabulary": task.vocabulary.symbols,
        "dataset": dict(task.pool.meta),
        "rounds_written": len(writer.rows),
        "elapsed_seconds": round(time.time() - t0, 3),
        **result,
    }
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2, default=_json_default))
    last = writer.rows[-1]
    print(f"{r['method']} finished: {len(writer.rows) - 1} rounds, median fitness {last['fitness']:.4f}, "
          f"{result['oracle_calls']} oracle calls; results in {out}")
    return 0


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def cmd_optimize(args) -> int:
    return _optimize(args, None)


def cmd_double_loop(args) -> int:
    return _optimize(args, "double-loop")


def _read_snapshot(path, vocab):
    seqs, fit = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            seqs.append(vocab.encode(row["sequence"]))
            fit.append(float(row["fitness"]))
    return seqs, fit


def cmd_evaluate(args) -> int:
    if args.run is None and args.dataset is None:
        raise InputError("evaluate needs a run directory or --dataset")
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if args.dataset is not None:
        pool = load_csv_dataset(args.dataset, Vocabulary(args.vocabulary), normalize=args.normalize)
        stats = {"dataset": dataset_stats(pool)}
        for band in ("medium", "hard"):
            sub = percentile_subset(pool, *cfgmod.band_range(band))
            stats[band] = {"n": len(sub), "top128_median": float(np.median(sub.top(128).fitness))}
        text = json.dumps(stats, indent=2)
        print(text)
        if out is not None:
            (out / "dataset_stats.json").write_text(text)
    if args.run is not None:
        run = Path(args.run)
        meta_path = run / "run_meta.json"
        if not meta_path.exists():
            raise InputError(f"{meta_path}: not found")
        meta = json.loads(meta_path.read_text())
        vocab = Vocabulary(meta["vocabulary"])
        snaps = sorted(run.glob("buffer_round_*.csv"), key=lambda p: int(p.stem.rsplit("_", 1)[1]))
        if not snaps:
            raise InputError(f"{run}: no buffer snapshots")
        index, uniq, rows = {}, [], []
        for p in snaps:
            k = int(p.stem.rsplit("_", 1)[1])
            for s, f in zip(*_read_snapshot(p, vocab)):
                key = s.tobytes()
                if key not in index:
                    index[key] = len(uniq)
                    uniq.append(s)
                rows.append((index[key], f, k))
        coords = mds_embed(pairwise_hamming(np.array(uniq)).astype(float), 2)
        target = out if out is not None else run
        with (target / "mds.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "x", "y", "fitness", "round"])
            for i, f, k in rows:
                w.writerow([i, repr(float(coords[i, 0])), repr(float(coords[i, 1])), repr(f), k])
        print(f"MDS of {len(uniq)} distinct sequences over {len(snaps)} rounds written to {target / 'mds.csv'}")
    return 0


def cmd_report(args) -> int:
    if not args.runs:
        raise InputError("report needs at least one run directory")
    out = _out_dir(args, "report")
    try:
        written = write_report(args.runs, out)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    print(f"wrote {len(written)} files to {out}")
    return 0


# -- argument parsing ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="latseq", description="Latent-space reinforcement learning for sequence optimisation.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", metavar="PATH", help="JSON config (a run_meta.json also works)")
        sp.add_argument("--seed", type=int, metavar="N", help="root seed (overrides the config)")
        sp.add_argument("--workers", type=int, default=1, metavar="N")
        sp.add_argument("--out", metavar="DIR")

    sp = sub.add_parser("gen-landscape", help="generate an NK landscape, pool and task band")
    common(sp)
    sp.set_defaults(func=cmd_gen_landscape)
    sp = sub.add_parser("train-ved", help="train and save the variant encoder-decoder")
    common(sp)
    sp.set_defaults(func=cmd_train_ved)
    sp = sub.add_parser("optimize", help="run the configured optimiser")
    common(sp)
    sp.set_defaults(func=cmd_optimize)
    sp = sub.add_parser("double-loop", help="alternate oracle and predictor rounds")
    common(sp)
    sp.set_defaults(func=cmd_double_loop)
    sp = sub.add_parser("evaluate", help="MDS of a run's buffers and/or dataset statistics")
    common(sp)
    sp.add_argument("run", nargs="?", help="run directory")
    sp.add_argument("--dataset", metavar="CSV", help="sequence,fitness CSV to summarise")
    sp.add_argument("--vocabulary", default="ACDEFGHIKLMNPQRSTVWY")
    sp.add_argument("--normalize", action="store_true")
    sp.set_defaults(func=cmd_evaluate)
    sp = sub.add_parser("report", help="combine run metrics into CSV and SVG charts")
    common(sp)
    sp.add_argument("runs", nargs="*", help="run directories")
    sp.set_defaults(func=cmd_report)
    return p


def _fail(msg: str, code: int) -> int:
    print("error: " + " ".join(str(msg).split()), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(exc, 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        return _fail("no command given (try --help)", 2)
    try:
        return args.func(args)
    except (cfgmod.ConfigError, CsvParseError, InputError) as exc:
        return _fail(exc, 2)
    except FileNotFoundError as exc:
        return _fail(f"{exc.filename or ''}: {exc.strerror or exc}", 2)
    except Exception as exc:  # noqa: BLE001
        log.debug("run failed", exc_info=True)
        return _fail(f"{type(exc).__name__}: {exc}", 1)


if __name__ == "__main__":
    sys.exit(main())
