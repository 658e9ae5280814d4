"""``mea`` command-line interface.

Artifacts default to ``$MEA_DATA_DIR`` (or ``./mea-data``) under fixed names,
so the stages chain without arguments::

    mea gen && mea fem && mea train-fol && mea train --model mea1 && mea eval
"""
from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("mea")

DATASET = "dataset.mead"
FOL_CKPT = "fol.meac"
MODELS = ("ffnn", "mea1", "mea2", "unet")
DESK_SAMPLES, DESK_EPOCHS = 2000, 200
FULL_EPOCHS = 500


def data_dir() -> Path:
    return Path(os.environ.get("MEA_DATA_DIR", "mea-data"))


class Settings:
    """CLI flag, else config-file value, else built-in default."""

    def __init__(self, args, cfg: configparser.ConfigParser):
        self.args, self.cfg = args, cfg

    def get(self, name: str, section: str, default, cast=None):
        v = getattr(self.args, name, None)
        if v is not None:
            return v
        cast = cast or (type(default) if default is not None else str)
        if self.cfg.has_option(section, name):
            raw = self.cfg.get(section, name)
            try:
                return raw.lower() in ("1", "true", "yes", "on") if cast is bool else cast(raw)
            except ValueError as exc:
                from .errors import ConfigError
                raise ConfigError(f"[{section}] {name} = {raw!r}: {exc}") from exc
        return default


def _load_config(path) -> configparser.ConfigParser:
    from .errors import ConfigError
    cfg = configparser.ConfigParser()
    if path:
        if not Path(path).exists():
            raise ConfigError(f"config file {path} not found")
        try:
            cfg.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        unknown = set(cfg.sections()) - {"data", "fol", "train", "eval"}
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
    return cfg


def _path(value, default_name) -> Path:
    return Path(value) if value else data_dir() / default_name


def _dataset_required(path: Path):
    from .io import read_dataset
    if not path.exists():
        raise FileNotFoundError(f"dataset {path} not found; run `mea gen` first")
    return read_dataset(path)


def _coarse_solver(spec, seed):
    from .fol import FemCoarseSolver, FolModel, FolSolver
    from .nn.checkpoint import Checkpoint
    if spec == "fem":
        return FemCoarseSolver()
    path = _path(spec, FOL_CKPT)
    if not path.exists():
        raise FileNotFoundError(f"FOL checkpoint {path} not found; run `mea train-fol` or pass --fol fem")
    return FolSolver(FolModel.from_checkpoint(Checkpoint.load(path)))


def _desk_subset(ds, samples, seed):
    import numpy as np
    if samples is None or samples >= len(ds):
        return ds
    order = np.random.default_rng([seed, 0x5A3]).permutation(len(ds))
    return ds.subset(np.sort(order[:samples]))


# -- subcommands -------------------------------------------------------------

def cmd_gen(args, st: Settings):
    from .io import write_dataset
    from .microgen import SweepConfig, generate_dataset, generate_test_suite
    from .pipeline import dataset_from_samples
    k_in = st.get("k_in", "data", 0.1)
    k_out = st.get("k_out", "data", 1.0)
    out = _path(args.out, "testsuite.mead" if args.test_suite else DATASET)
    if args.test_suite:
        samples = generate_test_suite(k_in, k_out)
        manifest = {"kind": "test-suite", "k_in": k_in, "k_out": k_out, "labels": [s.label for s in samples]}
        discarded = 0
    else:
        cfg = SweepConfig(k_in=k_in, k_out=k_out, rng_seed=st.get("seed", "data", 0),
                          limit=st.get("limit", "data", None, int))
        samples, discarded = generate_dataset(cfg, workers=st.get("workers", "data", 1))
        manifest = {"kind": "train", "sweep": cfg.to_dict(), "k_in": k_in, "k_out": k_out,
                    "seed": cfg.rng_seed, "discarded": discarded}
    ds = dataset_from_samples(samples, manifest)
    write_dataset(out, ds)
    print(f"wrote {len(ds)} samples ({discarded} discarded) to {out}")


def cmd_condense(args, st):
    from .fields import WINDOWS, build_stack, read_field, write_field
    src = Path(args.field)
    stack = build_stack(read_field(src), source_id=src.stem)
    out_dir = Path(args.out_dir) if args.out_dir else src.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    for n in WINDOWS:
        dest = out_dir / f"{src.stem}_{n}.meaf"
        write_field(dest, stack[n])
        print(f"{n:>3} -> {dest}")


def cmd_fem(args, st):
    import numpy as np
    from .fem import timed_solve
    from .fields import ScalarField, read_field, write_field
    from .io import write_dataset
    from .pipeline import label_dataset
    if args.field:
        k = read_field(args.field)
        T, secs = timed_solve(k)
        dest = Path(args.out) if args.out else Path(args.field).with_suffix(".T.meaf")
        write_field(dest, T)
        print(f"solved n={k.n} in {secs:.4f} s -> {dest}")
        return
    src = _path(args.input, DATASET)
    ds = _dataset_required(src)
    if args.timing and len(ds):
        _, secs = timed_solve(ScalarField(ds.k[0]))
        print(f"single fine solve: {secs:.4f} s (reference machine: 3.619 s)")
    labelled = label_dataset(ds, workers=st.get("workers", "data", 1))
    dest = Path(args.out) if args.out else src
    write_dataset(dest, labelled)
    print(f"labelled {len(labelled)} samples -> {dest} "
          f"(T range {np.nanmin(labelled.T):.4f}..{np.nanmax(labelled.T):.4f})")


def cmd_train_fol(args, st):
    from .fol import train_fol
    from .pipeline import condense_batch
    ds = _desk_subset(_dataset_required(_path(args.data, DATASET)),
                      st.get("samples", "fol", DESK_SAMPLES, int), st.get("seed", "fol", 0))
    seed = st.get("seed", "fol", 0)
    model, hist = train_fol(condense_batch(ds.k)[11], epochs=st.get("epochs", "fol", 400),
                            lr=st.get("lr", "fol", 1e-4), batch=st.get("batch", "fol", 50),
                            seed=seed, dataset_hash=ds.digest())
    out = _path(args.out, FOL_CKPT)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.checkpoint().save(out)
    print(f"fol: {len(ds)} fields, final val energy {hist.val_loss[-1]:.6f} -> {out}")


def cmd_train(args, st):
    from .models import TrainConfig, build_model, train_upscaler
    from .pipeline import make_pairs
    kind = args.model
    seed = st.get("seed", "train", 0)
    full = args.paper_scale
    samples = None if full else st.get("samples", "train", DESK_SAMPLES, int)
    ds = _dataset_required(_path(args.data, DATASET))
    ds = _desk_subset(ds, samples, seed)
    coarse = _coarse_solver(st.get("fol", "train", None, str), seed) if kind != "unet" else None
    pairs = make_pairs(ds, coarse)
    epochs = st.get("epochs", "train", FULL_EPOCHS if full else DESK_EPOCHS)
    batch_default = 100 if kind == "ffnn" else 50
    cfg = TrainConfig(lr=st.get("lr", "train", 1e-4), epochs=epochs,
                      batch=st.get("batch", "train", batch_default), seed=seed)
    model = build_model(kind, seed=seed, concat=st.get("concat", "train", 4))
    ckpt, hist = train_upscaler(model, pairs, cfg, dataset_hash=ds.digest())
    out = _path(args.out, f"{kind}.meac")
    out.parent.mkdir(parents=True, exist_ok=True)
    ckpt.save(out)
    hist_path = Path(args.history) if args.history else out.with_suffix(".csv")
    hist.to_csv(hist_path)
    print(f"{kind}: {model.num_params()} params, best val {min(hist.val_mse):.3e} "
          f"after {epochs} epochs -> {out} (history {hist_path})")


def _load_models(paths):
    from .nn.checkpoint import Checkpoint
    found = {}
    if paths:
        for spec in paths:
            p = Path(spec)
            ck = Checkpoint.load(p)
            found[ck.kind] = ck
    else:
        for kind in MODELS:
            p = data_dir() / f"{kind}.meac"
            if p.exists():
                found[kind] = Checkpoint.load(p)
    return found


def cmd_eval(args, st):
    from .evaluation import build_test_cases, evaluate_suite
    models = _load_models(args.ckpt)
    # the interpolation baseline always needs the coarse solve
    coarse = _coarse_solver(st.get("fol", "eval", None, str), 0)
    report = evaluate_suite(models, coarse, build_test_cases(), timing=st.get("timing", "eval", False, bool),
                            interp_order=st.get("order", "eval", 3),
                            meta={"fol": str(st.get("fol", "eval", FOL_CKPT, str)),
                                  "checkpoints": {k: v.meta.get("dataset_hash", "") for k, v in models.items()}})
    csv_path, txt_path = report.save(_path(args.out, "report"))
    print(report.to_csv(), end="")
    print(f"report -> {csv_path}, {txt_path}")


def cmd_bench(args, st):
    from .evaluation import benchmark, fem_benchmark
    from .microgen import generate_test_suite
    from .models import InterpUpscaler
    from .nn.network import Network
    k = generate_test_suite()[0].k101
    repeats = args.repeats
    coarse = _coarse_solver(st.get("fol", "eval", None, str), 0)
    pool = {"interp": InterpUpscaler(3)}
    pool.update({kind: Network.from_checkpoint(ck) for kind, ck in _load_models(args.ckpt).items()})
    fem_t = fem_benchmark(k, repeats)
    print(f"{'model':<8}{'inclusive_s':>14}{'upscale_s':>14}{'fem_ratio':>12}")
    for name, model in pool.items():
        inc = benchmark(model, k, repeats, coarse=coarse)
        exc = benchmark(model, k, repeats, inclusive=False, coarse=coarse)
        print(f"{name:<8}{inc:>14.6f}{exc:>14.6f}{fem_t / inc:>12.1f}")
    print(f"{'fem101':<8}{fem_t:>14.6f}")


def cmd_study(args, st):
    from .evaluation import run_study
    from .models import TrainConfig
    from .pipeline import make_pairs
    seed = st.get("seed", "train", 0)
    ds = _dataset_required(_path(args.data, DATASET))
    if args.kind != "datasize":
        ds = _desk_subset(ds, st.get("samples", "train", DESK_SAMPLES, int), seed)
    pairs = make_pairs(ds, _coarse_solver(st.get("fol", "train", None, str), seed))
    cfg = TrainConfig(lr=st.get("lr", "train", 1e-4), epochs=st.get("epochs", "train", DESK_EPOCHS),
                      batch=st.get("batch", "train", 50), seed=seed)
    values = [int(v) for v in args.values.split(",")] if args.values else None
    res = run_study(args.kind, pairs, cfg, values)
    paths = res.write_csv(_path(args.out_dir, "studies"))
    for label, v in res.final_val.items():
        print(f"{label:<12} final val mse {v:.4e}")
    print(f"{len(paths)} curves -> {paths[0].parent if paths else '-'}")


def cmd_plot(args, st):
    from .fields import read_field
    from .render import render_error_map, render_heatmap
    f = read_field(args.field)
    if args.truth:
        out = render_error_map(f, read_field(args.truth), args.out)
    else:
        out = render_heatmap(f, args.out)
    print(f"wrote {out}")


def cmd_cross_section(args, st):
    from .evaluation import cross_section
    from .fields import read_field
    f = read_field(args.field)
    vals = cross_section(f, args.axis, args.index)
    print("i,x,value")
    for i, v in enumerate(vals):
        print(f"{i},{i * f.h:.6g},{v:.9g}")


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mea", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="global seed (overrides config)")
    p.add_argument("--threads", type=int, default=None, help="BLAS thread count")
    p.add_argument("--deterministic", action="store_true", help="single-threaded, bitwise reproducible")
    p.add_argument("--config", default=None, help="INI file with [data] [fol] [train] [eval] sections")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate the microstructure dataset")
    g.add_argument("--out")
    g.add_argument("--limit", type=int)
    g.add_argument("--workers", type=int)
    g.add_argument("--k-in", dest="k_in", type=float)
    g.add_argument("--k-out", dest="k_out", type=float)
    g.add_argument("--test-suite", action="store_true", help="write the six out-of-distribution cases")

    c = sub.add_parser("condense", help="max-pool a 101 field (MEAF) to 51/26/13/11")
    c.add_argument("--field", required=True)
    c.add_argument("--out-dir", dest="out_dir")

    f = sub.add_parser("fem", help="fine FEM labels for a dataset, or a single MEAF field")
    f.add_argument("--in", dest="input")
    f.add_argument("--field")
    f.add_argument("--out")
    f.add_argument("--workers", type=int)
    f.add_argument("--timing", action="store_true")

    tf = sub.add_parser("train-fol", help="train the coarse operator network")
    tf.add_argument("--data")
    tf.add_argument("--epochs", type=int)
    tf.add_argument("--lr", type=float)
    tf.add_argument("--batch", type=int)
    tf.add_argument("--samples", type=int)
    tf.add_argument("--out")

    t = sub.add_parser("train", help="train an upscaler")
    t.add_argument("--model", required=True, choices=MODELS)
    t.add_argument("--data")
    t.add_argument("--fol", help="FOL checkpoint path or 'fem'")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--concat", type=int, choices=(1, 2, 3, 4))
    t.add_argument("--samples", type=int)
    t.add_argument("--paper-scale", dest="paper_scale", action="store_true",
                   help="train on every sample for 500 epochs instead of the desk-scale defaults")
    t.add_argument("--out")
    t.add_argument("--history")

    e = sub.add_parser("eval", help="six-case evaluation report")
    e.add_argument("--ckpt", nargs="*")
    e.add_argument("--fol")
    e.add_argument("--order", type=int, choices=(0, 1, 3))
    e.add_argument("--timing", action="store_true", default=None)
    e.add_argument("--out")

    b = sub.add_parser("bench", help="single-sample timings against one fine FEM solve")
    b.add_argument("--ckpt", nargs="*")
    b.add_argument("--fol")
    b.add_argument("--repeats", type=int, default=20)

    s = sub.add_parser("study", help="concat / batch / datasize studies")
    s.add_argument("--kind", required=True, choices=("concat", "batch", "datasize"))
    s.add_argument("--data")
    s.add_argument("--fol")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--samples", type=int)
    s.add_argument("--values", help="comma-separated override of the swept values")
    s.add_argument("--out-dir", dest="out_dir")

    pl = sub.add_parser("plot", help="PPM heatmap of a field, or error map with --truth")
    pl.add_argument("--field", required=True)
    pl.add_argument("--truth")
    pl.add_argument("--out", required=True)

    x = sub.add_parser("cross-section", help="print one row or column of a field")
    x.add_argument("--field", required=True)
    x.add_argument("--axis", choices=("row", "col"), default="row")
    x.add_argument("--index", type=int, required=True)
    return p


COMMANDS = {"gen": cmd_gen, "condense": cmd_condense, "fem": cmd_fem, "train-fol": cmd_train_fol,
            "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "study": cmd_study,
            "plot": cmd_plot, "cross-section": cmd_cross_section}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = 1 if args.deterministic else args.threads
    if threads is not None:
        if threads < 1:
            parser.error("--threads must be >= 1")
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .errors import MeaError
    try:
        st = Settings(args, _load_config(args.config))
        COMMANDS[args.command](args, st)
    except (MeaError, OSError) as exc:
        print(f"mea {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
