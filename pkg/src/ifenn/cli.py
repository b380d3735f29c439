"""``ifenn`` command line: generate, train, eval, ifenn, fem, stability, bench.

Each command writes into a fresh timestamped directory under ``--out``
holding ``config.ini`` (the full resolved configuration), ``log.txt`` and
the command's CSV/figure/VTK/checkpoint artifacts.  Exit codes: 0 ok,
2 usage or configuration, 3 numerical failure, 4 coupling protocol error.
"""
from __future__ import annotations

import argparse
import hashlib
import sys
import time
from datetime import datetime
from pathlib import Path

import numpy as np

from . import report
from .config import EXPERIMENTS, PROFILES, RunConfig, load_config
from .coupling import (
    IfennConfig,
    OraclePredictor,
    compare_vs_monolithic,
    monolithic_reference,
    predictor_for,
    run_ifenn,
    run_stability_study,
    write_error_vtk,
)
from .errors import ConfigError, IfennError, InvalidArgumentError, NotFoundError
from .fem import mechanics_step, monolithic_step, write_vtk
from .operatornet import load_model
from .training import (
    check_compatible,
    evaluate_testset,
    label_dataset,
    load_dataset,
    sample_load_cases,
    save_dataset,
    train,
)

BENCH_NOTE = "desk-scale: not comparable to full-scale 3D timings"
PERCENTILES = {"p10": 10, "median": 50, "p50": 50, "p90": 90}


class Run:
    """Output directory plus a tee'd log."""

    def __init__(self, out: Path, verb: str, cfg: RunConfig, quiet: bool = False):
        stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
        base = Path(out) / f"{verb}-{cfg.experiment}-{stamp}"
        path, k = base, 1
        while path.exists():
            path, k = base.with_name(f"{base.name}-{k}"), k + 1
        try:
            path.mkdir(parents=True)
        except OSError as exc:
            raise ConfigError(f"cannot create run directory {path}: {exc}") from None
        self.dir = path
        self.quiet = quiet
        (path / "config.ini").write_text(cfg.to_text())
        self._log = (path / "log.txt").open("w")

    def log(self, msg: str = ""):
        self._log.write(msg + "\n")
        self._log.flush()
        if not self.quiet:
            print(msg, flush=True)

    def close(self):
        self._log.close()


# ------------------------------------------------------------------ helpers

def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _case(cfg: RunConfig, setup, case_id: int):
    return sample_load_cases(setup.family, 1, cfg.seed, first_id=int(case_id))[0]


def _dataset_for(path, cfg: RunConfig, setup):
    ds = load_dataset(path)
    exp = ds.meta.get("experiment")
    if exp is not None and exp != cfg.experiment:
        raise ConfigError(f"dataset was generated for {exp!r}, config is {cfg.experiment!r}")
    if ds.coords.shape != setup.mesh.nodes.shape:
        raise ConfigError(f"dataset has N_n = {ds.coords.shape[0]} nodes, mesh has {setup.mesh.n_nodes}")
    if ds.times.size != setup.n_steps:
        raise ConfigError(f"dataset has N_t = {ds.times.size} steps, config has {setup.n_steps}")
    return ds


def _model_for(path, cfg: RunConfig, setup):
    model = load_model(path, bc=setup.bc if cfg["model"]["bc"] else None)
    if model.n_components == 1:
        predictor_for(model, setup)
    return model


def _resolve_case(choice: str, cfg, setup, ds, model, run: Run) -> int:
    """Integer case id, or a percentile name resolved on the test split."""
    choice = str(choice).strip()
    if choice.lstrip("-").isdigit():
        return int(choice)
    if choice not in PERCENTILES:
        raise ConfigError(f"case must be an integer id or one of {sorted(PERCENTILES)}, got {choice!r}")
    if ds is None or model is None:
        raise ConfigError(f"case {choice!r} needs --dataset and --checkpoint to rank the test cases")
    ev = evaluate_testset(model, ds)
    cid = ev.percentile_ids[PERCENTILES[choice]]
    run.log(f"case {choice} -> id {cid}")
    return int(cid)


# ------------------------------------------------------------------ commands

def cmd_generate(args, cfg: RunConfig, run: Run) -> int:
    setup = cfg.setup()
    d = cfg["data"]
    cases = sample_load_cases(setup.family, d["n_cases"], cfg.seed)
    t0 = time.perf_counter()
    ds, failed = label_dataset(setup, cases, n_test=d["n_test"], seed=cfg.seed,
                               with_displacement=d["with_displacement"], workers=cfg["run"]["threads"])
    path = save_dataset(ds, run.dir / "dataset.ifnd")
    counts = {k: int(v.size) for k, v in ds.split.items()}
    run.log(f"labelled {len(ds.case_ids)} of {len(cases)} cases in {time.perf_counter() - t0:.1f} s")
    run.log("splits " + " ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    run.log(f"dims N_cases N_t N_l N_s N_n N_c N_d = {' '.join(str(x) for x in ds.dims)}")
    run.log(f"dataset {path}")
    run.log(f"sha256 {_sha256(path)}")
    if failed:
        for cid, msg in sorted(failed.items()):
            run.log(f"case {cid} failed: {msg}")
        run.log(f"{len(failed)} case(s) failed: ids {sorted(failed)}")
        return 3
    return 0


def cmd_train(args, cfg: RunConfig, run: Run) -> int:
    setup = cfg.setup()
    ds = _dataset_for(args.dataset, cfg, setup)
    tr = cfg["train"]
    ds.fit_normalization(tr["normalization"])
    model = cfg.model(setup)
    check_compatible(model, ds)
    run.log(f"model parameters {model.parameter_count()}")
    every = max(1, tr["epochs"] // 20)

    def log(epoch, train_loss, val_loss, lr):
        if epoch % every == 0 or epoch == tr["epochs"] - 1:
            run.log(f"epoch {epoch:6d} train {train_loss:.6e} validation {val_loss:.6e} lr {lr:.3e}")

    rep = train(model, ds, tr["loss"], cfg.schedule(), tr["epochs"], tr["batch_size"], cfg.seed,
                checkpoint=run.dir / "model.ifnc", log=log)
    report.write_csv(run.dir / "losses.csv", ["epoch", "train", "validation", "lr"], rep.rows())
    report.loss_curves(rep, run.dir / "losses.png")
    run.log(f"best epoch {rep.best_epoch} validation {rep.best_validation:.6e} in {rep.seconds:.1f} s")
    run.log(f"checkpoint {rep.checkpoint}")
    return 0


def cmd_eval(args, cfg: RunConfig, run: Run) -> int:
    setup = cfg.setup()
    ds = _dataset_for(args.dataset, cfg, setup)
    model = _model_for(args.checkpoint, cfg, setup)
    ev = evaluate_testset(model, ds, args.split)
    report.write_csv(run.dir / "metrics.csv", ["kind", "case", "step", "component", "l2"],
                     report.metric_rows(ev.metrics, ev.case_ids))
    report.write_csv(run.dir / "case_errors.csv", ["case", "l2_lc"],
                     zip(ev.case_ids.tolist(), ev.case_errors.tolist()))
    report.error_histogram(ev.case_errors, run.dir / "histogram.png", ev.percentile_ids, ev.case_ids)
    for j, name in enumerate(ev.metrics.components):
        run.log(f"L2 all cases {name} {ev.metrics.l2_all[j]:.6e}")
    run.log("percentile cases " + " ".join(f"p{p}={cid}" for p, cid in sorted(ev.percentile_ids.items())))
    return 0


def cmd_ifenn(args, cfg: RunConfig, run: Run) -> int:
    setup = cfg.setup()
    choice = args.case if args.case is not None else cfg["ifenn"]["case"]
    if args.oracle_model:
        if args.checkpoint:
            raise ConfigError("give either --checkpoint or --oracle-model, not both")
        model, ds = None, None
    else:
        if not args.checkpoint:
            raise ConfigError("ifenn needs --checkpoint (or --oracle-model)")
        model = _model_for(args.checkpoint, cfg, setup)
        ds = _dataset_for(args.dataset, cfg, setup) if args.dataset else None
    cid = _resolve_case(choice, cfg, setup, ds, model, run)
    case = _case(cfg, setup, cid)
    ref = monolithic_reference(setup, case)
    predictor = OraclePredictor(ref, setup.z_reference) if model is None else predictor_for(model, setup)
    res = run_ifenn(IfennConfig(setup, case, predictor, transport=cfg["ifenn"]["transport"],
                                channel_dir=run.dir / "channel"))
    rep = compare_vs_monolithic(res.states, ref, setup.z_reference)
    report.write_csv(run.dir / "errors.csv", ["case", "step", "component", "l2_t"], rep.step_rows([cid]))
    report.write_csv(run.dir / "steps.csv", ["step", "seconds", "residual", "system_dim", "input_length"],
                     zip(range(1, len(res.residuals) + 1), res.step_seconds, res.residuals, res.system_dims,
                         res.input_lengths))
    report.step_errors(rep, run.dir / "errors.png", title=f"case {cid}")
    n = len(res.states) - 1
    final = res.states[-1]
    fields = {"z_label": final.z - setup.z_reference, "strain_trace": final.strain_trace}
    fields.update({f"u{'xyz'[i]}": final.u[:, i] for i in range(setup.mesh.dim)})
    write_vtk(run.dir / "ifenn_final.vtk", setup.mesh, fields, title=f"hybrid step {n}")
    write_error_vtk(run.dir / "error_final.vtk", setup.mesh, rep, n)
    diff = max(float(np.abs(a.u - b.u).max() / max(np.abs(b.u).max(), 1e-300)) for a, b in zip(res.states[1:], ref[1:]))
    run.log(f"case {cid}: {n} steps, {res.exchanges} exchanges, max residual {max(res.residuals):.2e}")
    run.log(f"max nodal relative displacement difference vs monolithic {diff:.3e}")
    for j, name in enumerate(rep.components):
        run.log(f"L2 over steps {name} {rep.l2_lc[0, j]:.6e}")
    return 0


def cmd_fem(args, cfg: RunConfig, run: Run) -> int:
    setup = cfg.setup()
    cid = int(args.case if args.case is not None else 0)
    case = _case(cfg, setup, cid)
    states = monolithic_reference(setup, case)
    zr = setup.z_reference
    rows = [(s.step, s.time, float(np.abs(s.z - zr).max()), float(np.abs(s.u).max()),
             float(np.abs(s.strain_trace).max())) for s in states]
    report.write_csv(run.dir / "steps.csv", ["step", "time", "max_abs_z_label", "max_abs_u", "max_abs_strain_trace"],
                     rows)
    final = states[-1]
    fields = {"z_label": final.z - zr, "strain_trace": final.strain_trace}
    fields.update({f"u{'xyz'[i]}": final.u[:, i] for i in range(setup.mesh.dim)})
    path = write_vtk(run.dir / "fem_final.vtk", setup.mesh, fields, title=f"monolithic step {final.step}")
    run.log(f"case {cid}: {len(states) - 1} steps, final max |z - z_ref| {rows[-1][2]:.6e}, "
            f"max |u| {rows[-1][3]:.6e}")
    run.log(f"fields {path}")
    return 0


def cmd_stability(args, cfg: RunConfig, run: Run) -> int:
    setup = cfg.setup()
    if not args.checkpoint:
        raise ConfigError("stability needs at least one --checkpoint")
    models = [_model_for(p, cfg, setup) for p in args.checkpoint]
    labels = args.label or [Path(p).parent.name for p in args.checkpoint]
    if len(labels) != len(models):
        raise ConfigError("give one --label per --checkpoint")
    ds = _dataset_for(args.dataset, cfg, setup) if args.dataset else None
    st = cfg["stability"]
    cid = _resolve_case(args.case if args.case is not None else st["case"], cfg, setup, ds, models[0], run)
    case = _case(cfg, setup, cid)
    ref = monolithic_reference(setup, case)
    curves, rows = {}, []
    for label, model in zip(labels, models):
        res = run_stability_study(setup, case, predictor_for(model, setup), ref, st["switch_field"],
                                  st["switch_strain"])
        curves[label] = (res.z_error, res.strain_error)
        rows += [(label, k + 1, float(z), float(s)) for k, (z, s) in enumerate(zip(res.z_error, res.strain_error))]
        ratio = stability_ratio(res.z_error, st["switch_field"])
        run.log(f"{label}: final-third max / teacher-forced mean of the coupled-field error = {ratio:.3f}")
    report.write_csv(run.dir / "stability.csv", ["model", "step", "z_error", "strain_error"], rows)
    report.stability_curves(curves, st["switch_field"], st["switch_strain"], run.dir / "stability.png")
    return 0


def stability_ratio(z_error: np.ndarray, switch_field: int) -> float:
    """Largest coupled-field error over the final third of steps relative to its mean
    over the teacher-forced steps ``1..switch_field``."""
    z_error = np.asarray(z_error, dtype=float)
    n = z_error.size
    if not 1 <= switch_field < n:
        raise InvalidArgumentError("need at least one teacher-forced and one free step")
    tail = z_error[n - max(1, n // 3):]
    return float(tail.max() / z_error[:switch_field].mean())


def bench_setups(cfg: RunConfig):
    """The configured mesh and the refined ``bench.size`` mesh of the same experiment."""
    size = cfg["bench"]["size"]
    refined = RunConfig(cfg.experiment, cfg.profile, {s: dict(v) for s, v in cfg.values.items()})
    if cfg.experiment == "cube":
        refined.values["geometry"]["nodes_per_axis"] = size
    else:
        refined.values["geometry"]["divisions"] = (size - 1, size - 1)
    refined.values["time"]["n_steps"] = cfg["bench"]["steps"]
    return [cfg.setup(), refined.setup()]


def cmd_bench(args, cfg: RunConfig, run: Run) -> int:
    rows, labels, mono_s, mech_s = [], [], [], []
    for setup in bench_setups(cfg):
        case = _case(cfg, setup, 0)
        loads = setup.loads_for(case)
        mech = loads.mechanical_only()
        state = setup.initial_state(loads)
        tm, tf = [], []
        steps = min(setup.n_steps, cfg["bench"]["steps"])
        for _ in range(steps):
            t0 = time.perf_counter()
            nxt, sys_m, _ = monolithic_step(setup.mesh, setup.material, state, loads, setup.dt)
            tm.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            _, sys_f, _ = mechanics_step(setup.mesh, setup.material, state, nxt.z, mech, setup.dt)
            tf.append(time.perf_counter() - t0)
            state = nxt
        label = "x".join(str(d + 1) for d in setup.mesh.divisions)
        ratio = sys_f.dimension / sys_m.dimension
        rows.append((label, setup.mesh.n_nodes, sys_m.dimension, sys_f.dimension, ratio,
                     float(np.mean(tm)), float(np.mean(tf)), BENCH_NOTE))
        labels.append(label)
        mono_s.append(float(np.mean(tm)))
        mech_s.append(float(np.mean(tf)))
        run.log(f"{label}: monolithic {sys_m.dimension} dofs {np.mean(tm) * 1e3:.1f} ms/step, "
                f"mechanics only {sys_f.dimension} dofs {np.mean(tf) * 1e3:.1f} ms/step, dof ratio {ratio:.6f}")
    report.write_csv(run.dir / "bench.csv", ["mesh", "nodes", "monolithic_dofs", "mechanics_dofs", "dof_ratio",
                                             "monolithic_s_per_step", "mechanics_s_per_step", "note"], rows)
    report.bench_chart(labels, mono_s, mech_s, run.dir / "bench.png", BENCH_NOTE)
    run.log(BENCH_NOTE)
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "ifenn": cmd_ifenn,
            "fem": cmd_fem, "stability": cmd_stability, "bench": cmd_bench}


# ------------------------------------------------------------------ argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="config file ([section] key = value)")
    common.add_argument("--experiment", choices=EXPERIMENTS, help="preset (default cube)")
    common.add_argument("--profile", choices=PROFILES, help="desk (default) or full-scale values")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
    common.add_argument("--seed", type=int, help="shorthand for --set run.seed=N")
    common.add_argument("--threads", type=int, help="worker threads for case labelling")
    common.add_argument("--out", type=Path, default=Path("runs"), help="parent directory for run folders")
    common.add_argument("--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="ifenn", description="Hybrid FEM / operator-network toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="sample load cases and label them with the monolithic solver")
    t = sub.add_parser("train", parents=[common], help="train the operator network on a dataset")
    t.add_argument("--dataset", type=Path, required=True)
    e = sub.add_parser("eval", parents=[common], help="test-split metrics and percentile cases")
    e.add_argument("--dataset", type=Path, required=True)
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--split", default="test")
    i = sub.add_parser("ifenn", parents=[common], help="hybrid run against the monolithic reference")
    i.add_argument("--checkpoint", type=Path)
    i.add_argument("--dataset", type=Path, help="needed when the case is a percentile name")
    i.add_argument("--oracle-model", action="store_true", help="feed the monolithic field instead of a network")
    i.add_argument("--case", help="case id or p10/median/p90")
    f = sub.add_parser("fem", parents=[common], help="monolithic transient for one case")
    f.add_argument("--case", type=int)
    s = sub.add_parser("stability", parents=[common], help="teacher-forcing stability harness")
    s.add_argument("--checkpoint", type=Path, action="append")
    s.add_argument("--label", action="append")
    s.add_argument("--dataset", type=Path)
    s.add_argument("--case")
    sub.add_parser("bench", parents=[common], help="per-step cost of monolithic vs mechanics-only solves")
    return p


def _check_inputs(args):
    for name in ("dataset", "checkpoint"):
        val = getattr(args, name, None)
        for path in (val if isinstance(val, list) else [val]):
            if path is not None and not Path(path).exists():
                raise NotFoundError(f"{name} {path} does not exist")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    run = None
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"run.seed={args.seed}")
        if args.threads is not None:
            overrides.append(f"run.threads={args.threads}")
        cfg = load_config(args.config, args.experiment, args.profile, overrides)
        _check_inputs(args)
        run = Run(args.out, args.command, cfg, args.quiet)
        run.log(f"run directory {run.dir}")
        return COMMANDS[args.command](args, cfg, run)
    except IfennError as exc:
        msg = f"error: {exc}"
        if run is not None:
            run.quiet = True
            run.log(msg)
        print(msg, file=sys.stderr)
        return exc.exit_code
    finally:
        if run is not None:
            run.close()


if __name__ == "__main__":
    sys.exit(main())
