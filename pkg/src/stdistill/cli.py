"""Command-line entry point.

Subcommands: synth, train-teacher, distill, eval, bench, gradcheck. Each run
writes into a fresh directory under the output root (``--out``, else
``$STDISTILL_OUT``, else the config's ``[output] root``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import distill as dst
from .checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from .config import ConfigError, dump_config, load_config, parse_split
from .data import SynthConfig, load_traffic_csv, make_windows, synth_generate, write_traffic_csv
from .evalbench import bench_inference, compute_metrics, oversmoothing_score, speedup, summary_table
from .graph import load_adjacency_csv, write_adjacency_csv
from . import student as st
from . import teacher as tch

logger = logging.getLogger("stdistill")


class CommandError(RuntimeError):
    pass


# ---------------------------------------------------------------- plumbing

def make_run_dir(root, command: str) -> Path:
    """New run directory; never reuses an existing one."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    for i in range(10_000):
        path = root / (f"{command}-{stamp}" if i == 0 else f"{command}-{stamp}-{i}")
        try:
            path.mkdir()
            return path
        except FileExistsError:
            continue
    raise CommandError(f"could not allocate a run directory under {root}")


def teacher_cfg(cfg: dict) -> tch.TeacherConfig:
    t = cfg["teacher"]
    return tch.TeacherConfig(t["n_layers"], t["d"], t["kernel_size"], t["dropout"], t["slope"],
                             cfg["data"]["T"], cfg["data"]["H"])


def student_cfg(cfg: dict) -> st.StudentConfig:
    s = cfg["student"]
    return st.StudentConfig(s["n_layers"], cfg["teacher"]["d"], cfg["data"]["T"], cfg["data"]["H"],
                            s["conv_tail"], cfg["teacher"]["kernel_size"])


def distill_cfg(cfg: dict, epochs_key: str = "epochs") -> dst.DistillConfig:
    d = cfg["distill"]
    return dst.DistillConfig(d["tau_spatial"], d["tau_temporal"], d["lambda_kl"], d["lambda_cl"], d["lr"],
                             d[epochs_key], d["batch_size"], d["patience"], d["seed"], d["optimizer"],
                             d["kl_form"], d["freeze_teacher"])


def synth_cfg(cfg: dict) -> SynthConfig:
    return SynthConfig(seed=cfg["distill"]["seed"], **cfg["synth"])


def load_dataset(cfg: dict):
    """Traffic + graph from the configured files, or the synthetic generator."""
    data, gpath = cfg["data"], cfg["graph"]["adjacency_path"]
    if data["traffic_path"]:
        traffic = load_traffic_csv(data["traffic_path"], data["interval_minutes"])
        if not gpath:
            raise ConfigError("[graph] adjacency_path is required when [data] traffic_path is set")
        graph = load_adjacency_csv(gpath, traffic.n_nodes)
    else:
        traffic, graph = synth_generate(synth_cfg(cfg))
    return traffic, graph


def splits(cfg: dict, traffic):
    d = cfg["data"]
    return make_windows(traffic, d["T"], d["H"], parse_split(d["split"]), d["normalization"])


def load_model(path, cfg: dict):
    """Return ``(arch, params, model_cfg)`` after validating the manifest."""
    header, _ = read_checkpoint(path)
    arch = header["arch"]
    if arch == tch.ARCH:
        mcfg = teacher_cfg(cfg)
        _, params = load_checkpoint(path, arch, tch.manifest(mcfg))
    elif arch == st.ARCH:
        mcfg = student_cfg(cfg)
        _, params = load_checkpoint(path, arch, st.manifest(mcfg))
    else:
        raise CheckpointError(f"{path}: unknown architecture {arch!r}")
    return arch, params, mcfg


def _write_json(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands

def cmd_synth(cfg, run: Path, args) -> dict:
    traffic, graph = synth_generate(synth_cfg(cfg))
    write_traffic_csv(traffic, run / "traffic.csv")
    write_adjacency_csv(graph, run / "adjacency.csv")
    return {"traffic": str(run / "traffic.csv"), "adjacency": str(run / "adjacency.csv"),
            "n_nodes": traffic.n_nodes, "n_steps": traffic.n_steps, "n_edges": graph.n_edges}


def cmd_train_teacher(cfg, run: Path, args) -> dict:
    traffic, graph = load_dataset(cfg)
    train, val, _ = splits(cfg, traffic)
    tcfg = teacher_cfg(cfg)
    params, log = dst.train_teacher(train, val, graph.normalized_adjacency(), tcfg,
                                    distill_cfg(cfg, "teacher_epochs"))
    save_checkpoint(run / "teacher.ckpt", tch.ARCH, tcfg.to_dict(), params, tch.manifest(tcfg))
    dst.write_log(log, run / "train_log.jsonl")
    return {"checkpoint": str(run / "teacher.ckpt"), "epochs": len(log),
            "best_val_mae": min(r["val_mae"] for r in log)}


def cmd_distill(cfg, run: Path, args) -> dict:
    if not args.teacher:
        raise CommandError("distill needs --teacher <checkpoint>")
    tcfg, scfg = teacher_cfg(cfg), student_cfg(cfg)
    _, tparams = load_checkpoint(args.teacher, tch.ARCH, tch.manifest(tcfg))
    traffic, graph = load_dataset(cfg)
    train, val, _ = splits(cfg, traffic)
    dcfg = distill_cfg(cfg)
    use_teacher = dcfg.lambda_kl > 0 or dcfg.lambda_cl > 0
    params, log = dst.distill_train(train, val, scfg, dcfg,
                                    tparams if use_teacher else None, tcfg, graph.normalized_adjacency())
    save_checkpoint(run / "student.ckpt", st.ARCH, scfg.to_dict(), params, st.manifest(scfg))
    dst.write_log(log, run / "train_log.jsonl")
    result = {"checkpoint": str(run / "student.ckpt"), "epochs": len(log),
              "best_val_mae": min(r["val_mae"] for r in log)}
    if use_teacher and train.history.shape[1] > 1:
        report = dst.kl_gradient_report(params, scfg, tparams, tcfg, graph.normalized_adjacency(),
                                        val if len(val) else train, form=dcfg.kl_form)
        _write_json(report, run / "kl_gradient.json")
        result["kl_gradient"] = str(run / "kl_gradient.json")
    return result


def _predict(arch, params, mcfg, adj, data):
    if arch == tch.ARCH:
        return dst.predict_teacher(params, mcfg, adj, data)
    return dst.predict_student(params, mcfg, data)


def cmd_eval(cfg, run: Path, args) -> dict:
    if not args.ckpt:
        raise CommandError("eval needs --ckpt <checkpoint>")
    arch, params, mcfg = load_model(args.ckpt, cfg)
    traffic, graph = load_dataset(cfg)
    _, _, test = splits(cfg, traffic)
    if len(test) == 0:
        raise CommandError("test split holds no windows")
    adj = graph.normalized_adjacency()
    pred = _predict(arch, params, mcfg, adj, test)
    report = {"model": arch,
              "metrics": compute_metrics(pred, test.targets, cfg["bench"]["mape_floor"]).to_dict()}
    if arch == tch.ARCH:
        with ad.no_grad():
            act = tch.teacher_forward(test.history[:8], adj, params, mcfg, stats=(test.mu[:8], test.sigma[:8]))
        report["oversmoothing"] = oversmoothing_score(
            [np.swapaxes(h.data, 1, 2) for h in act.layers])
    _write_json(report, run / "metrics.json")
    return report


def _forward_fn(arch, params, mcfg, adj, dtype):
    params = {k: v.astype(dtype) for k, v in params.items()}
    if arch == tch.ARCH:
        return lambda x: tch.teacher_forward(x, adj, params, mcfg).pred_norm
    return lambda x: st.student_forward(x, params, mcfg).pred_norm


def cmd_bench(cfg, run: Path, args) -> dict:
    if not (args.teacher and args.student):
        raise CommandError("bench needs --teacher and --student checkpoints")
    b = cfg["bench"]
    dtype = np.float32 if b["precision"] == "float32" else np.float64
    traffic, graph = load_dataset(cfg)
    _, _, test = splits(cfg, traffic)
    if len(test) == 0:
        raise CommandError("test split holds no windows")
    adj64 = graph.normalized_adjacency()
    adj = graph.normalized_adjacency(sparse=True, dtype=dtype)
    batches = [x.history.astype(dtype) for x in test.batches(b["batch_size"])]
    rows, reports = [], {}
    for tag, path in (("teacher", args.teacher), ("student", args.student)):
        arch, params, mcfg = load_model(path, cfg)
        pred = _predict(arch, params, mcfg, adj64, test)
        m = compute_metrics(pred, test.targets, b["mape_floor"])
        lat = bench_inference(_forward_fn(arch, params, mcfg, adj, dtype), batches, tag,
                              b["warmup"], b["repeats"], b["precision"])
        reports[tag] = {"metrics": m.to_dict(), "latency": lat}
    s = speedup(reports["student"]["latency"], reports["teacher"]["latency"])
    reports["student"]["latency"].speedup = s
    reports["student"]["latency"].reference = "teacher"
    for tag in ("teacher", "student"):
        m, lat = reports[tag]["metrics"], reports[tag]["latency"]
        rows.append({"model": tag, "mae": m["mae"], "rmse": m["rmse"], "mape": m["mape"],
                     "inference_s": lat.total_s, "speedup": lat.speedup})
        reports[tag]["latency"] = lat.to_dict()
    table = summary_table(rows)
    print(table)
    report = {"reports": reports, "speedup": s,
              "protocol": {"warmup": b["warmup"], "repeats": b["repeats"], "batch_size": b["batch_size"],
                           "precision": b["precision"], "statistic": "median", "split": "test"}}
    _write_json(report, run / "bench.json")
    (run / "summary.txt").write_text(table + "\n")
    return {"speedup": s, "report": str(run / "bench.json")}


def cmd_gradcheck(cfg, run: Path, args) -> dict:
    from .gradcheck import REL_TOL, run_all
    worst = run_all(range(args.seeds))
    results = {k: {"max_rel_err": v, "pass": v < REL_TOL} for k, v in worst.items()}
    for k, v in results.items():
        print(f"{'PASS' if v['pass'] else 'FAIL'}  {k:<16} {v['max_rel_err']:.2e}")
    _write_json(results, run / "gradcheck.json")
    if not all(v["pass"] for v in results.values()):
        raise CommandError("gradient check failed: " + ", ".join(k for k, v in results.items() if not v["pass"]))
    return {"checked": len(results), "seeds": args.seeds}


COMMANDS = {
    "synth": cmd_synth,
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stdistill", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int, help="overrides [distill] seed")
    common.add_argument("--out", help="output root directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write synthetic traffic and adjacency CSVs")
    sub.add_parser("train-teacher", parents=[common], help="train the graph teacher")
    p = sub.add_parser("distill", parents=[common], help="distill a student from a teacher checkpoint")
    p.add_argument("--teacher", required=True)
    p = sub.add_parser("eval", parents=[common], help="test-split metrics for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p = sub.add_parser("bench", parents=[common], help="latency and accuracy of teacher vs student")
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", required=True)
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--seeds", type=int, default=20)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    run = None
    try:
        overrides = {"distill": {"seed": args.seed}} if args.seed is not None else None
        cfg = load_config(args.config, overrides)
        root = args.out or os.environ.get("STDISTILL_OUT") or cfg["output"]["root"]
        run = make_run_dir(root, args.command)
        dump_config(cfg, run / "config.ini")
        result = COMMANDS[args.command](cfg, run, args)
        _write_json({"command": args.command, "status": "ok", "result": result}, run / "result.json")
        print(json.dumps({"status": "ok", "run_dir": str(run), **result}, default=str))
        return 0
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        record = {"status": "error", "command": args.command, "error": type(exc).__name__, "message": str(exc)}
        if args.verbose:
            record["traceback"] = traceback.format_exc()
        if run is not None:
            _write_json(record, run / "error.json")
        print(json.dumps(record), file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1


if __name__ == "__main__":
    sys.exit(main())
