"""Command-line entry point.

Subcommands: generate | train | eval | infer | integrate | plot.

Every subcommand echoes its fully resolved configuration (defaults
included) into the output directory as ``<command>_config.json`` before
doing any work. Human-readable messages go to stderr; with ``--json`` a
machine-readable result object is printed to stdout.

Exit codes:
    0  success
    1  unexpected failure
    2  malformed JSON input (message carries the line number)
    3  output directory cannot be created or written
    4  checkpoint unreadable or architecture mismatch
    5  empty or unusable loss log
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import checkpoint as ckpt_mod
from . import evaluator, formats, geometry, synthdata, trainer
from .photometry import decode_normals

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_BAD_JSON = 2
EXIT_BAD_OUTDIR = 3
EXIT_BAD_CKPT = 4
EXIT_EMPTY_LOG = 5


class _CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _say(msg):
    print(msg, file=sys.stderr)


def _read_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise _CliError(EXIT_FAIL, f"cannot read {path}: {exc}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise _CliError(EXIT_BAD_JSON,
                        f"{path}: JSON parse error at line {exc.lineno}: {exc.msg}")


def _prepare_outdir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise _CliError(EXIT_BAD_OUTDIR, f"output directory {out} is not writable: {exc}")
    return out


def _echo_config(outdir, command, resolved):
    doc = {"command": command, "version": __version__, "config": resolved}
    (outdir / f"{command}_config.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _emit(args, payload):
    if args.json:
        print(json.dumps(payload, sort_keys=True))


# -- subcommands -------------------------------------------------------------

def _cmd_generate(args):
    doc = _read_json(args.manifest)
    try:
        manifest = synthdata.DatasetManifest.from_json(json.dumps(doc))
    except (synthdata.DatasetError, ValueError, TypeError) as exc:
        raise _CliError(EXIT_BAD_JSON, f"bad manifest: {exc}")
    if args.seed is not None:
        manifest.seed = args.seed
    out = _prepare_outdir(args.out)
    _echo_config(out, "generate", json.loads(manifest.to_json()))
    report = synthdata.build_dataset(manifest, out)
    _say(f"wrote {sum(report['splits'].values())} samples to {out}")
    _emit(args, {"out": str(out), "report": report})
    return EXIT_OK


def _cmd_train(args):
    doc = _read_json(args.config)
    try:
        config = trainer.TrainConfig.from_dict(doc)
    except (trainer.ConfigError, TypeError) as exc:
        raise _CliError(EXIT_BAD_JSON, f"bad config: {exc}")
    if args.seed is not None:
        config.seed = args.seed
    out = _prepare_outdir(args.out)
    _echo_config(out, "train", config.to_dict())
    try:
        final = trainer.train(config, args.data, out, resume=args.resume,
                              quiet=args.json)
    except ckpt_mod.CheckpointError as exc:
        raise _CliError(EXIT_BAD_CKPT, str(exc))
    except (trainer.ConfigError, synthdata.DatasetError) as exc:
        raise _CliError(EXIT_FAIL, str(exc))
    _say(f"final checkpoint: {final}")
    _emit(args, {"checkpoint": str(final), "log": str(out / 'losses.jsonl')})
    return EXIT_OK


def _cmd_eval(args):
    out_path = Path(args.out)
    outdir = _prepare_outdir(out_path.parent)
    _echo_config(outdir, "eval", {"ckpt": str(args.ckpt), "data": str(args.data),
                                  "split": args.split, "sigma": args.sigma,
                                  "out": str(out_path)})
    try:
        report = evaluator.evaluate(args.ckpt, args.data, args.split,
                                    sigma=args.sigma, out_path=out_path)
    except ckpt_mod.CheckpointError as exc:
        raise _CliError(EXIT_BAD_CKPT, str(exc))
    _say(f"mean angular error {report['raw']['mean_angular_deg']:.2f} deg over "
         f"{report['images']} images; report at {out_path}")
    _emit(args, {"report": str(out_path),
                 "mean_angular_deg": report["raw"]["mean_angular_deg"]})
    return EXIT_OK


def _load_nir_any(path):
    p = Path(path)
    if p.suffix.lower() == ".pfm":
        values = formats.load_pfm(p).astype(np.float32)  # already in [-1,1]
    else:
        values = 2.0 * formats.load_nir_png(p) - 1.0
    if values.shape[0] < 16 or values.shape[1] < 16:
        raise _CliError(EXIT_FAIL, f"image {p} smaller than 16x16")
    return np.clip(values, -1.0, 1.0)


def _cmd_infer(args):
    prefix = Path(args.out)
    outdir = _prepare_outdir(prefix.parent if prefix.parent != Path("") else Path("."))
    _echo_config(outdir, "infer", {"ckpt": str(args.ckpt), "image": str(args.image),
                                   "out": str(prefix), "mesh": bool(args.mesh)})
    try:
        gen, _, _ = evaluator.load_generator(args.ckpt)
    except ckpt_mod.CheckpointError as exc:
        raise _CliError(EXIT_BAD_CKPT, str(exc))
    values = _load_nir_any(args.image)
    nmap = evaluator.infer_normals(gen, values)
    nrm_path = Path(str(prefix) + "_nrm.png")
    formats.save_normal_png(nrm_path, nmap.normals)
    result = {"normals": str(nrm_path)}
    if args.mesh:
        depth = geometry.integrate_normals(nmap)
        verts, vnorms, faces = geometry.mesh_from_depth(depth, scale=args.scale)
        obj_path = Path(str(prefix) + ".obj")
        formats.save_obj(obj_path, verts, vnorms, faces)
        result["mesh"] = str(obj_path)
    _say(f"estimated normals for {values.shape[1]}x{values.shape[0]} image "
         f"-> {nrm_path}")
    _emit(args, result)
    return EXIT_OK


def _cmd_integrate(args):
    prefix = Path(args.out)
    outdir = _prepare_outdir(prefix.parent if prefix.parent != Path("") else Path("."))
    _echo_config(outdir, "integrate", {"normals": str(args.normals),
                                       "out": str(prefix), "scale": args.scale})
    nmap = decode_normals(formats.load_normal_png(args.normals))
    depth = geometry.integrate_normals(nmap)
    pfm_path = Path(str(prefix) + "_depth.pfm")
    formats.save_pfm(pfm_path, depth.z.astype(np.float32))
    verts, vnorms, faces = geometry.mesh_from_depth(depth, scale=args.scale)
    obj_path = Path(str(prefix) + ".obj")
    formats.save_obj(obj_path, verts, vnorms, faces)
    _say(f"integrated {nmap.width}x{nmap.height} normal map -> {obj_path}")
    _emit(args, {"depth": str(pfm_path), "mesh": str(obj_path)})
    return EXIT_OK


_CURVES = ("d_loss", "g_bce", "l_p", "l_ang", "l_curl")


def _cmd_plot(args):
    log_path = Path(args.log)
    if not log_path.exists() or log_path.stat().st_size == 0:
        raise _CliError(EXIT_EMPTY_LOG, f"loss log {log_path} is missing or empty")
    rows, corrupt = [], 0
    with open(log_path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError:
                corrupt += 1
    if corrupt:
        _say(f"skipped {corrupt} corrupt log lines")
    if not rows:
        raise _CliError(EXIT_EMPTY_LOG, f"no usable entries in {log_path}")
    out_path = Path(args.out)
    outdir = _prepare_outdir(out_path.parent if out_path.parent != Path("") else Path("."))
    _echo_config(outdir, "plot", {"log": str(log_path), "out": str(out_path)})

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 5))
    iters = [r.get("iteration", i) for i, r in enumerate(rows)]
    for key in _CURVES:
        series = [(it, r[key]) for it, r in zip(iters, rows) if key in r]
        if not series:
            _say(f"warning: no '{key}' values in log; curve omitted")
            continue
        xs, ys = zip(*series)
        ax.plot(xs, ys, label=key, linewidth=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    _say(f"wrote {out_path}")
    _emit(args, {"plot": str(out_path), "entries": len(rows), "corrupt": corrupt})
    return EXIT_OK


# -- argument plumbing -------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(
        prog="nirshape",
        description="NIR shape-from-shading: data generation, adversarial "
                    "training, evaluation, inference, and reconstruction.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="build a synthetic dataset")
    p.add_argument("--manifest", required=True, help="manifest JSON path")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=None, help="override manifest seed")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="run the adversarial optimization")
    p.add_argument("--config", required=True, help="train config JSON path")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="compute metrics over a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--sigma", type=float, default=3.0, help="detail-map smoother")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("infer", help="estimate normals for one NIR image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True, help="16-bit PNG (raw) or PFM (normalized)")
    p.add_argument("--out", required=True, help="output prefix")
    p.add_argument("--mesh", action="store_true", help="also integrate and write OBJ")
    p.add_argument("--scale", type=float, default=1.0, help="mesh height scale")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("integrate", help="normal map PNG -> depth PFM + OBJ mesh")
    p.add_argument("--normals", required=True)
    p.add_argument("--out", required=True, help="output prefix")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_integrate)

    p = sub.add_parser("plot", help="render loss curves from losses.jsonl")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_plot)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _CliError as exc:
        _say(f"error: {exc}")
        return exc.code
    except Exception as exc:  # surface anything unexpected with a stable code
        _say(f"error: {exc}")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
