"""Command-line entry point: gen, ingest, train, eval, predict, export."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import struct
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .circuit import (
    BookshelfError,
    Dataset,
    GridSpec,
    SynthSpec,
    build_example,
    parse_bookshelf,
    read_dataset,
    read_example,
    split_indices,
    synth_generate,
    write_dataset,
    write_example,
)
from .diffcalc import NonFiniteError
from .trainer import (
    CheckpointError,
    TrainConfig,
    TrainingDiverged,
    load_checkpoint,
    predict,
    prepare,
    save_checkpoint,
    train,
    write_log,
)

MAP_MAGIC = b"VACAMAP1"
DATASET_SEED_STRIDE = 100_003


class CliError(Exception):
    pass


# -- map files ---------------------------------------------------------------------


def write_map(path, values: np.ndarray) -> None:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("congestion map must be 2-D")
    H, W = values.shape
    data = MAP_MAGIC + struct.pack("<II", H, W) + np.ascontiguousarray(values, dtype="<f4").tobytes()
    _atomic_write(Path(path), data)


def read_map(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < 16 or buf[:8] != MAP_MAGIC:
        raise CliError(f"{path}: not a congestion map file")
    H, W = struct.unpack_from("<II", buf, 8)
    if len(buf) != 16 + 4 * H * W:
        raise CliError(f"{path}: expected {H}x{W} floats after the header")
    return np.frombuffer(buf, dtype="<f4", offset=16).reshape(H, W).astype(np.float64)


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


# -- run manifest ------------------------------------------------------------------


@dataclass
class RunManifest:
    command: list[str]
    config: dict
    seed: int
    git_describe: str
    started: str
    finished: str = ""
    outputs: dict[str, str] = field(default_factory=dict)

    def write(self, path: Path) -> None:
        _atomic_write(path, (json.dumps(asdict(self), indent=1, sort_keys=True) + "\n").encode())


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.TimeoutExpired):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


# -- argument helpers --------------------------------------------------------------


def parse_grid(text: str) -> tuple[int, int]:
    try:
        h, w = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise CliError(f"--grid must look like HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise CliError(f"--grid dimensions must be positive, got {text!r}")
    return h, w


def worker_count() -> int:
    raw = os.environ.get("VACA_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"VACA_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise CliError("VACA_THREADS must be >= 1")
    return n


def _load_dataset(path: str) -> Dataset:
    p = Path(path)
    if not p.is_dir():
        raise CliError(f"data directory {p} does not exist")
    return read_dataset(p)


# -- commands ----------------------------------------------------------------------


def _gen_one(args):
    seed, spec, name = args
    return synth_generate(seed, spec, name)


def cmd_gen(ns) -> int:
    H, W = parse_grid(ns.grid)
    if ns.designs < 1:
        raise CliError("--designs must be >= 1")
    try:
        spec = SynthSpec(H=H, W=W, C=ns.cells, nets=ns.nets)
    except ValueError as err:
        raise CliError(str(err)) from err
    jobs = [(ns.seed * DATASET_SEED_STRIDE + i, spec, f"design_{i:03d}") for i in range(ns.designs)]
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            examples = list(pool.map(_gen_one, jobs))
    else:
        examples = [_gen_one(j) for j in jobs]
    write_dataset(Path(ns.out), Dataset(examples, split_indices(len(examples))))
    print(f"wrote {len(examples)} designs to {ns.out}")
    return 0


def _find_one(d: Path, suffix: str) -> Path:
    found = sorted(d.glob(f"*{suffix}"))
    if len(found) != 1:
        raise CliError(f"{d}: expected exactly one {suffix} file, found {len(found)}")
    return found[0]


def cmd_ingest(ns) -> int:
    src = Path(ns.bookshelf)
    if not src.is_dir():
        raise CliError(f"{src} is not a directory")
    netlist, placement = parse_bookshelf(
        _find_one(src, ".nodes").read_text(), _find_one(src, ".nets").read_text(), _find_one(src, ".pl").read_text()
    )
    H, W = parse_grid(ns.grid)
    die_w, die_h = placement.die
    grid = GridSpec(H, W, die_w / W, die_h / H)
    target = None
    if ns.target:
        target = read_map(ns.target)
        if target.shape != (H, W):
            raise CliError(f"target map is {target.shape[0]}x{target.shape[1]}, grid is {H}x{W}")
    ex = build_example(Path(ns.out).name, netlist, placement, grid, target)
    write_example(Path(ns.out), ex)
    print(f"ingested {len(netlist.cells)} cells, {len(netlist.nets)} nets into {ns.out}")
    return 0


OVERRIDES = {
    "epochs": ("epochs", None),
    "batch_size": ("batch_size", None),
    "lr": ("lr", None),
    "seed": ("seed", None),
    "patience": ("patience", None),
    "lam": (None, "lam"),
    "tau": (None, "tau"),
}


def build_config(ns) -> TrainConfig:
    raw: dict = {}
    if ns.config:
        p = Path(ns.config)
        if not p.is_file():
            raise CliError(f"config file {p} does not exist")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as err:
            raise CliError(f"{p}: invalid JSON ({err})") from err
    raw = dict(raw)
    raw["loss"] = dict(raw.get("loss") or {})
    for flag, (top, loss_key) in OVERRIDES.items():
        value = getattr(ns, flag)
        if value is None:
            continue
        if top:
            raw[top] = value
        else:
            raw["loss"][loss_key] = value
    if ns.mode:
        raw["mode"] = ns.mode
    if ns.fused:
        raw["fused"] = True
    try:
        return TrainConfig.from_dict(raw)
    except (TypeError, ValueError) as err:
        raise CliError(f"bad training configuration: {err}") from err


def cmd_train(ns) -> int:
    started = _now()
    cfg = build_config(ns)
    dataset = _load_dataset(ns.data)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    log_path.unlink(missing_ok=True)
    state = train(dataset, cfg, log=write_log(log_path))
    ckpt = out / "model.ckpt"
    save_checkpoint(state, ckpt)
    manifest = RunManifest(
        command=["train", *sys.argv[2:]] if ns.argv is None else ns.argv,
        config=cfg.to_dict(),
        seed=cfg.seed,
        git_describe=git_describe(),
        started=started,
        finished=_now(),
        outputs={"checkpoint": str(ckpt), "log": str(log_path), "manifest": str(out / "manifest.json")},
    )
    manifest.write(out / "manifest.json")
    print(f"trained {state.epoch} epochs; checkpoint at {ckpt}")
    return 0


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def split_report(model, examples, logic: bool) -> list[dict]:
    """Grid- and cell-level records, each metric averaged over designs; n counts all pairs."""
    out = []
    prepared = [prepare(ex, logic) for ex in examples]
    preds = [predict(model, ex) for ex in prepared]
    for level in ("grid", "cell"):
        rows = []
        for ex, p in zip(prepared, preds):
            s = metrics.grid_level(p, ex.target) if level == "grid" else metrics.cell_level(p, ex.target, ex.cell_bins)
            rows.append(metrics.report(s, level))
        rec = {"level": level}
        for m in ("pearson", "spearman", "kendall"):
            vals = [r[m] for r in rows if math.isfinite(r[m])]
            rec[m] = float(np.mean(vals)) if vals else None
        rec["n"] = int(sum(r["n"] for r in rows))
        out.append({k: _json_safe(v) for k, v in rec.items()})
    return out


def _open_checkpoint(path: str):
    p = Path(path)
    if not p.is_file():
        raise CliError(f"checkpoint {p} does not exist")
    return load_checkpoint(p)


def cmd_eval(ns) -> int:
    state = _open_checkpoint(ns.ckpt)
    dataset = _load_dataset(ns.data)
    examples = dataset.split(ns.split)
    if not examples:
        raise CliError(f"split {ns.split!r} is empty")
    if any(ex.target is None for ex in examples):
        raise CliError(f"split {ns.split!r} has designs without target maps")
    print(json.dumps(split_report(state.model, examples, state.cfg.logic), indent=1))
    return 0


def cmd_predict(ns) -> int:
    state = _open_checkpoint(ns.ckpt)
    d = Path(ns.design)
    if not (d / "meta.json").is_file():
        raise CliError(f"{d} is not a design directory")
    ex = prepare(read_example(d), state.cfg.logic)
    if ex.topo.features.shape[1] != state.model.arch.b:
        raise CliError(f"design has {ex.topo.features.shape[1]} cell features, checkpoint expects {state.model.arch.b}")
    write_map(ns.out, predict(state.model, ex))
    print(f"wrote {ex.grid.H}x{ex.grid.W} map to {ns.out}")
    return 0


def grayscale(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.round(255.0 * (values - lo) / (hi - lo)).astype(np.uint8)


def cmd_export(ns) -> int:
    if not (ns.png or ns.csv):
        raise CliError("export needs --png and/or --csv")
    values = read_map(ns.map)
    if ns.png:
        from PIL import Image

        Image.fromarray(grayscale(values), mode="L").save(ns.png)
    if ns.csv:
        with open(ns.csv, "w", newline="") as fh:
            csv.writer(fh).writerows([[repr(float(v)) for v in row] for row in values])
    return 0


# -- parser ------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vaca", description="Congestion prediction with label-correlation enhancement.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--designs", type=int, default=28)
    g.add_argument("--grid", default="16x16")
    g.add_argument("--cells", type=int, default=60)
    g.add_argument("--nets", type=int, default=90)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gen)

    i = sub.add_parser("ingest", help="convert a Bookshelf design into a design directory")
    i.add_argument("--bookshelf", required=True, help="directory holding one .nodes, .nets and .pl file")
    i.add_argument("--grid", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--target", help="optional congestion map (.f32) to store as the label")
    i.set_defaults(fn=cmd_ingest)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--mode", choices=["placement", "logic"])
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--lam", type=float)
    t.add_argument("--tau", type=float)
    t.add_argument("--fused", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="print grid- and cell-level metrics for one split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=["train", "val", "test"])
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("predict", help="write a predicted congestion map")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--design", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_predict)

    x = sub.add_parser("export", help="render a map as PNG and/or CSV")
    x.add_argument("--map", required=True)
    x.add_argument("--png")
    x.add_argument("--csv")
    x.set_defaults(fn=cmd_export)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    ns.argv = None if argv is None else [*argv]
    try:
        return ns.fn(ns)
    except (
        CliError,
        BookshelfError,
        CheckpointError,
        TrainingDiverged,
        NonFiniteError,
        FileNotFoundError,
        ValueError,
        OSError,
    ) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
