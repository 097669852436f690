"""Alternating training loop: regression step on the risk, then variational step on the VI objective."""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import metrics
from .circuit import Dataset, Example
from .diffcalc import Tensor, no_grad
from .losses import LossConfig, risk, risk_logic, vi_loss, vi_loss_logic
from .models import Arch, VacaModel, arch_header, read_tensor_file, scatter_latent, write_tensor_file
from .variational import GammaPrior, GaussianPrior, posterior_mean

XY_COLUMNS = (4, 5)


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 4
    lr: float = 1e-3
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    mode: str = "placement"  # or "logic_synthesis"
    patience: int = 10
    fused: bool = False
    arch_seed: int | None = None  # defaults to seed

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("need epochs >= 1, batch_size >= 1, lr > 0")
        if self.mode not in ("placement", "logic_synthesis"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def logic(self) -> bool:
        return self.mode == "logic_synthesis"

    def arch(self, b: int) -> Arch:
        return Arch(mode="logic" if self.logic else "placement", b=b, a=self.loss.a)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        loss = dict(d.pop("loss", {}) or {})
        if "gamma_prior" in loss and isinstance(loss["gamma_prior"], dict):
            loss["gamma_prior"] = GammaPrior(**loss["gamma_prior"])
        if "gaussian_prior" in loss and isinstance(loss["gaussian_prior"], dict):
            loss["gaussian_prior"] = GaussianPrior(**loss["gaussian_prior"])
        if d.get("mode") == "logic":
            d["mode"] = "logic_synthesis"
        return cls(loss=LossConfig(**loss), **d)


class Adam:
    def __init__(self, params: Sequence[tuple[str, Tensor]], lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for n, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            self.m[n] = self.b1 * self.m[n] + (1.0 - self.b1) * g
            self.v[n] = self.b2 * self.v[n] + (1.0 - self.b2) * g * g
            p.data -= self.lr * (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + self.eps)


@dataclass
class TrainState:
    cfg: TrainConfig
    model: VacaModel
    opt_theta: Adam
    opt_vi: Adam
    rng: np.random.Generator
    epoch: int = 0
    best_val: float = -math.inf
    bad_epochs: int = 0
    initial_losses: dict[str, float] = field(default_factory=dict)
    stopped_early: bool = False


def new_state(cfg: TrainConfig, b: int) -> TrainState:
    model = VacaModel(cfg.arch(b), seed=cfg.seed if cfg.arch_seed is None else cfg.arch_seed)
    groups = model.groups
    return TrainState(
        cfg=cfg,
        model=model,
        opt_theta=Adam(groups["theta"], cfg.lr),
        opt_vi=Adam(groups["vi"], cfg.lr),
        rng=np.random.default_rng(cfg.seed),
    )


def prepare(ex: Example, logic: bool) -> Example:
    """Logic-synthesis stage has no placement coordinates in the cell features."""
    if not logic:
        return ex
    feats = ex.topo.features.copy()
    feats[:, list(XY_COLUMNS)] = 0.0
    return dataclasses.replace(ex, topo=dataclasses.replace(ex.topo, features=feats))


# -- forward helpers -----------------------------------------------------------


def latent_grid(model: VacaModel, ex: Example) -> Tensor:
    """Posterior-mean latent features pooled onto the grid."""
    q_z = model.infer_gaussian_params(ex.topo.features, ex.topo.adjacency)
    return scatter_latent(q_z.mu, ex.cell_bins, ex.grid)


def predict(model: VacaModel, ex: Example) -> np.ndarray:
    with no_grad():
        z_grid = latent_grid(model, ex)
        if model.arch.mode == "logic":
            return model.predict_latent(z_grid).data.copy()
        return model.predict(ex.geom, z_grid).data.copy()


def _regression_forward(state: TrainState, batch: Sequence[Example], detach: bool = True) -> Tensor:
    model, cfg = state.model, state.cfg
    preds, Ms = [], []
    for ex in batch:
        if detach:
            with no_grad():
                z_grid = latent_grid(model, ex)
                M = None if cfg.logic or cfg.loss.lam == 0 else posterior_mean(model.infer_gamma_params(ex.geom, z_grid))
            z_grid, M = z_grid.detach(), None if M is None else M.detach()
        else:
            z_grid = latent_grid(model, ex)
            M = None if cfg.logic else posterior_mean(model.infer_gamma_params(ex.geom, z_grid))
        preds.append(model.predict_latent(z_grid) if cfg.logic else model.predict(ex.geom, z_grid))
        Ms.append(M)
    targets = [ex.target for ex in batch]
    if cfg.logic:
        return risk_logic(preds, targets)
    return risk(preds, targets, Ms, cfg.loss)


def _vi_forward(state: TrainState, batch: Sequence[Example], seed: int) -> Tensor:
    if state.cfg.logic:
        return vi_loss_logic(batch, state.model, state.cfg.loss, seed)
    return vi_loss(batch, state.model, state.cfg.loss, seed)


def _guard(state: TrainState, name: str, value: float) -> None:
    if not math.isfinite(value):
        raise TrainingDiverged(f"{name} became non-finite at epoch {state.epoch}")
    init = state.initial_losses.setdefault(name, abs(value))
    if init > 0 and abs(value) > 100.0 * init:
        raise TrainingDiverged(f"{name} grew above 100x its initial value ({value:.4g} vs {init:.4g})")


def step_regression(state: TrainState, batch: Sequence[Example]) -> float:
    """Step A: posterior-mean M (no gradient into the VI networks), update theta on the risk."""
    state.model.zero_grad()
    loss = _regression_forward(state, batch)
    _guard(state, "risk", loss.item())
    loss.backward()
    state.opt_theta.step()
    return loss.item()


def step_variational(state: TrainState, batch: Sequence[Example], seed: int) -> float:
    """Step B: update omega_1, omega_2 and eta on the VI objective."""
    state.model.zero_grad()
    loss = _vi_forward(state, batch, seed)
    _guard(state, "vi_loss", loss.item())
    loss.backward()
    state.opt_vi.step()
    return loss.item()


def step_fused(state: TrainState, batch: Sequence[Example], seed: int) -> tuple[float, float]:
    """Single backward through risk + VI objective; the risk also reaches omega_1 through M."""
    state.model.zero_grad()
    r = _regression_forward(state, batch, detach=False)
    v = _vi_forward(state, batch, seed)
    _guard(state, "risk", r.item())
    _guard(state, "vi_loss", v.item())
    (r + v).backward()
    state.opt_theta.step()
    state.opt_vi.step()
    return r.item(), v.item()


# -- evaluation --------------------------------------------------------------------


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None and math.isfinite(v)]
    return float(np.mean(vals)) if vals else None


def evaluate_predictions(examples: Sequence[Example], preds: Sequence[np.ndarray]) -> dict:
    """Per-design grid/cell metrics averaged over designs, plus MSE over all bins."""
    grid_rows = [metrics.report(metrics.grid_level(p, ex.target), "grid") for ex, p in zip(examples, preds)]
    cell_rows = [metrics.report(metrics.cell_level(p, ex.target, ex.cell_bins), "cell") for ex, p in zip(examples, preds)]
    record = {}
    for level, rows in (("grid", grid_rows), ("cell", cell_rows)):
        for m in ("pearson", "spearman", "kendall"):
            record[f"{m}_{level}"] = _mean(r[m] for r in rows)
    record["mse"] = float(np.mean([np.mean((p - ex.target) ** 2) for ex, p in zip(examples, preds)]))
    record["n_designs"] = len(examples)
    return record


def evaluate(model: VacaModel, examples: Sequence[Example], logic: bool = False) -> dict:
    examples = [prepare(ex, logic) for ex in examples]
    return evaluate_predictions(examples, [predict(model, ex) for ex in examples])


def evaluate_epoch(state: TrainState, dataset: Dataset, split: str = "val") -> dict:
    return evaluate(state.model, dataset.split(split), state.cfg.logic)


# -- main loop ---------------------------------------------------------------------


def run_epoch(state: TrainState, train: Sequence[Example]) -> tuple[float, float]:
    cfg = state.cfg
    order = state.rng.permutation(len(train))
    risks, vis = [], []
    for start in range(0, len(order), cfg.batch_size):
        batch = [train[i] for i in order[start : start + cfg.batch_size]]
        seed = int(state.rng.integers(2**31))
        if cfg.fused:
            r, v = step_fused(state, batch, seed)
        else:
            r = step_regression(state, batch)
            v = step_variational(state, batch, seed)
        risks.append(r)
        vis.append(v)
    state.epoch += 1
    return float(np.mean(risks)), float(np.mean(vis))


def train(
    dataset: Dataset,
    cfg: TrainConfig,
    state: TrainState | None = None,
    log: Callable[[dict], None] | None = None,
    until_epoch: int | None = None,
) -> TrainState:
    """Run epochs up to ``cfg.epochs`` (or ``until_epoch``), resuming ``state`` when given.

    Early stopping watches mean validation grid-level Spearman when a
    validation split exists.
    """
    train_set = [prepare(ex, cfg.logic) for ex in dataset.split("train")]
    if not train_set:
        raise ValueError("training split is empty")
    for ex in train_set:
        if ex.target is None:
            raise ValueError(f"training design {ex.name} has no target map")
    val_set = dataset.split("val")
    if state is None:
        state = new_state(cfg, train_set[0].topo.features.shape[1])
    last = cfg.epochs if until_epoch is None else min(until_epoch, cfg.epochs)

    while state.epoch < last and not state.stopped_early:
        t0 = time.perf_counter()
        r, v = run_epoch(state, train_set)
        rec = evaluate(state.model, val_set, cfg.logic) if val_set else {}
        entry = {
            "epoch": state.epoch,
            "risk": r,
            "vi_loss": v,
            "val_spearman_grid": rec.get("spearman_grid"),
            "val_pearson_grid": rec.get("pearson_grid"),
            "wall_ms": round(1000 * (time.perf_counter() - t0), 3),
        }
        score = rec.get("spearman_grid")
        if score is not None:
            if score > state.best_val:
                state.best_val, state.bad_epochs = score, 0
            else:
                state.bad_epochs += 1
                if state.bad_epochs >= cfg.patience:
                    state.stopped_early = True
        if log is not None:
            log(entry)
    return state


# -- checkpoints ---------------------------------------------------------------------


def _rng_state_json(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def save_checkpoint(state: TrainState, path) -> None:
    header = {
        "format": 1,
        "arch": arch_header(state.model.arch),
        "config": state.cfg.to_dict(),
        "epoch": state.epoch,
        "best_val": None if not math.isfinite(state.best_val) else state.best_val,
        "bad_epochs": state.bad_epochs,
        "stopped_early": state.stopped_early,
        "initial_losses": state.initial_losses,
        "rng": _rng_state_json(state.rng),
        "adam_t": {"theta": state.opt_theta.t, "vi": state.opt_vi.t},
    }
    tensors = dict(state.model.state_dict())
    for tag, opt in (("theta", state.opt_theta), ("vi", state.opt_vi)):
        for n, _ in opt.params:
            tensors[f"adam.{tag}.m.{n}"] = opt.m[n]
            tensors[f"adam.{tag}.v.{n}"] = opt.v[n]
    write_tensor_file(path, header, tensors)


def load_checkpoint(path, expect_arch: Arch | None = None) -> TrainState:
    header, tensors = read_tensor_file(path)
    arch = Arch(**header["arch"])
    if expect_arch is not None and expect_arch != arch:
        raise CheckpointError(f"architecture mismatch: checkpoint {arch} vs expected {expect_arch}")
    cfg = TrainConfig.from_dict(header["config"])
    state = new_state(cfg, arch.b)
    if state.model.arch != arch:
        raise CheckpointError(f"architecture header {arch} disagrees with config {state.model.arch}")
    try:
        state.model.load_state_dict(tensors)
    except (KeyError, ValueError) as err:
        raise CheckpointError(f"{path}: {err}") from err
    for tag, opt in (("theta", state.opt_theta), ("vi", state.opt_vi)):
        opt.t = header["adam_t"][tag]
        for n, p in opt.params:
            for kind, store in (("m", opt.m), ("v", opt.v)):
                arr = tensors.get(f"adam.{tag}.{kind}.{n}")
                if arr is None or arr.shape != p.shape:
                    raise CheckpointError(f"{path}: bad optimizer moment for {n}")
                store[n] = arr.copy()
    state.rng.bit_generator.state = header["rng"]
    state.epoch = header["epoch"]
    state.best_val = -math.inf if header["best_val"] is None else header["best_val"]
    state.bad_epochs = header["bad_epochs"]
    state.stopped_early = header["stopped_early"]
    state.initial_losses = dict(header["initial_losses"])
    return state


def write_log(path: Path):
    """Return a logger appending one JSON line per epoch to ``path``."""
    path = Path(path)

    def log(entry: dict) -> None:
        with path.open("a") as fh:
            fh.write(json.dumps(entry) + "\n")

    return log
