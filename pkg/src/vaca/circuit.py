"""Circuit and grid data model, feature rasterization and synthetic designs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CONGESTION_FLOOR = 1e-6
TOPO_WIDTH = 8
STAR_EXPANSION_THRESHOLD = 32
QUANTUM = 1.0 / 64.0  # synthetic coordinates are multiples of this, so text round-trips are exact


class BookshelfError(ValueError):
    pass


@dataclass(frozen=True)
class Cell:
    name: str
    width: float
    height: float
    is_macro: bool = False


@dataclass(frozen=True)
class Pin:
    cell: str
    dx: float  # offset from the cell's lower-left corner
    dy: float
    direction: str = "I"


@dataclass(frozen=True)
class Net:
    name: str
    pins: tuple[Pin, ...]


@dataclass(frozen=True)
class Netlist:
    cells: tuple[Cell, ...]
    nets: tuple[Net, ...]

    def __post_init__(self):
        names = {c.name for c in self.cells}
        if len(names) != len(self.cells):
            raise ValueError("duplicate cell names")
        for c in self.cells:
            if c.width <= 0 or c.height <= 0:
                raise ValueError(f"cell {c.name} has nonpositive dimensions")
        for net in self.nets:
            if len(net.pins) < 2:
                raise ValueError(f"net {net.name} has fewer than 2 pins")
            for p in net.pins:
                if p.cell not in names:
                    raise ValueError(f"net {net.name} references unknown cell {p.cell!r}")

    @property
    def index(self) -> dict[str, int]:
        return {c.name: i for i, c in enumerate(self.cells)}

    def degenerate_nets(self) -> list[str]:
        """Nets whose pins all sit on a single cell (allowed, but add no edges)."""
        return [n.name for n in self.nets if len({p.cell for p in n.pins}) < 2]


@dataclass(frozen=True)
class Placement:
    positions: dict[str, tuple[float, float]]
    die: tuple[float, float]

    def validate(self, netlist: Netlist) -> None:
        dw, dh = self.die
        for c in netlist.cells:
            if c.name not in self.positions:
                raise ValueError(f"cell {c.name} has no position")
            x, y = self.positions[c.name]
            if x < 0 or y < 0 or x + c.width > dw or y + c.height > dh:
                raise ValueError(f"cell {c.name} lies outside the die")


@dataclass(frozen=True)
class GridSpec:
    H: int
    W: int
    bin_w: float = 1.0
    bin_h: float = 1.0

    def __post_init__(self):
        if self.H < 1 or self.W < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.H}x{self.W}")
        if self.bin_w <= 0 or self.bin_h <= 0:
            raise ValueError("bin dimensions must be positive")

    @property
    def die(self) -> tuple[float, float]:
        return (self.W * self.bin_w, self.H * self.bin_h)

    def locate(self, x, y):
        """Row/column of the bin holding a point; boundary points go to the higher-index bin."""
        col = np.clip(np.floor(np.asarray(x) / self.bin_w).astype(int), 0, self.W - 1)
        row = np.clip(np.floor(np.asarray(y) / self.bin_h).astype(int), 0, self.H - 1)
        return row, col


@dataclass(frozen=True)
class TopoGraph:
    features: np.ndarray  # C x b
    adjacency: np.ndarray  # C x C, symmetric 0/1, zero diagonal

    @property
    def edges(self) -> list[tuple[int, int]]:
        j, k = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(j.tolist(), k.tolist()))


@dataclass
class Example:
    """One design: geometry channels, topology, target map and cell->bin lookup."""

    name: str
    grid: GridSpec
    geom: np.ndarray  # H x W x 3
    topo: TopoGraph
    cell_bins: np.ndarray  # C flat bin indices of cell centres
    target: np.ndarray | None = None  # H x W
    a: int = 1
    seed: int | None = None
    netlist: Netlist | None = None
    placement: Placement | None = None


@dataclass
class Dataset:
    examples: list[Example]
    splits: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if self.examples:
            g = self.examples[0].grid
            for ex in self.examples:
                if (ex.grid.H, ex.grid.W) != (g.H, g.W):
                    raise ValueError("all examples must share one grid")

    def split(self, name: str) -> list[Example]:
        return [self.examples[i] for i in self.splits.get(name, [])]


# -- Bookshelf subset ------------------------------------------------------------

_HEADER_KEYS = ("NumNodes", "NumTerminals", "NumNets", "NumPins")


def _content_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("UCLA") or line.split(":")[0].strip() in _HEADER_KEYS:
            continue
        yield lineno, line


def _num(tok: str, lineno: int, what: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise BookshelfError(f"line {lineno}: expected a number for {what}, got {tok!r}") from None


def parse_bookshelf(nodes_text: str, nets_text: str, pl_text: str) -> tuple[Netlist, Placement]:
    """Parse ``.nodes``/``.nets``/``.pl`` text into a netlist and a placement.

    Pin offsets in ``.nets`` are relative to the cell centre (Bookshelf
    convention) and are converted to lower-left-relative offsets.
    """
    cells = []
    for lineno, line in _content_lines(nodes_text):
        tok = line.split()
        if len(tok) not in (3, 4) or (len(tok) == 4 and tok[3] != "terminal"):
            raise BookshelfError(f"nodes line {lineno}: expected 'name width height [terminal]'")
        cells.append(Cell(tok[0], _num(tok[1], lineno, "width"), _num(tok[2], lineno, "height"), len(tok) == 4))
    by_name = {c.name: c for c in cells}

    nets = []
    lines = list(_content_lines(nets_text))
    i = 0
    while i < len(lines):
        lineno, line = lines[i]
        tok = line.replace(":", " : ").split()
        if len(tok) < 3 or tok[0] != "NetDegree" or tok[1] != ":":
            raise BookshelfError(f"nets line {lineno}: expected 'NetDegree : k [name]'")
        try:
            k = int(tok[2])
        except ValueError:
            raise BookshelfError(f"nets line {lineno}: bad net degree {tok[2]!r}") from None
        name = tok[3] if len(tok) > 3 else f"n{len(nets)}"
        pins = []
        for _ in range(k):
            i += 1
            if i >= len(lines):
                raise BookshelfError(f"nets line {lineno}: net {name} ends after {len(pins)} of {k} pins")
            plineno, pline = lines[i]
            ptok = pline.replace(":", " : ").split()
            if len(ptok) != 5 or ptok[2] != ":":
                raise BookshelfError(f"nets line {plineno}: expected 'cell I/O : dx dy'")
            cname = ptok[0]
            if cname not in by_name:
                raise BookshelfError(f"nets line {plineno}: dangling pin reference to unknown cell {cname!r}")
            c = by_name[cname]
            dx = _num(ptok[3], plineno, "dx") + c.width / 2
            dy = _num(ptok[4], plineno, "dy") + c.height / 2
            pins.append(Pin(cname, dx, dy, ptok[1]))
        if k < 2:
            raise BookshelfError(f"nets line {lineno}: net {name} has fewer than 2 pins")
        nets.append(Net(name, tuple(pins)))
        i += 1

    positions: dict[str, tuple[float, float]] = {}
    die_w = die_h = 0.0
    for lineno, line in _content_lines(pl_text):
        tok = line.split()
        if len(tok) < 3:
            raise BookshelfError(f"pl line {lineno}: expected 'name x y'")
        name = tok[0]
        if name not in by_name:
            raise BookshelfError(f"pl line {lineno}: unknown cell {name!r}")
        x, y = _num(tok[1], lineno, "x"), _num(tok[2], lineno, "y")
        positions[name] = (x, y)
        die_w = max(die_w, x + by_name[name].width)
        die_h = max(die_h, y + by_name[name].height)
    for c in cells:
        if c.name not in positions:
            raise BookshelfError(f"missing placement entry for cell {c.name!r}")

    die = _die_from_pl_header(pl_text) or (die_w, die_h)
    return Netlist(tuple(cells), tuple(nets)), Placement(positions, die)


def _die_from_pl_header(pl_text: str) -> tuple[float, float] | None:
    # serializer records the die as '# die W H'; absent in foreign files
    for raw in pl_text.splitlines():
        tok = raw.split()
        if len(tok) == 4 and tok[0] == "#" and tok[1] == "die":
            return (float(tok[2]), float(tok[3]))
    return None


def write_bookshelf(netlist: Netlist, placement: Placement) -> tuple[str, str, str]:
    """Serialize to (nodes_text, nets_text, pl_text)."""
    n_term = sum(c.is_macro for c in netlist.cells)
    nodes = ["UCLA nodes 1.0", f"NumNodes : {len(netlist.cells)}", f"NumTerminals : {n_term}"]
    for c in netlist.cells:
        nodes.append(f"{c.name} {c.width!r} {c.height!r}" + (" terminal" if c.is_macro else ""))

    by_name = {c.name: c for c in netlist.cells}
    n_pins = sum(len(n.pins) for n in netlist.nets)
    nets = ["UCLA nets 1.0", f"NumNets : {len(netlist.nets)}", f"NumPins : {n_pins}"]
    for net in netlist.nets:
        nets.append(f"NetDegree : {len(net.pins)} {net.name}")
        for p in net.pins:
            c = by_name[p.cell]
            nets.append(f"  {p.cell} {p.direction} : {p.dx - c.width / 2!r} {p.dy - c.height / 2!r}")

    pl = ["UCLA pl 1.0", f"# die {placement.die[0]!r} {placement.die[1]!r}"]
    for c in netlist.cells:
        x, y = placement.positions[c.name]
        pl.append(f"{c.name} {x!r} {y!r} : N")
    return "\n".join(nodes) + "\n", "\n".join(nets) + "\n", "\n".join(pl) + "\n"


# -- geometry channels -----------------------------------------------------------


def _pin_xy(netlist: Netlist, placement: Placement, net: Net) -> np.ndarray:
    pts = np.empty((len(net.pins), 2))
    for i, p in enumerate(net.pins):
        x, y = placement.positions[p.cell]
        pts[i] = (x + p.dx, y + p.dy)
    return pts


def _axis_overlap(lo: float, hi: float, n: int, step: float) -> np.ndarray:
    edges = np.arange(n + 1) * step
    return np.clip(np.minimum(hi, edges[1:]) - np.maximum(lo, edges[:-1]), 0.0, None)


def _rect_overlap(x0, y0, x1, y1, grid: GridSpec) -> np.ndarray:
    """H x W overlap area between a rectangle and each bin."""
    ox = _axis_overlap(x0, x1, grid.W, grid.bin_w)
    oy = _axis_overlap(y0, y1, grid.H, grid.bin_h)
    return np.outer(oy, ox)


def net_box(pts: np.ndarray, eps_box: float):
    """Bounding box and RUDY density of one net.

    Zero-extent sides are widened to ``eps_box`` about their centre and the
    density falls back to ``2 / max(w, h, eps_box)``.
    """
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    w, h = x1 - x0, y1 - y0
    if w > 0 and h > 0:
        return (x0, y0, x1, y1), (w + h) / (w * h)
    d = 2.0 / max(w, h, eps_box)
    if w <= 0:
        x0, x1 = x0 - eps_box / 2, x1 + eps_box / 2
    if h <= 0:
        y0, y1 = y0 - eps_box / 2, y1 + eps_box / 2
    return (x0, y0, x1, y1), d


def _eps_box(grid: GridSpec) -> float:
    return min(grid.bin_w, grid.bin_h)


def compute_rudy(netlist: Netlist, placement: Placement, grid: GridSpec) -> np.ndarray:
    out = np.zeros((grid.H, grid.W))
    eps = _eps_box(grid)
    for net in netlist.nets:
        box, d = net_box(_pin_xy(netlist, placement, net), eps)
        out += d * _rect_overlap(*box, grid)
    return out


def compute_pin_rudy(netlist: Netlist, placement: Placement, grid: GridSpec) -> np.ndarray:
    out = np.zeros((grid.H, grid.W))
    eps = _eps_box(grid)
    for net in netlist.nets:
        pts = _pin_xy(netlist, placement, net)
        _, d = net_box(pts, eps)
        rows, cols = grid.locate(pts[:, 0], pts[:, 1])
        np.add.at(out, (rows, cols), d)
    return out


def compute_macro_region(netlist: Netlist, placement: Placement, grid: GridSpec) -> np.ndarray:
    out = np.zeros((grid.H, grid.W))
    for c in netlist.cells:
        if c.is_macro:
            x, y = placement.positions[c.name]
            out += _rect_overlap(x, y, x + c.width, y + c.height, grid)
    return np.clip(out / (grid.bin_w * grid.bin_h), 0.0, 1.0)


def geom_features(netlist: Netlist, placement: Placement, grid: GridSpec) -> np.ndarray:
    return np.stack(
        [
            compute_rudy(netlist, placement, grid),
            compute_pin_rudy(netlist, placement, grid),
            compute_macro_region(netlist, placement, grid),
        ],
        axis=-1,
    )


# -- topology --------------------------------------------------------------------


def build_adjacency(netlist: Netlist) -> np.ndarray:
    idx = netlist.index
    A = np.zeros((len(netlist.cells), len(netlist.cells)), dtype=np.int8)
    for net in netlist.nets:
        members = list(dict.fromkeys(idx[p.cell] for p in net.pins))
        if len(net.pins) > STAR_EXPANSION_THRESHOLD:
            hub = members[0]
            for m in members[1:]:
                A[hub, m] = A[m, hub] = 1
        else:
            for i, u in enumerate(members):
                for v in members[i + 1 :]:
                    A[u, v] = A[v, u] = 1
    np.fill_diagonal(A, 0)
    return A


def build_topo_features(netlist: Netlist, placement: Placement | None = None, b: int = TOPO_WIDTH) -> TopoGraph:
    """Per-cell features [degree, pins, area, macro, x, y, 0, 0] and clique adjacency.

    x and y are cell centres divided by the die size, and are zero when no
    placement is given (logic-synthesis stage).
    """
    if b < 6:
        raise ValueError("topological feature width must be at least 6")
    A = build_adjacency(netlist)
    idx = netlist.index
    F = np.zeros((len(netlist.cells), b))
    F[:, 0] = A.sum(axis=1)
    for net in netlist.nets:
        for p in net.pins:
            F[idx[p.cell], 1] += 1
    for i, c in enumerate(netlist.cells):
        F[i, 2] = c.width * c.height
        F[i, 3] = float(c.is_macro)
        if placement is not None:
            x, y = placement.positions[c.name]
            F[i, 4] = (x + c.width / 2) / placement.die[0]
            F[i, 5] = (y + c.height / 2) / placement.die[1]
    return TopoGraph(F, A)


def cell_bins(netlist: Netlist, placement: Placement, grid: GridSpec) -> np.ndarray:
    """Flat (row-major) index of the bin containing each cell centre."""
    xs = np.array([placement.positions[c.name][0] + c.width / 2 for c in netlist.cells])
    ys = np.array([placement.positions[c.name][1] + c.height / 2 for c in netlist.cells])
    rows, cols = grid.locate(xs, ys)
    return (rows * grid.W + cols).astype(np.int64)


# -- synthetic designs -------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    H: int = 16
    W: int = 16
    C: int = 60
    nets: int = 90
    a: int = 1
    macro_fraction: float = 0.05
    clusters: int = 3
    locality: float = 0.2  # net neighbour scale, as a fraction of the die's larger side

    def __post_init__(self):
        if self.C < 2:
            raise ValueError("need at least 2 cells")
        if self.nets < 0:
            raise ValueError("net count must be nonnegative")
        GridSpec(self.H, self.W)


def _q(x):
    return np.round(np.asarray(x) / QUANTUM) * QUANTUM


def l_path_bins(r0: int, c0: int, r1: int, c1: int) -> list[tuple[int, int]]:
    """Bins on the horizontal-then-vertical path from (r0, c0) to (r1, c1), endpoints included."""
    step = 1 if c1 >= c0 else -1
    path = [(r0, c) for c in range(c0, c1 + step, step)]
    step = 1 if r1 >= r0 else -1
    path += [(r, c1) for r in range(r0 + step, r1 + step, step)]
    return path


def route_demand(netlist: Netlist, placement: Placement, grid: GridSpec) -> np.ndarray:
    """Two-bend routing oracle: every pin is L-routed to its net's first pin.

    A net contributes 1 to each bin touched by the union of its paths.
    """
    demand = np.zeros((grid.H, grid.W))
    for net in netlist.nets:
        pts = _pin_xy(netlist, placement, net)
        rows, cols = grid.locate(pts[:, 0], pts[:, 1])
        used = np.zeros((grid.H, grid.W), dtype=bool)
        for r, c in zip(rows[1:], cols[1:]):
            for rr, cc in l_path_bins(int(r), int(c), int(rows[0]), int(cols[0])):
                used[rr, cc] = True
        demand += used
    return demand


def synth_design(seed: int, spec: SynthSpec) -> tuple[Netlist, Placement, GridSpec]:
    rng = np.random.default_rng(seed)
    grid = GridSpec(spec.H, spec.W, 1.0, 1.0)
    die_w, die_h = grid.die

    n_macro = int(round(spec.macro_fraction * spec.C))
    cells = []
    for i in range(spec.C):
        if i < n_macro:
            w, h = _q(rng.uniform(1.5, 3.0, size=2))
            cells.append(Cell(f"m{i}", float(w), float(h), True))
        else:
            w, h = _q(rng.uniform(0.25, 0.75)), _q(rng.uniform(0.25, 0.5))
            cells.append(Cell(f"c{i}", float(w), float(h), False))

    centres = np.column_stack([rng.uniform(0.2, 0.8, spec.clusters) * die_w, rng.uniform(0.2, 0.8, spec.clusters) * die_h])
    spread = 0.12 * max(die_w, die_h)
    positions = {}
    xy = np.empty((spec.C, 2))
    for i, c in enumerate(cells):
        if rng.random() < 0.7:
            cx, cy = centres[rng.integers(spec.clusters)] + rng.normal(0.0, spread, 2)
        else:
            cx, cy = rng.uniform(0, die_w), rng.uniform(0, die_h)
        x = float(_q(np.clip(cx - c.width / 2, 0.0, die_w - c.width)))
        y = float(_q(np.clip(cy - c.height / 2, 0.0, die_h - c.height)))
        positions[c.name] = (x, y)
        xy[i] = (x + c.width / 2, y + c.height / 2)

    scale = spec.locality * max(die_w, die_h)
    nets = []
    for n in range(spec.nets):
        driver = int(rng.integers(spec.C))
        degree = min(spec.C, 2 + int(rng.geometric(0.45)) - 1)
        dist = np.hypot(*(xy - xy[driver]).T)
        weight = np.exp(-dist / scale)
        weight[driver] = 0.0
        others = rng.choice(spec.C, size=degree - 1, replace=False, p=weight / weight.sum())
        pins = []
        for ci in (driver, *others.tolist()):
            c = cells[ci]
            dx, dy = _q(rng.uniform(0, c.width)), _q(rng.uniform(0, c.height))
            pins.append(Pin(c.name, float(dx), float(dy), "O" if ci == driver else "I"))
        nets.append(Net(f"n{n}", tuple(pins)))

    netlist = Netlist(tuple(cells), tuple(nets))
    placement = Placement(positions, (die_w, die_h))
    placement.validate(netlist)
    return netlist, placement, grid


def build_example(
    name: str,
    netlist: Netlist,
    placement: Placement,
    grid: GridSpec,
    target: np.ndarray | None = None,
    a: int = 1,
    seed: int | None = None,
) -> Example:
    return Example(
        name=name,
        grid=grid,
        geom=geom_features(netlist, placement, grid),
        topo=build_topo_features(netlist, placement),
        cell_bins=cell_bins(netlist, placement, grid),
        target=None if target is None else np.maximum(np.asarray(target, float), CONGESTION_FLOOR),
        a=a,
        seed=seed,
        netlist=netlist,
        placement=placement,
    )


def synth_generate(seed: int, spec: SynthSpec = SynthSpec(), name: str | None = None) -> Example:
    """Random clustered design with a routed-demand congestion target; deterministic in ``seed``."""
    netlist, placement, grid = synth_design(seed, spec)
    target = route_demand(netlist, placement, grid) + CONGESTION_FLOOR
    ex = build_example(name or f"design_{seed}", netlist, placement, grid, None, spec.a, seed)
    ex.target = target
    return ex


def split_indices(n: int) -> dict[str, list[int]]:
    """70/15/15 split in index order."""
    n_train = int(round(0.7 * n))
    n_val = int(round(0.15 * n))
    n_train = max(1, min(n, n_train))
    n_val = min(n - n_train, n_val)
    return {
        "train": list(range(n_train)),
        "val": list(range(n_train, n_train + n_val)),
        "test": list(range(n_train + n_val, n)),
    }


def synth_dataset(n: int, spec: SynthSpec = SynthSpec(), seed: int = 0) -> Dataset:
    examples = [synth_generate(seed * 100_003 + i, spec, name=f"design_{i:03d}") for i in range(n)]
    return Dataset(examples, split_indices(n))


# -- dataset archive ---------------------------------------------------------------


def _write_f32(path: Path, arr: np.ndarray) -> None:
    path.write_bytes(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_f32(path: Path, shape: tuple) -> np.ndarray:
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {int(np.prod(shape))} floats, found {data.size}")
    return data.reshape(shape).astype(np.float64)


def write_example(directory: Path, ex: Example) -> None:
    """Write one design directory (geom/topo/adjacency/target/meta plus its Bookshelf files)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    C, b = ex.topo.features.shape
    _write_f32(d / "geom.f32", ex.geom)
    _write_f32(d / "topo_features.f32", ex.topo.features)
    (d / "adjacency.edges").write_text("".join(f"{j} {k}\n" for j, k in ex.topo.edges))
    if ex.target is not None:
        _write_f32(d / "target.f32", ex.target)
    meta = {
        "H": ex.grid.H,
        "W": ex.grid.W,
        "C": C,
        "b": b,
        "a": ex.a,
        "seed": ex.seed,
        "bin_w": ex.grid.bin_w,
        "bin_h": ex.grid.bin_h,
        "cell_bins": ex.cell_bins.tolist(),
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    if ex.netlist is not None and ex.placement is not None:
        nodes, nets, pl = write_bookshelf(ex.netlist, ex.placement)
        (d / "design.nodes").write_text(nodes)
        (d / "design.nets").write_text(nets)
        (d / "design.pl").write_text(pl)


def read_example(directory: Path) -> Example:
    d = Path(directory)
    if not (d / "meta.json").is_file():
        raise FileNotFoundError(f"{d}: not a design directory (no meta.json)")
    meta = json.loads((d / "meta.json").read_text())
    H, W, C, b = meta["H"], meta["W"], meta["C"], meta["b"]
    grid = GridSpec(H, W, meta.get("bin_w", 1.0), meta.get("bin_h", 1.0))
    A = np.zeros((C, C), dtype=np.int8)
    for line in (d / "adjacency.edges").read_text().splitlines():
        if line.strip():
            j, k = map(int, line.split())
            A[j, k] = A[k, j] = 1
    target = _read_f32(d / "target.f32", (H, W)) if (d / "target.f32").exists() else None
    netlist = placement = None
    if (d / "design.nodes").exists():
        netlist, placement = parse_bookshelf(
            (d / "design.nodes").read_text(), (d / "design.nets").read_text(), (d / "design.pl").read_text()
        )
    if "cell_bins" in meta:
        bins = np.asarray(meta["cell_bins"], dtype=np.int64)
    elif netlist is not None:
        bins = cell_bins(netlist, placement, grid)
    else:
        raise ValueError(f"{d}: cannot place cells on the grid (no cell_bins and no Bookshelf files)")
    return Example(
        name=d.name,
        grid=grid,
        geom=_read_f32(d / "geom.f32", (H, W, 3)),
        topo=TopoGraph(_read_f32(d / "topo_features.f32", (C, b)), A),
        cell_bins=bins,
        target=None if target is None else np.maximum(target, CONGESTION_FLOOR),
        a=meta.get("a", 1),
        seed=meta.get("seed"),
        netlist=netlist,
        placement=placement,
    )


def write_dataset(directory: Path, ds: Dataset) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for ex in ds.examples:
        write_example(d / ex.name, ex)
    names = {k: [ds.examples[i].name for i in v] for k, v in ds.splits.items()}
    (d / "splits.json").write_text(json.dumps(names, indent=1) + "\n")


def read_dataset(directory: Path) -> Dataset:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"data directory {d} does not exist")
    split_file = d / "splits.json"
    if split_file.exists():
        names = json.loads(split_file.read_text())
        order = [n for k in ("train", "val", "test") for n in names.get(k, [])]
    else:
        order = sorted(p.name for p in d.iterdir() if (p / "meta.json").is_file())
        names = {"train": order}
    if not order:
        raise ValueError(f"{d}: no design directories found")
    examples = [read_example(d / n) for n in order]
    pos = {n: i for i, n in enumerate(order)}
    return Dataset(examples, {k: [pos[n] for n in v] for k, v in names.items()})


def grid_autocorrelation(values: np.ndarray) -> float:
    """Mean Pearson correlation between each bin and each of its 4-neighbours."""
    pairs = [
        (values[:, :-1], values[:, 1:]),
        (values[:-1, :], values[1:, :]),
    ]
    rs = []
    for u, v in pairs:
        u, v = u.ravel(), v.ravel()
        if u.std() > 0 and v.std() > 0:
            rs.append(float(np.corrcoef(u, v)[0, 1]))
    return float(np.mean(rs)) if rs else math.nan
