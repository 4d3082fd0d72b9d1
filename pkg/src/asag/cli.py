"""Command-line harness: ``train | sample | eval | plan | sweep``.

Settings come from built-in defaults, then a flat JSON ``--config`` file, then
flags (flags win).  Every command is a pure function of the resolved
settings, its input files and the seed, and writes UTF-8 text with ``\\n``
newlines plus little-endian binary tensors for checkpoints.

Exit codes: 0 success, 1 usage error, 2 input or parse error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import DATASETS, get_dataset
from .diffusion import make_schedule
from .errors import ContractError, DimensionError, InputError, ParseError, TrainingDivergence
from .guidance import METHODS, GuidanceSpec, asag_sample, default_scale, scale_sweep
from .metrics import MetricReport, energy_distance, mode_coverage
from .model import ModelConfig, init_params, train
from .sinkhorn import CostMatrix, SinkhornConfig, plan_entropy, sinkhorn_log_domain
from .tensor import Rng

# substream indices under Rng(seed)
DATA_STREAM, INIT_STREAM, TRAIN_STREAM, SAMPLE_STREAM, REFERENCE_STREAM = 1, 2, 3, 4, 5


@dataclass
class RunConfig:
    dataset: str = "gauss8"
    num_sets: int = 2048
    n_points: int = 16
    conditional: bool = True
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 4
    d_ff: int = 128
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    epochs: int = 100
    lr: float = 0.05
    batch_size: int = 64
    p_drop: float = 0.1
    method: str = "asag"
    s: float | None = None
    cfg_scale: float | None = None
    layers: list[int] = field(default_factory=lambda: [1, 2])
    lam: float | None = None
    eps_max: float = 1e-3
    max_iters: int = 50
    blur_sigma: float = 16.0
    composition: str = "sequential"
    steps: int = 25
    chains: int = 32
    class_label: int | None = None
    reference_size: int = 4000
    radius: float | None = None
    scales: list[float] = field(default_factory=lambda: [0.0, 0.5, 1.0, 1.5, 2.0, 3.0])
    seed: int = 0
    out: str = "out"

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise InputError(f"unknown dataset {self.dataset!r}")
        if self.method not in METHODS:
            raise InputError(f"unknown method {self.method!r}")
        for name in ("num_sets", "n_points", "epochs", "batch_size", "steps", "chains", "reference_size"):
            if getattr(self, name) < (0 if name == "epochs" else 1):
                raise InputError(f"{name} must be positive")

    def model_config(self) -> ModelConfig:
        ds = get_dataset(self.dataset)
        return ModelConfig(num_classes=ds.num_classes if self.conditional else 0, d_model=self.d_model,
                           n_heads=self.n_heads, n_layers=self.n_layers, d_ff=self.d_ff)

    def guidance(self) -> GuidanceSpec:
        return GuidanceSpec(method=self.method, s=self.scale(), cfg_scale=self.cfg_scale, layers=tuple(self.layers),
                            lam=self.lam, eps_max=self.eps_max, max_iters=self.max_iters,
                            blur_sigma=self.blur_sigma, composition=self.composition)

    def scale(self) -> float:
        return default_scale(self.method) if self.s is None else self.s

    def schedule(self):
        return make_schedule(self.T, self.beta_start, self.beta_end)

    def config_hash(self) -> str:
        d = dataclasses.asdict(self)
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def meta_line(self, **extra) -> str:
        items = {"config_hash": self.config_hash(), "seed": self.seed, **extra}
        return "# " + " ".join(f"{k}={v}" for k, v in items.items()) + "\n"


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value):
    """Convert a JSON or flag value to the field's type."""
    ftype = str(FIELDS[name].type)
    nullable = "None" in ftype
    if value is None or (nullable and isinstance(value, str) and value.lower() in ("none", "null")):
        if not nullable:
            raise InputError(f"{name} cannot be null")
        return None
    try:
        if ftype.startswith("list"):
            items = value.split(",") if isinstance(value, str) else list(value)
            conv = int if "int" in ftype else float
            return [conv(v) for v in items if str(v).strip() != ""]
        if ftype.startswith("bool"):
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(value)
                return value.lower() in ("true", "1")
            return bool(value)
        if ftype.startswith("int"):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if ftype.startswith("float"):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise InputError(f"invalid value for {name}: {value!r}") from None


def resolve_config(config_path: str | None = None, overrides: dict | None = None) -> RunConfig:
    values: dict = {}
    if config_path:
        path = Path(config_path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise InputError(f"cannot read config {path}: {e.strerror}") from None
        except json.JSONDecodeError as e:
            raise ParseError(path, e.lineno, f"invalid JSON: {e.msg}") from None
        if not isinstance(raw, dict):
            raise ParseError(path, 1, "config must be a flat JSON object")
        for k, v in raw.items():
            if k not in FIELDS:
                raise InputError(f"{path}: unknown config key {k!r}")
            values[k] = _coerce(k, v)
    for k, v in (overrides or {}).items():
        values[k] = _coerce(k, v)
    return RunConfig(**values)


# file formats ----------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_samples(path: Path, x0: np.ndarray, cfg: RunConfig) -> None:
    lines = [cfg.meta_line(method=cfg.method, s=cfg.scale(), steps=cfg.steps), "chain_id,token_id,x,y\n"]
    for ch in range(x0.shape[0]):
        for tok in range(x0.shape[1]):
            lines.append(f"{ch},{tok},{_fmt(x0[ch, tok, 0])},{_fmt(x0[ch, tok, 1])}\n")
    path.write_text("".join(lines), encoding="utf-8")


def read_samples(path) -> np.ndarray:
    """Parse a samples CSV into an ``[N, 2]`` array."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot read samples {path}: {e.strerror}") from None
    header_seen = False
    pts = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        if not header_seen:
            if line.strip() != "chain_id,token_id,x,y":
                raise ParseError(path, lineno, "expected header chain_id,token_id,x,y")
            header_seen = True
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise ParseError(path, lineno, f"expected 4 fields, found {len(parts)}")
        try:
            int(parts[0]), int(parts[1])
            x, y = float(parts[2]), float(parts[3])
        except ValueError:
            raise ParseError(path, lineno, "non-numeric field") from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ParseError(path, lineno, "non-finite coordinate")
        pts.append((x, y))
    if not pts:
        raise InputError(f"{path}: no samples")
    return np.array(pts)


def read_matrix(path) -> np.ndarray:
    """Numeric CSV matrix; ``#`` lines are comments."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror}") from None
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            row = [float(v) for v in line.split(",")]
        except ValueError:
            raise ParseError(path, lineno, "non-numeric field") from None
        if rows and len(row) != len(rows[0]):
            raise ParseError(path, lineno, f"expected {len(rows[0])} columns, found {len(row)}")
        rows.append(row)
    if not rows:
        raise InputError(f"{path}: empty matrix")
    return np.array(rows)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise InputError(f"cannot create output directory {out}: {e.strerror}") from None
    return out


# commands ----------------------------------------------------------------------

def cmd_train(cfg: RunConfig) -> Path:
    """Train from scratch; writes ``checkpoint/`` and ``loss.csv`` under ``cfg.out``."""
    out = _out_dir(cfg)
    ds = get_dataset(cfg.dataset)
    root = Rng(cfg.seed)
    data = ds.sample_sets(root.substream(DATA_STREAM), cfg.num_sets, cfg.n_points)
    params = init_params(cfg.model_config(), root.substream(INIT_STREAM))
    result = train(params, data, cfg.schedule(), root.substream(TRAIN_STREAM), cfg.epochs, cfg.lr,
                   batch_size=cfg.batch_size, p_drop=cfg.p_drop)
    losses = result.losses
    meta = {"dataset": cfg.dataset, "steps": len(losses), "seed": cfg.seed, "config_hash": cfg.config_hash(),
            "initial_loss": losses[0] if losses else None, "final_loss": losses[-1] if losses else None}
    ckpt = save_checkpoint(out / "checkpoint", result.params, meta)
    lines = [cfg.meta_line(), "step,loss\n"] + [f"{i},{_fmt(v)}\n" for i, v in enumerate(losses)]
    (out / "loss.csv").write_text("".join(lines), encoding="utf-8")
    return ckpt


def _load_params(cfg: RunConfig, checkpoint):
    params, _ = load_checkpoint(checkpoint, cfg.model_config())
    return params


def cmd_sample(cfg: RunConfig, checkpoint) -> tuple[Path, Path]:
    """Guided sampling; writes ``samples.csv`` and ``trace.jsonl``."""
    params = _load_params(cfg, checkpoint)
    out = _out_dir(cfg)
    x0, trace = asag_sample(params, cfg.schedule(), cfg.guidance(), cfg.class_label, cfg.steps,
                            Rng(cfg.seed).substream(SAMPLE_STREAM), chains=cfg.chains, n_points=cfg.n_points)
    samples = out / "samples.csv"
    write_samples(samples, x0, cfg)
    meta = {"meta": {"config_hash": cfg.config_hash(), "seed": cfg.seed, "method": cfg.method, "s": cfg.scale()}}
    lines = [json.dumps(meta, sort_keys=True)] + [json.dumps(r, sort_keys=True) for r in trace.rows()]
    trace_path = out / "trace.jsonl"
    trace_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return samples, trace_path


def reference_points(cfg: RunConfig) -> np.ndarray:
    ds = get_dataset(cfg.dataset)
    return ds.sample_points(Rng(cfg.seed).substream(REFERENCE_STREAM), cfg.reference_size, cfg.class_label)


def _trace_entropy(path) -> float | None:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise InputError(f"cannot read trace {path}: {e.strerror}") from None
    vals = []
    for lineno, line in enumerate(lines, start=1):
        try:
            row = json.loads(line)
        except json.JSONDecodeError:
            raise ParseError(path, lineno, "invalid JSON") from None
        if "plan_entropy" in row:
            vals.append(row["plan_entropy"])
    return math.fsum(vals) / len(vals) if vals else None


def cmd_eval(cfg: RunConfig, samples, trace=None) -> Path:
    """Score a samples file against a fresh ground-truth draw; writes ``metrics.json``."""
    pts = read_samples(samples)
    ds = get_dataset(cfg.dataset)
    ref = reference_points(cfg)
    centers = ds.mode_centers if cfg.class_label is None else ds.mode_centers[[cfg.class_label]]
    radius = cfg.radius if cfg.radius is not None else ds.coverage_radius
    report = MetricReport(energy_distance(pts, ref), mode_coverage(pts, centers, radius),
                          _trace_entropy(trace) if trace else None)
    out = _out_dir(cfg)
    path = out / "metrics.json"
    _write_json(path, {**report.to_dict(), "num_samples": len(pts), "config_hash": cfg.config_hash(),
                       "seed": cfg.seed})
    return path


def cmd_plan(cfg: RunConfig, q_file, k_file, orientation: str = "adversarial") -> tuple[Path, Path]:
    """Solve one transport problem for ``Q``, ``K``; writes ``plan.csv`` and ``plan.json``."""
    q, k = read_matrix(q_file), read_matrix(k_file)
    if q.shape != k.shape:
        raise DimensionError(f"Q {q.shape} and K {k.shape} differ")
    cost = CostMatrix.adversarial(q, k) if orientation == "adversarial" else CostMatrix.similarity(q, k)
    lam = cfg.lam if cfg.lam is not None else 1.0 / math.sqrt(q.shape[1])
    plan = sinkhorn_log_domain(cost, None, SinkhornConfig(lam, cfg.eps_max, cfg.max_iters))
    out = _out_dir(cfg)
    plan_path, diag_path = out / "plan.csv", out / "plan.json"
    lines = [cfg.meta_line(orientation=orientation, lam=_fmt(lam))]
    lines += [",".join(_fmt(v) for v in row) + "\n" for row in plan.plan]
    plan_path.write_text("".join(lines), encoding="utf-8")
    _write_json(diag_path, {"orientation": orientation, "lam": lam, "eps_max": cfg.eps_max,
                            "iterations": plan.iterations, "residual": plan.residual,
                            "converged": bool(plan.converged), "entropy": plan_entropy(plan),
                            "config_hash": cfg.config_hash(), "seed": cfg.seed})
    return plan_path, diag_path


def cmd_sweep(cfg: RunConfig, checkpoint) -> Path:
    """Metrics at each guidance scale from a shared ``x_T``; writes ``sweep.csv``."""
    params = _load_params(cfg, checkpoint)
    ds = get_dataset(cfg.dataset)
    centers = ds.mode_centers if cfg.class_label is None else ds.mode_centers[[cfg.class_label]]
    radius = cfg.radius if cfg.radius is not None else ds.coverage_radius
    rows = scale_sweep(params, cfg.schedule(), cfg.guidance(), cfg.scales, cfg.class_label, cfg.steps,
                       Rng(cfg.seed).substream(SAMPLE_STREAM), reference_points(cfg), centers, radius,
                       chains=cfg.chains, n_points=cfg.n_points)
    out = _out_dir(cfg)
    path = out / "sweep.csv"
    cols = ["scale", "energy_distance", "mode_coverage", "mean_plan_entropy"]
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(cfg.meta_line(method=cfg.method))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])
    return path


# argument parsing ----------------------------------------------------------------

class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


_HELP = {
    "dataset": f"toy distribution: {', '.join(DATASETS)}",
    "num_sets": "training point sets", "n_points": "points (tokens) per set",
    "conditional": "train with a class table (true/false)",
    "method": f"guidance method: {', '.join(METHODS)}",
    "s": "guidance scale (none = 3.0 for pag and seg, 1.5 otherwise)",
    "cfg_scale": "joint classifier-free scale (none = off)", "layers": "perturbed blocks, comma separated",
    "lam": "Sinkhorn lambda (none = 1/sqrt(d_head))", "blur_sigma": "SEG blur width in tokens",
    "class_label": "class to sample (none = unconditional)", "reference_size": "ground-truth points for eval",
    "radius": "mode-coverage radius (none = dataset default)", "scales": "sweep scales, comma separated",
    "chains": "sampling chains",
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat JSON config; flags override it")
    defaults = RunConfig()
    for name, f in FIELDS.items():
        default = getattr(defaults, name)
        shown = ",".join(map(str, default)) if isinstance(default, list) else default
        common.add_argument("--" + name.replace("_", "-"), dest=name, default=argparse.SUPPRESS,
                            metavar="N" if name == "seed" else ("DIR" if name == "out" else None),
                            help=f"{_HELP.get(name, name.replace('_', ' '))} (default: {shown})")
    parser = _Parser(prog="asag", description="Adversarial Sinkhorn attention guidance on toy diffusion.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("train", parents=[common], help="train a denoiser checkpoint")
    p = sub.add_parser("sample", parents=[common], help="guided sampling from a checkpoint")
    p.add_argument("--checkpoint", required=True, metavar="DIR")
    p = sub.add_parser("eval", parents=[common], help="score samples against ground truth")
    p.add_argument("--samples", required=True, metavar="PATH")
    p.add_argument("--trace", metavar="PATH", help="trace JSONL for the mean plan entropy")
    p = sub.add_parser("plan", parents=[common], help="solve one Sinkhorn problem from Q, K files")
    p.add_argument("--q", required=True, metavar="PATH")
    p.add_argument("--k", required=True, metavar="PATH")
    p.add_argument("--orientation", choices=("adversarial", "similarity"), default="adversarial")
    p = sub.add_parser("sweep", parents=[common], help="metrics across guidance scales")
    p.add_argument("--checkpoint", required=True, metavar="DIR")
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    overrides = {k: v for k, v in vars(args).items() if k in FIELDS}
    try:
        cfg = resolve_config(args.config, overrides)
        if args.command == "train":
            path = cmd_train(cfg)
            print(f"checkpoint written to {path}")
        elif args.command == "sample":
            for path in cmd_sample(cfg, args.checkpoint):
                print(f"wrote {path}")
        elif args.command == "eval":
            path = cmd_eval(cfg, args.samples, args.trace)
            print(path.read_text(encoding="utf-8"), end="")
        elif args.command == "plan":
            for path in cmd_plan(cfg, args.q, args.k, args.orientation):
                print(f"wrote {path}")
        else:
            print(f"wrote {cmd_sweep(cfg, args.checkpoint)}")
    except ContractError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (InputError, DimensionError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return 2
    except (TrainingDivergence, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    return 0


def main() -> None:
    sys.exit(run())
