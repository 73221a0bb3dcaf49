"""Command-line experiment runner.

    gils train          --config run.json --out results/
    gils bo             --config run.json --out results/
    gils attack         --config run.json --out results/
    gils gamma-sweep    --config run.json --out results/
    gils default-config --profile desk

Exit codes: 0 success, 2 invalid configuration, 3 file errors, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import bo as bo_mod
from ._io import atomic_write_text
from .attacks import KINDS, AttackConfig, attack_then_gils, attacked_accuracy
from .data import Dataset, blobs_benchmark, load_csv, load_tensor_bin
from .errors import ConfigError, DataFormatError, DimensionError, FitError, NumericError
from .model import ModelParams, accuracy, init_params, load_checkpoint, save_checkpoint
from .perturb import PerturbConfig
from .trainer import MODES, GilsConfig, TrainReport, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

DATA_DEFAULTS = {
    "source": "blobs",
    "seed": 0,
    "k": 3,
    "n_per_class": 10,
    "feature_dim": 8,
    "class_sep": 3.0,
    "shift": 2.0,
    "test_n_per_class": 200,
    "eval_split": "test_shifted",
    "train_path": None,
    "test_path": None,
}
MODEL_DEFAULTS = {"hidden": [16], "seed": 0}
GILS_DEFAULTS = {
    "mode": "gils",
    "alpha": 0.2,
    "steps": 5,
    "eta": 1.5,
    "gamma": 1e-3,
    "epochs": 30,
    "beta_classifier": 1e-2,
    "beta_features": 1e-3,
    "decay": 0.3,
    "decay_every": 20,
    "seed": 0,
    "smooth_inner": True,
    "parallel_inner": False,
    "track_full_gradient": True,
}
ATTACK_DEFAULTS = {
    "checkpoint": "checkpoint.json",
    "attacks": [{"kind": kind} for kind in KINDS],
    "models": ["checkpoint", "attack_then_gils"],
}
ATTACK_ENTRY_KEYS = {"kind", "epsilon", "steps", "step_size", "kappa"}
ATTACK_MODELS = ("checkpoint", "attack_then_gils")
BO_DEFAULTS = {"n_init": 5, "n_iter": 20, "seed": 0}
TOP_LEVEL = ("profile", "data", "model", "gils", "attack", "bo")

PROFILES = {
    "desk": {"alpha": 0.2, "steps": 5, "eta": 1.5, "epochs": 30},
    # best hyperparameters reported for ResNet34 on the magnetic-tile defect data
    "paper-mtdefect-resnet34": {
        "alpha": 0.40432489252683534,
        "steps": 10,
        "eta": 2.5677535344621507,
        "epochs": 60,
    },
}

GAMMA_BASE = 1000.0
GAMMA_DELTAS = (0.1, -0.1, 1.0, -1.0, 10.0, -10.0, 100.0, -100.0)
BO_SPACE_KEYS = ("alpha", "steps", "eta", "epochs")
# run configs stay inside the hyperparameter search range; larger alpha flattens the targets
ALPHA_MAX = 0.5


def _fmt(x: float) -> str:
    return f"{x:g}"


def gamma_label(delta: float) -> str:
    """Table label ``1/<denominator>`` for gamma = 1 / (1000 + delta)."""
    return f"1/{_fmt(GAMMA_BASE + delta)}"


@dataclass
class RunConfig:
    data: dict
    model: dict
    gils: dict
    attack: dict | None = None
    bo: dict | None = None
    profile: str | None = None
    base_dir: Path = field(default_factory=Path.cwd)

    def perturb_config(self, overrides: dict | None = None) -> PerturbConfig:
        g = {**self.gils, **(overrides or {})}
        return _checked("gils", lambda: PerturbConfig(
            gamma=float(g["gamma"]), eta=float(g["eta"]), steps=_int("gils.steps", g["steps"]),
            alpha=float(g["alpha"]), smooth_inner=bool(g["smooth_inner"]),
        ))

    def gils_config(self, overrides: dict | None = None) -> GilsConfig:
        g = {**self.gils, **(overrides or {})}
        pert = self.perturb_config(overrides)
        return _checked("gils", lambda: GilsConfig(
            perturb=pert,
            epochs=_int("gils.epochs", g["epochs"]),
            beta_classifier=float(g["beta_classifier"]),
            beta_features=float(g["beta_features"]),
            decay=float(g["decay"]),
            decay_every=_int("gils.decay_every", g["decay_every"]),
            seed=_int("gils.seed", g["seed"]),
            mode=g["mode"],
            hidden=tuple(self.model["hidden"]),
            parallel_inner=bool(g["parallel_inner"]),
            track_full_gradient=bool(g["track_full_gradient"]),
        ))

    def attack_configs(self) -> list[AttackConfig]:
        out = []
        for i, entry in enumerate(self.attack["attacks"]):
            out.append(_checked(f"attack.attacks[{i}]", lambda e=entry: AttackConfig(**e)))
        return out

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def _checked(section: str, build):
    try:
        return build()
    except ConfigError as exc:
        raise ConfigError(f"{section}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def _int(name: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not float(value).is_integer():
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    return int(value)


def _section(raw: dict, name: str, defaults: dict) -> dict:
    given = raw.get(name) or {}
    if not isinstance(given, dict):
        raise ConfigError(f"{name} must be a JSON object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown key {name}.{unknown[0]}; allowed: {', '.join(sorted(defaults))}")
    return {**copy.deepcopy(defaults), **given}


def parse_config(raw: dict, base_dir: Path | None = None, seed: int | None = None) -> RunConfig:
    """Validate a config document; every field is checked before any compute."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(TOP_LEVEL))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]}; allowed sections: {', '.join(TOP_LEVEL)}")
    cfg = RunConfig(
        data=_section(raw, "data", DATA_DEFAULTS),
        model=_section(raw, "model", MODEL_DEFAULTS),
        gils=_section(raw, "gils", GILS_DEFAULTS),
        attack=_section(raw, "attack", ATTACK_DEFAULTS) if "attack" in raw else None,
        bo=_section(raw, "bo", BO_DEFAULTS) if "bo" in raw else None,
        profile=raw.get("profile"),
        base_dir=base_dir or Path.cwd(),
    )
    if seed is not None:
        cfg.gils["seed"] = seed
        cfg.model["seed"] = seed
        if cfg.bo is not None:
            cfg.bo["seed"] = seed
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    d = cfg.data
    if d["source"] not in ("blobs", "files"):
        raise ConfigError(f"data.source must be 'blobs' or 'files', got {d['source']!r}")
    if d["source"] == "files":
        if not d["train_path"] or not d["test_path"]:
            raise ConfigError("data.train_path and data.test_path are required when data.source is 'files'")
    else:
        for key in ("k", "n_per_class", "feature_dim", "test_n_per_class", "seed"):
            _int(f"data.{key}", d[key])
        if d["k"] < 2:
            raise ConfigError(f"data.k must be >= 2, got {d['k']}")
        if d["eval_split"] not in ("test_seen", "test_shifted"):
            raise ConfigError(f"data.eval_split must be 'test_seen' or 'test_shifted', got {d['eval_split']!r}")
        if not (d["class_sep"] >= 0 and d["shift"] >= 0):
            raise ConfigError("data.class_sep and data.shift must be >= 0")
    if not isinstance(cfg.model["hidden"], list) or not cfg.model["hidden"]:
        raise ConfigError("model.hidden must be a non-empty list of layer widths")
    for w in cfg.model["hidden"]:
        if _int("model.hidden", w) < 1:
            raise ConfigError(f"model.hidden widths must be positive, got {w}")
    _int("model.seed", cfg.model["seed"])
    if cfg.gils["mode"] not in MODES or cfg.gils["mode"] == "attacked_gils":
        allowed = [m for m in MODES if m != "attacked_gils"]
        raise ConfigError(f"gils.mode must be one of {allowed}, got {cfg.gils['mode']!r}")
    alpha = cfg.gils["alpha"]
    if isinstance(alpha, bool) or not isinstance(alpha, (int, float)) or not 0.0 <= alpha <= ALPHA_MAX:
        raise ConfigError(f"gils.alpha must lie in [0, {ALPHA_MAX}], got {alpha!r}")
    cfg.gils_config()
    if cfg.attack is not None:
        if not isinstance(cfg.attack["attacks"], list) or not cfg.attack["attacks"]:
            raise ConfigError("attack.attacks must be a non-empty list")
        for i, entry in enumerate(cfg.attack["attacks"]):
            if not isinstance(entry, dict):
                raise ConfigError(f"attack.attacks[{i}] must be an object")
            extra = sorted(set(entry) - ATTACK_ENTRY_KEYS)
            if extra:
                raise ConfigError(f"unknown key attack.attacks[{i}].{extra[0]}")
        cfg.attack_configs()
        bad = [m for m in cfg.attack["models"] if m not in ATTACK_MODELS]
        if bad or not cfg.attack["models"]:
            raise ConfigError(f"attack.models entries must be among {ATTACK_MODELS}, got {cfg.attack['models']}")
    if cfg.bo is not None:
        for key in ("n_init", "n_iter", "seed"):
            _int(f"bo.{key}", cfg.bo[key])
        if cfg.bo["n_init"] < 1 or cfg.bo["n_iter"] < 0:
            raise ConfigError("bo.n_init must be >= 1 and bo.n_iter >= 0")


def load_config(path, seed: int | None = None) -> RunConfig:
    path = Path(path)
    text = path.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(raw, path.parent, seed)


def default_config(profile: str = "desk") -> dict:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; available profiles: {', '.join(PROFILES)}")
    gils = {**GILS_DEFAULTS, **PROFILES[profile]}
    return {
        "profile": profile,
        "data": copy.deepcopy(DATA_DEFAULTS),
        "model": copy.deepcopy(MODEL_DEFAULTS),
        "gils": gils,
        "attack": copy.deepcopy(ATTACK_DEFAULTS),
        "bo": copy.deepcopy(BO_DEFAULTS),
    }


# --- data ------------------------------------------------------------------

def _load_file(path: Path, k, split: str) -> Dataset:
    if path.suffix.lower() == ".csv":
        return load_csv(path, k=k, split=split)
    return load_tensor_bin(path, split=split)


def load_data(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    """(train, evaluation) datasets."""
    d = cfg.data
    if d["source"] == "files":
        train_set = _load_file(cfg.resolve(d["train_path"]), None, "train")
        test = _load_file(cfg.resolve(d["test_path"]), train_set.k, "test_seen")
        if test.feature_dim != train_set.feature_dim:
            raise ConfigError("data.test_path has a different feature dimension than data.train_path")
        return train_set, test
    bench = blobs_benchmark(
        int(d["seed"]), k=int(d["k"]), n_per_class=int(d["n_per_class"]), feature_dim=int(d["feature_dim"]),
        class_sep=float(d["class_sep"]), shift=float(d["shift"]), test_n_per_class=int(d["test_n_per_class"]),
    )
    return bench.train, getattr(bench, d["eval_split"])


def _init(cfg: RunConfig, train_set: Dataset) -> ModelParams:
    return init_params([train_set.feature_dim, *cfg.model["hidden"]], train_set.k, int(cfg.model["seed"]))


# --- commands --------------------------------------------------------------

def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def plot_rows(report: TrainReport) -> list[list]:
    return [
        [r.epoch, _num(r.train_loss), _num(r.test_accuracy), _num(m)]
        for r, m in zip(report.records, report.convergence_series)
    ]


def cmd_train(cfg: RunConfig, out: Path) -> int:
    train_set, test = load_data(cfg)
    params, report = train(cfg.gils_config(), train_set, test, _init(cfg, train_set))
    atomic_write_text(out / "report.jsonl", report.to_jsonl())
    save_checkpoint(params, out / "checkpoint.json")
    atomic_write_text(out / "plot.csv", _csv_text(["epoch", "loss", "accuracy", "msq_grad"], plot_rows(report)))
    print(f"mode={report.mode} epochs={len(report.records)} final_accuracy={report.final_accuracy}")
    return EXIT_OK


def _read_trials(path: Path, seed: int) -> list[bo_mod.Trial]:
    if not path.exists():
        return []
    trials = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            trial = bo_mod.Trial.from_json(line)
        except (json.JSONDecodeError, TypeError) as exc:
            raise DataFormatError(f"{path}:{lineno}: malformed trial: {exc}") from None
        if trial.index != len(trials):
            raise DataFormatError(f"{path}:{lineno}: expected trial {len(trials)}, found {trial.index}")
        if trial.seed != seed:
            raise ConfigError(f"{path} was written with bo.seed={trial.seed}, config has {seed}")
        trials.append(trial)
    return trials


def cmd_bo(cfg: RunConfig, out: Path) -> int:
    if cfg.bo is None:
        cfg.bo = dict(BO_DEFAULTS)
    train_set, test = load_data(cfg)
    init = _init(cfg, train_set)
    seed = int(cfg.bo["seed"])
    trace_path = out / "trials.jsonl"
    previous = _read_trials(trace_path, seed)
    total = int(cfg.bo["n_init"]) + int(cfg.bo["n_iter"])
    if len(previous) > total:
        raise ConfigError(f"{trace_path} already holds {len(previous)} trials, config asks for {total}")
    lines = [t.to_json() + "\n" for t in previous]

    def objective(point: dict, trial_seed: int) -> float:
        gcfg = cfg.gils_config({k: point[k] for k in BO_SPACE_KEYS})
        _, report = train(gcfg, train_set, test, init)
        return float(report.final_accuracy)

    def record(trial: bo_mod.Trial) -> None:
        lines.append(trial.to_json() + "\n")
        atomic_write_text(trace_path, "".join(lines))
        status = "failed" if trial.failed else f"{trial.objective:.4f}"
        print(f"trial {trial.index} {trial.phase} {trial.config} -> {status}")

    result = bo_mod.bo_search(objective, bo_mod.SearchSpace(), int(cfg.bo["n_init"]), int(cfg.bo["n_iter"]),
                              seed, previous, record)
    atomic_write_text(trace_path, "".join(lines))
    if result.best is None:
        raise NumericError("every BO trial failed")
    best = {**result.best.config, "objective": result.best.objective, "trial": result.best.index, "seed": seed}
    atomic_write_text(out / "best_config.json", json.dumps(best, indent=2) + "\n")
    return EXIT_OK


def _attack_label(ac: AttackConfig) -> str:
    return f"{ac.kind}@{_fmt(ac.epsilon)}"


def cmd_attack(cfg: RunConfig, out: Path) -> int:
    if cfg.attack is None:
        raise ConfigError("the attack command needs an 'attack' section")
    ckpt_path = cfg.resolve(cfg.attack["checkpoint"])
    if not ckpt_path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt_path}")
    checkpoint = load_checkpoint(ckpt_path)
    train_set, test = load_data(cfg)
    if checkpoint.input_dim != train_set.feature_dim or checkpoint.n_classes != train_set.k:
        raise ConfigError(f"checkpoint {ckpt_path} does not match the configured data")
    gcfg = cfg.gils_config({"mode": "gils"})
    rows = []
    for ac in cfg.attack_configs():
        for name in cfg.attack["models"]:
            if name == "checkpoint":
                params = checkpoint
            else:
                params, _ = attack_then_gils(ac, gcfg, train_set, None, _init(cfg, train_set))
            clean = accuracy(params, test.X, test.y)
            rows.append([_attack_label(ac), ac.kind, _num(ac.epsilon), name, _num(clean),
                         _num(attacked_accuracy(params, test, ac))])
    header = ["attack", "kind", "epsilon", "model", "clean_accuracy", "attacked_accuracy"]
    atomic_write_text(out / "attack_table.csv", _csv_text(header, rows))
    print(f"wrote {len(rows)} rows to {out / 'attack_table.csv'}")
    return EXIT_OK


def cmd_gamma_sweep(cfg: RunConfig, out: Path) -> int:
    train_set, test = load_data(cfg)
    init = _init(cfg, train_set)
    rows = []
    accs = []
    for delta in (0.0, *GAMMA_DELTAS):
        gamma = 1e-3 if delta == 0.0 else 1.0 / (GAMMA_BASE + delta)
        _, report = train(cfg.gils_config({"gamma": gamma}), train_set, test, init)
        accs.append(report.final_accuracy)
        rows.append([gamma_label(delta), _num(delta), _num(gamma), _num(report.final_accuracy),
                     _num(report.records[-1].train_loss if report.records else None)])
    spread = max(accs) - min(accs) if None not in accs else None
    atomic_write_text(out / "gamma_sweep.csv",
                      _csv_text(["gamma", "delta", "gamma_value", "accuracy", "train_loss"], rows))
    atomic_write_text(out / "gamma_sweep_summary.json", json.dumps({"rows": len(rows), "spread": spread}) + "\n")
    print(f"gamma sweep: {len(rows)} rows, accuracy spread {spread}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "bo": cmd_bo, "attack": cmd_attack, "gamma-sweep": cmd_gamma_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gils", description="GI-LS experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides the gils, model and bo seeds")
    p = sub.add_parser("default-config", help="print a ready-to-edit configuration")
    p.add_argument("--profile", default="desk", help=f"one of: {', '.join(PROFILES)}")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "default-config":
            print(json.dumps(default_config(args.profile), indent=2))
            return EXIT_OK
        cfg = load_config(args.config, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, FitError, FloatingPointError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
