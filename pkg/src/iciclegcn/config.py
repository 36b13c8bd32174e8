"""Hyper-parameters and their INI-file representation.

A config file holds one ``[section]`` per pipeline stage. Every key must be a
known field of that section; typos are rejected rather than ignored::

    [run]
    seed = 42

    [contrastive]
    epochs = 30
    tau_i = 0.5

    [graph]
    k_a = 1
    k_b = 10

    [mgcn]
    sigma = 0.4
    gamma = 0.2
    n_it = 200
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class Config:
    # [run]
    seed: int = 42
    num_clusters: int = 0  # 0: take K from the dataset header
    # [contrastive]
    tau_i: float = 0.5
    tau_c: float = 1.0
    batch_size: int = 128
    lr: float = 1e-4
    epochs: int = 30
    embed_dim: int = 64
    proj_dim: int = 32
    ae_hidden: tuple[int, ...] = (500, 500, 2000)
    use_cis: bool = True
    use_ccs: bool = True
    # [graph]
    t_heat: float = 1.0
    k_a: int = 1
    k_b: int = 10
    # [mgcn]
    sigma: float = 0.4
    gamma: float = 0.2
    alpha: float = 0.1
    beta: float = 0.1
    eta: float = 0.1
    t_dof: float = 1.0
    n_it: int = 200
    streams: str = "two"
    kl_reduction: str = "mean"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.tau_i <= 0 or self.tau_c <= 0:
            raise ConfigError("temperatures tau_i and tau_c must be positive")
        if self.sigma < 0 or self.gamma < 0 or self.sigma + self.gamma > 1 + 1e-12:
            raise ConfigError(f"fusion coefficients need sigma, gamma >= 0 and sigma + gamma <= 1 (got {self.sigma}, {self.gamma})")
        if min(self.alpha, self.beta, self.eta) < 0:
            raise ConfigError("loss weights alpha, beta, eta must be nonnegative")
        if self.kl_reduction not in ("mean", "sum"):
            raise ConfigError(f"kl_reduction must be 'mean' or 'sum', got {self.kl_reduction!r}")
        if self.streams not in ("two", "single"):
            raise ConfigError(f"streams must be 'two' or 'single', got {self.streams!r}")
        if self.streams == "two" and self.k_a == self.k_b:
            raise ConfigError("k_a and k_b must differ for two-stream graphs")
        if self.k_a < 1 or self.k_b < 1:
            raise ConfigError("neighbour counts must be positive")
        if self.t_heat <= 0 or self.t_dof <= 0:
            raise ConfigError("t_heat and t_dof must be positive")
        if self.lr < 0:
            raise ConfigError("learning rate must be nonnegative")
        if self.batch_size < 1 or self.epochs < 0 or self.n_it < 0:
            raise ConfigError("batch_size must be positive and epochs/n_it nonnegative")
        if self.embed_dim < 1 or self.proj_dim < 1 or any(w < 1 for w in self.ae_hidden):
            raise ConfigError("layer widths must be positive")
        if self.num_clusters < 0 or self.num_clusters == 1:
            raise ConfigError("num_clusters must be 0 (from data) or at least 2")

    def replace(self, **changes) -> Config:
        return dataclasses.replace(self, **changes)


SECTIONS: dict[str, tuple[str, ...]] = {
    "run": ("seed", "num_clusters"),
    "contrastive": ("tau_i", "tau_c", "batch_size", "lr", "epochs", "embed_dim", "proj_dim", "ae_hidden", "use_cis", "use_ccs"),
    "graph": ("t_heat", "k_a", "k_b"),
    "mgcn": ("sigma", "gamma", "alpha", "beta", "eta", "t_dof", "n_it", "streams", "kl_reduction"),
}

# keys that live outside Config proper
_PATH_KEYS = {"data": ("path",), "output": ("dir",)}


@dataclass(frozen=True)
class RunConfig:
    config: Config = field(default_factory=Config)
    data_path: Path | None = None
    output_dir: Path | None = None

    def validate_paths(self) -> None:
        if self.data_path is None:
            raise ConfigError("[data] path is required")
        if self.output_dir is None:
            raise ConfigError("[output] dir is required")
        written = {(self.output_dir / name).resolve() for name in OUTPUT_FILES}
        if self.data_path.resolve() in written:
            raise ConfigError(f"data path {self.data_path} would be overwritten by a run artifact")


OUTPUT_FILES = (
    "phase1.ckpt",
    "phase2.ckpt",
    "labels.txt",
    "metrics.csv",
    "confusion.csv",
    "train_log.jsonl",
)


def _coerce(name: str, raw: str):
    ftype = {f.name: f.type for f in fields(Config)}[name]
    try:
        if ftype == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        if ftype.startswith("tuple"):
            return tuple(int(tok) for tok in raw.replace(",", " ").split())
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case so typos are reported verbatim
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    values = {}
    data_path = output_dir = None
    for section in parser.sections():
        if section in _PATH_KEYS:
            for key, raw in parser.items(section):
                if key not in _PATH_KEYS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                p = Path(raw.strip())
                if base_dir is not None and not p.is_absolute():
                    p = base_dir / p
                if section == "data":
                    data_path = p
                else:
                    output_dir = p
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[key] = _coerce(key, raw)
    return RunConfig(config=Config(**values), data_path=data_path, output_dir=output_dir)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent)


def dump_config(run: RunConfig) -> str:
    cfg = run.config
    lines = []
    if run.data_path is not None:
        lines += ["[data]", f"path = {run.data_path}", ""]
    if run.output_dir is not None:
        lines += ["[output]", f"dir = {run.output_dir}", ""]
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            val = getattr(cfg, key)
            if isinstance(val, tuple):
                val = ", ".join(str(v) for v in val)
            elif isinstance(val, bool):
                val = "true" if val else "false"
            lines.append(f"{key} = {val}")
        lines.append("")
    return "\n".join(lines)
