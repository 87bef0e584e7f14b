"""Pipeline configuration: INI-style ``key = value`` sections.

Sections: [data], [diffusion], [scm], [tgm], [train]. Unknown keys are
rejected so typos fail fast.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, asdict
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # [data]
    data_root: str = "data"
    train_count: int = 200
    test_count: int = 32
    # [diffusion]
    T: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.3
    schedule_kind: str = "linear"
    # [scm]
    scm_epochs: int = 20
    scm_lr: float = 1e-3
    scm_batch_size: int = 8
    scm_widths: tuple = (32, 48, 64, 96)
    void_dilate_max: int = 4
    void_box_prob: float = 0.3
    # [tgm]
    codec_epochs: int = 40
    codec_lr: float = 2e-3
    codec_z_ch: int = 8
    codec_width: int = 48
    tgm_steps: int = 12000
    tgm_pretrain_steps: int = 1500
    tgm_lr: float = 1e-3
    tgm_batch_size: int = 8
    d_cond: int = 64
    n_rat: int = 2
    tgm_widths: tuple = (96, 144, 192)
    # [train]
    seed: int = 0
    resolutions: tuple = (32, 64)
    out_dir: str = "out"
    teacher_forcing: bool = True

    def __post_init__(self):
        res = list(self.resolutions)
        if any(b <= a for a, b in zip(res, res[1:])):
            raise ConfigError(f"resolution list must be strictly increasing, got {res}")
        for h in res:
            if h % 8:
                raise ConfigError(f"resolution {h} must be a multiple of 8")

    def as_dict(self) -> dict:
        return asdict(self)

    def rung_size(self, h: int) -> tuple[int, int]:
        """Image size at a ladder rung: 4:3 portrait aspect."""
        return h, (h * 3) // 4

    def dataset_dir(self, h: int) -> Path:
        return Path(self.data_root) / f"r{h}"


_SECTIONS = {
    "data": {"root": ("data_root", str), "train_count": ("train_count", int),
             "test_count": ("test_count", int)},
    "diffusion": {"T": ("T", int), "beta_start": ("beta_start", float),
                  "beta_end": ("beta_end", float), "kind": ("schedule_kind", str)},
    "scm": {"epochs": ("scm_epochs", int), "lr": ("scm_lr", float),
            "batch_size": ("scm_batch_size", int),
            "widths": ("scm_widths", "ints"),
            "void_dilate_max": ("void_dilate_max", int),
            "void_box_prob": ("void_box_prob", float)},
    "tgm": {"codec_epochs": ("codec_epochs", int), "codec_lr": ("codec_lr", float),
            "codec_z_ch": ("codec_z_ch", int), "codec_width": ("codec_width", int),
            "steps": ("tgm_steps", int),
            "pretrain_steps": ("tgm_pretrain_steps", int),
            "lr": ("tgm_lr", float),
            "batch_size": ("tgm_batch_size", int), "d_cond": ("d_cond", int),
            "n_rat": ("n_rat", int), "widths": ("tgm_widths", "ints")},
    "train": {"seed": ("seed", int), "resolutions": ("resolutions", "ints"),
              "out_dir": ("out_dir", str),
              "teacher_forcing": ("teacher_forcing", "bool")},
}


def _parse_value(raw: str, kind):
    if kind == "ints":
        return tuple(int(v) for v in raw.replace(",", " ").split())
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"invalid boolean {raw!r}")
    return kind(raw)


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys are case-sensitive ("T")
    parser.read(path)
    kwargs = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            attr, kind = _SECTIONS[section][key]
            try:
                kwargs[attr] = _parse_value(raw, kind)
            except ConfigError:
                raise
            except ValueError as e:
                raise ConfigError(f"{path}: bad value for {section}.{key}: {e}") from e
    return PipelineConfig(**kwargs)


def write_config(cfg: PipelineConfig, path: str | Path):
    """Serialize a config back to INI (used by gen-data to seed a tree)."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    d = cfg.as_dict()
    for section, keys in _SECTIONS.items():
        parser[section] = {}
        for key, (attr, kind) in keys.items():
            v = d[attr]
            if kind == "ints":
                v = " ".join(str(x) for x in v)
            parser[section][key] = str(v)
    with open(path, "w") as f:
        parser.write(f)
