"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are skipped. Unknown keys are rejected. Pair
values (bounds) are written ``lo, hi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .adaptation import AdaptationConfig
from .errors import ConfigError
from .mixing import GlobalAugConfig, LocalAugConfig


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _pair(text: str) -> tuple[float, float]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 2:
        raise ValueError(f"expected 'lo, hi', got {text!r}")
    return (_float(parts[0]), _float(parts[1]))


def _float(text: str) -> float:
    t = text.strip().lower()
    # allow pi multiples, e.g. "-pi/2"
    if "pi" in t:
        sign = -1.0 if t.startswith("-") else 1.0
        t = t.lstrip("+-")
        num, _, den = t.partition("/")
        factor = float(num.replace("pi", "") or 1.0) if num != "pi" else 1.0
        return sign * factor * math.pi / (float(den) if den else 1.0)
    return float(t)


AXES = ("x", "y", "z")

# key -> parser
KEYS = {
    "epochs_warmup": int,
    "epochs_adapt": int,
    "batch_size": int,
    "alpha": _float,
    "zeta": _float,
    "zeta_target_fraction": _float,
    "beta": _float,
    "gamma": int,
    "lr": _float,
    "seed": int,
    "branch_s2t": _bool,
    "branch_t2s": _bool,
    "local_aug": _bool,
    "global_aug": _bool,
    "weighted_f": _bool,
    "ema": _bool,
    "target_subsample": _bool,
    "miou_convention": str,
    "local_rot_z": _pair,
    "local_scale": _pair,
    "keep_fraction": _float,
    "scene_radius": _float,
    "voxel_size": _float,
    "unlabeled_id": int,
    "workers": int,
    **{f"global_rot_{a}": _pair for a in AXES},
    **{f"global_translation_{a}": _pair for a in AXES},
    **{f"global_scale_{a}": _pair for a in AXES},
}


@dataclass(frozen=True)
class RunConfig:
    adaptation: AdaptationConfig
    scene_radius: float = 50.0
    voxel_size: float = 1.0
    unlabeled_id: int = 0
    workers: int = 1
    # when set, zeta is recalibrated after warm-up to keep this fraction of target points
    zeta_target_fraction: float | None = None

    @property
    def seed(self) -> int:
        return self.adaptation.seed


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        values[key] = value
    return values


def build_config(raw: dict) -> RunConfig:
    """Turn ``{key: text}`` into a :class:`RunConfig`; fail on unknown keys."""
    unknown = sorted(set(raw) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        vals = {k: KEYS[k](v) if isinstance(v, str) else v for k, v in raw.items()}
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    local = LocalAugConfig()
    local = replace(
        local,
        rot_z_bounds=vals.get("local_rot_z", local.rot_z_bounds),
        scale_bounds=vals.get("local_scale", local.scale_bounds),
        keep_fraction=vals.get("keep_fraction", local.keep_fraction),
    )
    glob = GlobalAugConfig()
    glob = GlobalAugConfig(
        rot_bounds=tuple(vals.get(f"global_rot_{a}", glob.rot_bounds[i]) for i, a in enumerate(AXES)),
        translation_bounds=tuple(
            vals.get(f"global_translation_{a}", glob.translation_bounds[i]) for i, a in enumerate(AXES)
        ),
        scale_bounds=tuple(vals.get(f"global_scale_{a}", glob.scale_bounds[i]) for i, a in enumerate(AXES)),
    )
    names = {f.name for f in fields(AdaptationConfig)} - {"local_cfg", "global_cfg"}
    try:
        adaptation = AdaptationConfig(
            local_cfg=local,
            global_cfg=glob,
            **{k: v for k, v in vals.items() if k in names},
        )
        frac = vals.get("zeta_target_fraction")
        if frac is not None and not 0.0 < frac < 1.0:
            raise ValueError(f"zeta_target_fraction must lie in (0, 1), got {frac}")
        if vals.get("workers", 1) < 1:
            raise ValueError("workers must be >= 1")
        return RunConfig(
            adaptation=adaptation,
            scene_radius=vals.get("scene_radius", 50.0),
            voxel_size=vals.get("voxel_size", 1.0),
            unlabeled_id=vals.get("unlabeled_id", 0),
            workers=vals.get("workers", 1),
            zeta_target_fraction=frac,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            raw = parse_config_text(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    raw.update(overrides or {})
    return build_config(raw)


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return f"{value[0]!r}, {value[1]!r}"
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(cfg: RunConfig) -> str:
    """Text that :func:`load_config` reads back to an equal config."""
    a = cfg.adaptation
    items = {f.name: getattr(a, f.name) for f in fields(a) if f.name not in ("local_cfg", "global_cfg")}
    items["local_rot_z"] = a.local_cfg.rot_z_bounds
    items["local_scale"] = a.local_cfg.scale_bounds
    items["keep_fraction"] = a.local_cfg.keep_fraction
    for i, ax in enumerate(AXES):
        items[f"global_rot_{ax}"] = a.global_cfg.rot_bounds[i]
        items[f"global_translation_{ax}"] = a.global_cfg.translation_bounds[i]
        items[f"global_scale_{ax}"] = a.global_cfg.scale_bounds[i]
    items["scene_radius"] = cfg.scene_radius
    items["voxel_size"] = cfg.voxel_size
    items["unlabeled_id"] = cfg.unlabeled_id
    items["workers"] = cfg.workers
    if cfg.zeta_target_fraction is not None:
        items["zeta_target_fraction"] = cfg.zeta_target_fraction
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in items.items())
