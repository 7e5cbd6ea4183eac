"""``key = value`` run configuration shared by every subcommand."""

from __future__ import annotations

import functools
from pathlib import Path

from scanbench.evaluate import EvalThresholds
from scanbench.render import RenderParams
from scanbench.slicer import SliceConfig
from scanbench.synth import FlashlightParams, SamplingLimits, SynthConfig


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _pair(text: str) -> tuple:
    vals = _floats(text)
    if len(vals) != 2:
        raise ValueError(f"expected two numbers, got {text!r}")
    return vals


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {v}")
    return v


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key -> (parser, default)
SCHEMA = {
    "hfov": (float, 60.0),
    "width": (int, 1024),
    "height": (int, 768),
    "z_near": (float, 0.1),
    "splat_radius": (int, 1),
    "depth_tie_epsilon": (float, 1e-6),
    "max_fill_iterations": (int, 100),
    "yaw_count": (int, 12),
    "yaw_stride": (float, 30.0),
    "pitch_ring": (_floats, (-30.0, 0.0, 30.0)),
    "max_horizontal_offset": (float, 2.0),
    "max_vertical_offset": (float, 1.0),
    "yaw_range": (_pair, (0.0, 360.0)),
    "pitch_range": (_pair, (-25.0, 25.0)),
    "roll_range": (_pair, (-15.0, 15.0)),
    "max_missing": (float, 0.10),
    "max_attempts_per_query": (int, 50),
    "flashlight_enabled": (_bool, True),
    "flashlight_gain": (float, 4.0),
    "flashlight_half_distance": (float, 3.0),
    "occlusion_probability": (float, 0.9),
    "noise_sigma": (float, 0.0),
    "num_queries": (int, 338),
    "translation_thresholds": (_floats, (0.25, 0.5, 1.0)),
    "rotation_threshold": (float, 10.0),
    "top_k": (int, 10),
    "seed": (_u64, 0),
    "workers": (int, 0),
}

# Keys that cannot influence outputs; left out of the provenance echo so that
# outputs stay byte-identical across worker counts.
_NOT_ECHOED = {"workers"}


def _typed_view(method):
    """Re-raise validation failures of the assembled parameters as config errors."""
    @functools.wraps(method)
    def wrapper(self):
        try:
            return method(self)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from None
    return wrapper


class RunConfig:
    def __init__(self, values: dict | None = None):
        self.values = {k: default for k, (_, default) in SCHEMA.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser, _ = SCHEMA[key]
        if isinstance(value, str):
            try:
                value = parser(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from None
        self.values[key] = value

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        cfg = cls()
        cfg.update_from_text(Path(path).read_text(encoding="utf-8"), str(path))
        return cfg

    def update_from_text(self, text: str, origin: str = "<config>") -> None:
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
            try:
                self.set(key.strip(), value.strip())
            except ConfigError as exc:
                raise ConfigError(f"{origin}:{lineno}: {exc}") from None

    def echo(self) -> str:
        return "".join(f"{k} = {_fmt(self.values[k])}\n" for k in SCHEMA if k not in _NOT_ECHOED)

    # -- typed views --

    @_typed_view
    def render_params(self) -> RenderParams:
        v = self.values
        return RenderParams(v["z_near"], v["splat_radius"], v["depth_tie_epsilon"], v["max_fill_iterations"])

    @_typed_view
    def slice_config(self) -> SliceConfig:
        v = self.values
        return SliceConfig(v["yaw_count"], v["yaw_stride"], v["pitch_ring"], v["hfov"],
                           v["width"], v["height"], self.render_params())

    @_typed_view
    def synth_config(self) -> SynthConfig:
        v = self.values
        limits = SamplingLimits(
            v["max_horizontal_offset"], v["max_vertical_offset"], v["yaw_range"],
            v["pitch_range"], v["roll_range"], v["max_missing"], v["max_attempts_per_query"],
        )
        flash = FlashlightParams(v["flashlight_gain"], v["flashlight_half_distance"], v["flashlight_enabled"])
        return SynthConfig(v["hfov"], v["width"], v["height"], self.render_params(), limits, flash,
                           v["occlusion_probability"], v["noise_sigma"])

    @_typed_view
    def thresholds(self) -> EvalThresholds:
        return EvalThresholds(self.values["translation_thresholds"], self.values["rotation_threshold"])
