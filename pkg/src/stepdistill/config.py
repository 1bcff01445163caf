"""Experiment configuration: a flat, line-oriented key = value text format.

Unknown keys are errors, never warnings, and every error message names the
offending field. The default milestones keep the proportions of a long
detector run (freeze ~11.8% of steps, coefficient switch and learning-rate
decay at ~70.6%, rate 0 at the end).
"""

import dataclasses
from dataclasses import dataclass

from .exceptions import InvalidConfigError
from .schedules import LambdaSchedule, LrSchedule, PhasePlan

VARIANT_KEYS = ("loss_id", "lambda1", "lambda2", "warmup_end_step", "switch_step")

LOSS_CHOICES = ("mse", "kl", "js", "none")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    # dataset
    dataset_count: int = 64
    eval_count: int = 8
    image_width: int = 64
    image_height: int = 64
    num_classes: int = 3
    min_objects: int = 1
    max_objects: int = 3
    dataset_file: str = ""  # when set, scenes are loaded instead of generated
    # model
    scale_shapes: tuple[tuple[int, int], ...] = ((16, 16), (8, 8))
    # distillation loss
    loss_id: str = "js"
    temperature: float = 1.0
    stop_teacher_grad: bool = False
    # learning-rate schedule
    base_rate: float = 0.2
    decay_start_step: int = 240
    decay_factor: float = 0.5
    decay_interval: int = 40
    end_step: int = 340
    # distillation coefficient schedule
    warmup_end_step: int = 40
    switch_step: int = 240
    lambda1: float = 75.0
    lambda2: float = 80.0
    # phases and loop
    freeze_end_step: int = 40
    total_steps: int = 340
    batch_size: int = 8
    eval_interval: int = 20
    score_threshold: float = 0.25
    out_dir: str = "runs"


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _parse_scale_shapes(text: str, key: str):
    shapes = []
    for part in text.split(","):
        part = part.strip()
        try:
            r, c = part.split("x")
            shapes.append((int(r), int(c)))
        except ValueError:
            raise InvalidConfigError(f"{key}: expected shapes like '16x16,8x8', got {text!r}")
    return tuple(shapes)


def _format_value(name: str, value) -> str:
    if name == "scale_shapes":
        return ",".join(f"{r}x{c}" for r, c in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, raw: str):
    if key not in _FIELDS:
        raise InvalidConfigError(f"unknown config key {key!r}")
    kind = _FIELDS[key].type
    raw = raw.strip()
    try:
        if key == "scale_shapes":
            return _parse_scale_shapes(raw, key)
        if kind is bool:
            if raw not in ("true", "false"):
                raise ValueError
            return raw == "true"
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        kind_name = getattr(kind, "__name__", str(kind))
        raise InvalidConfigError(f"{key}: cannot parse {raw!r} as {kind_name}")


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    config = base if base is not None else ExperimentConfig()
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise InvalidConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        updates[key] = _coerce(key, raw)
    return dataclasses.replace(config, **updates)


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config file {path}: {exc}")
    return parse_config(text, base)


def serialize_config(config: ExperimentConfig) -> str:
    lines = [f"{f.name} = {_format_value(f.name, getattr(config, f.name))}"
             for f in dataclasses.fields(ExperimentConfig)]
    return "\n".join(lines) + "\n"


def apply_overrides(config: ExperimentConfig, assignments) -> ExperimentConfig:
    """Apply --set KEY=VALUE command-line overrides."""
    updates = {}
    for item in assignments:
        if "=" not in item:
            raise InvalidConfigError(f"override {item!r} must look like KEY=VALUE")
        key, raw = item.split("=", 1)
        key = key.strip()
        updates[key] = _coerce(key, raw)
    return dataclasses.replace(config, **updates)


def validate_config(config: ExperimentConfig) -> None:
    """Check every field invariant; raises InvalidConfigError naming the field."""
    if config.dataset_count < 1:
        raise InvalidConfigError(f"dataset_count must be >= 1, got {config.dataset_count}")
    if config.eval_count < 0:
        raise InvalidConfigError(f"eval_count must be >= 0, got {config.eval_count}")
    if config.image_width < 1 or config.image_height < 1:
        raise InvalidConfigError("image_width and image_height must be positive")
    if config.num_classes < 1:
        raise InvalidConfigError(f"num_classes must be >= 1, got {config.num_classes}")
    if not 0 <= config.min_objects <= config.max_objects:
        raise InvalidConfigError(
            f"min_objects..max_objects range ({config.min_objects}, {config.max_objects}) invalid"
        )
    if not config.scale_shapes:
        raise InvalidConfigError("scale_shapes must be non-empty")
    for rows, cols in config.scale_shapes:
        if rows < 1 or cols < 1:
            raise InvalidConfigError(f"scale_shapes entries must be positive, got {rows}x{cols}")
        if config.image_height % rows or config.image_width % cols:
            raise InvalidConfigError(
                f"scale_shapes: image {config.image_width}x{config.image_height} "
                f"not divisible by scale {rows}x{cols}"
            )
    if config.loss_id not in LOSS_CHOICES:
        raise InvalidConfigError(
            f"loss_id must be one of {LOSS_CHOICES}, got {config.loss_id!r}"
        )
    if config.temperature <= 0:
        raise InvalidConfigError(f"temperature must be positive, got {config.temperature}")
    if config.total_steps < 0:
        raise InvalidConfigError(f"total_steps must be >= 0, got {config.total_steps}")
    if config.batch_size < 1:
        raise InvalidConfigError(f"batch_size must be >= 1, got {config.batch_size}")
    if config.eval_interval < 1:
        raise InvalidConfigError(f"eval_interval must be >= 1, got {config.eval_interval}")
    if not 0.0 <= config.score_threshold <= 1.0:
        raise InvalidConfigError(
            f"score_threshold must lie in [0, 1], got {config.score_threshold}"
        )
    # schedule constructors enforce their own invariants
    LrSchedule(config.base_rate, config.decay_start_step, config.decay_factor,
               config.decay_interval, config.end_step)
    LambdaSchedule(config.warmup_end_step, config.switch_step,
                   config.lambda1, config.lambda2)
    if config.total_steps > 0:
        PhasePlan(config.freeze_end_step, config.total_steps)


@dataclass(frozen=True)
class CompareSpec:
    """Named config variants sharing dataset/model seeds, differing only in
    loss_id and/or the coefficient schedule."""

    seeds: tuple[int, ...]
    base: ExperimentConfig
    variants: tuple[tuple[str, tuple[tuple[str, str], ...]], ...]  # (name, ((key, raw), ...))

    def variant_config(self, name: str, seed: int) -> ExperimentConfig:
        for variant_name, overrides in self.variants:
            if variant_name == name:
                cfg = dataclasses.replace(self.base, seed=seed)
                updates = {key: _coerce(key, raw) for key, raw in overrides}
                return dataclasses.replace(cfg, **updates)
        raise InvalidConfigError(f"unknown variant {name!r}")

    @property
    def variant_names(self) -> list[str]:
        return [name for name, _ in self.variants]


def parse_compare_spec(text: str) -> CompareSpec:
    seeds: tuple[int, ...] = ()
    base_updates: list[tuple[str, str]] = []
    variant_order: list[str] = []
    variant_overrides: dict[str, list[tuple[str, str]]] = {}

    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise InvalidConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key == "seeds":
            try:
                seeds = tuple(int(v) for v in raw.split(","))
            except ValueError:
                raise InvalidConfigError(f"seeds: cannot parse {raw!r} as a comma-separated list")
        elif key.startswith("base."):
            base_updates.append((key[len("base."):], raw))
        elif key.startswith("variant."):
            parts = key.split(".")
            if len(parts) != 3:
                raise InvalidConfigError(f"line {lineno}: expected 'variant.<name>.<key>'")
            _, name, field = parts
            if not name.replace("_", "").replace("-", "").isalnum():
                raise InvalidConfigError(
                    f"variant name {name!r} must be alphanumeric (plus _ or -)"
                )
            if field not in VARIANT_KEYS:
                raise InvalidConfigError(
                    f"variant {name!r}: key {field!r} not allowed; variants may only "
                    f"differ in {VARIANT_KEYS}"
                )
            if name not in variant_overrides:
                variant_order.append(name)
                variant_overrides[name] = []
            variant_overrides[name].append((field, raw))
        else:
            raise InvalidConfigError(f"line {lineno}: unknown compare-spec key {key!r}")

    if not seeds:
        raise InvalidConfigError("compare spec must define a non-empty 'seeds' list")
    if not variant_order:
        raise InvalidConfigError("compare spec must define at least one variant")
    base = ExperimentConfig()
    base = dataclasses.replace(base, **{k: _coerce(k, v) for k, v in base_updates})
    variants = tuple((name, tuple(variant_overrides[name])) for name in variant_order)
    return CompareSpec(seeds=seeds, base=base, variants=variants)


def load_compare_spec(path) -> CompareSpec:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise InvalidConfigError(f"cannot read compare spec {path}: {exc}")
    return parse_compare_spec(text)
