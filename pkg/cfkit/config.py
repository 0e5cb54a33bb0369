"""Config presets, JSON loading and environment resolution."""

import logging
import os
from pathlib import Path
from typing import List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, ValidationError

from cfkit.exceptions import CfkitException, UsageError
from cfkit.types import InvertedResidualSpec, ModelConfig, TransBDCSpec

logger = logging.getLogger(__name__)

SEED_ENV = "CFKIT_SEED"
THREADS_ENV = "CFKIT_THREADS"


def seg_512_config() -> ModelConfig:
    """Segmentation model at 512x512 with GME input and 150 classes."""
    return ModelConfig(name="contextformer-seg-512")


def seg_448_config() -> ModelConfig:
    return seg_512_config().with_updates(name="contextformer-seg-448", input_h=448, input_w=448)


def classification_config() -> ModelConfig:
    """ImageNet-style classifier: 224x224, 1000 classes, 7x7 bottleneck tokens."""
    return ModelConfig(
        name="contextformer-cls-224",
        head="cls",
        num_classes=1000,
        input_h=224,
        input_w=224,
        pool_divisor=32,
    )


def micro_config() -> ModelConfig:
    """64x64 input, one bottleneck block, 8 classes. Used by the gradient checks."""
    return ModelConfig(
        name="contextformer-micro",
        num_classes=8,
        input_h=64,
        input_w=64,
        pool_divisor=32,
        trans_bdc=TransBDCSpec(num_blocks=1),
    )


def stem_only_config() -> ModelConfig:
    return ModelConfig(
        name="stem-only",
        head="none",
        stem_blocks=[],
        tpem_stages=[],
        trans_bdc=TransBDCSpec(num_blocks=0),
    )


def encoder_only_config() -> ModelConfig:
    """Stem plus TPEM, no bottleneck blocks and no head."""
    return ModelConfig(name="stem-tpem", head="none", trans_bdc=TransBDCSpec(num_blocks=0))


PRESETS = {
    "seg512": seg_512_config,
    "seg448": seg_448_config,
    "cls224": classification_config,
    "micro": micro_config,
    "stem-only": stem_only_config,
    "encoder": encoder_only_config,
}


class AblationRow(BaseModel):
    """Component switches of one ablation row."""

    model_config = ConfigDict(frozen=True)

    vit: bool
    dw3: bool
    dw1: bool
    dwsep: bool
    channel_attention: bool
    gme: bool

    @property
    def label(self) -> str:
        parts = [
            name
            for name, on in (
                ("vit", self.vit),
                ("dw3", self.dw3),
                ("dw1", self.dw1),
                ("dwsep", self.dwsep),
                ("c-attn", self.channel_attention),
                ("gme", self.gme),
            )
            if on
        ]
        return "+".join(parts) or "none"


def _row(vit: bool, n_bdc: int, ca: bool, gme: bool) -> AblationRow:
    return AblationRow(
        vit=vit, dw3=n_bdc >= 1, dw1=n_bdc >= 2, dwsep=n_bdc >= 3, channel_attention=ca, gme=gme
    )


# Top half grows the BDC branch without attention; bottom half adds BDC parts on top of it.
ABLATION_ROWS: List[AblationRow] = [
    _row(False, 1, False, False),
    _row(False, 2, False, False),
    _row(False, 3, False, False),
    _row(False, 3, True, False),
    _row(False, 3, True, True),
    _row(True, 0, False, False),
    _row(True, 1, False, False),
    _row(True, 2, False, False),
    _row(True, 3, False, False),
    _row(True, 3, True, False),
    _row(True, 3, True, True),
]


def ablation_configs(base: ModelConfig) -> List[Tuple[AblationRow, ModelConfig]]:
    """Expand ``base`` into the ablation grid, in table row order."""
    rows = []
    for row in ABLATION_ROWS:
        trans = base.trans_bdc.model_copy(
            update={
                "use_attention": row.vit,
                "use_dw3": row.dw3,
                "use_dw1": row.dw1,
                "use_dwsep": row.dwsep,
                "use_channel_attention": row.channel_attention,
            }
        )
        config = base.with_updates(
            name=f"{base.name}[{row.label}]",
            trans_bdc=trans.model_dump(),
            input_channels=5 if row.gme else 3,
        )
        rows.append((row, config))
    return rows


def validation_field(err: ValidationError) -> str:
    """Dotted path of the first field a validation error names."""
    first = err.errors()[0]
    return ".".join(str(part) for part in first["loc"]) or "<root>"


def load_config(path: Union[str, Path]) -> ModelConfig:
    """Load a JSON model config.

    Raises:
        UsageError: If the file is missing or violates the schema; ``field``
            carries the dotted path of the first offending field.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e.strerror}", field="config") from e

    try:
        config = ModelConfig.model_validate_json(text)
    except ValidationError as e:
        field = validation_field(e)
        raise UsageError(f"{path}: invalid field '{field}': {e.errors()[0]['msg']}", field=field) from e
    except CfkitException as e:
        raise UsageError(f"{path}: {e.message}", field=e.field) from e

    logger.debug("loaded config %s from %s", config.name, path)
    return config


def save_config(config: ModelConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(config.model_dump_json(indent=2) + "\n", encoding="utf-8")


def resolve_config(spec: str) -> ModelConfig:
    """Preset name or path to a JSON file."""
    if spec in PRESETS:
        return PRESETS[spec]()
    return load_config(spec)


def _env_int(name: str, value: Optional[int], default: int) -> int:
    if value is not None:
        return value
    raw = os.environ.get(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError as e:
        raise UsageError(f"{name}={raw!r} is not an integer", field=name) from e


def resolve_seed(seed: Optional[int] = None) -> int:
    """Explicit seed, else CFKIT_SEED, else 0."""
    return _env_int(SEED_ENV, seed, 0)


def resolve_threads(threads: Optional[int] = None) -> int:
    """Explicit thread count, else CFKIT_THREADS, else 1."""
    n = _env_int(THREADS_ENV, threads, 1)
    if n < 1:
        raise UsageError(f"thread count must be >= 1, got {n}", field="threads")
    return n
