"""MEANet: main block + exit 1, adaptive block, extension block + exit 2."""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import nn
from .errors import ConfigError, FormatError, ShapeError

CHECKPOINT_FORMAT = "meanet-checkpoint/1"


@dataclass
class BlockSpec:
    layer_widths: tuple[int, ...]
    activations: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        self.layer_widths = tuple(int(w) for w in self.layer_widths)
        if any(w < 1 for w in self.layer_widths):
            raise ConfigError(f"layer widths must be positive: {self.layer_widths}")
        if self.activations is None:
            self.activations = ("relu",) * len(self.layer_widths)
        self.activations = tuple(self.activations)
        if len(self.activations) != len(self.layer_widths):
            raise ConfigError("one activation per layer is required")

    @property
    def depth(self) -> int:
        return len(self.layer_widths)

    @property
    def out_dim(self) -> int | None:
        return self.layer_widths[-1] if self.layer_widths else None


@dataclass
class MEAConfig:
    input_dim: int
    num_classes: int
    num_hard: int
    main_spec: BlockSpec
    adaptive_spec: BlockSpec
    extension_spec: BlockSpec = field(default_factory=lambda: BlockSpec(()))
    variant: str = "B"
    merge: str = "sum"

    def __post_init__(self) -> None:
        for name in ("main_spec", "adaptive_spec", "extension_spec"):
            spec = getattr(self, name)
            if isinstance(spec, dict):
                setattr(self, name, BlockSpec(**spec))
            elif isinstance(spec, (list, tuple)):
                setattr(self, name, BlockSpec(tuple(spec)))
        self.validate()

    @property
    def feature_dim(self) -> int:
        return self.main_spec.layer_widths[-1]

    @property
    def extension_in_dim(self) -> int:
        return 2 * self.feature_dim if self.merge == "concat" else self.feature_dim

    def validate(self) -> None:
        if self.variant not in ("A", "B"):
            raise ConfigError(f"variant must be 'A' or 'B', got {self.variant!r}")
        if self.merge not in ("sum", "concat"):
            raise ConfigError(f"merge must be 'sum' or 'concat', got {self.merge!r}")
        if self.input_dim < 1 or self.num_classes < 2:
            raise ConfigError("input_dim must be positive and num_classes at least 2")
        if not 1 <= self.num_hard <= self.num_classes:
            raise ConfigError(f"num_hard must lie in [1, {self.num_classes}]")
        if self.main_spec.depth == 0:
            raise ConfigError("the main block needs at least one layer")
        if self.adaptive_spec.depth == 0:
            raise ConfigError("the adaptive block needs at least one layer")
        if self.adaptive_spec.depth >= self.main_spec.depth:
            raise ConfigError("the adaptive block must be shallower than the main block")
        if self.adaptive_spec.out_dim != self.feature_dim:
            raise ConfigError(
                f"adaptive output width {self.adaptive_spec.out_dim} must equal "
                f"the main feature width {self.feature_dim}"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("main_spec", "adaptive_spec", "extension_spec"):
            d[name] = {
                "layer_widths": list(d[name]["layer_widths"]),
                "activations": list(d[name]["activations"]),
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> MEAConfig:
        d = dict(d)
        for name in ("main_spec", "adaptive_spec", "extension_spec"):
            if name in d:
                spec = d[name]
                if isinstance(spec, dict):
                    d[name] = BlockSpec(
                        tuple(spec["layer_widths"]),
                        tuple(spec["activations"]) if spec.get("activations") else None,
                    )
                else:
                    d[name] = BlockSpec(tuple(spec))
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_stack(
        cls,
        variant: str,
        input_dim: int,
        stack: Sequence[int],
        num_classes: int,
        num_hard: int,
        adaptive: Sequence[int],
        extension: Sequence[int] = (),
        split: int | None = None,
        merge: str = "sum",
    ) -> MEAConfig:
        """Derive a config from one backbone stack of hidden widths.

        Variant A cuts the stack at ``split``: the front becomes the main block
        and the back becomes the extension block (``extension`` is ignored).
        Variant B uses the whole stack as the main block and appends
        ``extension`` as a fresh block.
        """
        stack = tuple(stack)
        if variant == "A":
            if split is None or not 0 < split < len(stack):
                raise ConfigError("variant A needs 0 < split < len(stack)")
            main, ext = stack[:split], stack[split:]
        elif variant == "B":
            main, ext = stack, tuple(extension)
        else:
            raise ConfigError(f"variant must be 'A' or 'B', got {variant!r}")
        return cls(
            input_dim=input_dim,
            num_classes=num_classes,
            num_hard=num_hard,
            main_spec=BlockSpec(main),
            adaptive_spec=BlockSpec(tuple(adaptive)),
            extension_spec=BlockSpec(ext),
            variant=variant,
            merge=merge,
        )


class MEANet:
    def __init__(
        self,
        config: MEAConfig,
        main: list[nn.DenseLayer],
        exit1: nn.DenseLayer,
        adaptive: list[nn.DenseLayer],
        extension: list[nn.DenseLayer],
        exit2: nn.DenseLayer,
    ):
        self.config = config
        self.main = main
        self.exit1 = exit1
        self.adaptive = adaptive
        self.extension = extension
        self.exit2 = exit2
        self._check_shapes()

    def _check_shapes(self) -> None:
        cfg = self.config
        chain = [
            (self.main, cfg.input_dim),
            ([self.exit1], cfg.feature_dim),
            (self.adaptive, cfg.input_dim),
            (self.extension + [self.exit2], cfg.extension_in_dim),
        ]
        for layers, width in chain:
            for layer in layers:
                if layer.n_in != width:
                    raise ShapeError(f"layer expects width {layer.n_in}, chain gives {width}")
                width = layer.n_out
        if self.main[-1].n_out != cfg.feature_dim or self.adaptive[-1].n_out != cfg.feature_dim:
            raise ShapeError("main and adaptive outputs must both have the feature width")
        if self.exit1.n_out != cfg.num_classes or self.exit2.n_out != cfg.num_hard:
            raise ShapeError("exit widths must equal num_classes and num_hard")

    # --- parameter groups -------------------------------------------------

    @property
    def main_layers(self) -> list[nn.DenseLayer]:
        return self.main + [self.exit1]

    @property
    def edge_layers(self) -> list[nn.DenseLayer]:
        """Adaptive and extension parameters, i.e. what the edge trains."""
        return self.adaptive + self.extension + [self.exit2]

    @property
    def extension_path(self) -> list[nn.DenseLayer]:
        return self.extension + [self.exit2]

    @property
    def layers(self) -> list[nn.DenseLayer]:
        return self.main_layers + self.edge_layers

    @property
    def main_frozen(self) -> bool:
        return all(l.frozen for l in self.main_layers)

    # --- forward passes ---------------------------------------------------

    def forward_main(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (exit-1 logits over all classes, feature vector F)."""
        features = nn.predict(self.main, x)
        return nn.predict([self.exit1], features), features

    def adaptive_features(self, x: np.ndarray) -> np.ndarray:
        return nn.predict(self.adaptive, x)

    def merge(self, features: np.ndarray, f2: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        f2 = np.asarray(f2, dtype=np.float64)
        if self.config.merge == "sum":
            if features.shape != f2.shape:
                raise ShapeError(f"sum merge needs equal shapes, got {features.shape} and {f2.shape}")
            return features + f2
        if features.shape[:-1] != f2.shape[:-1]:
            raise ShapeError(f"cannot concatenate {features.shape} and {f2.shape}")
        return np.concatenate([features, f2], axis=-1)

    def forward_extension(self, features: np.ndarray, f2: np.ndarray) -> np.ndarray:
        """Exit-2 logits over the hard classes from F and the adaptive output f2."""
        if np.shape(features)[-1] != self.config.feature_dim:
            raise ShapeError(f"features must have width {self.config.feature_dim}")
        return nn.predict(self.extension_path, self.merge(features, f2))

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All outputs at once: (exit-1 logits, exit-2 logits, features)."""
        y1, features = self.forward_main(x)
        y2 = self.forward_extension(features, self.adaptive_features(x))
        return y1, y2, features

    # --- freezing & accounting -------------------------------------------

    def freeze_main(self) -> MEANet:
        for layer in self.main_layers:
            layer.frozen = True
        return self

    def count_params(self) -> tuple[int, int]:
        """(fixed, trained) parameter counts, partitioned by frozen flag."""
        fixed = sum(l.n_params for l in self.layers if l.frozen)
        trained = sum(l.n_params for l in self.layers if not l.frozen)
        return fixed, trained

    def count_macs(self) -> tuple[int, int]:
        """(fixed, trained) multiply-accumulates of one full forward pass."""
        fixed = sum(l.n_macs for l in self.layers if l.frozen)
        trained = sum(l.n_macs for l in self.layers if not l.frozen)
        return fixed, trained

    def block_macs(self) -> dict[str, int]:
        return {
            "main": sum(l.n_macs for l in self.main_layers),
            "adaptive": sum(l.n_macs for l in self.adaptive),
            "extension": sum(l.n_macs for l in self.extension_path),
        }

    def copy(self) -> MEANet:
        return MEANet(
            self.config,
            [l.copy() for l in self.main],
            self.exit1.copy(),
            [l.copy() for l in self.adaptive],
            [l.copy() for l in self.extension],
            self.exit2.copy(),
        )


def build(config: MEAConfig, seed: int) -> MEANet:
    """Randomly initialise a MEANet from a validated config."""
    config.validate()
    rng = np.random.default_rng(seed)
    main = nn.build_mlp(config.input_dim, config.main_spec.layer_widths, rng,
                        config.main_spec.activations)
    exit1 = nn.DenseLayer.init(config.feature_dim, config.num_classes, rng, "identity")
    adaptive = nn.build_mlp(config.input_dim, config.adaptive_spec.layer_widths, rng,
                            config.adaptive_spec.activations)
    extension = nn.build_mlp(config.extension_in_dim, config.extension_spec.layer_widths, rng,
                             config.extension_spec.activations)
    ext_out = extension[-1].n_out if extension else config.extension_in_dim
    exit2 = nn.DenseLayer.init(ext_out, config.num_hard, rng, "identity")
    return MEANet(config, main, exit1, adaptive, extension, exit2)


def build_classifier(input_dim: int, widths: Sequence[int], num_classes: int,
                     seed: int) -> list[nn.DenseLayer]:
    """Plain MLP with a linear head; used for the cloud model and the feature tail."""
    rng = np.random.default_rng(seed)
    layers = nn.build_mlp(input_dim, widths, rng)
    prev = widths[-1] if widths else input_dim
    layers.append(nn.DenseLayer.init(prev, num_classes, rng, "identity"))
    return layers


# --- serialisation --------------------------------------------------------

def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode(text: str, shape: Sequence[int]) -> np.ndarray:
    raw = base64.b64decode(text.encode("ascii"))
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if arr.size != int(np.prod(shape)):
        raise FormatError(f"parameter payload has {arr.size} values, expected shape {shape}")
    return arr.reshape(shape)


def layers_to_json(layers: Iterable[nn.DenseLayer]) -> list[dict]:
    return [
        {
            "shape": list(l.weights.shape),
            "activation": l.activation,
            "frozen": l.frozen,
            "weights": _encode(l.weights),
            "bias": _encode(l.bias),
        }
        for l in layers
    ]


def layers_from_json(items: list[dict]) -> list[nn.DenseLayer]:
    out = []
    for i, item in enumerate(items):
        try:
            shape = item["shape"]
            layer = nn.DenseLayer(
                _decode(item["weights"], shape),
                _decode(item["bias"], shape[:1]),
                item["activation"],
                bool(item["frozen"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"layer {i}: {exc}") from exc
        out.append(layer)
    return out


def parameter_digest(layers: Iterable[nn.DenseLayer]) -> str:
    """SHA-256 over the raw parameter bytes; equal digests mean bit-identical parameters."""
    h = hashlib.sha256()
    for l in layers:
        h.update(np.ascontiguousarray(l.weights, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(l.bias, dtype="<f8").tobytes())
    return h.hexdigest()


def _dump(payload: dict, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)


def _load(path: Path, kind: str) -> dict:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON at line {exc.lineno}") from exc
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: unknown checkpoint format {payload.get('format')!r}")
    if payload.get("kind") != kind:
        raise FormatError(f"{path}: expected a {kind!r} checkpoint, found {payload.get('kind')!r}")
    return payload


def save_meanet(net: MEANet, path: str | Path) -> None:
    _dump(
        {
            "format": CHECKPOINT_FORMAT,
            "kind": "meanet",
            "config": net.config.to_dict(),
            "blocks": {
                "main": layers_to_json(net.main),
                "exit1": layers_to_json([net.exit1]),
                "adaptive": layers_to_json(net.adaptive),
                "extension": layers_to_json(net.extension),
                "exit2": layers_to_json([net.exit2]),
            },
        },
        Path(path),
    )


def load_meanet(path: str | Path) -> MEANet:
    payload = _load(Path(path), "meanet")
    config = MEAConfig.from_dict(payload["config"])
    blocks = {k: layers_from_json(v) for k, v in payload["blocks"].items()}
    return MEANet(config, blocks["main"], blocks["exit1"][0], blocks["adaptive"],
                  blocks["extension"], blocks["exit2"][0])


def save_classifier(layers: Sequence[nn.DenseLayer], path: str | Path, meta: dict | None = None) -> None:
    _dump(
        {
            "format": CHECKPOINT_FORMAT,
            "kind": "classifier",
            "meta": meta or {},
            "layers": layers_to_json(layers),
        },
        Path(path),
    )


def load_classifier(path: str | Path) -> tuple[list[nn.DenseLayer], dict]:
    payload = _load(Path(path), "classifier")
    return layers_from_json(payload["layers"]), payload.get("meta", {})
