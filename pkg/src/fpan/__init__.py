"""Query-based object localization with progressive attention, from scratch.

The package trains and evaluates a small convolutional network that finds
a queried object (a colored digit) in a cluttered scene, compares it
against classical template-matching baselines, and tracks the object
through synthetic sequences.  Everything differentiable runs on an
in-tree reverse-mode autodiff tensor over numpy arrays.

Submodule imports are lazy so the command-line front end can configure
thread environment variables before numpy first loads.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "BoundingBox": "boxes", "iou": "boxes", "center_distance": "boxes",
    "FpanError": "errors", "ShapeError": "errors",
    "CheckpointError": "errors", "IdxFormatError": "errors",
    "PpmFormatError": "errors", "SceneGenError": "errors",
    "OptimizerError": "errors", "TrainingDiverged": "errors",
    "NetworkConfig": "network", "LayerSpec": "network",
    "build_network": "network",
    "DatasetSpec": "synth", "GlyphBank": "synth", "expand_targets": "synth",
    "Tensor": "tensor",
    "TrainConfig": "train", "train_model": "train",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    if name in _EXPORTS:
        import importlib
        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return __all__
