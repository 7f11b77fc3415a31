"""Multi-focus image fusion: decision-map cascade network, gradient-aware
loss, focal-stack calibration, and the training/evaluation tooling around
them.

Submodules are imported lazily so the command line entry point can pin the
BLAS thread count (GRADFUSE_THREADS) before numpy is loaded.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "Tensor": "gradfuse.autodiff",
    "Tape": "gradfuse.autodiff",
    "ExtractionConfig": "gradfuse.network",
    "SSEConfig": "gradfuse.network",
    "GuidedFilterConfig": "gradfuse.network",
    "FusionNet": "gradfuse.network",
    "init_weights": "gradfuse.network",
    "QgConfig": "gradfuse.losses",
    "LossConfig": "gradfuse.losses",
    "TrainConfig": "gradfuse.training",
    "GenConfig": "gradfuse.datagen",
}


def __getattr__(name):
    if name in _EXPORTS:
        import importlib

        mod = importlib.import_module(_EXPORTS[name])
        return getattr(mod, name)
    raise AttributeError(f"module 'gradfuse' has no attribute {name!r}")
