"""cvrlab: odd-one-out visual reasoning on procedurally generated panels.

Public surface:  the OutlierReasoner estimator, the panel generator, the
training entry points, and the numerics core underneath them.  Submodules
import lazily so the command-line launcher can pin thread environment
variables before numpy loads.
"""

__version__ = "0.1.0"

_LAZY = {
    "autodiff": ".autodiff",
    "seeds": ".seeds",
    "taskgen": ".taskgen",
    "augment": ".augment",
    "perception": ".perception",
    "reasoning": ".reasoning",
    "model": ".model",
    "training": ".training",
    "estimator": ".estimator",
    "validation": ".validation",
    "gradcheck": ".gradcheck",
    "cli": ".cli",
}

_LAZY_ATTRS = {
    "Tensor": ("autodiff", "Tensor"),
    "OutlierReasoner": ("estimator", "OutlierReasoner"),
}


def __getattr__(name):
    import importlib

    if name in _LAZY:
        module = importlib.import_module(_LAZY[name], __name__)
        globals()[name] = module
        return module
    if name in _LAZY_ATTRS:
        mod_name, attr = _LAZY_ATTRS[name]
        module = importlib.import_module(_LAZY[mod_name], __name__)
        value = getattr(module, attr)
        globals()[name] = value
        return value
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
