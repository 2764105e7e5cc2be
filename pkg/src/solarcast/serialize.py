"""BCAST1 array files and JSON architecture descriptors.

Binary layout (all little-endian)::

    b"BCAST1"  uint32 n_arrays
    repeated:  uint32 ndim, ndim x uint64 dims, prod(dims) x float64

Array names, estimator parameters and the scaler live in the JSON
descriptor written alongside (``<stem>.json`` next to ``<stem>.bcast``).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import ScalerParams, WindowedDataset
from .errors import DataError
from .models import ProbabilisticForecaster, QuantileRegressionForecaster, VaeCompressor

MAGIC = b"BCAST1"
ESTIMATORS = {cls.__name__: cls for cls in (ProbabilisticForecaster, QuantileRegressionForecaster, VaeCompressor)}


def write_arrays(path, arrays) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for a in arrays:
            a = np.asarray(a, dtype="<f8")  # tobytes() is C-order; keeps 0-d shape
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            fh.write(a.tobytes())


def read_arrays(path) -> list[np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: not a BCAST1 file")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise DataError(f"{path}: truncated file")
        out = struct.unpack_from(fmt, buf, pos)
        pos += size
        return out

    (count,) = take("<I")
    arrays = []
    for _ in range(count):
        (ndim,) = take("<I")
        shape = take(f"<{ndim}Q") if ndim else ()
        n = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * n > len(buf):
            raise DataError(f"{path}: truncated file")
        arrays.append(np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64))
        pos += 8 * n
    if pos != len(buf):
        raise DataError(f"{path}: {len(buf) - pos} trailing bytes")
    return arrays


def _paths(stem):
    stem = Path(stem)
    if stem.suffix in (".bcast", ".json"):
        stem = stem.with_suffix("")
    return stem.with_suffix(".bcast"), stem.with_suffix(".json")


def _jsonable(value):
    if isinstance(value, (tuple, list, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _modules(model):
    if isinstance(model, VaeCompressor):
        return {"vae": model.vae_}
    return model.modules_()


def save_model(model, stem, scaler: ScalerParams | None = None) -> tuple[Path, Path]:
    """Write the fitted estimator's tensors and its descriptor; return both paths."""
    bin_path, json_path = _paths(stem)
    names, arrays, frozen = [], [], []
    for mod_name, module in _modules(model).items():
        for name, t in module.named_tensors():
            names.append({"module": mod_name, "name": name, "shape": list(t.shape)})
            arrays.append(t.data)
            if not t.requires_grad:
                frozen.append(f"{mod_name}.{name}")
    descriptor = {
        "format": "BCAST1",
        "class": type(model).__name__,
        "params": {k: _jsonable(v) for k, v in model.get_params().items()},
        "n_features_in": int(model.n_features_in_),
        "tensors": names,
        "frozen": frozen,
        "scaler": None if scaler is None else {"min": scaler.min, "max": scaler.max},
    }
    write_arrays(bin_path, arrays)
    json_path.write_text(json.dumps(descriptor, indent=2, sort_keys=True) + "\n")
    return bin_path, json_path


def load_model(stem):
    """Rebuild an estimator from :func:`save_model` output; returns ``(model, scaler)``."""
    bin_path, json_path = _paths(stem)
    try:
        desc = json.loads(json_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model descriptor {json_path}: {exc}") from exc
    cls = ESTIMATORS.get(desc.get("class"))
    if cls is None:
        raise DataError(f"unknown estimator class {desc.get('class')!r}")
    params = desc["params"]
    if "quantiles" in params:
        params["quantiles"] = tuple(params["quantiles"])
    model = cls(**params)
    n = desc["n_features_in"]
    if isinstance(model, VaeCompressor):
        from .models import VaeStage

        model.n_features_in_ = n
        model.vae_ = VaeStage(n, model.latent_dims, model.hidden)
    else:
        model.build(n)
    arrays = read_arrays(bin_path)
    if len(arrays) != len(desc["tensors"]):
        raise DataError(f"{bin_path}: {len(arrays)} arrays but descriptor lists {len(desc['tensors'])}")
    modules = _modules(model)
    states: dict[str, dict] = {m: {} for m in modules}
    for entry, arr in zip(desc["tensors"], arrays):
        states[entry["module"]][entry["name"]] = arr
    frozen = set(desc.get("frozen", []))
    for mod_name, module in modules.items():
        module.load_state_dict(states[mod_name])
        for name, t in module.named_tensors():
            if f"{mod_name}.{name}" in frozen:
                t.requires_grad, t.grad = False, None
    sc = desc.get("scaler")
    return model, (None if sc is None else ScalerParams(sc["min"], sc["max"]))


def save_dataset(path, ds: WindowedDataset) -> None:
    """Cache a windowed dataset; the scaler is stored as a 2-vector (nan if absent)."""
    sc = np.array([np.nan, np.nan]) if ds.scaler is None else np.array([ds.scaler.min, ds.scaler.max])
    write_arrays(path, [ds.X, ds.y, sc])


def load_dataset(path) -> WindowedDataset:
    arrays = read_arrays(path)
    if len(arrays) != 3:
        raise DataError(f"{path}: expected 3 arrays for a dataset, found {len(arrays)}")
    X, y, sc = arrays
    scaler = None if np.isnan(sc).any() else ScalerParams(float(sc[0]), float(sc[1]))
    return WindowedDataset(X, y, scaler)
