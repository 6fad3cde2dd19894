"""Run configuration files.

Strict JSON: every key is checked against the schema and unknown or
mistyped entries fail with the offending path spelled out, e.g.
"unknown key 'lr_decay' at train". Defaults are merged in so the
effective configuration can be logged verbatim.
"""

from __future__ import annotations

import dataclasses
import json

from .datasets import Dataset, load_csv_dataset, load_idx_dataset, synthetic_clusters
from .errors import ConfigError
from .nn import LayerSpec, NetworkSpec, QuantPolicy, TrainConfig

_REQUIRED = object()


def _err(path: str, msg: str):
    raise ConfigError(f"{msg} at {path}" if path else msg)


def _type_name(value) -> str:
    return type(value).__name__


def _check_mapping(value, path):
    if not isinstance(value, dict):
        _err(path, f"expected an object, got {_type_name(value)}")


def _check_keys(d: dict, allowed, path: str):
    for key in d:
        if key not in allowed:
            _err(path, f"unknown key {key!r}")


def _take(d: dict, key: str, path: str, kind: str, default=_REQUIRED):
    if key not in d:
        if default is _REQUIRED:
            _err(path, f"missing required key {key!r}")
        return default
    value = d[key]
    where = f"{path}.{key}" if path else key
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            _err(where, f"expected an integer, got {_type_name(value)}")
    elif kind == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            _err(where, f"expected a number, got {_type_name(value)}")
        value = float(value)
    elif kind == "str":
        if not isinstance(value, str):
            _err(where, f"expected a string, got {_type_name(value)}")
    elif kind == "bool":
        if not isinstance(value, bool):
            _err(where, f"expected a boolean, got {_type_name(value)}")
    elif kind == "list":
        if not isinstance(value, list):
            _err(where, f"expected a list, got {_type_name(value)}")
    else:
        raise AssertionError(kind)
    return value


def _int_list(d: dict, key: str, path: str, default=_REQUIRED, length: int | None = None):
    raw = _take(d, key, path, "list", default)
    if raw is default and raw is not _REQUIRED and not isinstance(raw, list):
        return raw
    where = f"{path}.{key}" if path else key
    out = []
    for i, item in enumerate(raw):
        if isinstance(item, bool) or not isinstance(item, int):
            _err(f"{where}[{i}]", f"expected an integer, got {_type_name(item)}")
        out.append(item)
    if length is not None and len(out) != length:
        _err(where, f"expected {length} entries, got {len(out)}")
    return out


_LAYER_KEYS = {
    "linear": {"kind", "out", "gamma", "bits"},
    "conv2d": {"kind", "out", "kernel", "stride", "pad", "gamma", "bits"},
    "relu": {"kind"},
    "flatten": {"kind"},
}


def _validate_layer(raw, path: str) -> dict:
    _check_mapping(raw, path)
    kind = _take(raw, "kind", path, "str")
    if kind not in _LAYER_KEYS:
        _err(f"{path}.kind", f"unknown layer kind {kind!r} "
                             f"(known: {', '.join(sorted(_LAYER_KEYS))})")
    _check_keys(raw, _LAYER_KEYS[kind], path)
    out = {"kind": kind}
    if kind in ("linear", "conv2d"):
        out["out"] = _take(raw, "out", path, "int")
        if out["out"] <= 0:
            _err(f"{path}.out", f"expected a positive integer, got {out['out']}")
        gamma = _take(raw, "gamma", path, "number", None)
        if gamma is not None:
            out["gamma"] = gamma
        bits = raw.get("bits")
        if bits is not None:
            out["bits"] = _int_list(raw, "bits", path, length=3)
    if kind == "conv2d":
        out["kernel"] = _take(raw, "kernel", path, "int")
        out["stride"] = _take(raw, "stride", path, "int", 1)
        out["pad"] = _take(raw, "pad", path, "int", 0)
    return out


def _policy_defaults() -> dict:
    return {f.name: f.default for f in dataclasses.fields(QuantPolicy)}


def _validate_policy(raw, path: str) -> dict:
    defaults = _policy_defaults()
    _check_mapping(raw, path)
    _check_keys(raw, set(defaults), path)
    out = dict(defaults)
    for name, default in defaults.items():
        kind = "bool" if isinstance(default, bool) else "str"
        out[name] = _take(raw, name, path, kind, default)
    if out["accumulator"] not in ("wide", "strict32"):
        _err(f"{path}.accumulator", f"expected 'wide' or 'strict32', got {out['accumulator']!r}")
    if out["engine"] not in ("auto", "shift", "matmul"):
        _err(f"{path}.engine", f"expected 'auto', 'shift' or 'matmul', got {out['engine']!r}")
    return out


_DATA_KEYS = {
    "synthetic": {"kind", "classes", "dim", "train_samples", "test_samples", "noise", "seed"},
    "idx": {"kind", "train_images", "train_labels", "test_images", "test_labels", "scale"},
    "csv": {"kind", "path", "label_column", "test_fraction", "seed"},
}


def _validate_data(raw, path: str) -> dict:
    _check_mapping(raw, path)
    kind = _take(raw, "kind", path, "str", "synthetic")
    if kind not in _DATA_KEYS:
        _err(f"{path}.kind", f"unknown data kind {kind!r} "
                             f"(known: {', '.join(sorted(_DATA_KEYS))})")
    _check_keys(raw, _DATA_KEYS[kind], path)
    out = {"kind": kind}
    if kind == "synthetic":
        out["classes"] = _take(raw, "classes", path, "int", 10)
        out["dim"] = _take(raw, "dim", path, "int", 784)
        out["train_samples"] = _take(raw, "train_samples", path, "int", 4096)
        out["test_samples"] = _take(raw, "test_samples", path, "int", 1024)
        out["noise"] = _take(raw, "noise", path, "number", 0.9)
        out["seed"] = _take(raw, "seed", path, "int", 7)
    elif kind == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            out[key] = _take(raw, key, path, "str")
        out["scale"] = _take(raw, "scale", path, "number", 255.0)
    else:
        out["path"] = _take(raw, "path", path, "str")
        out["label_column"] = _take(raw, "label_column", path, "str")
        out["test_fraction"] = _take(raw, "test_fraction", path, "number", 0.2)
        out["seed"] = _take(raw, "seed", path, "int", 0)
    return out


def validate_config(raw: dict) -> dict:
    """Return the effective configuration with defaults merged in."""
    _check_mapping(raw, "")
    _check_keys(raw, {"network", "train", "data", "output_dir"}, "top level")

    net_raw = raw.get("network")
    if net_raw is None:
        _err("", "missing required key 'network'")
    _check_mapping(net_raw, "network")
    _check_keys(net_raw, {"input_shape", "layers", "bits", "last_layer_g_bits", "gamma"},
                "network")
    layers_raw = _take(net_raw, "layers", "network", "list")
    if not layers_raw:
        _err("network.layers", "expected at least one layer")
    network = {
        "input_shape": _int_list(net_raw, "input_shape", "network"),
        "layers": [_validate_layer(l, f"network.layers[{i}]")
                   for i, l in enumerate(layers_raw)],
        "bits": _int_list(net_raw, "bits", "network", [5, 5, 5], length=3),
        "last_layer_g_bits": _take(net_raw, "last_layer_g_bits", "network", "int", 6),
        "gamma": _take(net_raw, "gamma", "network", "number", 1.0),
    }

    train_raw = raw.get("train", {})
    _check_mapping(train_raw, "train")
    _check_keys(train_raw, {"epochs", "batch_size", "lr", "momentum", "lr_decay_epochs",
                            "lr_decay_factor", "seed", "init", "policy"}, "train")
    init = _take(train_raw, "init", "train", "str", "untruncated_normal")
    if init not in ("untruncated_normal", "truncated_normal"):
        _err("train.init", f"expected 'untruncated_normal' or 'truncated_normal', got {init!r}")
    train = {
        "epochs": _take(train_raw, "epochs", "train", "int", 5),
        "batch_size": _take(train_raw, "batch_size", "train", "int", 256),
        "lr": _take(train_raw, "lr", "train", "number", 0.05),
        "momentum": _take(train_raw, "momentum", "train", "number", 0.9),
        "lr_decay_epochs": _int_list(train_raw, "lr_decay_epochs", "train", []),
        "lr_decay_factor": _take(train_raw, "lr_decay_factor", "train", "number", 0.1),
        "seed": _take(train_raw, "seed", "train", "int", 0),
        "init": init,
        "policy": _validate_policy(train_raw.get("policy", {}), "train.policy"),
    }
    for key in ("epochs", "batch_size"):
        if train[key] <= 0:
            _err(f"train.{key}", f"expected a positive integer, got {train[key]}")

    data = _validate_data(raw.get("data", {}), "data")
    output_dir = _take(raw, "output_dir", "", "str", "runs/latest")

    return {"network": network, "train": train, "data": data, "output_dir": output_dir}


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    return validate_config(raw)


def default_config() -> dict:
    """The built-in task: a small MLP on separable synthetic clusters."""
    return validate_config({
        "network": {
            "input_shape": [784],
            "layers": [
                {"kind": "linear", "out": 256},
                {"kind": "relu"},
                {"kind": "linear", "out": 10},
            ],
            "bits": [5, 5, 5],
            "last_layer_g_bits": 5,
        },
        "train": {
            "epochs": 5,
            "batch_size": 256,
            "lr": 0.05,
            "lr_decay_epochs": [3, 4],
            "lr_decay_factor": 0.1,
            "seed": 0,
        },
        "data": {"kind": "synthetic", "noise": 0.9, "seed": 7},
        "output_dir": "runs/latest",
    })


def network_spec_from_config(cfg: dict) -> NetworkSpec:
    net = cfg["network"]
    layers = []
    for l in net["layers"]:
        layers.append(LayerSpec(
            kind=l["kind"],
            out=l.get("out", 0),
            kernel=l.get("kernel", 0),
            stride=l.get("stride", 1),
            pad=l.get("pad", 0),
            gamma=l.get("gamma"),
            bits=tuple(l["bits"]) if l.get("bits") else None,
        ))
    return NetworkSpec(
        input_shape=tuple(net["input_shape"]),
        layers=layers,
        bits=tuple(net["bits"]),
        last_layer_g_bits=net["last_layer_g_bits"],
        gamma=net["gamma"],
    )


def train_config_from_config(cfg: dict, policy_overrides: dict | None = None) -> TrainConfig:
    train = cfg["train"]
    policy_kwargs = dict(train["policy"])
    if policy_overrides:
        policy_kwargs.update(policy_overrides)
    return TrainConfig(
        epochs=train["epochs"],
        batch_size=train["batch_size"],
        lr=train["lr"],
        momentum=train["momentum"],
        lr_decay_epochs=tuple(train["lr_decay_epochs"]),
        lr_decay_factor=train["lr_decay_factor"],
        seed=train["seed"],
        init=train["init"],
        policy=QuantPolicy(**policy_kwargs),
    )


def dataset_from_config(cfg: dict) -> Dataset:
    data = cfg["data"]
    if data["kind"] == "synthetic":
        return synthetic_clusters(
            classes=data["classes"], dim=data["dim"],
            train_samples=data["train_samples"], test_samples=data["test_samples"],
            noise=data["noise"], seed=data["seed"],
        )
    if data["kind"] == "idx":
        return load_idx_dataset(
            data["train_images"], data["train_labels"],
            data["test_images"], data["test_labels"], scale=data["scale"],
        )
    return load_csv_dataset(
        data["path"], data["label_column"],
        test_fraction=data["test_fraction"], seed=data["seed"],
    )
