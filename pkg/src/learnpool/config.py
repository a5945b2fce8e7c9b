"""Flat ``key = value`` experiment configuration with ``--key=value`` overrides."""

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import InvalidArgument

METHODS = ("spm_fixed", "random_pooling", "learned_full", "learned_batches", "learned_redundant")


@dataclass
class ExperimentConfig:
    train_path: str = ""
    test_path: str = ""
    dataset_format: str = "cifar10"
    dataset_id: str = ""
    dictionary: str = ""
    K: int = 16
    patch_side: int = 6
    prepool: int = 3
    units: int = 4
    init: str = "spm_quadrants"
    optimizer: str = "lbfgs"
    # alpha values may be comma-separated lists; a list means cross-validated selection
    alpha1: str = "1e-3"
    alpha2: str = "1e-3"
    alpha3: str = "1e-2"
    gamma: float = 1.0
    max_iters: int = 500
    cv_folds: int = 5
    batch_width: int = 4
    redundant: bool = False
    seed: int = 0
    train_limit: int = 10000
    test_limit: int = 2000
    subset: str = "first"
    out_dir: str = "out"
    methods: str = "spm_fixed,learned_full"
    ablation: bool = False
    classifier: str = "softmax"
    retrain_full: bool = False
    workers: int = 1
    patch_samples: int = 400000
    kmeans_iters: int = 50
    whiten_eps: float = 0.1
    var_floor: float = 10.0
    code_scaling: bool = True
    vis_cap: int = 64
    source_id: str = ""

    def alphas(self, name):
        return [float(v) for v in str(getattr(self, name)).split(",") if v.strip()]

    def method_list(self):
        out = [m.strip() for m in self.methods.split(",") if m.strip()]
        unknown = [m for m in out if m not in METHODS]
        if unknown:
            raise InvalidArgument(f"unknown methods {unknown}; expected a subset of {METHODS}")
        return out

    def paths(self, name):
        return [p.strip() for p in getattr(self, name).split(",") if p.strip()]

    def check_paths(self, *names):
        for name in names:
            paths = self.paths(name)
            if not paths:
                raise InvalidArgument(f"config key {name!r} is required")
            for p in paths:
                if not Path(p).exists():
                    raise InvalidArgument(f"{name}: file not found: {p}")

    def validate(self):
        if self.K < 1 or self.units < 1:
            raise InvalidArgument("K and units must be at least 1")
        if self.patch_side < 1 or self.prepool < 1:
            raise InvalidArgument("patch_side and prepool must be at least 1")
        for name in ("alpha1", "alpha2", "alpha3"):
            try:
                values = self.alphas(name)
            except ValueError:
                raise InvalidArgument(f"{name} must be a number or comma-separated numbers") from None
            if not values or min(values) < 0:
                raise InvalidArgument(f"{name} needs nonnegative values")
        if self.subset not in ("first", "random"):
            raise InvalidArgument("subset must be 'first' or 'random'")
        self.method_list()
        return self


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(key, raw):
    if key not in _FIELDS:
        raise InvalidArgument(f"unknown config key {key!r}")
    kind = _FIELDS[key].type
    raw = raw.strip()
    try:
        if kind in (bool, "bool"):
            low = raw.lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("1", "true", "yes", "on")
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise InvalidArgument(f"config key {key!r}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"{source}:{lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), raw)
    return values


def load_config(path=None, overrides=()):
    """Build a config from an optional file plus ``--key=value`` overrides."""
    values = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise InvalidArgument(f"config file not found: {path}")
        values.update(parse_config_text(p.read_text(), str(path)))
    for item in overrides:
        item = item[2:] if item.startswith("--") else item
        if "=" not in item:
            raise InvalidArgument(f"override {item!r} must look like --key=value")
        key, raw = item.split("=", 1)
        key = key.replace("-", "_")
        values[key] = _coerce(key, raw)
    return ExperimentConfig(**values).validate()
