"""Experiment configuration files (TOML).

One file fully determines a run::

    seed = 0
    output_dir = "runs/toy-gc"
    workers = 1

    [data]
    root = "toy_data"          # image paths are relative to this
    list = "toy_data/list.txt" # one path per line, optionally "path,label"

    [model]
    source = "toy"
    eval = ["toy"]

    [attack]
    name = "filterfool"        # fgsm, bim, ll-fgsm, ll-bim, p-fgsm, filterfool, filterfool-c
    filter = "gamma"
    gamma = 0.5

    [defenses]
    sweep = ["jpeg:100", "median:3", "bits:7"]

Relative paths resolve against the directory holding the config file.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .attack import AttackConfig
from .baselines import NormAttackConfig
from .defenses import DefenseSpec
from .filters import FilterSpec
from .perturb_net import FCNNConfig

ATTACKS = ("fgsm", "bim", "ll-fgsm", "ll-bim", "p-fgsm", "filterfool", "filterfool-c")
FILTER_KEYS = ("gamma", "alpha", "smoothing_lambda", "kappa", "beta_max", "sigmoid_params", "clip_residual")
FF_KEYS = (
    "tau",
    "max_iter",
    "step_size",
    "eta",
    "adv_weight",
    "adv_margin",
    "adv_gate",
    "hadamard_diff",
    "adam_betas",
    "trace",
)
NORM_KEYS = ("epsilon", "tau_p")


class ConfigError(ValueError):
    """The configuration file is missing, malformed or inconsistent."""


@dataclass
class ExperimentConfig:
    data_root: Path
    image_list: Path
    source_model: str
    eval_models: list
    attack_name: str
    attack: object
    defenses: list = field(default_factory=list)
    output_dir: Path = Path("runs/default")
    seed: int = 0
    workers: int = 1
    cache_dir: str = None
    offline: bool = False
    taxonomy: Path = None
    raw: dict = field(default_factory=dict, repr=False)

    def resolved(self):
        """Canonical, path-free description of everything that affects outputs."""
        return {
            "seed": self.seed,
            "source_model": self.source_model,
            "eval_models": list(self.eval_models),
            "attack_name": self.attack_name,
            "attack": _attack_dict(self.attack),
            "defenses": [str(d) for d in self.defenses],
            "image_list": _file_digest(self.image_list),
            "taxonomy": _file_digest(self.taxonomy) if self.taxonomy else None,
        }

    @property
    def hash(self):
        return config_hash(self.resolved())


def _attack_dict(a):
    if isinstance(a, AttackConfig):
        return a.to_dict()
    return {"epsilon": a.epsilon, "tau_p": a.tau_p, "seed": a.seed}


def _file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _take(section, keys):
    return {k: section[k] for k in keys if k in section}


def _unknown(section, allowed, where):
    extra = set(section) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(extra)}")


def build_attack(name, section, seed):
    """AttackConfig or NormAttackConfig from an ``[attack]`` table."""
    if name not in ATTACKS:
        raise ConfigError(f"unknown attack {name!r}; choose from {ATTACKS}")
    if name.startswith("filterfool"):
        _unknown(section, ("name", "filter", "seed") + FILTER_KEYS + FF_KEYS + ("fcnn",), "[attack]")
        fspec = _take(section, FILTER_KEYS)
        if "sigmoid_params" in fspec:
            fspec["sigmoid_params"] = tuple(fspec["sigmoid_params"])
        try:
            filt = FilterSpec(kind=section.get("filter", "log"), **fspec)
            kw = _take(section, FF_KEYS)
            if "adam_betas" in kw:
                kw["adam_betas"] = tuple(kw["adam_betas"])
            if "fcnn" in section:
                net = dict(section["fcnn"])
                if "dilations" in net:
                    net["dilations"] = tuple(net["dilations"])
                kw["fcnn"] = FCNNConfig(**net)
            mode = "categorical" if name == "filterfool-c" else "semantic"
            return AttackConfig(filter=filt, mode=mode, seed=int(section.get("seed", seed)), **kw)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"[attack]: {exc}") from exc
    _unknown(section, ("name", "seed") + NORM_KEYS, "[attack]")
    try:
        return NormAttackConfig(seed=int(section.get("seed", seed)), **_take(section, NORM_KEYS))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[attack]: {exc}") from exc


def parse_config(doc, base=Path(".")):
    """ExperimentConfig from an already parsed TOML mapping."""
    base = Path(base)
    _unknown(doc, ("seed", "output_dir", "workers", "data", "model", "attack", "defenses", "taxonomy"), "top level")
    for key in ("data", "model", "attack"):
        if key not in doc:
            raise ConfigError(f"missing [{key}] section")
    data, model, attack = doc["data"], doc["model"], doc["attack"]
    _unknown(data, ("root", "list"), "[data]")
    _unknown(model, ("source", "eval", "cache_dir", "offline"), "[model]")
    if "list" not in data:
        raise ConfigError("[data] needs a 'list' file")
    if "source" not in model:
        raise ConfigError("[model] needs a 'source' model")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    image_list = base / data["list"]
    if not image_list.is_file():
        raise ConfigError(f"image list {image_list} does not exist")
    root = base / data.get("root", Path(data["list"]).parent)
    tax = doc.get("taxonomy")
    if tax is not None:
        tax = base / tax
        if not tax.is_file():
            raise ConfigError(f"taxonomy file {tax} does not exist")
    try:
        defenses = [DefenseSpec.parse(d) for d in doc.get("defenses", {}).get("sweep", [])]
    except ValueError as exc:
        raise ConfigError(f"[defenses]: {exc}") from exc
    workers = doc.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers must be a positive integer")
    evals = model.get("eval", [model["source"]])
    if isinstance(evals, str):
        evals = [evals]
    name = attack.get("name", "filterfool")
    return ExperimentConfig(
        data_root=root,
        image_list=image_list,
        source_model=model["source"],
        eval_models=list(evals),
        attack_name=name,
        attack=build_attack(name, attack, seed),
        defenses=defenses,
        output_dir=base / doc.get("output_dir", "runs/default"),
        seed=seed,
        workers=workers,
        cache_dir=str(base / model["cache_dir"]) if "cache_dir" in model else None,
        offline=bool(model.get("offline", False)),
        taxonomy=tax,
        raw=doc,
    )


def load_config(path):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc, path.parent)


def read_image_list(path):
    """[(relative_path, label_or_None)] from a list file; blank lines and # comments skipped."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        rel, sep, label = line.partition(",")
        if sep:
            try:
                label = int(label)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad label {label!r}") from exc
        out.append((rel.strip(), label if sep else None))
    return out
