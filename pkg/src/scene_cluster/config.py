"""TOML pipeline configuration.

Unknown keys are rejected (they are almost always typos), and every
relative path in the file is resolved against the config file's directory,
so a study directory can be checked out anywhere and still run.
"""

from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .clustering import APConfig, BaselineConfig, DEFAULT_ALPHA, METHODS
from .evaluation import SWEEP_LAYERS
from .features import LAYER_CHANNELS


class ConfigError(ValueError):
    """Bad pipeline configuration."""


@dataclass(frozen=True)
class SynthSettings:
    out_dir: Path = Path("data")
    participants: int = 12
    min_images: int = 10
    max_images: int = 60
    min_environments: int = 3
    max_environments: int = 12
    seed: int = 0
    size: int = 256


@dataclass(frozen=True)
class PreprocessSettings:
    corner_threshold: float = 20.0
    min_component_fraction: float = 0.0005
    expansion: float = 2.0


@dataclass(frozen=True)
class FeatureSettings:
    backend: str = "precomputed"
    layer: int = 2
    tensor_dir: Path | None = None  # default: <cache_dir>/tensors
    network: Path | None = None
    input_size: tuple[int, int] = (224, 224)
    standin: bool = False
    standin_seed: int = 0


@dataclass(frozen=True)
class ClusterSettings:
    method: str = "proposed"
    alpha: float = DEFAULT_ALPHA
    ap: APConfig = field(default_factory=APConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    baseline_source: str = "pixels"


@dataclass(frozen=True)
class SweepSettings:
    alphas: tuple[float, ...] | None = None  # default: 0..1 step 0.01
    layers: tuple[int, ...] = SWEEP_LAYERS
    heatmap: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    manifest: Path = Path("data/manifest.csv")
    cache_dir: Path = Path("cache")
    validation_participants: tuple[str, ...] = ()
    synth: SynthSettings = field(default_factory=SynthSettings)
    preprocess: PreprocessSettings = field(default_factory=PreprocessSettings)
    features: FeatureSettings = field(default_factory=FeatureSettings)
    cluster: ClusterSettings = field(default_factory=ClusterSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)

    def tensor_dir(self) -> Path:
        return self.features.tensor_dir or self.cache_dir / "tensors"


def _section(data: dict, name: str) -> dict:
    sec = data.pop(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return dict(sec)


def _no_leftovers(sec: dict, where: str) -> None:
    if sec:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(sec))}")


def _resolve(base: Path, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path) -> PipelineConfig:
    """Parse and validate a TOML config file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = dict(tomllib.load(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    base = path.parent

    manifest = _resolve(base, data.pop("manifest", "data/manifest.csv"))
    cache_dir = _resolve(base, data.pop("cache_dir", "cache"))
    validation = data.pop("validation_participants", [])
    if not isinstance(validation, list) or not all(
        isinstance(v, str) for v in validation
    ):
        raise ConfigError("validation_participants must be a list of strings")

    sec = _section(data, "synth")
    synth = SynthSettings(
        out_dir=_resolve(base, sec.pop("out_dir", "data")),
        participants=int(sec.pop("participants", 12)),
        min_images=int(sec.pop("min_images", 10)),
        max_images=int(sec.pop("max_images", 60)),
        min_environments=int(sec.pop("min_environments", 3)),
        max_environments=int(sec.pop("max_environments", 12)),
        seed=int(sec.pop("seed", 0)),
        size=int(sec.pop("size", 256)),
    )
    _no_leftovers(sec, "[synth]")

    sec = _section(data, "preprocess")
    preprocess = PreprocessSettings(
        corner_threshold=float(sec.pop("corner_threshold", 20.0)),
        min_component_fraction=float(sec.pop("min_component_fraction", 0.0005)),
        expansion=float(sec.pop("expansion", 2.0)),
    )
    _no_leftovers(sec, "[preprocess]")
    if preprocess.expansion < 1.0:
        raise ConfigError("preprocess.expansion must be >= 1")

    sec = _section(data, "features")
    size_raw = sec.pop("input_size", [224, 224])
    if not (isinstance(size_raw, list) and len(size_raw) == 2):
        raise ConfigError("features.input_size must be [height, width]")
    tensor_dir = sec.pop("tensor_dir", None)
    network = sec.pop("network", None)
    features = FeatureSettings(
        backend=str(sec.pop("backend", "precomputed")),
        layer=int(sec.pop("layer", 2)),
        tensor_dir=_resolve(base, tensor_dir) if tensor_dir else None,
        network=_resolve(base, network) if network else None,
        input_size=(int(size_raw[0]), int(size_raw[1])),
        standin=bool(sec.pop("standin", False)),
        standin_seed=int(sec.pop("standin_seed", 0)),
    )
    _no_leftovers(sec, "[features]")
    if features.backend not in ("precomputed", "inference"):
        raise ConfigError(f"unknown features.backend {features.backend!r}")
    if features.layer not in LAYER_CHANNELS:
        raise ConfigError(
            f"features.layer must be one of {sorted(LAYER_CHANNELS)}"
        )
    if features.backend == "inference" and features.network is None:
        raise ConfigError("features.backend='inference' needs features.network")

    sec = _section(data, "cluster")
    ap_sec = _section(sec, "ap")
    try:
        ap = APConfig(
            damping=float(ap_sec.pop("damping", 0.5)),
            max_iterations=int(ap_sec.pop("max_iterations", 500)),
            convergence_window=int(ap_sec.pop("convergence_window", 50)),
            preference=ap_sec.pop("preference", "median"),
        )
    except ValueError as exc:
        raise ConfigError(f"[cluster.ap]: {exc}") from exc
    _no_leftovers(ap_sec, "[cluster.ap]")
    bl_sec = _section(sec, "baselines")
    eps = bl_sec.pop("dbscan_eps", None)
    bandwidth = bl_sec.pop("meanshift_bandwidth", None)
    baselines = BaselineConfig(
        dbscan_eps=float(eps) if eps is not None else None,
        dbscan_min_pts=int(bl_sec.pop("dbscan_min_pts", 4)),
        meanshift_bandwidth=float(bandwidth) if bandwidth is not None else None,
        optics_min_samples=int(bl_sec.pop("optics_min_samples", 4)),
        optics_xi=float(bl_sec.pop("optics_xi", 0.05)),
    )
    _no_leftovers(bl_sec, "[cluster.baselines]")
    cluster = ClusterSettings(
        method=str(sec.pop("method", "proposed")),
        alpha=float(sec.pop("alpha", DEFAULT_ALPHA)),
        ap=ap,
        baselines=baselines,
        baseline_source=str(sec.pop("baseline_source", "pixels")),
    )
    _no_leftovers(sec, "[cluster]")
    if cluster.method not in METHODS:
        raise ConfigError(f"cluster.method must be one of {METHODS}")
    if not 0.0 <= cluster.alpha <= 1.0:
        raise ConfigError("cluster.alpha must lie in [0, 1]")

    sec = _section(data, "sweep")
    alphas_raw = sec.pop("alphas", None)
    if alphas_raw is not None:
        alphas = tuple(float(a) for a in alphas_raw)
        for a in alphas:
            if not 0.0 <= a <= 1.0:
                raise ConfigError(f"sweep alpha {a} outside [0, 1]")
    else:
        alphas = None
    layers_raw = sec.pop("layers", list(SWEEP_LAYERS))
    layers = tuple(int(m) for m in layers_raw)
    for m in layers:
        if m not in LAYER_CHANNELS:
            raise ConfigError(f"sweep layer {m} not extractable")
    sweep = SweepSettings(
        alphas=alphas, layers=layers, heatmap=bool(sec.pop("heatmap", False))
    )
    _no_leftovers(sec, "[sweep]")

    _no_leftovers(data, "config root")
    return PipelineConfig(
        manifest=manifest,
        cache_dir=cache_dir,
        validation_participants=tuple(validation),
        synth=synth,
        preprocess=preprocess,
        features=features,
        cluster=cluster,
        sweep=sweep,
    )
