"""
Run configuration.

A run configuration is a TOML file with the sections ``[architecture]``, ``[corpus]``, ``[spec]``,
``[search]``, ``[cost]``, ``[modes]`` and ``[sensitivity]``; every section and key is optional::

    [architecture]
    preset = "tiny-gpt"          # base architecture, explicit keys below override it
    n_layers = 2
    seed = 7                     # model seed

    [corpus]
    n_prompts = 8
    prompt_len = 8
    horizon = 8                  # or one horizon per prompt, e.g. [4, 8, 8, 6]
    seed = 0                     # corpus seed

    [spec]
    epsilon = 0.25
    delta = 0.70
    gamma = 0.70
    tau = 0.70
    rho_th = 0.0

    [spec.property_rho_th]       # per-property robustness thresholds
    fact_acc = 0.05

    [spec.properties]            # extra properties over the built-in channels
    stable_head = "always[1,T'](attn_sim_1 - 0.8 >= 0)"

    [search]
    bits = [2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16]
    ratios = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    budget = 200
    seed = 0                     # search seed
    components = ["*:ffn"]       # '<layer>:<component>', '*' for every layer; all components if omitted

    [cost]
    seq_len = 32                 # max_context of the architecture if omitted
    b_ref = 16                   # reference bit-width of the cost model, in [2, 16]
    mac_factor = 2.0

    [modes]                      # replaces Strict/Optimal/Relaxed
    Strict = 99.0

    [sensitivity]
    budget = 50
    delta = [0.5, 0.6, 0.7, 0.8, 0.9]

The bundled configurations ``default`` and ``tiny`` can be used in place of a path.
"""
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Any, Dict, List, Optional, Tuple, Union

from toggle.cost import CostParams
from toggle.evaluation.modes import DEFAULT_MODES
from toggle.exceptions import RunConfigError, SpecSyntaxError, ThresholdRangeError
from toggle.model.architecture import (ARCHITECTURE_PRESETS, LayerComponent, ModelArchitecture,
                                       architecture_violations)
from toggle.model.compression import MAX_BITS, MIN_BITS, P_MAX
from toggle.model.corpus import EvaluationCorpus, build_corpus
from toggle.model.transformer import ReferenceModel, build_model
from toggle.search.acquisition import POOL_SIZE
from toggle.search.encoding import DEFAULT_BITS, DEFAULT_RATIOS, SearchSpace
from toggle.search.optimizer import DEFAULT_BUDGET
from toggle.signals import builtin_channels
from toggle.stl.formulas import BUILTIN_PROPERTIES, PredicateThresholds
from toggle.stl.spec_parser import ParsedSpec, format_spec, parse_spec

BUNDLED_CONFIGS = ('default', 'tiny')
SEED_NAMES = ('model', 'corpus', 'search')
DEFAULT_PRESET = 'tiny-gpt'
SWEEP_EPSILON = (0.15, 0.20, 0.25, 0.30, 0.35)
SWEEP_FLOOR = (0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class ArchitectureConfig:
    """
    Attributes:
        architecture (ModelArchitecture): The resolved architecture.
        preset (Optional[str]): Name of the preset it was derived from.
        seed (int): Model seed.
    """
    architecture: ModelArchitecture = ARCHITECTURE_PRESETS[DEFAULT_PRESET]
    preset: Optional[str] = DEFAULT_PRESET
    seed: int = 0


@dataclass(frozen=True)
class CorpusConfig:
    n_prompts: int = 8
    prompt_len: int = 8
    horizon: Union[int, Tuple[int, ...]] = 8
    seed: int = 0

    @property
    def max_horizon(self) -> int:
        return self.horizon if isinstance(self.horizon, int) else max(self.horizon)


@dataclass(frozen=True)
class SpecConfig:
    """
    Thresholds and extra properties of the property specification.

    Attributes:
        epsilon (float): JSD tolerance.
        delta (float): Attention-similarity floor.
        gamma (float): Embedding-similarity floor.
        tau (float): Factual-ratio floor.
        rho_th (float): Robustness threshold of every property without an explicit one.
        property_rho_th (Dict[str, float]): Robustness thresholds by property name.
        properties (Dict[str, str]): Extra property formulas by name, in specification syntax.
    """
    epsilon: float = 0.25
    delta: float = 0.70
    gamma: float = 0.70
    tau: float = 0.70
    rho_th: float = 0.0
    property_rho_th: Dict[str, float] = field(default_factory=dict)
    properties: Dict[str, str] = field(default_factory=dict)

    @property
    def thresholds(self) -> PredicateThresholds:
        return PredicateThresholds(self.epsilon, self.delta, self.gamma, self.tau)

    def source(self, properties: Optional[Dict[str, str]] = None) -> str:
        """Specification text of this block, optionally with another set of extra properties."""
        properties = self.properties if properties is None else properties
        return format_spec(self.thresholds, self.rho_th, properties, self.property_rho_th)


@dataclass(frozen=True)
class SearchConfig:
    bits: Tuple[int, ...] = DEFAULT_BITS
    ratios: Tuple[float, ...] = DEFAULT_RATIOS
    budget: int = DEFAULT_BUDGET
    n_init: Optional[int] = None
    seed: int = 0
    components: Optional[Tuple[LayerComponent, ...]] = None
    pool_size: int = POOL_SIZE
    refit_every: int = 1


@dataclass(frozen=True)
class CostConfig:
    seq_len: Optional[int] = None
    b_ref: int = MAX_BITS
    mac_factor: float = 2.0


@dataclass(frozen=True)
class SensitivityConfig:
    """
    Threshold sweep settings. Each threshold is varied over its grid while the others keep the values of
    the `[spec]` section.

    Attributes:
        budget (int): Search budget per threshold setting.
        epsilon (Tuple[float, ...]): Values of epsilon.
        delta (Tuple[float, ...]): Values of delta.
        gamma (Tuple[float, ...]): Values of gamma.
        tau (Tuple[float, ...]): Values of tau.
        exhaustive (bool): Evaluate the whole search space per setting instead of searching.
    """
    budget: int = 50
    epsilon: Tuple[float, ...] = SWEEP_EPSILON
    delta: Tuple[float, ...] = SWEEP_FLOOR
    gamma: Tuple[float, ...] = SWEEP_FLOOR
    tau: Tuple[float, ...] = SWEEP_FLOOR
    exhaustive: bool = False

    def grids(self) -> Dict[str, Tuple[float, ...]]:
        return {'epsilon': self.epsilon, 'delta': self.delta, 'gamma': self.gamma, 'tau': self.tau}


@dataclass(frozen=True)
class RunConfig:
    """
    Complete configuration of a run. All randomness flows from the model, corpus and search seeds.
    """
    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    spec: SpecConfig = field(default_factory=SpecConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    cost: CostConfig = field(default_factory=CostConfig)
    modes: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_MODES))
    sensitivity: SensitivityConfig = field(default_factory=SensitivityConfig)

    @property
    def arch(self) -> ModelArchitecture:
        return self.architecture.architecture

    def build_model(self) -> ReferenceModel:
        return build_model(self.arch, self.architecture.seed)

    def build_corpus(self, model: ReferenceModel) -> EvaluationCorpus:
        c = self.corpus
        return build_corpus(model, c.n_prompts, c.prompt_len, c.horizon, c.seed)

    def parsed_spec(self, spec: Optional[SpecConfig] = None) -> ParsedSpec:
        spec = self.spec if spec is None else spec
        return parse_spec(spec.source(), self.arch.n_layers, known_channels=builtin_channels(self.arch.n_layers))

    def search_space(self) -> SearchSpace:
        s = self.search
        return SearchSpace(self.arch, s.bits, s.ratios, s.components)

    def cost_params(self) -> CostParams:
        seq_len = self.cost.seq_len if self.cost.seq_len is not None else self.arch.max_context
        return CostParams(seq_len, self.cost.b_ref, self.cost.mac_factor)

    def with_seeds(self, model: Optional[int] = None, corpus: Optional[int] = None,
                   search: Optional[int] = None) -> 'RunConfig':
        out = self
        if model is not None:
            out = replace(out, architecture=replace(out.architecture, seed=int(model)))
        if corpus is not None:
            out = replace(out, corpus=replace(out.corpus, seed=int(corpus)))
        if search is not None:
            out = replace(out, search=replace(out.search, seed=int(search)))
        return out

    def with_budget(self, budget: int) -> 'RunConfig':
        return replace(self, search=replace(self.search, budget=int(budget)),
                       sensitivity=replace(self.sensitivity, budget=int(budget)))


class _Section:
    """Typed access to one TOML table that records violations instead of raising."""

    KINDS = {
        'int': (lambda v: isinstance(v, int) and not isinstance(v, bool), 'an integer'),
        'real': (lambda v: isinstance(v, (int, float)) and not isinstance(v, bool), 'a number'),
        'str': (lambda v: isinstance(v, str), 'a string'),
        'bool': (lambda v: isinstance(v, bool), 'true or false'),
        'ints': (lambda v: isinstance(v, list) and all(isinstance(x, int) and not isinstance(x, bool) for x in v),
                 'a list of integers'),
        'reals': (lambda v: isinstance(v, list)
                  and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v), 'a list of numbers'),
        'strs': (lambda v: isinstance(v, list) and all(isinstance(x, str) for x in v), 'a list of strings'),
        'table': (lambda v: isinstance(v, dict), 'a table'),
    }

    def __init__(self, name: str, data: Any, violations: List[str]):
        self.name = name
        self.violations = violations
        self.used = set()
        if data is None:
            data = {}
        elif not isinstance(data, dict):
            violations.append(f"{name}: expected a table")
            data = {}
        self.data = data

    def has(self, key: str) -> bool:
        return key in self.data

    def get(self, key: str, kind: str, default: Any = None) -> Any:
        self.used.add(key)
        if key not in self.data:
            return default
        value = self.data[key]
        check, description = self.KINDS[kind]
        if not check(value):
            self.fail(key, f"expected {description}, got {value!r}")
            return default
        return value

    def fail(self, key: str, message: str) -> None:
        self.violations.append(f"{self.name}.{key}: {message}")

    def finish(self) -> None:
        for key in self.data:
            if key not in self.used:
                self.fail(key, "unknown key")


def _architecture(data: Any, violations: List[str]) -> ArchitectureConfig:
    section = _Section('architecture', data, violations)
    preset = section.get('preset', 'str', DEFAULT_PRESET)
    if preset not in ARCHITECTURE_PRESETS:
        section.fail('preset', f"unknown preset '{preset}', available: {', '.join(ARCHITECTURE_PRESETS)}")
        preset = DEFAULT_PRESET
    fields = ARCHITECTURE_PRESETS[preset].to_dict()
    kinds = {'style': 'str', 'n_layers': 'int', 'hidden_dim': 'int', 'n_heads': 'int', 'vocab_size': 'int',
             'max_context': 'int', 'ffn_mult': 'int', 'init_std': 'real', 'tie_embeddings': 'bool'}
    customized = False
    for key, kind in kinds.items():
        if section.has(key):
            value = section.get(key, kind)
            if value is not None:
                fields[key] = float(value) if kind == 'real' else value
                customized = True
    seed = section.get('seed', 'int', 0)
    section.finish()
    problems = architecture_violations(**fields)
    if problems:
        violations.extend(f"architecture.{p}" for p in problems)
        return ArchitectureConfig(seed=seed)
    return ArchitectureConfig(ModelArchitecture(**fields), None if customized else preset, seed)


def _corpus(data: Any, arch: ModelArchitecture, violations: List[str]) -> CorpusConfig:
    section = _Section('corpus', data, violations)
    defaults = CorpusConfig()
    n_prompts = section.get('n_prompts', 'int', defaults.n_prompts)
    prompt_len = section.get('prompt_len', 'int', defaults.prompt_len)
    horizon = defaults.horizon
    if section.has('horizon'):
        raw = section.data['horizon']
        horizon = section.get('horizon', 'ints' if isinstance(raw, list) else 'int', defaults.horizon)
        if isinstance(horizon, list):
            horizon = tuple(horizon)
    seed = section.get('seed', 'int', defaults.seed)
    section.finish()
    if n_prompts < 1:
        section.fail('n_prompts', "must be >= 1")
    if prompt_len < 1:
        section.fail('prompt_len', "must be >= 1")
    horizons = [horizon] if isinstance(horizon, int) else list(horizon)
    if isinstance(horizon, tuple) and len(horizon) != n_prompts:
        section.fail('horizon', f"needs one value per prompt ({n_prompts}), got {len(horizon)}")
    if not horizons or min(horizons) < 1:
        section.fail('horizon', "every horizon must be >= 1")
    elif prompt_len >= 1 and prompt_len + max(horizons) - 1 > arch.max_context:
        section.fail('horizon', f"prompt_len + horizon - 1 = {prompt_len + max(horizons) - 1} exceeds "
                                f"max_context {arch.max_context}")
    return CorpusConfig(n_prompts, prompt_len, horizon, seed)


def _spec(data: Any, arch: ModelArchitecture, violations: List[str]) -> SpecConfig:
    section = _Section('spec', data, violations)
    defaults = SpecConfig()
    values = {}
    for key in ('epsilon', 'delta', 'gamma', 'tau'):
        value = float(section.get(key, 'real', getattr(defaults, key)))
        if not 0.0 < value <= 1.0:
            section.fail(key, f"{value} outside the admissible range (0, 1]")
            value = getattr(defaults, key)
        values[key] = value
    rho_th = float(section.get('rho_th', 'real', defaults.rho_th))
    if rho_th < 0.0:
        section.fail('rho_th', f"{rho_th} is negative, robustness thresholds must be >= 0")
        rho_th = 0.0

    properties: Dict[str, str] = {}
    for name, formula in section.get('properties', 'table', {}).items():
        if not isinstance(formula, str):
            section.fail(f"properties.{name}", "expected a formula string")
        elif name in BUILTIN_PROPERTIES:
            section.fail(f"properties.{name}", "redefines a built-in property")
        else:
            properties[name] = formula

    property_rho_th: Dict[str, float] = {}
    for name, value in section.get('property_rho_th', 'table', {}).items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            section.fail(f"property_rho_th.{name}", f"expected a number, got {value!r}")
        elif value < 0.0:
            section.fail(f"property_rho_th.{name}", f"{value} is negative, robustness thresholds must be >= 0")
        elif name not in BUILTIN_PROPERTIES and name not in properties:
            section.fail(f"property_rho_th.{name}", "unknown property")
        else:
            property_rho_th[name] = float(value)
    section.finish()

    spec = SpecConfig(rho_th=rho_th, property_rho_th=property_rho_th, properties=properties, **values)
    channels = builtin_channels(arch.n_layers)
    for name, formula in properties.items():
        own = {k: v for k, v in property_rho_th.items() if k in BUILTIN_PROPERTIES or k == name}
        try:
            parse_spec(replace(spec, property_rho_th=own).source({name: formula}), arch.n_layers,
                       known_channels=channels)
        except (SpecSyntaxError, ThresholdRangeError) as e:
            section.fail(f"properties.{name}", str(e))
    return spec


def _components(values: List[str], arch: ModelArchitecture, section: _Section) -> Optional[Tuple[LayerComponent, ...]]:
    known = arch.layer_components()
    selected = []
    for entry in values:
        layer, sep, component = entry.partition(':')
        if not sep or component not in arch.components:
            section.fail('components', f"'{entry}' is not '<layer>:<component>' with a component of "
                                       f"{', '.join(arch.components)}")
            continue
        if layer.strip() == '*':
            selected.extend((l, component) for l in range(1, arch.n_layers + 1))
        elif layer.strip().isdigit() and (int(layer), component) in known:
            selected.append((int(layer), component))
        else:
            section.fail('components', f"'{entry}' names a layer outside 1..{arch.n_layers}")
    return tuple(sorted(set(selected))) if selected else None


def _search(data: Any, arch: ModelArchitecture, violations: List[str]) -> SearchConfig:
    section = _Section('search', data, violations)
    defaults = SearchConfig()
    bits = tuple(section.get('bits', 'ints', list(defaults.bits)))
    ratios = tuple(float(p) for p in section.get('ratios', 'reals', list(defaults.ratios)))
    budget = section.get('budget', 'int', defaults.budget)
    n_init = section.get('n_init', 'int', defaults.n_init)
    seed = section.get('seed', 'int', defaults.seed)
    components = None
    if section.has('components'):
        components = _components(section.get('components', 'strs', []), arch, section)
    pool_size = section.get('pool_size', 'int', defaults.pool_size)
    refit_every = section.get('refit_every', 'int', defaults.refit_every)
    section.finish()

    if not bits:
        section.fail('bits', "must not be empty")
    for b in bits:
        if not MIN_BITS <= b <= MAX_BITS:
            section.fail('bits', f"{b} outside [{MIN_BITS}, {MAX_BITS}]")
    if not ratios:
        section.fail('ratios', "must not be empty")
    for p in ratios:
        if not 0.0 <= p <= P_MAX:
            section.fail('ratios', f"{p} outside [0, {P_MAX}] (P_max = {P_MAX})")
    if budget < 2:
        section.fail('budget', "must be >= 2")
    if n_init is not None and not 2 <= n_init <= max(budget, 2):
        section.fail('n_init', f"must lie in [2, budget], got {n_init}")
    if pool_size < 1:
        section.fail('pool_size', "must be >= 1")
    if refit_every < 1:
        section.fail('refit_every', "must be >= 1")
    n_components = len(components) if components is not None else len(arch.layer_components())
    if bits and ratios and (len(set(bits)) * len(set(ratios))) ** n_components < 2:
        section.fail('bits', "the search space holds a single configuration")
    return SearchConfig(bits, ratios, budget, n_init, seed, components, pool_size, refit_every)


def _cost(data: Any, violations: List[str]) -> CostConfig:
    section = _Section('cost', data, violations)
    defaults = CostConfig()
    seq_len = section.get('seq_len', 'int', defaults.seq_len)
    b_ref = section.get('b_ref', 'int', defaults.b_ref)
    mac_factor = float(section.get('mac_factor', 'real', defaults.mac_factor))
    section.finish()
    if seq_len is not None and seq_len < 1:
        section.fail('seq_len', "must be >= 1")
    if not MIN_BITS <= b_ref <= MAX_BITS:
        section.fail('b_ref', f"{b_ref} outside [{MIN_BITS}, {MAX_BITS}]")
    if not mac_factor > 0:
        section.fail('mac_factor', "must be > 0")
    return CostConfig(seq_len, b_ref, mac_factor)


def _modes(data: Any, violations: List[str]) -> Dict[str, float]:
    if data is None:
        return dict(DEFAULT_MODES)
    section = _Section('modes', data, violations)
    modes = {}
    for name in list(section.data):
        target = section.get(name, 'real')
        if target is None:
            continue
        if not 0.0 <= target <= 100.0:
            section.fail(name, f"target {target} outside [0, 100]")
        modes[name] = float(target)
    if not modes and not section.data:
        violations.append("modes: at least one mode is needed")
    return modes


def _sensitivity(data: Any, violations: List[str]) -> SensitivityConfig:
    section = _Section('sensitivity', data, violations)
    defaults = SensitivityConfig()
    budget = section.get('budget', 'int', defaults.budget)
    grids = {}
    for key, default in defaults.grids().items():
        grid = tuple(float(v) for v in section.get(key, 'reals', list(default)))
        if not grid:
            section.fail(key, "must not be empty")
        for value in grid:
            if not 0.0 < value <= 1.0:
                section.fail(key, f"{value} outside the admissible range (0, 1]")
        grids[key] = grid
    exhaustive = section.get('exhaustive', 'bool', defaults.exhaustive)
    section.finish()
    if budget < 2:
        section.fail('budget', "must be >= 2")
    return SensitivityConfig(budget, exhaustive=exhaustive, **grids)


SECTIONS = ('architecture', 'corpus', 'spec', 'search', 'cost', 'modes', 'sensitivity')


def parse_run_config(data: Dict[str, Any]) -> Tuple[RunConfig, List[str]]:
    """
    Build a run configuration from parsed TOML and cross-check it.

    Args:
        data (Dict[str, Any]): The TOML document.

    Returns:
        Tuple[RunConfig, List[str]]: The configuration and every violation as '<section>.<field>: <message>'.
            The configuration must not be used if violations were found.
    """
    violations: List[str] = []
    for key in data:
        if key not in SECTIONS:
            violations.append(f"{key}: unknown section")
    architecture = _architecture(data.get('architecture'), violations)
    arch = architecture.architecture
    config = RunConfig(architecture=architecture,
                       corpus=_corpus(data.get('corpus'), arch, violations),
                       spec=_spec(data.get('spec'), arch, violations),
                       search=_search(data.get('search'), arch, violations),
                       cost=_cost(data.get('cost'), violations),
                       modes=_modes(data.get('modes'), violations),
                       sensitivity=_sensitivity(data.get('sensitivity'), violations))
    return config, violations


def resolve_config_path(source: str) -> str:
    """Path of a configuration file, resolving the names of bundled configurations."""
    if source in BUNDLED_CONFIGS and not os.path.exists(source):
        return str(resources.files('toggle').joinpath('configs', f"{source}.toml"))
    return source


def load_run_config(source: str) -> RunConfig:
    """
    Load and validate a run configuration.

    Args:
        source (str): Path of a TOML file or the name of a bundled configuration ('default', 'tiny').

    Returns:
        RunConfig: The validated configuration.

    Raises:
        RunConfigError: Listing every violation, including TOML syntax errors.
        OSError: If the file cannot be read.
    """
    path = resolve_config_path(source)
    with open(path, 'rb') as f:
        try:
            data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise RunConfigError([f"{path}: {e}"]) from None
    config, violations = parse_run_config(data)
    if violations:
        raise RunConfigError(violations)
    return config


def parse_seed_overrides(overrides: List[str]) -> Dict[str, int]:
    """
    Parse '<name>=<int>' seed overrides for the model, corpus and search seeds.

    Raises:
        RunConfigError: For malformed overrides or unknown seed names.
    """
    seeds, problems = {}, []
    for item in overrides or []:
        name, sep, value = item.partition('=')
        name = name.strip()
        if not sep or name not in SEED_NAMES:
            problems.append(f"seed-override: '{item}' is not <{'|'.join(SEED_NAMES)}>=<int>")
            continue
        try:
            seeds[name] = int(value)
        except ValueError:
            problems.append(f"seed-override: '{item}' needs an integer seed")
    if problems:
        raise RunConfigError(problems)
    return seeds
