import sys
import numpy as np
from tqdm import tqdm
from typing import Callable, Dict, List, Optional, Sequence

from toggle.cost import CostParams, cost_report
from toggle.evaluation.preservation import preservation_scores
from toggle.exceptions import RecordLogError, SearchSpaceError
from toggle.model.compression import CompressionConfig, apply_config
from toggle.model.corpus import EvaluationCorpus
from toggle.model.inference import generate_signals, reference_passes
from toggle.model.transformer import ReferenceModel
from toggle.search.acquisition import POOL_SIZE, OptimizerState, propose_next
from toggle.search.encoding import SearchSpace, initial_design
from toggle.search.records import EvaluationRecord, RecordLog
from toggle.search.surrogate import GpSurrogate, gp_fit
from toggle.signals import SignalBundle
from toggle.stl.formulas import check_feasibility, min_robustness_per_property
from toggle.stl.spec_parser import ParsedSpec

DEFAULT_BUDGET = 200
DEFAULT_N_INIT = 16

Evaluate = Callable[[CompressionConfig, int], EvaluationRecord]


def evaluate_config(kappa: CompressionConfig, base_model: ReferenceModel, corpus: EvaluationCorpus,
                    spec: ParsedSpec, cost_params: CostParams, config_id: int = 0,
                    bundle: Optional[SignalBundle] = None) -> EvaluationRecord:
    """
    Evaluate one configuration: compress, run paired inference, score robustness, preservation and cost.

    Args:
        kappa (CompressionConfig): The configuration.
        base_model (ReferenceModel): The uncompressed model.
        corpus (EvaluationCorpus): Evaluation prompts.
        spec (ParsedSpec): Properties and thresholds.
        cost_params (CostParams): Cost constants.
        config_id (int): Id stored in the record.
        bundle (Optional[SignalBundle]): Signals of `kappa` computed earlier; skips inference if given.

    Returns:
        EvaluationRecord: The record.
    """
    if bundle is None:
        bundle = generate_signals(base_model, apply_config(base_model, kappa), corpus)
    return score_bundle(kappa, bundle, base_model, spec, cost_params, config_id)


def score_bundle(kappa: CompressionConfig, bundle: SignalBundle, base_model: ReferenceModel, spec: ParsedSpec,
                 cost_params: CostParams, config_id: int = 0) -> EvaluationRecord:
    rho_min = min_robustness_per_property(spec.properties, bundle)
    feasible = check_feasibility(rho_min, spec.robustness_thresholds)
    scores = preservation_scores(bundle, spec.predicate_thresholds)
    report = cost_report(base_model, kappa, cost_params)
    return EvaluationRecord(config_id=config_id, kappa=kappa, cost=report.flops_compressed, rho_min=rho_min,
                            feasible=feasible, avg_pp=scores.avg_pp,
                            per_property_ps={k: float(v) for k, v in scores.per_property_mean.items()},
                            cost_report=report.to_dict())


class ConfigEvaluator:
    """
    Evaluates configurations against a fixed base model and corpus.

    Base-model forward passes are computed once. With `cache_signals`, signal bundles are kept per
    configuration, so re-evaluating under other thresholds skips inference.
    """

    def __init__(self, base_model: ReferenceModel, corpus: EvaluationCorpus, spec: ParsedSpec,
                 cost_params: CostParams, cache_signals: bool = False, scheduler: str = 'threads'):
        """
        Attributes:
            base_model (ReferenceModel): The uncompressed model.
            corpus (EvaluationCorpus): Evaluation prompts.
            spec (ParsedSpec): Properties and thresholds used for scoring.
            cost_params (CostParams): Cost constants.
            signal_cache (Optional[Dict[CompressionConfig, SignalBundle]]): Cached bundles, None if disabled.
            scheduler (str): Dask scheduler for prompt-level parallelism.
        """
        self.base_model = base_model
        self.corpus = corpus
        self.spec = spec
        self.cost_params = cost_params
        self.signal_cache: Optional[Dict[CompressionConfig, SignalBundle]] = {} if cache_signals else None
        self.scheduler = scheduler
        self._base_passes = None

    @property
    def base_passes(self):
        if self._base_passes is None:
            self._base_passes = reference_passes(self.base_model, self.corpus)
        return self._base_passes

    def with_spec(self, spec: ParsedSpec) -> 'ConfigEvaluator':
        """Evaluator for other thresholds sharing base passes and signal cache."""
        other = ConfigEvaluator(self.base_model, self.corpus, spec, self.cost_params, scheduler=self.scheduler)
        other.signal_cache = self.signal_cache
        other._base_passes = self._base_passes
        return other

    def signals(self, kappa: CompressionConfig) -> SignalBundle:
        if self.signal_cache is not None and kappa in self.signal_cache:
            return self.signal_cache[kappa]
        bundle = generate_signals(self.base_model, apply_config(self.base_model, kappa), self.corpus,
                                  base_passes=self.base_passes, scheduler=self.scheduler)
        if self.signal_cache is not None:
            self.signal_cache[kappa] = bundle
        return bundle

    def __call__(self, kappa: CompressionConfig, config_id: int = 0) -> EvaluationRecord:
        return score_bundle(kappa, self.signals(kappa), self.base_model, self.spec, self.cost_params, config_id)


class RobustnessGuidedSearch:
    """
    Constrained Bayesian optimization of the compression configuration.

    One Gaussian process models the cost and one per property models its minimum robustness. After a
    Latin-hypercube initial design, each iteration evaluates the candidate maximizing the expected cost
    improvement weighted by the probability that all robustness constraints hold.
    """

    def __init__(self, space: SearchSpace, evaluate: Evaluate, property_names: Sequence[str],
                 rho_th: Sequence[float], budget: int = DEFAULT_BUDGET, n_init: Optional[int] = None,
                 seed: int = 0, record_log: Optional[str] = None, pool_size: int = POOL_SIZE,
                 refit_every: int = 1, verbose: bool = False):
        """
        Attributes:
            space (SearchSpace): The configuration space.
            evaluate (Callable[[CompressionConfig, int], EvaluationRecord]): Evaluates a configuration.
            property_names (Sequence[str]): Properties constrained by the search, in surrogate order.
            rho_th (np.ndarray): Robustness threshold per property.
            budget (int): Total number of evaluations including the initial design, capped at the space size.
            n_init (int): Size of the initial design, min(16, |space|, budget) by default.
            seed (int): Search seed.
            record_log (Optional[RecordLog]): Log to append records to and resume from.
            pool_size (int): Random candidates per proposal on spaces larger than the pool.
            refit_every (int): Marginal-likelihood refit interval in BO iterations; between refits only the
                posterior is updated.
            verbose (bool): Print progress.
        """
        self.space = space
        self.evaluate = evaluate
        self.property_names = list(property_names)
        self.rho_th = np.asarray(rho_th, dtype=np.float64)
        if len(self.property_names) != len(self.rho_th):
            raise ValueError("property_names and rho_th must have the same length.")
        self.budget = min(int(budget), space.size)
        self.n_init = min(DEFAULT_N_INIT, space.size, self.budget) if n_init is None else int(n_init)
        if self.budget < self.n_init:
            raise SearchSpaceError(f"Budget {self.budget} is smaller than the initial design ({self.n_init}).")
        if refit_every < 1:
            raise ValueError(f"refit_every must be >= 1, got {refit_every}.")
        self.seed = seed
        self.record_log = RecordLog(record_log) if record_log else None
        self.pool_size = pool_size
        self.refit_every = refit_every
        self.verbose = verbose
        self.records: List[EvaluationRecord] = []
        self._kernels = None
        self._kernels_at = None

    def _resume(self, design: List[CompressionConfig]) -> None:
        if self.record_log is None:
            return
        records = self.record_log.load()
        if len(records) > self.budget:
            raise RecordLogError(f"Record log holds {len(records)} records, more than the budget {self.budget}.")
        for record, kappa in zip(records, design):
            if record.kappa != kappa:
                raise RecordLogError(f"Record {record.config_id} of the log does not match the initial design; "
                                     f"the log was written with other search settings.")
        self.records = records
        if records and self.verbose:
            print(f"Resuming from {len(records)} logged evaluations.")

    def _observe(self, kappa: CompressionConfig) -> EvaluationRecord:
        record = self.evaluate(kappa, len(self.records)).with_id(len(self.records))
        missing = set(self.property_names) - set(record.rho_min)
        if missing:
            raise ValueError(f"Evaluation lacks robustness values for {sorted(missing)}.")
        self.records.append(record)
        if self.record_log is not None:
            self.record_log.append(record)
        return record

    def _fit(self, X: np.ndarray, targets: np.ndarray, iteration: int) -> List[GpSurrogate]:
        """
        Surrogates for an iteration. Hyperparameters are re-optimized at iterations n_init, n_init + k, ...
        on the records available then, so the fit depends on the iteration index only.
        """
        last_refit = self.n_init + ((iteration - self.n_init) // self.refit_every) * self.refit_every
        if self._kernels_at != last_refit:
            fitted = [gp_fit(X[:last_refit], targets[:last_refit, j]) for j in range(targets.shape[1])]
            self._kernels = [gp.kernel for gp in fitted]
            self._kernels_at = last_refit
            if last_refit == iteration:
                return fitted
        return [gp_fit(X[:iteration], targets[:iteration, j], kernel=k, optimize=False)
                for j, k in enumerate(self._kernels)]

    def state(self) -> OptimizerState:
        iteration = len(self.records)
        configs = [r.kappa for r in self.records]
        X = self.space.encode_many(configs)
        costs = np.array([r.cost for r in self.records])
        rho = np.array([[r.rho_min[name] for name in self.property_names] for r in self.records])
        gps = self._fit(X, np.column_stack([costs, rho]), iteration)
        return OptimizerState(space=self.space, configs=configs, costs=costs, rho=rho, rho_th=self.rho_th,
                              cost_gp=gps[0], constraint_gps=gps[1:], pool_size=self.pool_size)

    def best_feasible(self) -> Optional[EvaluationRecord]:
        feasible = [r for r in self.records if r.feasible]
        return min(feasible, key=lambda r: (r.cost, r.config_id)) if feasible else None

    def run(self) -> List[EvaluationRecord]:
        """
        Run the search until the budget is spent, resuming from the record log if it holds records.

        Returns:
            List[EvaluationRecord]: All records in evaluation order.
        """
        design = initial_design(self.space, self.n_init, self.seed)
        self._resume(design)
        with tqdm(total=self.budget, initial=len(self.records), file=sys.stdout, colour='GREEN',
                  bar_format='{l_bar}{bar:20}{r_bar}', disable=not self.verbose, desc='Search') as pbar:
            for kappa in design[len(self.records):]:
                self._observe(kappa)
                pbar.update(1)
            while len(self.records) < self.budget:
                iteration = len(self.records)
                kappa = propose_next(self.state(), seed=[self.seed, iteration])
                record = self._observe(kappa)
                best = self.best_feasible()
                pbar.set_postfix(best_cost=f"{best.cost:.4g}" if best else 'none')
                pbar.update(1)
                if self.verbose:
                    tqdm.write(f"Iteration {iteration}: cost={record.cost:.6g} feasible={record.feasible} "
                               f"rho_overall={record.rho_overall:.4f}", file=sys.stdout)
        if self.verbose:
            best = self.best_feasible()
            print(f"Search finished after {len(self.records)} evaluations; "
                  + (f"best feasible cost {best.cost:.6g} (config {best.config_id})." if best
                     else "no feasible configuration found."))
        return self.records


def run_search(space: SearchSpace, evaluate: Evaluate, property_names: Sequence[str], rho_th: Sequence[float],
               budget: int = DEFAULT_BUDGET, **kwargs) -> List[EvaluationRecord]:
    """
    Functional entry point of `RobustnessGuidedSearch`.

    Args:
        space (SearchSpace): The configuration space.
        evaluate (Callable[[CompressionConfig, int], EvaluationRecord]): Evaluates a configuration.
        property_names (Sequence[str]): Constrained properties.
        rho_th (Sequence[float]): Robustness threshold per property.
        budget (int): Total evaluations including the initial design.
        **kwargs: Further `RobustnessGuidedSearch` arguments (n_init, seed, record_log, pool_size,
            refit_every, verbose).

    Returns:
        List[EvaluationRecord]: All records in evaluation order.
    """
    return RobustnessGuidedSearch(space, evaluate, property_names, rho_th, budget=budget, **kwargs).run()
