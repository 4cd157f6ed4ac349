# drift/orchestrator.py
"""
Experiment orchestrator: runs configured samplers over many chains, scores
the clouds against the true model, and writes the run artifacts.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import repeat
from typing import Any, Dict, List, Optional, Sequence, Union
import logging
import os
import sys
import time

import numpy as np
import pandas as pd

from config.experiment_config import ExperimentConfig
from config.settings import settings
from . import __version__
from .errors import DriftError, NumericalFailure, SamplerValidationError
from .markov_analysis import markov_check as run_markov_suite
from .metrics import evaluate_cloud
from .samplers import ChainStreams, Diagnostics, als_sample, ams_sample, pc_sample
from .score_models import load_model, sample_mixture

logger = logging.getLogger(__name__)

SWEEP_PARAMETERS = ("epsilon", "n_sigma", "delta")
PRIMARY_METRIC = "sliced_w2"
METRIC_COLUMNS = ["sampler", "variant", "nfe", "seed", "metric", "value", "elapsed_ms",
                  "parameters", "config_hash", "code_version"]
DIAGNOSTIC_COLUMNS = ["chain", "level", "inner_step", "beta", "alpha_tilde", "score_norm"]


def chain_rng(master_seed: int, stream: int) -> np.random.Generator:
    """Independent generator for stream k of a master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(stream)]))


def write_csv(table: pd.DataFrame, path: str):
    table.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


@dataclass
class ChainBlock:
    """A contiguous run of chains advanced together as one (chains, d) array."""
    first: int
    samples: np.ndarray
    diagnostics: Diagnostics

    @property
    def chains(self) -> int:
        return self.samples.shape[0]


@dataclass
class RunArtifacts:
    samples_path: str
    metrics_path: str
    diagnostics_path: str
    config_hash: str
    nfe: int
    metrics: Dict[str, float] = field(default_factory=dict)
    elapsed_ms: float = 0.0


def chain_blocks(chains: int, block_size: int) -> List[range]:
    """Split chain indices into consecutive blocks of at most block_size."""
    if block_size < 1:
        raise SamplerValidationError("block_size", f"must be positive, got {block_size}")
    return [range(start, min(start + block_size, chains)) for start in range(0, chains, block_size)]


def sample_block(config: ExperimentConfig, chains: range) -> ChainBlock:
    """
    Run a block of chains of a config, each on its own stream.

    Chain k draws its initial point and every noise vector from
    SeedSequence([master_seed, k]). The initial point is sigma_1 z for VE
    ladders and z for VP.
    """
    streams = ChainStreams([chain_rng(config.master_seed, k) for k in chains])
    model = load_model(config.model_name)
    schedule = config.schedule()
    init = streams.standard_normal((len(streams), model.dim))
    if config.variant == "VE":
        init = schedule.sigmas[0] * init

    family, predictor, corrector = config.plan
    if family == "als":
        x, diagnostics = als_sample(model, schedule, init, streams, denoise=config.denoise)
    elif family == "ams":
        x, diagnostics = ams_sample(
            model, schedule, init, streams, denoise=config.denoise, alpha_tilde_mode=config.alpha_tilde_mode
        )
    else:
        x, diagnostics = pc_sample(
            predictor, corrector, model, schedule, init, streams,
            denoise=config.denoise, variant=config.variant,
            epsilon0=config.epsilon0, snr_ratio=config.snr_ratio
        )

    bad = ~np.isfinite(x).all(axis=1) | (np.abs(x).max(axis=1) > settings.DIVERGENCE_THRESHOLD)
    if np.any(bad):
        k = chains[int(np.flatnonzero(bad)[0])]
        raise NumericalFailure(f"chain {k} diverged (epsilon={config.epsilon:g}, sampler={config.sampler})")
    return ChainBlock(first=chains.start, samples=x, diagnostics=diagnostics)


def _diagnostics_table(blocks: List[ChainBlock]) -> pd.DataFrame:
    frames = []
    for block in blocks:
        columns = block.diagnostics.chain_major(block.chains)
        columns["chain"] = columns["chain"] + block.first
        frames.append(pd.DataFrame(columns))
    if not frames:
        return pd.DataFrame(columns=DIAGNOSTIC_COLUMNS)
    return pd.concat(frames, ignore_index=True)[DIAGNOSTIC_COLUMNS]


def flag_best(table: pd.DataFrame, metric: str = PRIMARY_METRIC) -> pd.DataFrame:
    """Mark the row with the smallest metric (first on ties)."""
    table = table.copy()
    table["best"] = False
    table.loc[table[metric].idxmin(), "best"] = True
    return table


def summarize_comparison(table: pd.DataFrame, metric: str = PRIMARY_METRIC) -> pd.DataFrame:
    """Mean and spread of the metric and wall-clock per (sampler, variant, NFE)."""
    summary = (
        table.groupby(["sampler", "variant", "nfe"], sort=True)
        .agg(
            seeds=("seed", "count"),
            mean=(metric, "mean"),
            std=(metric, "std"),
            mean_elapsed_ms=("elapsed_ms", "mean"),
        )
        .reset_index()
    )
    summary.insert(3, "metric", metric)
    return summary


def expand_samplers(config: ExperimentConfig, samplers: Sequence[str]) -> List[ExperimentConfig]:
    """One copy of config per sampler name."""
    return [config.with_updates(sampler=name) for name in samplers]


class ExperimentOrchestrator:
    """
    Runs experiments and records them.

    Chains advance in fixed-size blocks, one (chains, d) array per block.
    Blocks are dispatched to a process pool when more than one worker is
    configured and gathered in chain order, so the worker count never
    changes an output byte.
    """

    def __init__(self, ledger=None, workers: Optional[int] = None, verbose: bool = False):
        """
        Args:
            ledger: RunLedger receiving one record per finished run
            workers: Process count for chain dispatch (defaults to settings.WORKERS)
            verbose: Print progress lines to stderr
        """
        self.ledger = ledger
        self.workers = max(int(workers if workers is not None else settings.WORKERS), 1)
        self.verbose = verbose

    def _status(self, message: str):
        if self.verbose:
            print(message, file=sys.stderr)

    def _gather(self, config: ExperimentConfig) -> List[ChainBlock]:
        blocks = chain_blocks(config.chains, settings.CHAIN_BLOCK)
        if self.workers > 1 and len(blocks) > 1:
            with ProcessPoolExecutor(max_workers=min(self.workers, len(blocks))) as pool:
                return list(pool.map(sample_block, repeat(config, len(blocks)), blocks))
        return [sample_block(config, block) for block in blocks]

    def _prepare_output(self, output_dir: str):
        try:
            os.makedirs(output_dir, exist_ok=True)
        except OSError as exc:
            raise SamplerValidationError("output_dir", f"cannot create {output_dir}: {exc}") from None
        if not os.access(output_dir, os.W_OK):
            raise SamplerValidationError("output_dir", f"{output_dir} is not writable")

    def run_experiment(self, config: ExperimentConfig) -> RunArtifacts:
        """
        Run every chain of a config and write samples, metrics and diagnostics.

        Args:
            config: Validated experiment configuration

        Returns:
            RunArtifacts with the three CSV paths and headline metrics
        """
        self._prepare_output(config.output_dir)
        config_hash = config.config_hash()
        self._status(f"🎲 Sampling {config.chains} chains with {config.sampler}-{config.variant} (NFE {config.nfe})...")

        started = time.perf_counter()
        blocks = self._gather(config)
        elapsed_ms = (time.perf_counter() - started) * 1000.0

        nfe = blocks[0].diagnostics.nfe
        if any(b.diagnostics.nfe != config.nfe for b in blocks):
            raise DriftError(f"score evaluations ({nfe}) disagree with the configured NFE ({config.nfe})")

        samples = np.vstack([b.samples for b in blocks])
        model = load_model(config.model_name)
        reference_rng = chain_rng(config.master_seed, settings.REFERENCE_STREAM)
        reference = sample_mixture(model, config.reference_size or config.chains, reference_rng)

        self._status("📏 Scoring the cloud against the reference...")
        records = evaluate_cloud(samples, reference, reference_rng, n_projections=config.n_projections)

        samples_table = pd.DataFrame(samples, columns=[f"dim{j}" for j in range(samples.shape[1])])
        samples_table.insert(0, "chain", np.arange(config.chains))
        metrics_table = pd.DataFrame([
            {
                "sampler": config.sampler,
                "variant": config.variant,
                "nfe": nfe,
                "seed": config.master_seed,
                "metric": record["metric"],
                "value": record["value"],
                "elapsed_ms": "",
                "parameters": record["parameters"],
                "config_hash": config_hash,
                "code_version": __version__,
            }
            for record in records
        ], columns=METRIC_COLUMNS)

        artifacts = RunArtifacts(
            samples_path=os.path.join(config.output_dir, "samples.csv"),
            metrics_path=os.path.join(config.output_dir, "metrics.csv"),
            diagnostics_path=os.path.join(config.output_dir, "diagnostics.csv"),
            config_hash=config_hash,
            nfe=nfe,
            metrics={record["metric"]: float(record["value"]) for record in records},
            elapsed_ms=elapsed_ms,
        )
        try:
            write_csv(samples_table, artifacts.samples_path)
            write_csv(metrics_table, artifacts.metrics_path)
            write_csv(_diagnostics_table(blocks), artifacts.diagnostics_path)
        except OSError as exc:
            raise SamplerValidationError("output_dir", f"cannot write artifacts: {exc}") from None

        logger.info("Run %s finished in %.0f ms: %s", config_hash[:12], elapsed_ms, artifacts.metrics)
        if self.ledger is not None:
            self.ledger.add_run_to_ledger(
                run_data={
                    "nfe": nfe,
                    "metrics": artifacts.metrics,
                    "elapsed_ms": elapsed_ms,
                    "output_dir": config.output_dir,
                },
                config_hash=config_hash,
                metadata={
                    "sampler": config.sampler,
                    "variant": config.variant,
                    "model_name": config.model_name,
                    "seed": config.master_seed,
                    "code_version": __version__,
                },
            )
        return artifacts

    def compare_samplers(
        self,
        configs: Sequence[ExperimentConfig],
        seeds: Sequence[int],
        output_dir: Optional[str] = None
    ) -> pd.DataFrame:
        """
        Run every (config, seed) cell and tabulate the metrics.

        Writes comparison.csv (one row per cell, with wall-clock time) and
        comparison_summary.csv next to it.

        Returns:
            Rows sorted by (sampler, nfe, seed)
        """
        if not configs:
            raise SamplerValidationError("configs", "at least one config is required")
        if not seeds:
            raise SamplerValidationError("seeds", "at least one seed is required")
        models = sorted({c.model_name for c in configs})
        if len(models) > 1:
            raise SamplerValidationError("model_name", f"compared configs must share one model, got {models}")

        root = output_dir or configs[0].output_dir
        self._prepare_output(root)
        rows = []
        for base in configs:
            for seed in seeds:
                cell = base.with_updates(master_seed=int(seed))
                cell = cell.with_updates(output_dir=os.path.join(
                    root, f"{cell.sampler}-{cell.variant}-nfe{cell.nfe}-seed{seed}-{cell.config_hash()[:8]}"
                ))
                artifacts = self.run_experiment(cell)
                rows.append({
                    "sampler": cell.sampler,
                    "variant": cell.variant,
                    "nfe": artifacts.nfe,
                    "seed": cell.master_seed,
                    "epsilon": cell.epsilon,
                    **artifacts.metrics,
                    "elapsed_ms": artifacts.elapsed_ms,
                    "config_hash": artifacts.config_hash,
                })
                self._status(f"✅ {cell.sampler} seed {seed}: {PRIMARY_METRIC}={artifacts.metrics[PRIMARY_METRIC]:.4g}")

        table = pd.DataFrame(rows).sort_values(
            ["sampler", "nfe", "seed", "variant", "config_hash"], kind="mergesort"
        ).reset_index(drop=True)
        write_csv(table, os.path.join(root, "comparison.csv"))
        write_csv(summarize_comparison(table), os.path.join(root, "comparison_summary.csv"))
        return table

    def sweep(self, base: ExperimentConfig, parameter: str, values: Sequence[Any]) -> pd.DataFrame:
        """
        One run per value of a hyperparameter, best value flagged by sliced W2.

        Returns:
            Table with one row per value and a boolean best column
        """
        if parameter not in SWEEP_PARAMETERS:
            raise SamplerValidationError("parameter", f"must be one of {SWEEP_PARAMETERS}, got {parameter!r}")
        if len(values) == 0:
            raise SamplerValidationError("values", "a sweep needs at least one value")

        self._prepare_output(base.output_dir)
        rows = []
        for value in values:
            config = base.with_updates(**{
                parameter: value,
                "output_dir": os.path.join(base.output_dir, f"{parameter}-{value}"),
            })
            self._status(f"🔍 {parameter}={value}")
            try:
                artifacts = self.run_experiment(config)
            except NumericalFailure as exc:
                logger.warning("Sweep point %s=%s aborted: %s", parameter, value, exc)
                self._status(f"⚠️ {parameter}={value} diverged")
                rows.append({
                    "parameter": parameter,
                    "value": getattr(config, parameter),
                    "nfe": config.nfe,
                    PRIMARY_METRIC: float("nan"),
                    "config_hash": config.config_hash(),
                    "diverged": True,
                })
                continue
            rows.append({
                "parameter": parameter,
                "value": getattr(config, parameter),
                "nfe": artifacts.nfe,
                **artifacts.metrics,
                "config_hash": artifacts.config_hash,
                "diverged": False,
            })

        table = pd.DataFrame(rows)
        if table[PRIMARY_METRIC].isna().all():
            raise NumericalFailure(f"every {parameter} value diverged")
        table = flag_best(table)
        write_csv(table, os.path.join(base.output_dir, f"sweep_{parameter}.csv"))
        best = table.loc[table["best"], "value"].iloc[0]
        self._status(f"🏁 Best {parameter}: {best}")
        return table

    def markov_check(
        self,
        alpha_grid: Sequence[float],
        dim: int,
        seed: int = 0,
        matrices: int = 200,
        chain_length: int = 200_000,
        burn_in: int = 10_000,
        replicas: int = 8,
        bias_beta: float = 0.5
    ) -> Dict[str, float]:
        """Spectral-bound, Lyapunov and bias-slope checks of the momentum chain."""
        if int(dim) != dim or dim < 1:
            raise SamplerValidationError("dim", f"must be a positive integer, got {dim}")
        if matrices < 1:
            raise SamplerValidationError("matrices", f"must be positive, got {matrices}")
        if not 0 <= bias_beta < 1:
            raise SamplerValidationError("bias_beta", f"must lie in [0, 1), got {bias_beta}")
        self._status(f"🧮 Checking {matrices} random SPD matrices (d <= {dim})...")
        summary = run_markov_suite(
            alpha_grid, int(dim), chain_rng(seed, 0),
            matrices=matrices, chain_length=chain_length, burn_in=burn_in, replicas=replicas,
            bias_beta=bias_beta
        )
        if self.ledger is not None:
            self.ledger.add_run_to_ledger(
                run_data=summary,
                metadata={"command": "markov-check", "seed": seed, "code_version": __version__},
            )
        return summary

    def process_request(self, request_type: str, **kwargs) -> Dict[str, Any]:
        """
        Single entry point for the command line.

        Args:
            request_type: sample, compare, sweep or markov-check
            **kwargs: Arguments of the matching method; configs may be given as file paths

        Returns:
            Dict with status, message, error_kind on failure, and the result payload
        """
        try:
            if request_type == "sample":
                config = self._load(kwargs["config"])
                artifacts = self.run_experiment(config)
                return {
                    'status': 'success',
                    'message': f"Wrote {artifacts.samples_path}, {artifacts.metrics_path}, {artifacts.diagnostics_path}",
                    'artifacts': artifacts,
                }

            if request_type == "compare":
                configs = [self._load(c) for c in kwargs["configs"]]
                if kwargs.get("samplers"):
                    configs = [c for base in configs for c in expand_samplers(base, kwargs["samplers"])]
                table = self.compare_samplers(configs, kwargs["seeds"], kwargs.get("output_dir"))
                return {
                    'status': 'success',
                    'message': f"Compared {len(configs)} configs over {len(kwargs['seeds'])} seeds",
                    'table': table,
                }

            if request_type == "sweep":
                table = self.sweep(self._load(kwargs["config"]), kwargs["parameter"], kwargs["values"])
                best = table.loc[table["best"], "value"].iloc[0]
                return {
                    'status': 'success',
                    'message': f"Best {kwargs['parameter']} = {best}",
                    'table': table,
                }

            if request_type == "markov-check":
                summary = self.markov_check(**kwargs)
                return {
                    'status': 'success',
                    'message': f"{summary['bound_violations']} bound violations over {summary['matrices']} matrices",
                    'summary': summary,
                }

            raise SamplerValidationError("request_type", f"unknown request {request_type!r}")

        except SamplerValidationError as e:
            logger.debug("Validation failure", exc_info=True)
            return {'status': 'error', 'error_kind': 'validation', 'message': str(e)}
        except DriftError as e:
            logger.debug("Numerical failure", exc_info=True)
            return {'status': 'error', 'error_kind': 'numerical', 'message': str(e)}
        except Exception as e:
            logger.error("Unexpected failure in %s request", request_type, exc_info=True)
            return {
                'status': 'error',
                'error_kind': 'numerical',
                'message': f"Error processing {request_type} request: {type(e).__name__}: {e}",
            }

    @staticmethod
    def _load(config: Union[str, ExperimentConfig]) -> ExperimentConfig:
        return config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_file(config)
