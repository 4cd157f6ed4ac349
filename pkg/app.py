"""Drift - command-line interface"""

from typing import List, Optional
import argparse
import json
import logging
import sys

from config.settings import settings
from drift.orchestrator import ExperimentOrchestrator
from run_ledger import RunLedger

EXIT_CODES = {'validation': 1, 'numerical': 2}


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _values(text: str) -> List[float]:
    # integers stay integers so n_sigma sweeps validate
    return [int(v) if v.strip().lstrip("-").isdigit() else float(v) for v in text.split(",") if v.strip()]


class DriftArgumentParser(argparse.ArgumentParser):
    """Usage errors are validation errors: exit 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"❌ {message}", file=sys.stderr)
        sys.exit(EXIT_CODES["validation"])


def build_parser() -> argparse.ArgumentParser:
    parser = DriftArgumentParser(prog="drift", description="Adaptive-momentum sampling experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    sample = sub.add_parser("sample", help="Run one configured experiment")
    sample.add_argument("--config", required=True, help="Flat key = value config file")

    compare = sub.add_parser("compare", help="Compare samplers over several seeds")
    compare.add_argument("--config", required=True, action="append", help="Config file (repeatable)")
    compare.add_argument("--seeds", required=True, type=_ints, help="Comma-separated master seeds")
    compare.add_argument("--samplers", type=lambda s: [v for v in s.split(",") if v],
                         help="Run each config once per listed sampler")
    compare.add_argument("--output-dir", help="Where comparison.csv goes (defaults to the first config's)")

    sweep = sub.add_parser("sweep", help="Sweep one hyperparameter")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--param", required=True, help="epsilon, n_sigma or delta")
    sweep.add_argument("--values", required=True, type=_values, help="Comma-separated values")

    markov = sub.add_parser("markov-check", help="Verify the momentum chain's linear-algebra claims")
    markov.add_argument("--alpha-grid", type=_floats, default=[0.02, 0.04, 0.08, 0.16])
    markov.add_argument("--dim", type=int, default=8)
    markov.add_argument("--matrices", type=int, default=200)
    markov.add_argument("--chain-length", type=int, default=200_000)
    markov.add_argument("--burn-in", type=int, default=10_000)
    markov.add_argument("--replicas", type=int, default=8)
    markov.add_argument("--beta", type=float, default=0.5, help="Fixed momentum of the bias-slope chains")
    markov.add_argument("--seed", type=int, default=0)

    parser.add_argument("--ledger", default=settings.LEDGER_PATH, help="Run ledger file")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    orchestrator = ExperimentOrchestrator(ledger=RunLedger(storage_path=args.ledger), verbose=True)

    if args.command == "sample":
        response = orchestrator.process_request("sample", config=args.config)
    elif args.command == "compare":
        response = orchestrator.process_request(
            "compare", configs=args.config, seeds=args.seeds,
            samplers=args.samplers, output_dir=args.output_dir
        )
    elif args.command == "sweep":
        response = orchestrator.process_request(
            "sweep", config=args.config, parameter=args.param, values=args.values
        )
    else:
        response = orchestrator.process_request(
            "markov-check", alpha_grid=args.alpha_grid, dim=args.dim, seed=args.seed,
            matrices=args.matrices, chain_length=args.chain_length,
            burn_in=args.burn_in, replicas=args.replicas, bias_beta=args.beta
        )

    if response['status'] != 'success':
        print(f"❌ {response['message']}", file=sys.stderr)
        return EXIT_CODES.get(response.get('error_kind'), 2)

    print(f"✅ {response['message']}", file=sys.stderr)
    if 'table' in response:
        response['table'].to_csv(sys.stdout, index=False, float_format="%.17g", lineterminator="\n")
    elif 'summary' in response:
        print(json.dumps(response['summary'], indent=2))
    else:
        artifacts = response['artifacts']
        print(json.dumps({
            "samples": artifacts.samples_path,
            "metrics": artifacts.metrics_path,
            "diagnostics": artifacts.diagnostics_path,
            "nfe": artifacts.nfe,
            **artifacts.metrics,
        }, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
