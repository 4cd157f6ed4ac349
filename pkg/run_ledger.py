"""Run ledger: persistent record of experiment runs and their provenance"""

from typing import Dict, Any, List, Optional
from datetime import datetime
import json
import logging
import os

from config.settings import settings

logger = logging.getLogger(__name__)


class RunLedger:
    """
    JSON-file store of finished runs.

    Usage follows three steps:
    1. Initialize - Create a RunLedger and hand it to the orchestrator
    2. Ingest - Record each finished run with add_run_to_ledger()
    3. Retrieve - Look runs up with search_runs() or get_recent_runs()

    The ledger lives outside the run directories, so its timestamps never
    touch run artifacts.
    """

    def __init__(self, storage_path: Optional[str] = None):
        """
        Initialize the ledger.

        Args:
            storage_path: Optional path to the ledger file
        """
        self.storage_path = storage_path or settings.LEDGER_PATH
        self.runs: List[Dict[str, Any]] = []
        self._load_runs()

    def _load_runs(self):
        """Load runs from disk if a ledger exists"""
        try:
            with open(self.storage_path, 'r') as f:
                self.runs = json.load(f)
        except FileNotFoundError:
            self.runs = []
        except json.JSONDecodeError:
            logger.warning("Ledger at %s is corrupted; starting a fresh one", self.storage_path)
            self.runs = []

    def _save_runs(self):
        """Write runs back to disk"""
        try:
            directory = os.path.dirname(self.storage_path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(self.storage_path, 'w') as f:
                json.dump(self.runs, f, indent=2)
        except OSError as e:
            logger.warning("Failed to save run ledger: %s", e)

    def add_run_to_ledger(
        self,
        run_data: Dict[str, Any],
        config_hash: Optional[str] = None,
        metadata: Optional[Dict[str, Any]] = None
    ) -> bool:
        """
        Record a finished run.

        Args:
            run_data: Headline results (nfe, metric values, artifact paths)
            config_hash: Hash of the config that produced the run
            metadata: Filterable tags (sampler, model_name, seed, command)

        Returns:
            True if the run was recorded, False otherwise
        """
        try:
            entry = {
                "timestamp": datetime.now().isoformat(),
                "config_hash": config_hash,
                "run_data": run_data,
                "metadata": metadata or {}
            }
            json.dumps(entry)
        except (TypeError, ValueError) as e:
            logger.warning("Run record is not serialisable: %s", e)
            return False

        self.runs.append(entry)
        self._save_runs()
        return True

    def search_runs(
        self,
        query: Optional[str] = None,
        config_hash: Optional[str] = None,
        limit: int = 10,
        filters: Optional[Dict[str, Any]] = None
    ) -> List[Dict[str, Any]]:
        """
        Find recorded runs.

        Args:
            query: Optional substring matched against the run data
            config_hash: Optional exact config hash
            limit: Maximum number of results
            filters: Metadata key/value pairs that must all match

        Returns:
            Matching ledger entries, oldest first
        """
        results = []

        for run in self.runs:
            if config_hash and run.get("config_hash") != config_hash:
                continue

            if filters:
                metadata = run.get("metadata", {})
                if any(metadata.get(key) != value for key, value in filters.items()):
                    continue

            if query:
                if query.lower() not in json.dumps(run.get("run_data", {})).lower():
                    continue

            results.append(run)
            if len(results) >= limit:
                break

        return results

    def get_recent_runs(self, count: int = 5, sampler: Optional[str] = None) -> List[Dict[str, Any]]:
        """
        Most recent runs, newest first.

        Args:
            count: Number of runs to return
            sampler: Optional sampler name filter
        """
        runs = self.runs
        if sampler:
            runs = [r for r in runs if r.get("metadata", {}).get("sampler") == sampler]

        ordered = sorted(runs, key=lambda r: r.get("timestamp", ""), reverse=True)
        return ordered[:count]

    def clear_ledger(self, sampler: Optional[str] = None):
        """
        Drop recorded runs.

        Args:
            sampler: If provided, only drop runs of this sampler
        """
        if sampler:
            self.runs = [r for r in self.runs if r.get("metadata", {}).get("sampler") != sampler]
        else:
            self.runs = []

        self._save_runs()

    def get_ledger_stats(self) -> Dict[str, Any]:
        return {
            "total_runs": len(self.runs),
            "unique_configs": len(set(r.get("config_hash") for r in self.runs if r.get("config_hash"))),
            "samplers": sorted(set(r.get("metadata", {}).get("sampler") for r in self.runs) - {None}),
            "oldest_run": self.runs[0].get("timestamp") if self.runs else None,
            "newest_run": self.runs[-1].get("timestamp") if self.runs else None
        }
