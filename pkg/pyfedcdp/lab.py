"""Async experiment facade over the simulator, accountants and attack."""
from __future__ import annotations

import asyncio
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import httpx

from .accountant import PrivacySpend, account, account_all
from .attack import CampaignReport, attack_campaign
from .config import ExperimentConfig
from .datasets import Dataset, DatasetDownloader, load_dataset
from .federation import ClientDataset, TrainingReport, partition_iid, run_training
from .nn.types import ModelParams
from .reports import (
    read_ledger,
    save_checkpoint,
    write_attack_report,
    write_comparison,
    write_ledger,
    write_spends,
    write_training_report,
)
from .seeding import derive_rng
from .types import AccountingMethod, ComparisonRow, Stream

__all__ = ["Laboratory"]

logger = logging.getLogger(__name__)


class Laboratory:
    """Runs one configured experiment end to end.

    Parameters
    ----------
    config
        Parsed experiment configuration.
    debug
        When *True* configures root logging at DEBUG level.
    http_client
        Pre-configured httpx AsyncClient used for dataset downloads (if None,
        a new one will be created when a download is needed).
    """

    def __init__(
        self,
        config: ExperimentConfig,
        *,
        debug: bool = False,
        http_client: Optional[httpx.AsyncClient] = None,
    ) -> None:
        self._setup_logging(debug)
        self.config = config
        self._http_client = http_client
        self._downloader: Optional[DatasetDownloader] = None
        self._dataset: Optional[Dataset] = None
        self._clients: Optional[List[ClientDataset]] = None
        self._model: Optional[ModelParams] = None

    # ------------------------------------------------------------------
    # Internal helpers
    # ------------------------------------------------------------------

    @staticmethod
    def _setup_logging(debug: bool) -> None:
        """Initialize logging configuration."""
        if debug:
            logging.basicConfig(
                level=logging.DEBUG,
                format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
            )

    @property
    def _output_dir(self) -> Path:
        return Path(self.config.output_dir)

    # ------------------------------------------------------------------
    # Lifecycle
    # ------------------------------------------------------------------

    async def prepare(self) -> Dataset:
        """Load the dataset, partition it over the clients and initialize the model."""
        if self._dataset is not None:
            return self._dataset
        spec = self.config.dataset
        if spec.base_url:
            if self._downloader is None:
                self._downloader = DatasetDownloader(http_client=self._http_client)
            spec = await self._downloader.ensure(spec)

        dataset = await asyncio.to_thread(load_dataset, spec, self.config.master_seed)
        fed = self.config.federation
        self._clients = partition_iid(
            dataset.train,
            fed.num_clients,
            derive_rng(self.config.master_seed, Stream.DATA, 1),
            self.config.client_size,
        )
        self._model = self.config.model.build(
            dataset.input_dim, dataset.num_classes, self.config.master_seed
        )
        self._dataset = dataset
        logger.debug(
            "Prepared %d training examples over %d clients (digest %s)",
            len(dataset.train),
            fed.num_clients,
            dataset.digest[:12],
        )
        return dataset

    async def close(self) -> None:
        """Close the download client if one was created."""
        if self._downloader is not None:
            await self._downloader.close()
            self._downloader = None

    async def __aenter__(self) -> "Laboratory":
        return self

    async def __aexit__(self, *exc_info) -> None:
        await self.close()

    # ------------------------------------------------------------------
    # Experiments
    # ------------------------------------------------------------------

    async def train(self, *, write: bool = True) -> TrainingReport:
        """Run federated training and write its report, ledger and final checkpoint."""
        dataset = await self.prepare()
        cfg = self.config
        report = await asyncio.to_thread(
            run_training,
            cfg.federation,
            self._clients,
            cfg.stop,
            model=self._model,
            validation=dataset.validation,
        )
        if write:
            await write_training_report(report, self._output_dir, cfg.name)
            if report.ledger is not None and len(report.ledger):
                await write_ledger(report.ledger, self._output_dir / f"{cfg.name}_ledger.csv")
            if report.model is not None:
                await save_checkpoint(report.model, self._output_dir / f"{cfg.name}_model.npz")
        return report

    async def attack(
        self, *, model: Optional[ModelParams] = None, write: bool = True
    ) -> CampaignReport:
        """Attack first-round training of the configured variant.

        The attacked model is ``model`` (for example a loaded checkpoint) or,
        by default, the freshly initialized one.
        """
        if self.config.attack is None:
            raise ValueError("the configuration has no [attack] section")
        await self.prepare()
        cfg = self.config
        settings = cfg.attack
        report = await asyncio.to_thread(
            attack_campaign,
            cfg.federation.algorithm,
            settings.victims,
            settings.attack,
            model=model if model is not None else self._model,
            clients=self._clients,
            federation=cfg.federation,
            max_workers=cfg.federation.max_workers,
        )
        if write:
            await write_attack_report(report, self._output_dir, cfg.name)
        return report

    @classmethod
    async def account(
        cls,
        ledger_path: str | Path,
        method: Optional[AccountingMethod] = None,
        delta: float = 1e-5,
        *,
        output: Optional[str | Path] = None,
        debug: bool = False,
    ) -> Dict[AccountingMethod, PrivacySpend]:
        """Account a ledger file with ``method``, or with every sequential method if None."""
        cls._setup_logging(debug)
        ledger = await read_ledger(ledger_path, delta)
        if method is None:
            spends = await asyncio.to_thread(account_all, ledger)
        else:
            spends = {method: await asyncio.to_thread(account, ledger, method)}
        if output is not None:
            await write_spends(spends.values(), output)
        return spends

    @classmethod
    async def compare(
        cls,
        configs: Sequence[ExperimentConfig],
        output: str | Path,
        *,
        debug: bool = False,
        http_client: Optional[httpx.AsyncClient] = None,
    ) -> List[ComparisonRow]:
        """Train (and attack, where configured) each experiment and write one CSV row per run."""
        if len(configs) < 2:
            raise ValueError("compare needs at least two configurations")
        rows: List[ComparisonRow] = []
        digest: Optional[str] = None
        for cfg in configs:
            async with cls(cfg, debug=debug, http_client=http_client) as lab:
                dataset = await lab.prepare()
                if digest is None:
                    digest = dataset.digest
                elif dataset.digest != digest:
                    raise ValueError(f"{cfg.name} does not share the dataset of {configs[0].name}")
                report = await lab.train()
                row: ComparisonRow = {
                    "config": cfg.name,
                    "algorithm": report.algorithm,
                    "dataset_hash": digest,
                    "final_accuracy": report.final_accuracy,
                    "rounds_used": report.rounds_used,
                }
                for method, column in (
                    (AccountingMethod.MOMENTS, "eps_moments"),
                    (AccountingMethod.ZCDP, "eps_zcdp"),
                    (AccountingMethod.ADVANCED, "eps_adv"),
                    (AccountingMethod.BASE, "eps_base"),
                ):
                    spend = report.spend(method)
                    row[column] = spend.epsilon if spend else 0.0  # type: ignore[literal-required]
                if cfg.attack is not None:
                    campaign = await lab.attack()
                    row["surface"] = campaign.surface.value
                    row["asr"] = campaign.asr
                    row["mean_distance"] = campaign.mean_distance
                rows.append(row)
        await write_comparison(rows, output)
        return rows
