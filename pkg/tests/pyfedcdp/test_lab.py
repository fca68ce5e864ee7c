"""Tests for the Laboratory facade."""
from dataclasses import replace
from unittest.mock import AsyncMock, patch

import pytest

from pyfedcdp.config import parse_config
from pyfedcdp.lab import Laboratory
from pyfedcdp.types import AccountingMethod

TINY = """\
[experiment]
name = lab
master_seed = 1

[dataset]
dims = 4
n = 120

[model]
hidden_units = 4

[federation]
algorithm = fed_alpha_cdp
num_clients = 4
clients_per_round = 2
rounds = 2
local_iterations = 2
batch_size = 3
"""


@pytest.fixture
def config(tmp_path):
    """A tiny experiment writing under tmp_path."""
    return parse_config(TINY).with_overrides(output_dir=tmp_path)


class TestLaboratory:
    """Tests for Laboratory."""

    @pytest.mark.asyncio
    async def test_prepare_is_cached(self, config):
        """Test that the dataset is loaded once."""
        async with Laboratory(config) as lab:
            first = await lab.prepare()
            assert await lab.prepare() is first
            assert first.input_dim == 4

    @pytest.mark.asyncio
    async def test_train_without_writing(self, config, tmp_path):
        """Test that write=False leaves the output directory alone."""
        async with Laboratory(config) as lab:
            report = await lab.train(write=False)
        assert report.rounds_used == 2
        assert len(report.ledger) == 2 * 2 * 2
        assert list(tmp_path.iterdir()) == []

    @pytest.mark.asyncio
    async def test_train_then_account(self, config, tmp_path):
        """Test that the written ledger accounts to the reported spend."""
        async with Laboratory(config) as lab:
            report = await lab.train()
        spends = await Laboratory.account(
            tmp_path / "lab_ledger.csv", output=tmp_path / "eps.csv"
        )
        assert spends[AccountingMethod.MOMENTS] == report.spend(AccountingMethod.MOMENTS)
        assert (tmp_path / "eps.csv").exists()

    @pytest.mark.asyncio
    async def test_attack_needs_section(self, config):
        """Test that attacking without an [attack] section fails early."""
        async with Laboratory(config) as lab:
            with pytest.raises(ValueError):
                await lab.attack()

    @pytest.mark.asyncio
    async def test_downloads_through_provided_client(self, config):
        """Test that a base URL routes the dataset through the downloader."""
        spec = replace(config.dataset, base_url="https://example.org/data")
        lab = Laboratory(replace(config, dataset=spec), http_client=AsyncMock())
        with patch(
            "pyfedcdp.lab.DatasetDownloader.ensure", new_callable=AsyncMock, return_value=spec
        ) as ensure:
            await lab.prepare()
        ensure.assert_awaited_once_with(spec)
        await lab.close()

    @pytest.mark.asyncio
    async def test_compare_needs_shared_dataset(self, config, tmp_path):
        """Test that runs over different data are not compared."""
        other = config.with_overrides(seed=2)
        with pytest.raises(ValueError):
            await Laboratory.compare([config, other], tmp_path / "compare.csv")

    @pytest.mark.asyncio
    async def test_compare_needs_two(self, config, tmp_path):
        """Test that a single configuration is rejected."""
        with pytest.raises(ValueError):
            await Laboratory.compare([config], tmp_path / "compare.csv")
