"""Tests for result files."""
import numpy as np
import pytest

from pyfedcdp.accountant import LedgerEntry, PrivacyLedger, PrivacySpend
from pyfedcdp.attack import AttackReport, CampaignReport
from pyfedcdp.errors import ConfigError
from pyfedcdp.federation import RoundRecord, TrainingReport
from pyfedcdp.nn import Activation, ConvGeometry, init_model
from pyfedcdp.reports import (
    format_ledger,
    load_checkpoint,
    parse_ledger,
    read_attack_report,
    read_ledger,
    read_training_report,
    save_checkpoint,
    write_attack_report,
    write_comparison,
    write_ledger,
    write_spends,
    write_training_report,
)
from pyfedcdp.types import AccountingMethod, AttackSurface, Mechanism


@pytest.fixture
def training_report():
    """A two-round report with awkward floats."""
    return TrainingReport(
        algorithm="fed_alpha_cdp",
        per_round=[
            RoundRecord(1, 0.5, 6.0, 3.1, 0.1, 0.2, 1 / 3, 0.4),
            RoundRecord(2, 0.75, 6.0, 2.9, 0.2 + 0.1, 0.4, 2 / 3, 0.8),
        ],
        final_accuracy=0.75,
        rounds_used=2,
        delta=1e-5,
        spends=(
            PrivacySpend(0.2 + 0.1, 1e-5, AccountingMethod.MOMENTS),
            PrivacySpend(0.4, 1e-5, AccountingMethod.ZCDP),
            PrivacySpend(2 / 3, 1.5e-5, AccountingMethod.ADVANCED),
            PrivacySpend(0.8, 1e-5, AccountingMethod.BASE),
        ),
    )


class TestLedgerFiles:
    """Tests for ledger text."""

    def test_format(self):
        """Test the header and the repr-formatted floats."""
        entry = LedgerEntry(0, 1, 6.0, 0.1 + 0.2, 0.01, Mechanism.PER_EXAMPLE)
        assert format_ledger(PrivacyLedger(entries=[entry])) == (
            "t,l,sigma,S,q,mechanism\n0,1,6.0,0.30000000000000004,0.01,per_example\n"
        )

    def test_client_column(self):
        """Test that client ids add a trailing column."""
        ledger = PrivacyLedger(entries=[LedgerEntry(0, 0, 6.0, 4.0, 0.1, Mechanism.PER_CLIENT, 3)])
        assert format_ledger(ledger).splitlines()[0].endswith(",client")
        assert parse_ledger(format_ledger(ledger)) == ledger

    def test_parse_without_header(self):
        """Test that the header and blank lines are optional."""
        ledger = parse_ledger("\n0,0,6.0,4.0,0.01,per_example\n\n")
        assert len(ledger) == 1
        assert ledger.entries[0].sensitivity == 4.0

    @pytest.mark.parametrize(
        "line", ["0,0,6.0,4.0,0.01", "0,0,6.0,4.0,1.5,per_example", "0,0,x,4.0,0.01,per_example"]
    )
    def test_malformed_line_number(self, line):
        """Test that a bad entry reports its 1-based line."""
        text = "t,l,sigma,S,q,mechanism\n0,0,6.0,4.0,0.01,per_example\n" + line + "\n"
        with pytest.raises(ConfigError) as info:
            parse_ledger(text)
        assert info.value.line == 3
        assert info.value.field == "ledger"

    def test_out_of_order(self):
        """Test that a step going backwards is rejected."""
        with pytest.raises(ConfigError):
            parse_ledger("1,0,6.0,4.0,0.01,per_example\n0,5,6.0,4.0,0.01,per_example\n")

    @pytest.mark.asyncio
    async def test_file_round_trip(self, tmp_path, make_ledger):
        """Test that a written ledger reads back equal."""
        ledger = make_ledger(250, 0.01, 6.0)
        path = await write_ledger(ledger, tmp_path / "run_ledger.csv")
        assert await read_ledger(path) == ledger


class TestTrainingReport:
    """Tests for training report files."""

    @pytest.mark.asyncio
    async def test_round_trip(self, tmp_path, training_report):
        """Test that rounds and spends survive a write and read."""
        paths = await write_training_report(training_report, tmp_path, "run")
        assert [p.name for p in paths] == ["run_rounds.csv", "run_summary.csv"]
        assert await read_training_report(tmp_path, "run") == training_report

    @pytest.mark.asyncio
    async def test_columns(self, tmp_path, training_report):
        """Test the per-round header."""
        await write_training_report(training_report, tmp_path, "run")
        header = (tmp_path / "run_rounds.csv").read_text().splitlines()[0]
        assert header == "round,val_accuracy,sigma_t,mean_S,eps_moments,eps_zcdp,eps_adv,eps_base"

    @pytest.mark.asyncio
    async def test_non_private(self, tmp_path):
        """Test that a report without spends reads back without spends."""
        record = RoundRecord(1, 0.9, 0, 0, 0, 0, 0, 0)
        report = TrainingReport("non_private", [record], 0.9, 1, 1e-5)
        await write_training_report(report, tmp_path, "np")
        assert (await read_training_report(tmp_path, "np")).spends == ()


class TestAttackReport:
    """Tests for attack report files."""

    @pytest.mark.asyncio
    async def test_round_trip(self, tmp_path):
        """Test that per-victim rows and traces survive a write and read."""
        report = CampaignReport(
            AttackSurface.TYPE1_CLIENT_POST_TRAINING_UPDATE,
            "fed_sdp_client",
            [
                AttackReport(False, 0.05, 2, [1.0, 0.1, 1e-9]),
                AttackReport(True, 0.4, 300, [2.0]),
            ],
        )
        written = await write_attack_report(report, tmp_path, "a")
        assert len(written) == 4
        assert await read_attack_report(tmp_path, "a") == report

    @pytest.mark.asyncio
    async def test_without_traces(self, tmp_path):
        """Test that skipped traces read back as empty."""
        report = CampaignReport(
            AttackSurface.TYPE2_PER_EXAMPLE_GRADIENT, "fed_cdp", [AttackReport(True, 0.3, 3, [1.0])]
        )
        await write_attack_report(report, tmp_path, "a", traces=False)
        restored = await read_attack_report(tmp_path, "a")
        assert restored.reports[0].per_iteration_loss == []
        assert restored.asr == 0.0


class TestTables:
    """Tests for comparison and spend tables."""

    @pytest.mark.asyncio
    async def test_spends(self, tmp_path):
        """Test the spend table layout."""
        path = await write_spends(
            [PrivacySpend(0.8226, 1e-5, AccountingMethod.MOMENTS)], tmp_path / "spends.csv"
        )
        assert path.read_text() == "method,epsilon,delta\nmoments,0.8226,1e-05\n"

    @pytest.mark.asyncio
    async def test_comparison_without_attack(self, tmp_path):
        """Test that a comparison writes one row per configuration."""
        rows = [
            {"name": "a", "algorithm": "fed_cdp", "final_accuracy": 0.8},
            {"name": "b", "algorithm": "fed_sdp_server", "final_accuracy": 0.7},
        ]
        path = await write_comparison(rows, tmp_path / "compare.csv")
        assert path.read_text().splitlines() == [
            "name,algorithm,final_accuracy",
            "a,fed_cdp,0.8",
            "b,fed_sdp_server,0.7",
        ]


class TestCheckpoint:
    """Tests for model checkpoints."""

    @pytest.mark.asyncio
    async def test_dense_round_trip(self, tmp_path, relu_model):
        """Test that a dense model reads back equal."""
        path = await save_checkpoint(relu_model, tmp_path / "m.npz")
        assert (await load_checkpoint(path)).equals(relu_model)

    @pytest.mark.asyncio
    async def test_conv_round_trip(self, tmp_path):
        """Test that convolution geometry is kept."""
        geometry = ConvGeometry(1, 6, 6, 3, 1, 2)
        model = init_model([36, 5, 2], np.random.default_rng(0), Activation.SIGMOID, geometry)
        restored = await load_checkpoint(await save_checkpoint(model, tmp_path / "c.npz"))
        assert restored.equals(model)
        assert restored.layers[0].conv == geometry

    @pytest.mark.asyncio
    async def test_version_checked(self, tmp_path, relu_model):
        """Test that an unknown format version is refused."""
        path = tmp_path / "old.npz"
        np.savez(path, format_version=np.array(99), manifest=np.array("{}"))
        with pytest.raises(ValueError):
            await load_checkpoint(path)
