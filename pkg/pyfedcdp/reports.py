"""Result files: ledgers, training and attack reports, model checkpoints.

Tables are CSV written through pandas; ledgers are one entry per line. Every
write goes through :mod:`aiofiles`, so callers await them.
"""
from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import asdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import aiofiles
import numpy as np
import pandas as pd

from .accountant import LedgerEntry, PrivacyLedger, PrivacySpend
from .attack import AttackReport, CampaignReport
from .errors import ConfigError
from .federation import RoundRecord, TrainingReport
from .nn.types import Activation, ConvGeometry, Layer, ModelParams
from .types import AccountingMethod, AttackSurface, ComparisonRow, Mechanism

__all__ = [
    "CHECKPOINT_FORMAT_VERSION",
    "LEDGER_HEADER",
    "ROUND_COLUMNS",
    "format_ledger",
    "load_checkpoint",
    "parse_ledger",
    "read_attack_report",
    "read_ledger",
    "read_training_report",
    "save_checkpoint",
    "write_attack_report",
    "write_comparison",
    "write_ledger",
    "write_spends",
    "write_training_report",
]

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
LEDGER_HEADER = ("t", "l", "sigma", "S", "q", "mechanism")
ROUND_COLUMNS = (
    "round",
    "val_accuracy",
    "sigma_t",
    "mean_S",
    "eps_moments",
    "eps_zcdp",
    "eps_adv",
    "eps_base",
)
_SPEND_COLUMNS = {
    AccountingMethod.MOMENTS: "eps_moments",
    AccountingMethod.ZCDP: "eps_zcdp",
    AccountingMethod.ADVANCED: "eps_adv",
    AccountingMethod.BASE: "eps_base",
}


async def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    async with aiofiles.open(path, "w", encoding="utf-8", newline="") as fp:
        await fp.write(text)
    logger.debug("Wrote %s", path)
    return path


async def _read_text(path: Path) -> str:
    async with aiofiles.open(path, "r", encoding="utf-8", newline="") as fp:
        return await fp.read()


def _to_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, lineterminator="\n")


def _from_csv(text: str) -> pd.DataFrame:
    return pd.read_csv(io.StringIO(text), float_precision="round_trip")


# ----------------------------------------------------------------------
# Ledgers
# ----------------------------------------------------------------------


def format_ledger(ledger: PrivacyLedger) -> str:
    """Render ``ledger`` one entry per line, with a header; floats use ``repr``."""
    with_client = any(e.client is not None for e in ledger)
    header = LEDGER_HEADER + (("client",) if with_client else ())
    lines = [",".join(header)]
    for e in ledger:
        fields = [
            str(e.round),
            str(e.step),
            repr(float(e.sigma)),
            repr(float(e.sensitivity)),
            repr(float(e.sampling_rate)),
            e.mechanism.value,
        ]
        if with_client:
            fields.append("" if e.client is None else str(e.client))
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def _parse_entry(fields: List[str]) -> LedgerEntry:
    if len(fields) not in (6, 7):
        raise ValueError(f"expected 6 or 7 fields, got {len(fields)}")
    client = fields[6].strip() if len(fields) == 7 else ""
    return LedgerEntry(
        round=int(fields[0]),
        step=int(fields[1]),
        sigma=float(fields[2]),
        sensitivity=float(fields[3]),
        sampling_rate=float(fields[4]),
        mechanism=Mechanism(fields[5].strip()),
        client=int(client) if client else None,
    )


def parse_ledger(text: str, delta: float = 1e-5) -> PrivacyLedger:
    """Parse ledger text; a malformed line raises :class:`ConfigError` with its number."""
    ledger = PrivacyLedger(delta)
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(",")]
        if number == 1 and fields[0] == LEDGER_HEADER[0]:
            continue
        try:
            ledger.append(_parse_entry(fields))
        except ValueError as err:
            logger.error("Malformed ledger line %d: %s", number, err)
            raise ConfigError(
                f"malformed ledger entry: {err}", field="ledger", line=number
            ) from err
    return ledger


async def write_ledger(ledger: PrivacyLedger, path: str | Path) -> Path:
    return await _write_text(Path(path), format_ledger(ledger))


async def read_ledger(path: str | Path, delta: float = 1e-5) -> PrivacyLedger:
    return parse_ledger(await _read_text(Path(path)), delta)


# ----------------------------------------------------------------------
# Training reports
# ----------------------------------------------------------------------


def _summary_frame(report: TrainingReport) -> pd.DataFrame:
    row: Dict[str, object] = {
        "algorithm": report.algorithm,
        "final_accuracy": report.final_accuracy,
        "rounds_used": report.rounds_used,
        "timed_out": report.timed_out,
        "delta": report.delta,
    }
    spends = {s.method: s for s in report.spends}
    for method, column in _SPEND_COLUMNS.items():
        spend = spends.get(method)
        row[column] = spend.epsilon if spend else math.nan
    advanced = spends.get(AccountingMethod.ADVANCED)
    row["delta_adv"] = advanced.delta if advanced else math.nan
    return pd.DataFrame([row])


async def write_training_report(
    report: TrainingReport, out_dir: str | Path, name: str
) -> List[Path]:
    """Write ``<name>_rounds.csv`` and ``<name>_summary.csv`` under ``out_dir``."""
    out = Path(out_dir)
    rounds = pd.DataFrame([asdict(r) for r in report.per_round], columns=list(ROUND_COLUMNS))
    return [
        await _write_text(out / f"{name}_rounds.csv", _to_csv(rounds)),
        await _write_text(out / f"{name}_summary.csv", _to_csv(_summary_frame(report))),
    ]


async def read_training_report(out_dir: str | Path, name: str) -> TrainingReport:
    """Inverse of :func:`write_training_report`."""
    out = Path(out_dir)
    rounds = _from_csv(await _read_text(out / f"{name}_rounds.csv"))
    summary = _from_csv(await _read_text(out / f"{name}_summary.csv")).iloc[0]
    records = [
        RoundRecord(
            round=int(r["round"]),
            **{c: float(r[c]) for c in ROUND_COLUMNS if c != "round"},
        )
        for _, r in rounds.iterrows()
    ]
    spends = []
    for method, column in _SPEND_COLUMNS.items():
        value = float(summary[column])
        if math.isnan(value):
            continue
        delta = float(summary["delta_adv"]) if method is AccountingMethod.ADVANCED else float(
            summary["delta"]
        )
        spends.append(PrivacySpend(value, delta, method))
    return TrainingReport(
        algorithm=str(summary["algorithm"]),
        per_round=records,
        final_accuracy=float(summary["final_accuracy"]),
        rounds_used=int(summary["rounds_used"]),
        delta=float(summary["delta"]),
        spends=tuple(spends),
        timed_out=bool(summary["timed_out"]),
    )


# ----------------------------------------------------------------------
# Attack reports
# ----------------------------------------------------------------------


async def write_attack_report(
    report: CampaignReport, out_dir: str | Path, name: str, *, traces: bool = True
) -> List[Path]:
    """Write per-victim rows, the aggregate row and, optionally, loss traces."""
    out = Path(out_dir)
    victims = pd.DataFrame(
        {
            "victim": range(len(report.reports)),
            "resilient": [r.resilient for r in report.reports],
            "recon_distance": [r.recon_distance for r in report.reports],
            "iterations_used": [r.iterations_used for r in report.reports],
        }
    )
    written = [
        await _write_text(out / f"{name}_attack.csv", _to_csv(victims)),
        await _write_text(
            out / f"{name}_attack_summary.csv", _to_csv(pd.DataFrame([report.summary()]))
        ),
    ]
    if traces:
        for index, r in enumerate(report.reports):
            trace = pd.DataFrame(
                {"iteration": range(1, len(r.per_iteration_loss) + 1), "loss": r.per_iteration_loss}
            )
            written.append(await _write_text(out / f"{name}_trace_{index}.csv", _to_csv(trace)))
    return written


async def read_attack_report(out_dir: str | Path, name: str) -> CampaignReport:
    """Inverse of :func:`write_attack_report`; missing traces read as empty."""
    out = Path(out_dir)
    victims = _from_csv(await _read_text(out / f"{name}_attack.csv"))
    summary = _from_csv(await _read_text(out / f"{name}_attack_summary.csv")).iloc[0]
    reports = []
    for _, row in victims.iterrows():
        trace_path = out / f"{name}_trace_{int(row['victim'])}.csv"
        losses: List[float] = []
        if trace_path.exists():
            trace = _from_csv(await _read_text(trace_path))
            losses = [float(v) for v in trace["loss"]]
        reports.append(
            AttackReport(
                resilient=bool(row["resilient"]),
                recon_distance=float(row["recon_distance"]),
                iterations_used=int(row["iterations_used"]),
                per_iteration_loss=losses,
            )
        )
    return CampaignReport(AttackSurface(summary["surface"]), str(summary["algorithm"]), reports)


# ----------------------------------------------------------------------
# Comparisons
# ----------------------------------------------------------------------


async def write_comparison(rows: Sequence[ComparisonRow], path: str | Path) -> Path:
    """One row per configuration; absent attack columns stay empty."""
    return await _write_text(Path(path), _to_csv(pd.DataFrame(list(rows))))


async def write_spends(spends: Iterable[PrivacySpend], path: str | Path) -> Path:
    """Accounted spends as ``method,epsilon,delta`` rows."""
    frame = pd.DataFrame(
        [{"method": s.method.value, "epsilon": s.epsilon, "delta": s.delta} for s in spends],
        columns=["method", "epsilon", "delta"],
    )
    return await _write_text(Path(path), _to_csv(frame))


# ----------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------


def _manifest(model: ModelParams) -> str:
    layers = []
    for layer in model.layers:
        layers.append(
            {
                "kind": "conv" if layer.conv is not None else "dense",
                "activation": layer.activation.value,
                "geometry": asdict(layer.conv) if layer.conv is not None else None,
            }
        )
    return json.dumps({"format_version": CHECKPOINT_FORMAT_VERSION, "layers": layers})


async def save_checkpoint(model: ModelParams, path: str | Path) -> Path:
    """Write a versioned ``.npz`` with ``W<i>``/``b<i>`` arrays and a JSON manifest."""
    arrays = {
        "format_version": np.array(CHECKPOINT_FORMAT_VERSION),
        "manifest": np.array(_manifest(model)),
    }
    for i, layer in enumerate(model.layers):
        arrays[f"W{i}"] = layer.weights
        arrays[f"b{i}"] = layer.bias
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    async with aiofiles.open(target, "wb") as fp:
        await fp.write(buffer.getvalue())
    return target


async def load_checkpoint(path: str | Path) -> ModelParams:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    async with aiofiles.open(Path(path), "rb") as fp:
        payload = await fp.read()
    with np.load(io.BytesIO(payload), allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {version}")
        manifest = json.loads(str(data["manifest"]))
        layers = []
        for i, spec in enumerate(manifest["layers"]):
            geometry: Optional[ConvGeometry] = None
            if spec["geometry"] is not None:
                geometry = ConvGeometry(**spec["geometry"])
            layers.append(
                Layer(
                    np.array(data[f"W{i}"]),
                    np.array(data[f"b{i}"]),
                    Activation(spec["activation"]),
                    geometry,
                )
            )
    return ModelParams(tuple(layers))
