import csv
import json
import os
from typing import Dict, List, Optional, Sequence, Tuple

from doa_pipeline import BlockResult
from experiments import SummaryRow, TrialResult, aggregate
from lra_localizer import METHOD_LRA
from music_baseline import METHOD_MUSIC
from sh_basis import Direction
from shd_config import ShdIOError

METHOD_LABELS = {
    METHOD_LRA: "SHD-LRA",
    METHOD_MUSIC: "SHD-MUSIC (conventional)",
}

BLOCK_COLUMNS = ["block_index", "time_s", "theta_deg", "phi_deg", "residual", "confidence", "method"]
TRIAL_COLUMNS = [
    "method",
    "t60_s",
    "snr_db",
    "run",
    "block",
    "time_s",
    "true_theta_deg",
    "true_phi_deg",
    "est_theta_deg",
    "est_phi_deg",
    "psi_e_deg",
    "anomalous",
]
SUMMARY_COLUMNS = [
    "method",
    "label",
    "t60_s",
    "snr_db",
    "runs",
    "pd_mean",
    "pd_std",
    "rmse_mean",
    "rmse_std",
    "n_trials",
    "n_nonanomalous",
]


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


def _parse_optional(raw: str) -> Optional[float]:
    raw = (raw or "").strip()
    return None if raw == "" else float(raw)


def _write_rows(path: str, columns: List[str], rows: List[Dict[str, object]]) -> str:
    folder = os.path.dirname(path)
    try:
        if folder:
            os.makedirs(folder, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as file:
            writer = csv.DictWriter(file, fieldnames=columns, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    except OSError as exc:
        raise ShdIOError(f"No se pudo escribir {path}: {exc}") from exc
    return path


def _read_rows(path: str, columns: List[str]) -> List[Dict[str, str]]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as file:
            reader = csv.DictReader(file)
            missing = [column for column in columns if column not in (reader.fieldnames or [])]
            if missing:
                raise ShdIOError(f"{path}: faltan columnas {missing}")
            return list(reader)
    except OSError as exc:
        raise ShdIOError(f"No se pudo leer {path}: {exc}") from exc


def write_blocks_csv(path: str, results: Sequence[BlockResult]) -> str:
    return _write_rows(path, BLOCK_COLUMNS, [result.to_row() for result in results])


def trial_row(trial: TrialResult) -> Dict[str, object]:
    return {
        "method": trial.method,
        "t60_s": _fmt(trial.t60_s),
        "snr_db": _fmt(trial.snr_db),
        "run": trial.run,
        "block": trial.block_index,
        "time_s": f"{trial.time_s:.3f}",
        "true_theta_deg": _fmt(trial.truth.theta_deg if trial.truth else None),
        "true_phi_deg": _fmt(trial.truth.phi_deg if trial.truth else None),
        "est_theta_deg": _fmt(trial.estimate.theta_deg if trial.estimate else None),
        "est_phi_deg": _fmt(trial.estimate.phi_deg if trial.estimate else None),
        "psi_e_deg": _fmt(trial.psi_e_deg),
        "anomalous": int(trial.anomalous),
    }


def write_trials_csv(path: str, trials: Sequence[TrialResult]) -> str:
    return _write_rows(path, TRIAL_COLUMNS, [trial_row(trial) for trial in trials])


def read_trials_csv(path: str) -> List[TrialResult]:
    trials: List[TrialResult] = []
    for line, row in enumerate(_read_rows(path, TRIAL_COLUMNS), start=2):
        try:
            truth = estimate = None
            if row["true_theta_deg"] and row["true_phi_deg"]:
                truth = Direction.from_degrees(float(row["true_theta_deg"]), float(row["true_phi_deg"]))
            if row["est_theta_deg"] and row["est_phi_deg"]:
                estimate = Direction.from_degrees(float(row["est_theta_deg"]), float(row["est_phi_deg"]))
            trials.append(
                TrialResult(
                    method=row["method"],
                    t60_s=float(row["t60_s"]),
                    snr_db=_parse_optional(row["snr_db"]),
                    run=int(row["run"]),
                    block_index=int(row["block"]),
                    psi_e_deg=float(row["psi_e_deg"]),
                    anomalous=row["anomalous"].strip() in ("1", "true", "True"),
                    truth=truth,
                    estimate=estimate,
                    time_s=float(row["time_s"] or 0.0),
                )
            )
        except (KeyError, ValueError) as exc:
            raise ShdIOError(f"{path}:{line}: fila invalida ({exc})") from exc
    return trials


def summary_row(row: SummaryRow) -> Dict[str, object]:
    return {
        "method": row.method,
        "label": METHOD_LABELS.get(row.method, row.method),
        "t60_s": _fmt(row.t60_s),
        "snr_db": _fmt(row.snr_db),
        "runs": row.runs,
        "pd_mean": _fmt(row.pd_mean),
        "pd_std": _fmt(row.pd_std),
        "rmse_mean": _fmt(row.rmse_mean),
        "rmse_std": _fmt(row.rmse_std),
        "n_trials": row.n_trials,
        "n_nonanomalous": row.n_nonanomalous,
    }


def write_summary_csv(path: str, rows: Sequence[SummaryRow]) -> str:
    return _write_rows(path, SUMMARY_COLUMNS, [summary_row(row) for row in rows])


def read_summary_csv(path: str) -> List[SummaryRow]:
    rows: List[SummaryRow] = []
    for line, row in enumerate(_read_rows(path, SUMMARY_COLUMNS), start=2):
        try:
            rows.append(
                SummaryRow(
                    method=row["method"],
                    t60_s=float(row["t60_s"]),
                    snr_db=_parse_optional(row["snr_db"]),
                    runs=int(row["runs"]),
                    pd_mean=float(row["pd_mean"]),
                    pd_std=float(row["pd_std"]),
                    rmse_mean=_parse_optional(row["rmse_mean"]),
                    rmse_std=_parse_optional(row["rmse_std"]),
                    n_trials=int(row["n_trials"]),
                    n_nonanomalous=int(row["n_nonanomalous"]),
                )
            )
        except (KeyError, ValueError) as exc:
            raise ShdIOError(f"{path}:{line}: fila invalida ({exc})") from exc
    return rows


def summary_from_trials_csv(path: str, threshold_deg: float = 10.0) -> List[SummaryRow]:
    """Recalcula el resumen desde el CSV por ensayo (auditoria de agregacion)."""
    trials = read_trials_csv(path)
    methods = list(dict.fromkeys(trial.method for trial in trials))
    return aggregate(trials, threshold_deg, methods)


def render_summary_markdown(rows: Sequence[SummaryRow], title: str = "Barrido") -> str:
    lines: List[str] = [
        f"# {title}",
        "",
        "| Metodo | T60 (s) | SNR (dB) | Runs | PD | RMSE (deg) |",
        "|---|---|---|---|---|---|",
    ]
    for row in rows:
        rmse = "n/a" if row.rmse_mean is None else f"{row.rmse_mean:.2f} +/- {row.rmse_std:.2f}"
        snr = "inf" if row.snr_db is None else f"{row.snr_db:g}"
        lines.append(
            f"| {METHOD_LABELS.get(row.method, row.method)} | {row.t60_s:g} | {snr} | {row.runs} | "
            f"{row.pd_mean:.3f} +/- {row.pd_std:.3f} | {rmse} |"
        )
    return "\n".join(lines) + "\n"


def plot_sweep(rows: Sequence[SummaryRow], output_dir: str, prefix: str = "sweep") -> List[str]:
    """Un SVG por T60 con barras de PD y RMSE por SNR y metodo."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ModuleNotFoundError as exc:
        raise ShdIOError("matplotlib no instalado. Usa: pip install matplotlib") from exc

    matplotlib.rcParams["svg.hashsalt"] = "shd-doa"
    os.makedirs(output_dir, exist_ok=True)
    paths: List[str] = []
    t60_values = sorted({row.t60_s for row in rows})
    methods = list(dict.fromkeys(row.method for row in rows))
    for t60 in t60_values:
        subset = [row for row in rows if row.t60_s == t60]
        snrs = sorted({row.snr_db for row in subset}, key=lambda value: float("inf") if value is None else value)
        width = 0.8 / max(1, len(methods))
        figure, (ax_pd, ax_rmse) = plt.subplots(1, 2, figsize=(9, 3.5))
        for position, method in enumerate(methods):
            by_snr = {row.snr_db: row for row in subset if row.method == method}
            xs = [index + (position - (len(methods) - 1) / 2.0) * width for index in range(len(snrs))]
            pd_values = [by_snr[snr].pd_mean if snr in by_snr else 0.0 for snr in snrs]
            pd_errors = [by_snr[snr].pd_std if snr in by_snr else 0.0 for snr in snrs]
            rmse_values = [
                by_snr[snr].rmse_mean if snr in by_snr and by_snr[snr].rmse_mean is not None else 0.0 for snr in snrs
            ]
            rmse_errors = [
                by_snr[snr].rmse_std if snr in by_snr and by_snr[snr].rmse_std is not None else 0.0 for snr in snrs
            ]
            label = METHOD_LABELS.get(method, method)
            ax_pd.bar(xs, pd_values, width, yerr=pd_errors, label=label, capsize=2)
            ax_rmse.bar(xs, rmse_values, width, yerr=rmse_errors, label=label, capsize=2)
        labels = ["inf" if snr is None else f"{snr:g}" for snr in snrs]
        for axis, ylabel in ((ax_pd, "PD"), (ax_rmse, "RMSE (deg)")):
            axis.set_xticks(range(len(snrs)))
            axis.set_xticklabels(labels)
            axis.set_xlabel("SNR (dB)")
            axis.set_ylabel(ylabel)
        ax_pd.set_ylim(0.0, 1.05)
        ax_pd.legend(fontsize="small")
        figure.suptitle(f"T60 = {t60:g} s")
        figure.tight_layout()
        path = os.path.join(output_dir, f"{prefix}_t60_{t60:g}s.svg")
        figure.savefig(path, format="svg", metadata={"Date": None})
        plt.close(figure)
        paths.append(path)
    return paths


def load_jsonl(path: str) -> List[Dict]:
    if not path or not os.path.exists(path):
        return []
    rows: List[Dict] = []
    with open(path, "r", encoding="utf-8") as file:
        for raw_line in file:
            line = raw_line.strip()
            if not line:
                continue
            try:
                item = json.loads(line)
            except json.JSONDecodeError:
                continue
            if isinstance(item, dict):
                rows.append(item)
    return rows


def _event_run_id(event: Dict) -> str:
    return str(event.get("sweep_id") or event.get("run_id") or "").strip()


def group_events_by_run(events: List[Dict]) -> Tuple[Dict[str, List[Dict]], List[str]]:
    grouped: Dict[str, List[Dict]] = {}
    order: List[str] = []
    for event in events:
        run_id = _event_run_id(event)
        if not run_id:
            continue
        if run_id not in grouped:
            grouped[run_id] = []
            order.append(run_id)
        grouped[run_id].append(event)
    return grouped, order


def summarize_run(run_id: str, events: List[Dict]) -> Dict[str, object]:
    summary: Dict[str, object] = {
        "run_id": run_id,
        "kind": run_id.split("-", 1)[0],
        "name": "",
        "started_at": "",
        "finished_at": "",
        "status": "running",
        "scenes": 0,
        "failures": 0,
        "n_trials": None,
    }
    for event in events:
        event_type = event.get("event")
        if not summary["started_at"]:
            summary["started_at"] = event.get("ts", "")
        if event_type == "sweep_started":
            summary["name"] = event.get("name", "")
        elif event_type == "scene_finished":
            summary["scenes"] = int(summary["scenes"]) + 1
        elif event_type == "scene_error":
            summary["failures"] = int(summary["failures"]) + 1
        elif event_type == "sweep_finished":
            summary["status"] = "completed"
            summary["finished_at"] = event.get("ts", "")
            summary["n_trials"] = event.get("n_trials")
        elif event_type in ("localize_finished", "simulate_finished", "dict_built"):
            summary["status"] = "completed"
            summary["finished_at"] = event.get("ts", "")
            summary["name"] = event.get("name", event.get("output", ""))
        elif event_type == "command_error":
            summary["status"] = "failed"
            summary["finished_at"] = event.get("ts", "")
    return summary


def summarize_history(events: List[Dict]) -> List[Dict[str, object]]:
    grouped, order = group_events_by_run(events)
    return [summarize_run(run_id, grouped[run_id]) for run_id in order]
