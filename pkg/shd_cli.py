import os
import time
from contextlib import contextmanager
from typing import Dict, Iterator, List, Optional

try:
    import typer
except ModuleNotFoundError as exc:
    raise SystemExit("Typer no esta instalado. Ejecuta: pip install typer") from exc

from doa_pipeline import ENCODERS, localize_signal, parse_methods
from experiments import DEFAULT_RUNS, SweepConfig, SweepRunner, angular_error, apply_overrides, probability_of_detection
from room_sim import SceneSpec, read_truth_sidecar, simulate_scene, write_truth_sidecar
from sh_basis import Direction, MdpDictionary, build_dictionary, convention_tag, load_dictionary
from sh_encoder import ArrayGeometry
from shd_config import AppConfig, EventLogger, ShdConfigError, ShdError, ShdIOError, load_yaml_mapping
from stft_analysis import read_wav, write_wav
from sweep_reports import (
    METHOD_LABELS,
    load_jsonl,
    plot_sweep,
    render_summary_markdown,
    summarize_history,
    write_blocks_csv,
    write_summary_csv,
    write_trials_csv,
)

app = typer.Typer(help="CLI de localizacion DOA en el dominio de armonicos esfericos (SHD-LRA / SHD-MUSIC)")

TRUTH_SUFFIX = ".truth.json"


def _run_id(kind: str) -> str:
    return f"{kind}-{int(time.time() * 1000)}"


@contextmanager
def _cli_errors(logger: Optional[EventLogger] = None, run_id: str = "") -> Iterator[None]:
    try:
        yield
    except ShdError as exc:
        if logger is not None:
            logger.log("command_error", run_id=run_id, code=exc.exit_code, error=str(exc))
        typer.echo(exc.cli_line(), err=True)
        raise typer.Exit(exc.exit_code)


def _resolve_config(config_file: Optional[str] = None, **flags: object) -> AppConfig:
    """Flags > seccion 'analysis' del YAML > variables de entorno."""
    config = AppConfig()
    if config_file:
        data = load_yaml_mapping(config_file)
        analysis = data.get("analysis", {})
        if not isinstance(analysis, dict):
            raise ShdConfigError(f"{config_file}: 'analysis' debe ser un mapa.")
        config = apply_overrides(config, analysis, source=config_file)
    explicit = {key: value for key, value in flags.items() if value is not None}
    return apply_overrides(config, explicit, source="flags")


def _ensure_dir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ShdIOError(f"No se pudo crear {path}: {exc}") from exc
    return path


def _load_geometry(path: Optional[str], config: AppConfig) -> ArrayGeometry:
    return ArrayGeometry.load(path or config.geometry_file)


def _dictionary_for(path: Optional[str], config: AppConfig, condon_shortley: bool) -> MdpDictionary:
    if path:
        return load_dictionary(path, expected_order=config.sh_order, expected_convention=convention_tag(condon_shortley))
    return build_dictionary(config.elev_step_deg, config.azim_step_deg, config.sh_order, condon_shortley)


@app.command("dict")
def cmd_dict(
    elev_step_deg: Optional[float] = typer.Option(None, "--elev-step-deg", help="Paso de elevacion de la rejilla."),
    azim_step_deg: Optional[float] = typer.Option(None, "--azim-step-deg", help="Paso de azimut de la rejilla."),
    order: Optional[int] = typer.Option(None, "--order", help="Orden SH N del diccionario."),
    condon_shortley: bool = typer.Option(False, "--condon-shortley", help="Incluye la fase de Condon-Shortley."),
    output: Optional[str] = typer.Option(None, "--output", help="Fichero .npz de salida."),
    output_dir: Optional[str] = typer.Option(None, "--output-dir", help="Directorio de salida (SHD_OUTPUT_DIR)."),
) -> None:
    """Construye y guarda el diccionario de MDPs."""
    run_id = _run_id("dict")
    with _cli_errors(None, run_id):
        config = _resolve_config(
            elev_step_deg=elev_step_deg, azim_step_deg=azim_step_deg, sh_order=order, output_dir=output_dir
        )
    logger = EventLogger(config)
    with _cli_errors(logger, run_id):
        dictionary = build_dictionary(config.elev_step_deg, config.azim_step_deg, config.sh_order, condon_shortley)
        path = output or os.path.join(_ensure_dir(config.output_dir), f"mdp_dict_N{config.sh_order}.npz")
        dictionary.save(path)
        checksum = dictionary.checksum()
        logger.log("dict_built", run_id=run_id, output=path, entries=len(dictionary), checksum=checksum)
        typer.echo(f"[+] Diccionario: {path}")
        typer.echo(f"    entradas={len(dictionary)} N={dictionary.order} convencion={dictionary.convention}")
        typer.echo(f"    sha256={checksum}")


@app.command("simulate")
def cmd_simulate(
    scene_file: str = typer.Argument(..., help="Escena YAML."),
    geometry: Optional[str] = typer.Option(None, "--geometry", help="Geometria del array (YAML)."),
    output: Optional[str] = typer.Option(None, "--output", help="WAV multicanal de salida."),
    output_dir: Optional[str] = typer.Option(None, "--output-dir", help="Directorio de salida (SHD_OUTPUT_DIR)."),
) -> None:
    """Renderiza una escena y escribe WAV + fichero de verdad."""
    run_id = _run_id("simulate")
    with _cli_errors(None, run_id):
        config = _resolve_config(output_dir=output_dir)
        logger = EventLogger(config)
        with _cli_errors(logger, run_id):
            scene = SceneSpec.load(scene_file)
            geom = _load_geometry(geometry, config)
            result = simulate_scene(scene, geom, config)
            stem = os.path.splitext(os.path.basename(scene_file))[0]
            wav_path = output or os.path.join(_ensure_dir(config.output_dir), f"{stem}.wav")
            write_wav(wav_path, result.signal)
            truth_path = os.path.splitext(wav_path)[0] + TRUTH_SUFFIX
            write_truth_sidecar(truth_path, result, config.block_duration_s)
            logger.log(
                "simulate_finished",
                run_id=run_id,
                name=stem,
                output=wav_path,
                n_images=result.n_images,
                n_samples=result.signal.n_samples,
            )
            typer.echo(f"[+] WAV: {wav_path} ({result.signal.n_channels} canales, {result.signal.duration_s:.2f} s)")
            typer.echo(f"[+] Verdad: {truth_path} theta={result.truth.theta_deg:.2f} phi={result.truth.phi_deg:.2f}")
            typer.echo(f"    imagenes={result.n_images}")


@app.command("localize")
def cmd_localize(
    wav_file: str = typer.Argument(..., help="WAV multicanal (canal q = capsula q)."),
    method: List[str] = typer.Option(["shd-lra"], "--method", help="shd-lra | shd-music (repetible o separado por comas)."),
    geometry: Optional[str] = typer.Option(None, "--geometry", help="Geometria del array (YAML)."),
    dictionary_file: Optional[str] = typer.Option(None, "--dictionary", help="Diccionario .npz precalculado."),
    config_file: Optional[str] = typer.Option(None, "--config", help="YAML con seccion 'analysis'."),
    order: Optional[int] = typer.Option(None, "--order", help="Orden SH de analisis."),
    max_eq_gain_db: Optional[str] = typer.Option(None, "--max-eq-gain-db", help="Limite de ecualizacion en dB u 'off'."),
    encoder: str = typer.Option("quadrature", "--encoder", help=f"Codificador: {' | '.join(ENCODERS)}."),
    condon_shortley: bool = typer.Option(False, "--condon-shortley", help="Convencion con fase de Condon-Shortley."),
    jobs: Optional[int] = typer.Option(None, "--jobs", min=1, help="Workers por bloque."),
    output: Optional[str] = typer.Option(None, "--output", help="CSV de salida por bloque."),
    output_dir: Optional[str] = typer.Option(None, "--output-dir", help="Directorio de salida (SHD_OUTPUT_DIR)."),
) -> None:
    """Estima la DOA de cada bloque de 0.3 s de un WAV."""
    run_id = _run_id("localize")
    with _cli_errors(None, run_id):
        methods = parse_methods(method)
        config = _resolve_config(
            config_file, sh_order=order, max_eq_gain_db=max_eq_gain_db, jobs=jobs, output_dir=output_dir
        )
        logger = EventLogger(config)
        with _cli_errors(logger, run_id):
            signal = read_wav(wav_file)
            geom = _load_geometry(geometry, config)
            dictionary = _dictionary_for(dictionary_file, config, condon_shortley)
            results = localize_signal(signal, geom, dictionary, config, methods=methods, encoder=encoder)
            stem = os.path.splitext(os.path.basename(wav_file))[0]
            csv_path = output or os.path.join(_ensure_dir(config.output_dir), f"{stem}_doa.csv")
            write_blocks_csv(csv_path, results)
            typer.echo(f"[+] {len(results)} estimaciones en {csv_path}")

            payload: Dict[str, object] = {"run_id": run_id, "name": stem, "output": csv_path, "n_rows": len(results)}
            truth_path = os.path.splitext(wav_file)[0] + TRUTH_SUFFIX
            if os.path.exists(truth_path):
                truth_data = read_truth_sidecar(truth_path)["truth"]
                truth = Direction.from_degrees(float(truth_data["theta_deg"]), float(truth_data["phi_deg"]))
                for name in methods:
                    errors = [angular_error(item.estimate.direction, truth) for item in results if item.method == name]
                    if not errors:
                        continue
                    pd = probability_of_detection(errors, config.anomaly_threshold_deg)
                    payload[f"pd_{name}"] = pd
                    typer.echo(f"    {METHOD_LABELS.get(name, name)}: PD={pd:.3f} sobre {len(errors)} bloques")
            logger.log("localize_finished", **payload)


@app.command("sweep")
def cmd_sweep(
    sweep_file: str = typer.Argument(..., help="Barrido YAML (T60 x SNR x runs)."),
    geometry: Optional[str] = typer.Option(None, "--geometry", help="Geometria del array (YAML)."),
    dictionary_file: Optional[str] = typer.Option(None, "--dictionary", help="Diccionario .npz precalculado."),
    master_seed: Optional[int] = typer.Option(None, "--master-seed", help="Sobrescribe la semilla maestra."),
    runs: Optional[int] = typer.Option(None, "--runs", min=1, help=f"Runs por condicion (por defecto {DEFAULT_RUNS})."),
    jobs: Optional[int] = typer.Option(None, "--jobs", min=1, help="Escenas en paralelo."),
    no_plots: bool = typer.Option(False, "--no-plots", help="No genera los SVG."),
    output_dir: Optional[str] = typer.Option(None, "--output-dir", help="Directorio de salida (SHD_OUTPUT_DIR)."),
) -> None:
    """Ejecuta un barrido de condiciones y escribe CSV por ensayo, resumen y graficas."""
    run_id = _run_id("sweep")
    with _cli_errors(None, run_id):
        data = load_yaml_mapping(sweep_file)
        if master_seed is not None:
            data["master_seed"] = master_seed
        if runs is not None:
            data["runs"] = runs
        sweep = SweepConfig.from_mapping(data, source=sweep_file)
        config = _resolve_config(jobs=jobs, output_dir=output_dir)
        analysis_config = sweep.apply_analysis(config)
        logger = EventLogger(config)
        with _cli_errors(logger, run_id):
            geom = _load_geometry(geometry, analysis_config)
            dictionary = _dictionary_for(dictionary_file, analysis_config, False) if dictionary_file else None
            runner = SweepRunner(
                sweep, config=config, geom=geom, dictionary=dictionary, logger=logger, jobs=jobs, verbose=True
            )
            report = runner.run_sweep()
            n_scenes = len(sweep.scene_keys())
            if report.failures == n_scenes:
                first = report.failed_scenes[0]["error"] if report.failed_scenes else "sin detalle"
                raise ShdError(f"Fallaron las {n_scenes} escenas del barrido {sweep.name}; primer error: {first}")

            folder = _ensure_dir(os.path.join(config.output_dir, sweep.name))
            trials_path = write_trials_csv(os.path.join(folder, "trials.csv"), report.trials)
            summary_path = write_summary_csv(os.path.join(folder, "summary.csv"), report.rows)
            markdown_path = os.path.join(folder, "summary.md")
            try:
                with open(markdown_path, "w", encoding="utf-8") as file:
                    file.write(render_summary_markdown(report.rows, title=f"Barrido {sweep.name}"))
            except OSError as exc:
                raise ShdIOError(f"No se pudo escribir {markdown_path}: {exc}") from exc
            plots = [] if no_plots else plot_sweep(report.rows, folder, prefix=sweep.name)

            typer.echo(f"[+] {report.sweep_id}: {len(report.trials)} ensayos, {report.failures} escenas fallidas")
            for row in report.rows:
                rmse = "n/a" if row.rmse_mean is None else f"{row.rmse_mean:.2f}"
                typer.echo(
                    f"- {METHOD_LABELS.get(row.method, row.method)} | T60={row.t60_s:g} | SNR={row.snr_db} | "
                    f"PD={row.pd_mean:.3f}+/-{row.pd_std:.3f} | RMSE={rmse}"
                )
            typer.echo(f"[+] CSV: {trials_path}, {summary_path}")
            for path in plots:
                typer.echo(f"[+] Grafica: {path}")
            if report.failures:
                typer.echo(f"[!] Escenas descartadas: {report.failures}")


@app.command("history")
def cmd_history(limit: int = typer.Option(10, "--limit", min=1, help="Numero maximo de ejecuciones.")) -> None:
    """Lista las ejecuciones registradas en el log de eventos."""
    config = AppConfig()
    summaries = summarize_history(load_jsonl(config.event_log_file))
    if not summaries:
        typer.echo("No hay historial.")
        return

    typer.echo(f"Mostrando {min(limit, len(summaries))} ejecuciones mas recientes:")
    for item in summaries[-limit:][::-1]:
        typer.echo(
            f"- {item['run_id']} | status={item.get('status')} | name={item.get('name')} | "
            f"scenes={item.get('scenes')} | failures={item.get('failures')}"
        )


if __name__ == "__main__":
    app()
