"""Command line interface: serve, validate, stats, simulate, replay."""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click

from exdial import analytics, codec, service as service_mod
from exdial.agents import (
    ExplaineePolicy,
    MoveKind,
    load_kb_file,
    load_policy_file,
    simulate_dialogue,
)

DEFAULT_POLICY = ExplaineePolicy(
    weights={
        MoveKind.AFFIRM: 4.0,
        MoveKind.RETURN_QUESTION: 1.5,
        MoveKind.BEGIN_ARGUMENT: 1.0,
        MoveKind.BEGIN_QUESTION: 3.0,
        MoveKind.END_EXPLANATION: 1.0,
        MoveKind.CLARIFY: 1.0,
        MoveKind.AFFIRM_ARGUMENT: 2.0,
        MoveKind.END_ARGUMENT: 1.0,
    },
    stop_bias=0.6,
    seed=0,
)


@click.group()
def main() -> None:
    """Explanation dialogue game toolkit."""


@main.command()
@click.option("--port", type=int, default=None, help="listen port")
@click.option(
    "--data",
    "data_dir",
    type=click.Path(file_okay=False),
    default=None,
    help="session log directory",
)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--timeout", type=float, default=None, help="session timeout in seconds")
def serve(port, data_dir, config_path, timeout) -> None:
    """Run the live session service."""
    import uvicorn

    config = (
        service_mod.load_config(config_path)
        if config_path
        else service_mod.ServiceConfig()
    )
    if port is not None:
        config.port = port
    if data_dir is not None:
        config.data_dir = data_dir
    if timeout is not None:
        config.session_timeout_seconds = timeout
    svc = service_mod.SessionService(
        config.data_dir, session_timeout=config.session_timeout_seconds
    )
    app = service_mod.build_app(svc)
    uvicorn.run(app, host="127.0.0.1", port=config.port)


@main.command()
@click.argument("files", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None, help="write reports here")
def validate(files, out) -> None:
    """Validate tag trace files; one JSON report per trace line."""
    reports = []
    any_invalid = False
    for path in files:
        for line in codec.read_trace_lines(Path(path).read_text()):
            report = codec.validate_text(line)
            any_invalid = any_invalid or not report.valid
            reports.append(json.dumps(report.to_dict(trace=line), sort_keys=True))
    text = "\n".join(reports) + ("\n" if reports else "")
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)
    if any_invalid:
        sys.exit(1)


def _sniff_kind(text: str) -> str:
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        return "traces" if line.startswith("[") else "transcripts"
    return "traces"


@main.command()
@click.argument("files", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="json")
@click.option(
    "--kind",
    type=click.Choice(["auto", "traces", "transcripts"]),
    default="auto",
    help="input kind; auto sniffs per file",
)
@click.option("--out", type=click.Path(), default=None)
def stats(files, fmt, kind, out) -> None:
    """Corpus statistics over coded transcripts and/or tag traces."""
    dialogues = []
    traces = []
    for path in files:
        text = Path(path).read_text()
        file_kind = kind if kind != "auto" else _sniff_kind(text)
        if file_kind == "traces":
            traces.extend(codec.read_trace_lines(text))
        else:
            dialogues.extend(codec.parse_coded_transcript(text))
    bundle = analytics.corpus_stats(dialogues, traces)
    text = bundle.to_csv() if fmt == "csv" else bundle.to_json() + "\n"
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


@main.command()
@click.option("--episodes", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--kb", "kb_path", type=click.Path(exists=True), default=None)
@click.option("--policy", "policy_path", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--max-moves", type=int, default=12, show_default=True)
def simulate(episodes, seed, kb_path, policy_path, out, max_moves) -> None:
    """Simulate dialogue episodes and emit them in the tag trace format."""
    kb = load_kb_file(kb_path) if kb_path else []
    policy = load_policy_file(policy_path) if policy_path else DEFAULT_POLICY
    lines = []
    for i in range(episodes):
        episode_policy = dataclasses.replace(policy, seed=seed + i)
        moves = simulate_dialogue(kb, episode_policy, max_moves)
        lines.append(codec.format_tags(moves))
    text = "\n".join(lines) + ("\n" if lines else "")
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


@main.command()
@click.argument("logfile", type=click.Path(exists=True))
def replay(logfile) -> None:
    """Replay a session log and print the recovered state summary."""
    try:
        state = service_mod.replay_log(logfile)
    except service_mod.CorruptLog as err:
        click.echo(f"corrupt log: {err}", err=True)
        sys.exit(2)
    click.echo(json.dumps(state.to_summary(), indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
