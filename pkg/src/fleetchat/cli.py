"""Operator command line: interactive chat, corpus tooling, fleet generation,
and the service launcher."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .config import AppConfig, load_config
from .dialog import ResponseKind
from .engine import ChatEngine
from .fleetgen import PlantSpec, generate_fleet, write_fleet
from .intents import (
    CorpusError,
    IntentModel,
    TrainingError,
    cross_validate,
    evaluate,
    load_corpus,
    train,
)

SEVERITY_MARKERS = {"malicious": "[MAL]", "suspicious": "[SUS]", "info": "[---]"}


def _build_config(config, **overrides) -> AppConfig:
    cfg = load_config(config)
    for key, value in overrides.items():
        if value not in (None, ""):
            setattr(cfg, key, value)
    return cfg


def render_cards(cards) -> str:
    """Fixed-width card table with severity markers, stable for golden tests."""
    if not cards:
        return ""
    rows = [
        (
            SEVERITY_MARKERS[card.severity],
            card.hostname,
            card.kind,
            card.name,
            str(card.timestamp),
        )
        for card in cards
    ]
    widths = [max(len(row[i]) for row in rows) for i in range(5)]
    lines = [
        "  " + "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
        for row in rows
    ]
    return "\n".join(lines)


def render_response(response, cards) -> str:
    lines = [f"[{response.kind.value}] {response.text}"]
    if response.kind is ResponseKind.DISAMBIGUATION:
        for i, choice in enumerate(response.choices, start=1):
            lines.append(f"  {i}) {choice}")
    table = render_cards(cards)
    if table:
        lines.append(table)
    return "\n".join(lines)


@click.group()
def main():
    """Conversational queries against a simulated EDR endpoint fleet."""


@main.command()
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--fleet-dir", type=click.Path(file_okay=False), default=None)
@click.option("--blocklist", type=click.Path(exists=True, dir_okay=False), default=None)
def repl(config, corpus, fleet_dir, blocklist):
    """Interactive chat loop; reads one utterance per line, exits on EOF."""
    try:
        cfg = _build_config(
            config, corpus_path=corpus, fleet_dir=fleet_dir, blocklist_path=blocklist
        )
        engine = ChatEngine.from_config(cfg)
    except (OSError, ValueError, CorpusError, TrainingError) as exc:
        raise click.ClickException(f"startup failed: {exc}") from exc

    session = engine.new_session("repl")
    click.echo(f"fleetchat: {len(engine.shards)} endpoints loaded. Ctrl-D exits.")
    while True:
        click.echo("> ", nl=False)
        line = sys.stdin.readline()
        if not line:
            click.echo("")
            break
        text = line.strip()
        if not text:
            continue
        result = engine.handle_turn(session, text)
        click.echo(render_response(result.response, result.cards))


@main.command(name="train")
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--alpha", type=float, default=1.0, show_default=True)
@click.option("--tau", type=float, default=0.5, show_default=True)
def train_cmd(corpus, out, alpha, tau):
    """Train the intent model and write it to a versioned flat file."""
    try:
        examples = load_corpus(corpus)
        model = train(examples, alpha=alpha, tau=tau)
    except (CorpusError, TrainingError) as exc:
        raise click.ClickException(str(exc)) from exc
    model.save(out)
    click.echo(
        f"trained on {len(examples)} examples, {len(model.labels)} labels, "
        f"{len(model.vocabulary)} features -> {out}"
    )


@main.command(name="eval")
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--folds", type=int, default=10, show_default=True)
@click.option("--min-accuracy", type=float, default=0.0, show_default=True)
@click.option("--alpha", type=float, default=1.0, show_default=True)
@click.option("--tau", type=float, default=0.5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def eval_cmd(corpus, folds, min_accuracy, alpha, tau, seed):
    """Cross-validate the corpus; nonzero exit below --min-accuracy."""
    try:
        examples = load_corpus(corpus)
        resub = evaluate(train(examples, alpha=alpha, tau=tau), examples)
        metrics = cross_validate(examples, k=folds, alpha=alpha, tau=tau, seed=seed)
    except (CorpusError, TrainingError) as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"examples: {len(examples)}")
    click.echo(f"resubstitution macro accuracy: {resub.macro_accuracy:.4f}")
    click.echo(f"{folds}-fold macro accuracy: {metrics.macro_accuracy:.4f}")
    for label in sorted(metrics.recall, key=lambda l: l.value):
        click.echo(
            f"  {label.value}: precision {metrics.precision[label]:.3f} "
            f"recall {metrics.recall[label]:.3f} (n={metrics.support[label]})"
        )
    click.echo("confusion matrix (rows = true labels):")
    click.echo(metrics.format_confusion())
    if metrics.macro_accuracy < min_accuracy:
        raise click.ClickException(
            f"macro accuracy {metrics.macro_accuracy:.4f} below gate {min_accuracy}"
        )


@main.command(name="gen-fleet")
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--fleet-dir", type=click.Path(file_okay=False), required=True)
@click.option("--endpoints", type=int, default=10, show_default=True)
@click.option("--records", type=int, default=1000, show_default=True)
def gen_fleet(seed, fleet_dir, endpoints, records):
    """Generate a deterministic simulated fleet with planted anomalies."""
    shards, manifest = generate_fleet(seed, endpoints, records, plant=PlantSpec())
    write_fleet(fleet_dir, shards, manifest)
    total = sum(len(s.records) for s in shards)
    click.echo(
        f"wrote {len(shards)} shards ({total} records) to {fleet_dir}; "
        f"planted hash on {manifest.planted_hash_expected_matches} endpoints, "
        f"lineage chain {manifest.lineage_pids} on {manifest.lineage_endpoint}"
    )


@main.command()
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--listen", default=None, help="host:port (default 127.0.0.1:8123)")
@click.option("--fleet-dir", type=click.Path(file_okay=False), default=None)
@click.option("--blocklist", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--state-dir", type=click.Path(file_okay=False), default=None)
def serve(config, listen, fleet_dir, blocklist, state_dir):
    """Run the HTTP service."""
    import uvicorn

    from .service import SessionManager, create_app

    cfg = _build_config(
        config,
        listen=listen,
        fleet_dir=fleet_dir,
        blocklist_path=blocklist,
        state_dir=state_dir,
    )
    engine = ChatEngine.from_config(cfg)
    manager = SessionManager(engine, cfg.state_dir)
    app = create_app(manager, api_token=cfg.api_token)
    host, _, port = cfg.listen.partition(":")
    click.echo(f"serving on http://{cfg.listen}")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8123), log_level="warning")


if __name__ == "__main__":
    main()
