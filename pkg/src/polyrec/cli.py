"""polyrec command line: serve, administer, load, synthesize, evaluate, bench.

Every command except ``serve`` is an HTTP client; point it at a running
server with --url or POLYREC_URL.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import httpx

from . import bench as bench_mod
from . import evaluation, synth


def _default_url() -> str:
    port = os.environ.get("POLYREC_PORT", "8080")
    return os.environ.get("POLYREC_URL", f"http://127.0.0.1:{port}")


_url_option = click.option(
    "--url", default=None, help="Server base URL (default: POLYREC_URL)."
)


def _client(url: str | None) -> httpx.Client:
    return httpx.Client(base_url=url or _default_url(), timeout=120.0)


def _fail_on_error(response: httpx.Response) -> httpx.Response:
    if response.status_code >= 400:
        try:
            detail = response.json().get("error", response.text)
        except ValueError:
            detail = response.text
        raise click.ClickException(f"HTTP {response.status_code}: {detail}")
    return response


@click.group()
def main() -> None:
    """Multi-domain real-time recommendation service."""


@main.command()
@click.option("--host", default="0.0.0.0", show_default=True)
@click.option("--port", type=int, default=None, help="Default: POLYREC_PORT or 8080.")
@click.option("--data-dir", default=None, help="Default: POLYREC_DATA_DIR or ./polyrec-data.")
@click.option(
    "--default-budget-ms",
    type=int,
    default=None,
    help="Default: POLYREC_DEFAULT_BUDGET_MS or 100.",
)
def serve(host: str, port: int | None, data_dir: str | None, default_budget_ms: int | None) -> None:
    """Run the HTTP service."""
    from .engine import RecommenderEngine
    from .server import run

    port = port if port is not None else int(os.environ.get("POLYREC_PORT", "8080"))
    data_dir = data_dir or os.environ.get("POLYREC_DATA_DIR", "./polyrec-data")
    budget = (
        default_budget_ms
        if default_budget_ms is not None
        else int(os.environ.get("POLYREC_DEFAULT_BUDGET_MS", "100"))
    )
    engine = RecommenderEngine(data_dir, default_budget_ms=budget)
    click.echo(f"serving {sorted(engine.domain_ids())} from {data_dir} on {host}:{port}")
    run(engine, host, port)


@main.group()
def domain() -> None:
    """Domain administration."""


@domain.command("register")
@click.argument("config_file", type=click.Path(exists=True, dir_okay=False))
@_url_option
def domain_register(config_file: str, url: str | None) -> None:
    """Register a domain from a DomainConfig JSON file."""
    config = json.loads(Path(config_file).read_text())
    with _client(url) as client:
        response = _fail_on_error(client.post("/domains", json=config))
    click.echo(json.dumps(response.json()))


@domain.command("set-profile")
@click.argument("domain_id")
@click.argument("profile_file", type=click.Path(exists=True, dir_okay=False))
@_url_option
def domain_set_profile(domain_id: str, profile_file: str, url: str | None) -> None:
    """Replace a domain's algorithm profile from a JSON file."""
    profile = json.loads(Path(profile_file).read_text())
    with _client(url) as client:
        response = _fail_on_error(
            client.put(f"/domains/{domain_id}/profile", json=profile)
        )
    click.echo(json.dumps(response.json()))


@main.command()
@click.argument("domain_id")
@click.option("--items", type=click.Path(exists=True, dir_okay=False))
@click.option("--interactions", type=click.Path(exists=True, dir_okay=False))
@click.option("--embeddings", type=click.Path(exists=True, dir_okay=False))
@_url_option
def load(domain_id: str, items, interactions, embeddings, url) -> None:
    """Load JSONL files into a domain."""
    targets = [("items", items), ("interactions", interactions), ("embeddings", embeddings)]
    if not any(path for _, path in targets):
        raise click.ClickException("nothing to load; pass --items/--interactions/--embeddings")
    with _client(url) as client:
        for name, path in targets:
            if not path:
                continue
            body = Path(path).read_bytes()
            response = _fail_on_error(
                client.post(
                    f"/domains/{domain_id}/{name}",
                    content=body,
                    headers={"content-type": "application/x-ndjson"},
                )
            )
            result = response.json()
            click.echo(f"{name}: accepted={result['accepted']} rejected={len(result['rejected'])}")
            for rejection in result["rejected"][:10]:
                click.echo(f"  line {rejection['line']}: {rejection['reason']}", err=True)


@main.command("synth")
@click.argument("domain_id")
@click.option("--users", "n_users", type=int, required=True)
@click.option("--items", "n_items", type=int, required=True)
@click.option("--clusters", "n_clusters", type=int, required=True)
@click.option("--seed", type=int, required=True)
@click.option("--events-per-user", type=int, default=12, show_default=True)
@click.option("--dim", type=int, default=32, show_default=True)
@click.option("--space", default="synth", show_default=True)
@_url_option
def synth_cmd(domain_id, n_users, n_items, n_clusters, seed, events_per_user, dim, space, url):
    """Generate and ingest seeded clustered preference data."""
    with _client(url) as client:
        config = _fail_on_error(client.get(f"/domains/{domain_id}")).json()
        data = synth.generate(
            entity_types=config["entity_types"],
            interaction_types=config["interaction_types"],
            n_users=n_users,
            n_items=n_items,
            n_clusters=n_clusters,
            seed=seed,
            events_per_user=events_per_user,
            dim=dim,
            space_id=space,
        )
        counts = {}
        for name, records in (
            ("items", data.items),
            ("interactions", data.interactions),
            ("embeddings", data.embeddings),
        ):
            response = _fail_on_error(
                client.post(f"/domains/{domain_id}/{name}", json=records)
            )
            counts[name] = response.json()["accepted"]
    click.echo(json.dumps(counts))


@main.command("eval")
@click.argument("domain_id")
@click.option("--k", type=int, default=None)
@click.option("--slice-context", "slice_tag", default=None, help="Context tag to slice by.")
@click.option("--json", "as_json", is_flag=True, help="Emit the report as JSON.")
@_url_option
def eval_cmd(domain_id, k, slice_tag, as_json, url):
    """Offline accuracy + latency evaluation (leave-one-out)."""
    tags = [slice_tag] if slice_tag else None
    report = evaluation.evaluate(url or _default_url(), domain_id, k=k, slice_tags=tags)
    if as_json:
        click.echo(json.dumps(report.to_dict(), indent=2))
    else:
        click.echo(evaluation.format_report(report))


@main.command()
@click.argument("domain_id")
@click.option("--concurrency", type=int, required=True)
@click.option("--requests", "n_requests", type=int, required=True)
@click.option("--budget-ms", type=int, default=None)
@click.option("--k", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@_url_option
def bench(domain_id, concurrency, n_requests, budget_ms, k, seed, url):
    """Drive concurrent requests through the HTTP path and report latency."""
    report = bench_mod.latency_bench(
        url or _default_url(),
        domain_id,
        concurrency=concurrency,
        n_requests=n_requests,
        budget_ms=budget_ms,
        k=k,
        seed=seed,
    )
    click.echo(json.dumps(report, indent=2))


@main.command()
@click.argument("domain_id")
@_url_option
def snapshot(domain_id, url):
    """Write a point-in-time snapshot of a domain."""
    with _client(url) as client:
        response = _fail_on_error(client.post(f"/domains/{domain_id}/snapshot"))
    click.echo(json.dumps(response.json()))


if __name__ == "__main__":
    sys.exit(main())
