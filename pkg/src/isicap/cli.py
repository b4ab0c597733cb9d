"""Command-line surface tying worlds, issues, speakers, engine, and metrics
into reproducible experiments.

Sweeps are driven by JSON manifests whose fields mirror the flags; flags
override manifest entries, so one-off runs need no file. Reruns with the
same manifest and seed write byte-identical JSON.
"""

from __future__ import annotations

import json
import math
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import click
import numpy as np

from . import engine
from .engine import (
    RsaConfig,
    caption_level_incremental,
    decode,
    decode_beam,
    enumerate_captions,
    exact_caption_speaker,
)
from .errors import EnumerationTooLarge, IsicapError
from .issues import Issue, load_issue, load_qa_table, partition_by_attribute, partition_by_qa, sample_context
from .metrics import (
    CoverageTallies,
    aggregate_alignment,
    bundled_classifier_path,
    coverage_report,
    coverage_tallies,
    issue_alignment,
    load_classifier_config,
)
from .speakers import (
    CachedBackend,
    TemplateSpeakerParams,
    avg_feature_speaker,
    caption_logprob,
    remote_speaker,
    template_speaker,
)
from .worlds import World, bundled_world_path, load_world

MODEL_CHOICES = ("s0", "s0avg", "s1", "s1c", "s1ch")


def context_seed(seed: int, issue_label: str, target: str) -> int:
    """Stable per-run seed; hash() is salted per process, crc32 is not."""
    return seed ^ zlib.crc32(f"{issue_label}|{target}".encode("utf-8"))


def resolve_issue(world: World, spec: dict) -> Issue:
    """Build an Issue from a manifest-style issue spec."""
    kinds = [k for k in ("attr", "qa", "file") if spec.get(k)]
    if len(kinds) != 1:
        raise ValueError("issue spec needs exactly one of attr / qa+question / file")
    if kinds[0] == "attr":
        return partition_by_attribute(world, spec["attr"])
    if kinds[0] == "file":
        return load_issue(spec["file"])
    if not spec.get("question"):
        raise ValueError("a QA issue spec needs a question")
    return partition_by_qa(load_qa_table(spec["qa"]), spec["question"])


def make_backend(world, speaker="template", params=None, endpoint=None, cell=None):
    params = params or TemplateSpeakerParams()
    if speaker == "template":
        return template_speaker(world, params=params)
    if speaker == "avg":
        return avg_feature_speaker(world, params=params, cell=cell)
    if speaker == "remote":
        if not endpoint:
            raise ValueError("remote speaker needs an endpoint")
        return remote_speaker(endpoint)
    raise ValueError(f"unknown speaker {speaker!r}")


def run_caption_once(
    world: World,
    issue: Issue,
    target: str,
    model: str,
    config: RsaConfig,
    seed: int,
    speaker: str = "template",
    params: TemplateSpeakerParams | None = None,
    endpoint=None,
    backend=None,
) -> tuple:
    """Sample a context and decode one caption; the single code path used
    by the CLI commands, so runs are reproducible from their manifests."""
    if model not in MODEL_CHOICES:
        raise ValueError(f"unknown model {model!r}")
    context = sample_context(
        issue, target, config.budget, context_seed(seed, issue.label, target)
    )
    if model == "s0avg":
        if speaker == "remote":
            raise ValueError("model s0avg conditions on cell features; remote speakers cannot")
        backend = make_backend(world, "avg", params, cell=context.same_cell)
        return decode(backend, context, config, model="s0")
    if backend is None:
        backend = make_backend(world, speaker, params, endpoint, cell=context.same_cell)
    return decode(backend, context, config, model=model)


def eval_sweep(
    world: World,
    issues,
    models,
    config: RsaConfig,
    seed: int,
    classifier,
    targets=None,
    params=None,
    workers: int = 1,
):
    """Caption every (model, image, issue) combination and score it.

    Returns (records, reports) where records lists every generated
    caption and reports maps model -> {"coverage": ..., "alignment": ...}.
    """
    targets = list(targets) if targets else list(world.ids())
    jobs = [
        (model, issue, target)
        for model in models
        for issue in issues
        for target in targets
    ]
    # one memoized template backend across the sweep: contexts overlap and
    # backends are pure, so (image, prefix) rows are shared work
    shared = CachedBackend(template_speaker(world, params=params or TemplateSpeakerParams()))

    def run(job):
        model, issue, target = job
        caption = run_caption_once(
            world, issue, target, model, config, seed, params=params,
            backend=None if model == "s0avg" else shared,
        )
        return job, caption

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(run, jobs))
    else:
        results = dict(run(j) for j in jobs)

    eos = world.lexicon.eos
    records = []
    reports = {}
    for model in models:
        cov = CoverageTallies.empty()
        runs = []
        for target in targets:
            truth = world.image(target)
            per_issue = {
                issue.label: results[(model, issue, target)] for issue in issues
            }
            cov = cov + coverage_tallies(per_issue, truth, world.schema, classifier, eos=eos)
            for issue in issues:
                caption = results[(model, issue, target)]
                outcome = issue_alignment(
                    caption, issue, truth, world.schema, classifier, eos=eos
                )
                runs.append((issue.label, outcome))
                records.append(
                    {
                        "model": model,
                        "issue": issue.label,
                        "target": target,
                        "caption": list(caption),
                        "resolved": outcome.resolved,
                        "correct": outcome.correct,
                        "off_issue": outcome.off_issue,
                    }
                )
        reports[model] = {
            "coverage": coverage_report(cov),
            "alignment": aggregate_alignment(runs),
        }
    return records, reports


def report_table(reports, kind: str) -> str:
    header = f"{'model':<8}{'precision':>11}{'recall':>9}{'F1':>9}"
    lines = [header, "-" * len(header)]
    for model, pair in reports.items():
        r = pair[kind]
        lines.append(
            f"{model:<8}{r.precision:>11.3f}{r.recall:>9.3f}{r.f1:>9.3f}"
        )
    return "\n".join(lines)


def oracle_suite(world, config: RsaConfig, tokens=None, max_len: int = 3, targets=None):
    """Exact-vs-incremental invariant battery on an enumerable world.

    Checks, per model and per attribute issue:
      one-decision spaces: incremental caption scores equal the exact ones;
      the incremental caption measure never exceeds total mass 1;
      an exhaustive beam attains the exact argmax score;
      alpha = 0 collapses both models onto the literal speaker.
    Returns a list of (check name, passed, detail) triples.
    """
    lexicon = world.lexicon if tokens is None else world.lexicon.restrict(tokens)
    targets = list(targets) if targets else list(world.ids())
    results = []

    captions = enumerate_captions(lexicon.vocab, lexicon.eos, max_len)
    backend1 = CachedBackend(template_speaker(world, lexicon, TemplateSpeakerParams(max_len=1)))
    backend = CachedBackend(template_speaker(world, lexicon, TemplateSpeakerParams()))
    issues = [partition_by_attribute(world, a) for a in world.schema.names()]

    for issue in issues:
        for target in targets:
            context = sample_context(
                issue, target, config.budget, context_seed(0, issue.label, target)
            )
            for model in engine.MODELS:
                tag = f"{model}/{issue.label}/{target}"

                exact1 = exact_caption_speaker(backend1, context, config, model, max_len=1)
                worst = 0.0
                for cap in exact1.support:
                    inc = caption_level_incremental(backend1, context, config, model, cap)
                    worst = max(worst, abs(inc - exact1.logprob(cap)))
                results.append((f"one-decision agreement {tag}", worst < 1e-10, f"max err {worst:.2e}"))

                total = 0.0
                for cap in captions:
                    lp = caption_level_incremental(backend, context, config, model, cap)
                    if lp > engine.NEG_INF:
                        total += math.exp(lp)
                results.append(
                    (f"incremental mass <= 1 {tag}", total <= 1.0 + 1e-9, f"mass {total:.9f}")
                )

                exact = exact_caption_speaker(backend, context, config, model, max_len=max_len)
                best = float(np.max(exact.logp))
                beam_cfg = replace(
                    config, decode="beam", beam_width=len(captions), max_len=max_len
                )
                beamed = decode_beam(backend, context, beam_cfg, model=model)
                results.append(
                    (f"exhaustive beam attains exact argmax {tag}",
                     exact.logprob(tuple(beamed)) >= best - 1e-9,
                     f"beam {' '.join(beamed)} at {exact.logprob(tuple(beamed)):.9f} vs max {best:.9f}")
                )

                flat_cfg = replace(config, alpha=0.0)
                exact0 = exact_caption_speaker(backend, context, flat_cfg, model, max_len=max_len)
                worst = 0.0
                for cap in exact0.support:
                    inc = caption_level_incremental(backend, context, flat_cfg, model, cap)
                    s0 = caption_logprob(backend, target, cap)
                    if s0 > engine.NEG_INF:
                        worst = max(worst, abs(inc - s0))
                results.append(
                    (f"alpha=0 collapse {tag}", worst < 1e-10, f"max err {worst:.2e}")
                )
    return results


# --- click wiring -----------------------------------------------------------


def _fail(message: str, code: int = 2):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _config_from_options(manifest: dict, **overrides) -> RsaConfig:
    fields = dict(manifest.get("config", {}))
    for key, value in overrides.items():
        if value is not None:
            fields[key] = value
    try:
        return RsaConfig(**fields)
    except (TypeError, ValueError) as e:
        _fail(str(e))


def _load_manifest(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        _fail(f"cannot read manifest {path}: {e}")


def _world_from(manifest: dict, world_flag):
    path = world_flag or manifest.get("world") or bundled_world_path()
    try:
        return load_world(path), str(path)
    except IsicapError as e:
        _fail(str(e))


def _params_from(manifest: dict) -> TemplateSpeakerParams | None:
    doc = manifest.get("speaker_params")
    if doc is None:
        return None
    try:
        return TemplateSpeakerParams(**doc)
    except (TypeError, ValueError) as e:
        _fail(f"bad speaker_params: {e}")


def _issue_spec(manifest: dict, issue_attr, qa, question, issue_file) -> dict:
    spec = dict(manifest.get("issue", {}))
    if issue_attr:
        spec = {"attr": issue_attr}
    if qa or question:
        spec = {"qa": qa, "question": question}
    if issue_file:
        spec = {"file": issue_file}
    return spec


def _dump_json(payload, out) -> str:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    return text


config_options = [
    click.option("--alpha", type=float, default=None, help="rationality exponent"),
    click.option("--beta", type=float, default=None, help="entropy utility weight"),
    click.option("--budget", type=int, default=None, help="context cell size"),
    click.option("--max-len", "max_len", type=int, default=None, help="decode length cap"),
    click.option("--beam", "beam", type=int, default=None, help="beam width (enables beam decode)"),
]


def add_options(options):
    def wrap(f):
        for opt in reversed(options):
            f = opt(f)
        return f
    return wrap


@click.group()
def main():
    """Issue-sensitive captioning over symbolic worlds."""


@main.command("demo")
@click.option("--model", type=click.Choice(MODEL_CHOICES), default=None, help="run a single model")
@click.option("--target", default="o1", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@add_options(config_options)
def cmd_demo(model, target, seed, alpha, beta, budget, max_len, beam):
    """Caption the bundled shapes world under its two issues."""
    config = _config_from_options(
        {},
        alpha=alpha,
        beta=beta,
        budget=budget,
        max_len=max_len,
        decode="beam" if beam else None,
        beam_width=beam,
    )
    world, _ = _world_from({}, None)
    models = [model] if model else ["s0", "s1", "s1c", "s1ch"]
    issues = [partition_by_attribute(world, a) for a in ("color", "size")]
    truth = world.image(target)
    click.echo(
        f"target {target} ({', '.join(f'{a}={v}' for a, v in truth.values.items())})"
    )
    width = 28
    click.echo(f"{'model':<8}" + "".join(f"{i.label + ' issue':<{width}}" for i in issues))
    grid = {}
    try:
        for m in models:
            row = []
            for issue in issues:
                caption = run_caption_once(world, issue, target, m, config, seed)
                grid[(m, issue.label)] = caption
                row.append(" ".join(t for t in caption if t != world.lexicon.eos))
            click.echo(f"{m:<8}" + "".join(f"{c:<{width}}" for c in row))
    except IsicapError as e:
        _fail(str(e))
    if "s1ch" in models and grid[("s1ch", "color")] == grid[("s1ch", "size")]:
        click.echo("issue-sensitive captions do NOT distinguish the issues", err=True)
        sys.exit(1)


@main.command("caption")
@click.option("--manifest", type=click.Path(), default=None)
@click.option("--world", "world_flag", type=click.Path(), default=None)
@click.option("--issue-attr", default=None)
@click.option("--qa", type=click.Path(), default=None)
@click.option("--question", default=None)
@click.option("--issue-file", type=click.Path(), default=None)
@click.option("--target", default=None)
@click.option("--model", type=click.Choice(MODEL_CHOICES), default=None)
@click.option("--speaker", type=click.Choice(("template", "avg", "remote")), default=None)
@click.option("--endpoint", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@add_options(config_options)
def cmd_caption(
    manifest, world_flag, issue_attr, qa, question, issue_file, target, model,
    speaker, endpoint, seed, out, alpha, beta, budget, max_len, beam,
):
    """Generate caption(s) for one target under one issue."""
    doc = _load_manifest(manifest)
    config = _config_from_options(
        doc,
        alpha=alpha,
        beta=beta,
        budget=budget,
        max_len=max_len,
        decode="beam" if beam else None,
        beam_width=beam,
    )
    world, world_path = _world_from(doc, world_flag)
    target = target or doc.get("target")
    model = model or doc.get("model", "s1ch")
    speaker = speaker or doc.get("speaker", "template")
    endpoint = endpoint or doc.get("endpoint")
    seed = seed if seed is not None else int(doc.get("seed", 0))
    out = out or doc.get("out")
    try:
        issue = resolve_issue(world, _issue_spec(doc, issue_attr, qa, question, issue_file))
        if target is None:
            _fail("no target image given")
        caption = run_caption_once(
            world, issue, target, model, config, seed, speaker=speaker,
            params=_params_from(doc), endpoint=endpoint,
        )
    except (IsicapError, ValueError, KeyError) as e:
        _fail(str(e))
    record = {
        "world": world_path,
        "issue": issue.label,
        "target": target,
        "model": model,
        "speaker": speaker,
        "config": asdict(config),
        "seed": seed,
        "caption": list(caption),
    }
    click.echo(" ".join(t for t in caption if t != world.lexicon.eos))
    text = _dump_json(record, out)
    if not out:
        click.echo(text, nl=False)


@main.command("eval")
@click.option("--manifest", type=click.Path(), default=None)
@click.option("--world", "world_flag", type=click.Path(), default=None)
@click.option("--models", default=None, help="comma-separated model names")
@click.option("--issues", "issues_flag", default=None, help="comma-separated attribute names")
@click.option("--classifier", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@add_options(config_options)
def cmd_eval(
    manifest, world_flag, models, issues_flag, classifier, seed, workers, out_dir,
    alpha, beta, budget, max_len, beam,
):
    """Sweep (model, image, issue) combinations and write report files."""
    doc = _load_manifest(manifest)
    config = _config_from_options(
        doc,
        alpha=alpha,
        beta=beta,
        budget=budget,
        max_len=max_len,
        decode="beam" if beam else None,
        beam_width=beam,
    )
    world, world_path = _world_from(doc, world_flag)
    model_list = (models or ",".join(doc.get("models", ["s0", "s1", "s1c", "s1ch"]))).split(",")
    model_list = [m.strip() for m in model_list if m.strip()]
    for m in model_list:
        if m not in MODEL_CHOICES:
            _fail(f"unknown model {m!r}")
    issue_names = (
        [s.strip() for s in issues_flag.split(",") if s.strip()]
        if issues_flag is not None
        else doc.get("issues", list(world.schema.names()))
    )
    seed = seed if seed is not None else int(doc.get("seed", 0))
    classifier_path = classifier or doc.get("classifier") or bundled_classifier_path()
    try:
        clf = load_classifier_config(classifier_path)
        issue_list = [partition_by_attribute(world, a) for a in issue_names]
        records, reports = eval_sweep(
            world, issue_list, model_list, config, seed, clf,
            params=_params_from(doc), workers=workers,
        )
    except IsicapError as e:
        _fail(str(e))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "world": world_path,
        "seed": seed,
        "config": asdict(config),
        "models": {
            m: {k: r.to_dict() for k, r in pair.items()} for m, pair in reports.items()
        },
    }
    _dump_json(payload, out / "reports.json")
    _dump_json(records, out / "captions.json")
    for kind in ("coverage", "alignment"):
        table = report_table(reports, kind)
        (out / f"{kind}.txt").write_text(table + "\n", encoding="utf-8")
        click.echo(f"{kind}:")
        click.echo(table)


@main.command("oracle-check")
@click.option("--world", "world_flag", type=click.Path(), default=None)
@click.option("--tokens", default="red,blue,green,small,large", show_default=True,
              help="comma-separated content vocabulary to keep")
@click.option("--max-len", "max_len", type=int, default=3, show_default=True)
@click.option("--targets", default=None, help="comma-separated target ids (default: all)")
@click.option("--alpha", type=float, default=None)
@click.option("--beta", type=float, default=None)
@click.option("--budget", type=int, default=None)
def cmd_oracle_check(world_flag, tokens, max_len, targets, alpha, beta, budget):
    """Exact-enumeration oracle vs the incremental approximation."""
    config = _config_from_options({}, alpha=alpha, beta=beta, budget=budget)
    world, _ = _world_from({}, world_flag)
    token_list = [t.strip() for t in tokens.split(",") if t.strip()]
    target_list = [t.strip() for t in targets.split(",")] if targets else None
    try:
        results = oracle_suite(world, config, tokens=token_list, max_len=max_len, targets=target_list)
    except EnumerationTooLarge as e:
        _fail(str(e))
    except IsicapError as e:
        _fail(str(e))
    failures = 0
    for name, ok, detail in results:
        if not ok:
            failures += 1
            click.echo(f"FAIL {name}: {detail}")
    click.echo(f"{len(results) - failures}/{len(results)} oracle checks passed")
    if failures:
        sys.exit(1)


if __name__ == "__main__":
    main()
