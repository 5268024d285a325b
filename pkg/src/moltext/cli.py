"""Batch command-line interface for the whole pipeline.

Subcommands cover corpus preparation, prompting and querying the language
model, training, single-query generation, evaluation, and the ablation
harness.  Configuration is a flat key=value file with ``--key value``
overrides; every run echoes its resolved config to ``run.config`` in the
output directory so experiments stay diffable.

Determinism contract: with the same config, seed, and fixtures every
command writes byte-identical predictions, checkpoints, and reports.
Timestamps appear only on stdout log lines prefixed with ``#``.

Exit codes: 0 success, 2 config error, 3 data error, 4 provider error,
5 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from moltext import smiles as sm
from moltext.checkpoint import CheckpointError
from moltext.dataset import (
    DatasetError,
    MoleculeRecord,
    load_corpus,
    load_splits,
    make_synthetic_corpus,
    split_corpus,
    write_splits,
)
from moltext.decoder import (
    DivergenceError,
    ModelParams,
    TrainConfig,
    TrainExample,
    encode_example,
    examples_from_corpus,
    generate,
    train,
)
from moltext.embeddings import (
    EmbeddingError,
    FileEmbedder,
    StubEmbedder,
    TokenEmbedder,
)
from moltext.fusion import ABLATION_MODES, AblationFlags
from moltext.llmclient import (
    HttpTextProvider,
    LlmPrediction,
    MappingProvider,
    ParseEmptyError,
    ProviderConfig,
    ProviderError,
    ReplayProvider,
    TextProvider,
    parse_response,
    query,
)
from moltext.metrics import (
    MetricsReport,
    TextMetricsReport,
    evaluate_mol2text,
    evaluate_text2mol,
    per_pair_records,
    render_mol2text_table,
    render_text2mol_table,
    report_to_json_line,
)
from moltext.prompting import (
    HashedTfidf,
    PromptError,
    build_prompt,
    sample_random,
    sample_scaffold_mol,
    sample_scaffold_text,
)

__all__ = ["main"]

# tests swap this for a refusing provider; stub/replay modes never call it
_LIVE_PROVIDER_FACTORY: Callable[..., TextProvider] = HttpTextProvider


class CliConfigError(ValueError):
    """Bad key, bad value, or an unsatisfiable mode requirement."""


class CliDataError(ValueError):
    """Missing or unusable input artifacts."""


# ------------------------------------------------------------ configuration


def _cast_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"expected true/false, got {value!r}")


def _cast_fractions(value: str) -> tuple[float, ...]:
    parts = tuple(float(p) for p in value.split(","))
    if len(parts) != 3:
        raise ValueError(f"expected 3 comma-separated fractions, got {len(parts)}")
    return parts


@dataclass(frozen=True)
class _Key:
    name: str
    default: str | None  # None means the key is required
    cast: Callable[[str], Any]
    choices: tuple[str, ...] | None = None
    help: str = ""


def _keys(*keys: _Key) -> dict[str, _Key]:
    return {k.name: k for k in keys}


_OUT = _Key("out", None, str, help="output directory")
_SEED = _Key("seed", "0", int)
_DATA_DIR = _Key("data_dir", None, str, help="directory holding the split files")
_DIRECTION = _Key("direction", "text2mol", str, ("text2mol", "mol2text"))
_R = _Key("r", "4", int, help="ranked candidates kept per query")
_MAX_LEN = _Key("max_len", "160", int)
_PREDICTIONS = _Key("predictions", None, str,
                    help="directory holding predictions.<split>.jsonl files")
_ABLATION = _Key("ablation", "full", str, tuple(ABLATION_MODES))
_EMB_PROVIDER = _Key("embedding_provider", "stub", str, ("stub", "file"))
_EMB_DIR = _Key("embedding_dir", "", str)
_EMB_SEED = _Key("embedding_seed", "0", int)

_COMMANDS: dict[str, dict[str, _Key]] = {
    "prepare": _keys(
        _OUT, _SEED,
        _Key("corpus", "", str, help="TSV corpus path (id, SMILES, description)"),
        _Key("synthetic_n", "0", int, help="generate this many synthetic pairs"),
        _Key("fractions", "0.8,0.1,0.1", _cast_fractions),
    ),
    "run-llm": _keys(
        _OUT, _SEED, _DATA_DIR, _DIRECTION, _R,
        _Key("split", "train", str, ("train", "validation", "test")),
        _Key("sampling", "random", str, ("random", "scaffold")),
        _Key("k", "16", int, help="demonstrations per prompt"),
        _Key("budget", "12000", int, help="prompt character budget"),
        _Key("llm_provider", "stub", str, ("stub", "replay", "live")),
        _Key("replay_log", "", str),
        _Key("llm_endpoint", "", str),
        _Key("llm_model", "text-model", str),
        _Key("credential_env", "", str,
             help="name of the env var holding the API credential"),
        _Key("timeout", "30.0", float),
        _Key("max_retries", "3", int),
        _Key("temperature", "0.0", float),
    ),
    "train": _keys(
        _OUT, _SEED, _DATA_DIR, _DIRECTION, _R, _MAX_LEN, _PREDICTIONS, _ABLATION,
        _EMB_PROVIDER, _EMB_DIR, _EMB_SEED,
        _Key("d", "128", int),
        _Key("heads", "4", int),
        _Key("head_dim", "32", int),
        _Key("layers", "2", int),
        _Key("lr", "0.001", float),
        _Key("batch_size", "32", int),
        _Key("epochs", "100", int),
        _Key("scheduler_patience", "10", int),
        _Key("early_stop_patience", "25", int),
        _Key("max_steps", "0", int, help="0 means no step cap"),
    ),
    "evaluate": _keys(
        _OUT, _DATA_DIR, _DIRECTION, _R, _MAX_LEN, _PREDICTIONS, _ABLATION,
        _EMB_PROVIDER, _EMB_DIR, _EMB_SEED,
        _Key("checkpoint", None, str),
        _Key("split", "test", str, ("train", "validation", "test")),
        _Key("format", "table", str, ("table", "jsonl")),
        _Key("dump_attention", "false", _cast_bool),
        _Key("ablate", "false", _cast_bool,
             help="rerun under every ablation flag and emit the comparison"),
    ),
    "generate": _keys(
        _OUT, _DIRECTION, _R, _MAX_LEN, _ABLATION,
        _EMB_PROVIDER, _EMB_DIR, _EMB_SEED,
        _Key("checkpoint", None, str),
        _Key("query", None, str, help="source text to translate"),
        _Key("candidates", "", str,
             help="optional semicolon-separated ranked candidates"),
        _Key("explanation", "", str, help="optional explanation text"),
    ),
    "ablate": _keys(
        _OUT, _DATA_DIR, _DIRECTION, _R, _MAX_LEN, _PREDICTIONS,
        _EMB_PROVIDER, _EMB_DIR, _EMB_SEED,
        _Key("checkpoint", None, str),
        _Key("split", "test", str, ("train", "validation", "test")),
    ),
}

_ABLATION_LABELS = {
    "full": "full",
    "drop_exp": "w/o y_exp",
    "drop_org": "w/o y_org",
    "drop_pred": "w/o y_pred",
    "linear_fuse": "w/o HMHA",
}


def _load_config_file(path: str) -> dict[str, str]:
    file = Path(path)
    if not file.exists():
        raise CliConfigError(f"config file not found: {file}")
    values: dict[str, str] = {}
    for line_no, raw in enumerate(file.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliConfigError(f"malformed config line {line_no}: {raw!r}")
        name, _, value = line.partition("=")
        values[name.strip()] = value.strip()
    return values


def _resolve(command: str, ns: argparse.Namespace) -> dict[str, Any]:
    keys = _COMMANDS[command]
    raw: dict[str, str | None] = {name: key.default for name, key in keys.items()}
    if ns.config:
        from_file = _load_config_file(ns.config)
        unknown = sorted(set(from_file) - set(keys))
        if unknown:
            raise CliConfigError(
                f"unknown config key {unknown[0]!r} for command {command!r}"
            )
        raw.update(from_file)
    for name in keys:
        override = getattr(ns, name)
        if override is not None:
            raw[name] = override

    resolved: dict[str, Any] = {}
    for name, key in keys.items():
        value = raw[name]
        if value is None:
            raise CliConfigError(f"missing required key {name!r}")
        try:
            resolved[name] = key.cast(value)
        except ValueError as err:
            raise CliConfigError(f"bad value for {name!r}: {err}") from err
        if key.choices is not None and resolved[name] not in key.choices:
            raise CliConfigError(
                f"bad value for {name!r}: expected one of "
                f"{list(key.choices)}, got {resolved[name]!r}"
            )
    return resolved


def _fmt_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_run_config(out_dir: Path, command: str, cfg: Mapping[str, Any]) -> None:
    lines = [f"command={command}"]
    lines += [f"{name}={_fmt_value(cfg[name])}" for name in sorted(cfg)]
    (out_dir / "run.config").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _log(message: str) -> None:
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    print(f"# [{stamp}] {message}")


# ----------------------------------------------------------------- builders


def _build_embedder(cfg: Mapping[str, Any], d: int) -> TokenEmbedder:
    if cfg["embedding_provider"] == "stub":
        return StubEmbedder(dim=d, seed=cfg["embedding_seed"])
    if not cfg["embedding_dir"]:
        raise CliConfigError("embedding_provider=file requires embedding_dir")
    return FileEmbedder(cfg["embedding_dir"], dim=d)


def _stub_smiles_candidates(target: str, r: int) -> tuple[str, ...]:
    """True target first, then distinct reorderings, then small fillers."""
    out = [target]
    try:
        graph = sm.parse_smiles(target)
    except sm.SmilesError:
        graph = None
    seed = 1
    while graph is not None and len(out) < r and seed <= 4 * r:
        alt = sm.randomized_smiles(graph, seed=seed)
        seed += 1
        if alt not in out:
            out.append(alt)
    for filler in ("C", "CC", "CCC", "CCO", "CCN", "C=C", "C#N", "CCCC"):
        if len(out) >= r:
            break
        if filler not in out:
            out.append(filler)
    return tuple(out[:r])


_STUB_TEXT_FILLERS = (
    "It is a small organic molecule.",
    "It is a chemical compound.",
    "It is an organic structure with several atoms.",
    "It is a carbon-based molecule.",
    "It is a compound with covalent bonds.",
    "It is a neutral organic species.",
    "It is a simple molecular structure.",
)


def _stub_text_candidates(target: str, r: int) -> tuple[str, ...]:
    out = [target]
    for filler in _STUB_TEXT_FILLERS:
        if len(out) >= r:
            break
        if filler not in out:
            out.append(filler)
    return tuple(out[:r])


def _stub_fallback(direction: str, r: int) -> str:
    if direction == "text2mol":
        fillers = ("C", "CC", "CCC", "CCO", "CCN", "C=C", "C#N", "CCCC")[:r]
    else:
        fillers = _STUB_TEXT_FILLERS[:r]
    lines = [f"{i}. {c}" for i, c in enumerate(fillers, start=1)]
    lines.append("Explanation: query not in reference table.")
    return "\n".join(lines)


def _build_llm_provider(
    cfg: Mapping[str, Any], all_records: Sequence[MoleculeRecord]
) -> TextProvider:
    mode = cfg["llm_provider"]
    if mode == "stub":
        # the stub plays a perfect upstream model: it knows every pair,
        # so any split gets its true target as the top-ranked candidate
        direction = cfg["direction"]
        if direction == "text2mol":
            mapping = {
                rec.description: _stub_smiles_candidates(rec.smiles, cfg["r"])
                for rec in all_records
            }
            marker = "Description:"
        else:
            mapping = {
                rec.smiles: _stub_text_candidates(rec.description, cfg["r"])
                for rec in all_records
            }
            marker = "SMILES:"
        return MappingProvider(mapping, query_marker=marker,
                               fallback=_stub_fallback(direction, cfg["r"]))
    if mode == "replay":
        if not cfg["replay_log"]:
            raise CliConfigError("replay mode requires replay_log")
        log = Path(cfg["replay_log"])
        if not log.exists():
            raise CliConfigError(f"replay log not found: {log}")
        return ReplayProvider(log)
    # live: fail on missing credentials before any request leaves the box
    if not cfg["credential_env"]:
        raise CliConfigError("live mode requires credential_env")
    if not os.environ.get(cfg["credential_env"]):
        raise CliConfigError(
            f"credential env var {cfg['credential_env']} is not set"
        )
    if not cfg["llm_endpoint"]:
        raise CliConfigError("live mode requires llm_endpoint")
    return _LIVE_PROVIDER_FACTORY(_provider_config(cfg), os.environ.get)


def _provider_config(cfg: Mapping[str, Any]) -> ProviderConfig:
    return ProviderConfig(
        endpoint=cfg["llm_endpoint"],
        model=cfg["llm_model"],
        timeout=cfg["timeout"],
        max_retries=cfg["max_retries"],
        temperature=cfg["temperature"],
        credential_env=cfg["credential_env"] or None,
    )


def _load_predictions(path: Path) -> dict[str, LlmPrediction]:
    if not path.exists():
        raise CliDataError(f"missing predictions file: {path}")
    out: dict[str, LlmPrediction] = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            pair_id = rec["id"]
            ranked = tuple(str(c) for c in rec["ranked_smiles"])
            explanation = str(rec.get("explanation", ""))
        except (json.JSONDecodeError, KeyError, TypeError) as err:
            raise CliDataError(
                f"bad predictions record at {path} line {line_no}: {err}"
            ) from err
        out[pair_id] = LlmPrediction(
            ranked_smiles=ranked, explanation=explanation, raw="",
            provider_id="file",
        )
    return out


def _out_dir(cfg: Mapping[str, Any]) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _quarantine_count(corpus_path: str) -> int:
    sidecar = Path(corpus_path).with_name(Path(corpus_path).name + ".quarantine.txt")
    if not sidecar.exists():
        return 0
    return sum(1 for line in sidecar.read_text(encoding="utf-8").splitlines() if line)


# ----------------------------------------------------------------- commands


def cmd_prepare(cfg: Mapping[str, Any]) -> int:
    out = _out_dir(cfg)
    has_corpus = bool(cfg["corpus"])
    wants_synthetic = cfg["synthetic_n"] > 0
    if has_corpus == wants_synthetic:
        raise CliConfigError("set exactly one of corpus or synthetic_n")
    quarantined = 0
    if has_corpus:
        corpus = load_corpus(cfg["corpus"])
        quarantined = _quarantine_count(cfg["corpus"])
        if not corpus.records:
            raise CliDataError(f"no usable records in {cfg['corpus']}")
    else:
        corpus = make_synthetic_corpus(cfg["synthetic_n"], seed=cfg["seed"])
    splits = split_corpus(corpus, seed=cfg["seed"], fractions=cfg["fractions"])
    write_splits(out, splits)
    _write_run_config(out, "prepare", cfg)
    print(
        f"train={len(splits['train'])} validation={len(splits['validation'])} "
        f"test={len(splits['test'])} quarantined={quarantined}"
    )
    return 0


def _derive_seed(seed: int, pair_id: str) -> int:
    return sm.fnv1a64(f"{seed}:{pair_id}".encode("utf-8"))


def cmd_run_llm(cfg: Mapping[str, Any]) -> int:
    out = _out_dir(cfg)
    splits = load_splits(cfg["data_dir"])
    split = splits[cfg["split"]]
    if not split.records:
        raise CliDataError(f"split {cfg['split']!r} is empty")
    train_records = splits["train"].records
    all_records = [rec for corpus in splits.values() for rec in corpus.records]
    direction = cfg["direction"]
    provider = _build_llm_provider(cfg, all_records)
    provider_cfg = _provider_config(cfg)
    log_path = out / "llm_log.jsonl"
    if log_path.exists():
        log_path.unlink()  # fresh capture per run

    vectorizer = None
    if cfg["sampling"] == "scaffold" and direction == "text2mol":
        vectorizer = HashedTfidf()
        vectorizer.fit([r.description for r in train_records])

    jitter = random.Random(cfg["seed"])
    _log(f"querying {len(split.records)} pairs via {provider.provider_id}")
    unparseable = 0
    lines: list[str] = []
    for rec in split.records:
        query_text = rec.description if direction == "text2mol" else rec.smiles
        pool = [r for r in train_records if r.pair_id != rec.pair_id]
        if cfg["k"] > 0:
            if cfg["sampling"] == "random":
                demos = sample_random(pool, cfg["k"],
                                      seed=_derive_seed(cfg["seed"], rec.pair_id))
            elif direction == "text2mol":
                ranked = sample_scaffold_text(pool, query_text, cfg["k"], vectorizer)
                demos = list(reversed(ranked))  # most similar ends up last
            else:
                ranked = sample_scaffold_mol(pool, query_text, cfg["k"])
                demos = list(reversed(ranked))
        else:
            demos = []
        prompt = build_prompt(demos, query_text, direction, r=cfg["r"],
                              budget=cfg["budget"], query_id=rec.pair_id)
        raw = query(prompt, provider, provider_cfg, log_path=log_path,
                    jitter_rng=jitter)
        try:
            pred = parse_response(raw, r_max=cfg["r"],
                                  provider_id=provider.provider_id)
            ranked_out = list(pred.ranked_smiles)
            explanation = pred.explanation
        except ParseEmptyError:
            unparseable += 1
            ranked_out, explanation = [], ""
        lines.append(
            json.dumps(
                {"explanation": explanation, "id": rec.pair_id,
                 "ranked_smiles": ranked_out},
                sort_keys=True,
            )
        )
    predictions_path = out / f"predictions.{cfg['split']}.jsonl"
    predictions_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_run_config(out, "run-llm", cfg)
    print(f"queries={len(split.records)} unparseable={unparseable} "
          f"predictions={predictions_path}")
    return 0


def _write_history(path: Path, history: Sequence[Mapping[str, Any]]) -> None:
    lines = [json.dumps(rec, sort_keys=True) for rec in history]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def cmd_train(cfg: Mapping[str, Any]) -> int:
    out = _out_dir(cfg)
    splits = load_splits(cfg["data_dir"])
    direction = cfg["direction"]
    predictions_dir = Path(cfg["predictions"])
    train_preds = _load_predictions(predictions_dir / "predictions.train.jsonl")
    val_preds = _load_predictions(predictions_dir / "predictions.validation.jsonl")
    train_examples = examples_from_corpus(splits["train"].records, train_preds,
                                          direction)
    val_examples = examples_from_corpus(splits["validation"].records, val_preds,
                                        direction)
    embedder = _build_embedder(cfg, cfg["d"])
    try:
        train_cfg = TrainConfig(
            batch_size=cfg["batch_size"], epochs=cfg["epochs"], d=cfg["d"],
            heads=cfg["heads"], head_dim=cfg["head_dim"], lr=cfg["lr"],
            scheduler_patience=cfg["scheduler_patience"],
            early_stop_patience=cfg["early_stop_patience"], seed=cfg["seed"],
            r=cfg["r"], max_steps=cfg["max_steps"] or None,
            max_len=cfg["max_len"], layers=cfg["layers"], direction=direction,
        )
    except ValueError as err:
        raise CliConfigError(str(err)) from err
    _log(f"training on {len(train_examples)} pairs, "
         f"validating on {len(val_examples)}")
    checkpoint_path = out / "checkpoint.bin"
    try:
        result = train(train_examples, val_examples, embedder, train_cfg,
                       ablation=ABLATION_MODES[cfg["ablation"]])
    except DivergenceError as err:
        err.model.save(checkpoint_path)
        _write_history(out / "metrics.jsonl", err.history)
        _write_run_config(out, "train", cfg)
        print(f"error: {err}", file=sys.stderr)
        return 5
    result.model.save(checkpoint_path)
    _write_history(out / "metrics.jsonl", result.history)
    _write_run_config(out, "train", cfg)
    best_val = result.history[result.best_epoch]["val_loss"]
    print(f"epochs={len(result.history)} steps={result.steps} "
          f"best_epoch={result.best_epoch} best_val_loss={best_val:.6f} "
          f"checkpoint={checkpoint_path}")
    return 0


def _load_model(cfg: Mapping[str, Any]) -> ModelParams:
    path = Path(cfg["checkpoint"])
    if not path.exists():
        raise CliDataError(f"checkpoint not found: {path}")
    model = ModelParams.load(path)
    trained_r = model.fusion.dims.r
    if trained_r != cfg["r"]:
        raise CliDataError(
            f"checkpoint was trained with r={trained_r}, configured r={cfg['r']}"
        )
    return model


def _generate_split(
    model: ModelParams,
    examples: Sequence[TrainExample],
    embedder: TokenEmbedder,
    r: int,
    flags: AblationFlags,
    max_len: int,
) -> tuple[list[str], list[dict]]:
    candidates: list[str] = []
    traces: list[dict] = []
    for example in examples:
        fused = encode_example(model, example, embedder, r, ablation=flags)
        result = generate(model.decoder, model.vocab, fused.y_cross,
                          max_len=max_len)
        candidates.append(result.text)
        traces.append(
            {
                "layer1": [w.tolist() for w in fused.attention_trace["layer1"]],
                "layer2": [w.tolist() for w in fused.attention_trace["layer2"]],
            }
        )
    return candidates, traces


def _score(direction: str, references: Sequence[str],
           candidates: Sequence[str]) -> MetricsReport | TextMetricsReport:
    if direction == "text2mol":
        return evaluate_text2mol(references, candidates)
    return evaluate_mol2text(references, candidates)


def _render(report: MetricsReport | TextMetricsReport) -> str:
    if isinstance(report, MetricsReport):
        return render_text2mol_table(report)
    return render_mol2text_table(report)


def _eval_inputs(cfg: Mapping[str, Any], model: ModelParams):
    splits = load_splits(cfg["data_dir"])
    split = splits[cfg["split"]]
    if not split.records:
        raise CliDataError(f"split {cfg['split']!r} is empty")
    preds = _load_predictions(
        Path(cfg["predictions"]) / f"predictions.{cfg['split']}.jsonl"
    )
    examples = examples_from_corpus(split.records, preds, cfg["direction"])
    embedder = _build_embedder(cfg, model.decoder.dims.d)
    return examples, embedder


def cmd_evaluate(cfg: Mapping[str, Any]) -> int:
    if cfg["ablate"]:
        return _run_ablation(cfg)
    out = _out_dir(cfg)
    model = _load_model(cfg)
    examples, embedder = _eval_inputs(cfg, model)
    _log(f"generating {len(examples)} candidates from {cfg['checkpoint']}")
    candidates, traces = _generate_split(
        model, examples, embedder, cfg["r"], ABLATION_MODES[cfg["ablation"]],
        cfg["max_len"],
    )
    references = [ex.target_text for ex in examples]
    report = _score(cfg["direction"], references, candidates)
    table = _render(report)
    json_line = report_to_json_line(report)
    (out / "report.txt").write_text(table + "\n", encoding="utf-8")
    (out / "report.jsonl").write_text(json_line + "\n", encoding="utf-8")
    generation_lines = [
        json.dumps(rec, sort_keys=True)
        for rec in per_pair_records(references, candidates,
                                    ids=[ex.pair_id for ex in examples])
    ]
    (out / f"generations.{cfg['split']}.jsonl").write_text(
        "\n".join(generation_lines) + "\n", encoding="utf-8"
    )
    if cfg["dump_attention"]:
        attention_lines = [
            json.dumps({"id": ex.pair_id, **trace}, sort_keys=True)
            for ex, trace in zip(examples, traces)
        ]
        (out / f"attention.{cfg['split']}.jsonl").write_text(
            "\n".join(attention_lines) + "\n", encoding="utf-8"
        )
    _write_run_config(out, "evaluate", cfg)
    print(table if cfg["format"] == "table" else json_line)
    return 0


def _ablation_cells(report: MetricsReport | TextMetricsReport) -> list[tuple[str, str]]:
    if isinstance(report, MetricsReport):
        return [
            ("BLEU", f"{report.bleu:.4f}"),
            ("Exact", f"{report.exact:.4f}"),
            ("Canonical", f"{report.canonical_match:.4f}"),
            ("Levenshtein", f"{report.levenshtein:.4f}"),
            ("Validity", f"{report.validity:.4f}"),
            ("Path FTS", f"{report.path_fts:.4f}"),
            ("Morgan FTS", f"{report.morgan_fts:.4f}"),
        ]
    return [
        ("BLEU-2", f"{report.bleu2:.4f}"),
        ("BLEU-4", f"{report.bleu4:.4f}"),
        ("ROUGE-1", f"{report.rouge1:.4f}"),
        ("ROUGE-2", f"{report.rouge2:.4f}"),
        ("ROUGE-L", f"{report.rougeL:.4f}"),
        ("METEOR", f"{report.meteor:.4f}"),
    ]


def _render_ablation_table(rows: Sequence[tuple[str, list[tuple[str, str]]]]) -> str:
    headers = ["variant"] + [name for name, _ in rows[0][1]]
    grid = [[label] + [value for _, value in cells] for label, cells in rows]
    widths = [
        max(len(headers[i]), *(len(row[i]) for row in grid))
        for i in range(len(headers))
    ]
    def fmt(cells: Sequence[str]) -> str:
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines += [fmt(row) for row in grid]
    return "\n".join(lines)


def _run_ablation(cfg: Mapping[str, Any]) -> int:
    out = _out_dir(cfg)
    model = _load_model(cfg)
    examples, embedder = _eval_inputs(cfg, model)
    references = [ex.target_text for ex in examples]
    rows: list[tuple[str, list[tuple[str, str]]]] = []
    json_lines: list[str] = []
    for mode, flags in ABLATION_MODES.items():
        _log(f"evaluating ablation variant {mode!r}")
        candidates, _ = _generate_split(model, examples, embedder, cfg["r"],
                                        flags, cfg["max_len"])
        report = _score(cfg["direction"], references, candidates)
        label = _ABLATION_LABELS[mode]
        rows.append((label, _ablation_cells(report)))
        json_lines.append(
            json.dumps({"mode": label, **report.to_record()}, sort_keys=True)
        )
    table = _render_ablation_table(rows)
    (out / "ablation.txt").write_text(table + "\n", encoding="utf-8")
    (out / "ablation.jsonl").write_text("\n".join(json_lines) + "\n",
                                        encoding="utf-8")
    _write_run_config(out, "ablate", cfg)
    print(table)
    return 0


def cmd_ablate(cfg: Mapping[str, Any]) -> int:
    return _run_ablation(cfg)


def cmd_generate(cfg: Mapping[str, Any]) -> int:
    out = _out_dir(cfg)
    model = _load_model(cfg)
    embedder = _build_embedder(cfg, model.decoder.dims.d)
    candidates = tuple(
        c.strip() for c in cfg["candidates"].split(";") if c.strip()
    )
    prediction = None
    if candidates or cfg["explanation"]:
        prediction = LlmPrediction(
            ranked_smiles=candidates, explanation=cfg["explanation"], raw="",
            provider_id="inline",
        )
    example = TrainExample(pair_id="QUERY", source_text=cfg["query"],
                           target_text="", prediction=prediction)
    fused = encode_example(model, example, embedder, cfg["r"],
                           ablation=ABLATION_MODES[cfg["ablation"]])
    result = generate(model.decoder, model.vocab, fused.y_cross,
                      max_len=cfg["max_len"])
    if result.truncated:
        _log("generation hit the length cap before emitting an end token")
    (out / "generation.txt").write_text(result.text + "\n", encoding="utf-8")
    _write_run_config(out, "generate", cfg)
    print(result.text)
    return 0


# --------------------------------------------------------------- dispatch


_HANDLERS: dict[str, Callable[[Mapping[str, Any]], int]] = {
    "prepare": cmd_prepare,
    "run-llm": cmd_run_llm,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "generate": cmd_generate,
    "ablate": cmd_ablate,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moltext",
        description="molecule/text translation pipeline (batch, non-interactive)",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, keys in _COMMANDS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None,
                       help="flat key=value config file")
        for key in keys.values():
            p.add_argument(f"--{key.name.replace('_', '-')}", dest=key.name,
                           default=None, help=key.help or None)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        ns = _build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse uses exit code 2 for usage errors, 0 for --help
        return int(exc.code or 0)
    try:
        cfg = _resolve(ns.command, ns)
        return _HANDLERS[ns.command](cfg)
    except CliConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except PromptError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (CliDataError, DatasetError, CheckpointError, EmbeddingError,
            sm.SmilesError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except ProviderError as err:
        print(f"error: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
