"""Command-line entry point wiring the full pipeline:

    synth -> represent -> graph -> split -> train -> evaluate
                                         -> benchmark / ablate / interpret
                                         -> export-curves

Every subcommand writes its artifacts (delimited files plus rendered PNG
figures) into a run directory named from a hash of the command, resolved
flags, and input checksums, and records a manifest with artifact checksums.
"""
from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import ehr, figures, interpret, metrics, synth
from .gnn import build_model, load_model, save_model
from .graph import (
    SimilarityGraph,
    SplitSpec,
    build_knn_graph,
    degree_stats,
    load_graph,
    save_graph,
    select_k_by_distortion,
    split_nodes,
)
from .manifest import (
    RunManifest,
    config_hash,
    parse_config_file,
    prepare_run_dir,
    resolve_out_root,
    sha256_file,
)
from .train import LossConfig, TrainConfig, save_history, summarize_seeds, train_model

KINDS = ("diagnosis", "procedure", "prescription")
# Flags that are booleans in config files (presence-style on the CLI).
_BOOL_FLAGS = {"force", "select_k", "no_stratify", "no_batchnorm", "verbose"}


# ---------------------------------------------------------------------------
# plumbing


def _kind(value: str | None) -> ehr.CodeKind | None:
    return None if value is None else ehr.CodeKind(value)


def _parse_fractions(text: str) -> tuple[float, float, float]:
    parts = [float(t) for t in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated fractions, got {text!r}")
    return (parts[0], parts[1], parts[2])


def _parse_k_range(text: str) -> range:
    lo, hi = text.split(":")
    lo, hi = int(lo), int(hi)
    if lo < 1 or hi < lo:
        raise ValueError(f"bad k range {text!r}; expected LO:HI with 1 <= LO <= HI")
    return range(lo, hi + 1)


def _config_snapshot(args: argparse.Namespace) -> dict:
    """Flags that define the run identity (paths in, knobs); no output root."""
    skip = {"func", "out", "force", "config"}
    snap = {}
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        if isinstance(value, (str, int, float, bool)) or value is None:
            snap[key] = value
        else:
            snap[key] = str(value)
    return snap


def _start_run(args: argparse.Namespace, inputs: dict[str, str | Path]):
    config = _config_snapshot(args)
    checksums = {name: sha256_file(path) for name, path in inputs.items()}
    run_hash = config_hash(args.command, config, checksums)
    run_dir = prepare_run_dir(resolve_out_root(args.out), args.command, run_hash, args.force)
    man = RunManifest(command=args.command, config=config)
    for name, path in inputs.items():
        man.inputs[name] = {"path": str(path), "sha256": checksums[name]}
    return run_dir, man


def _finish_run(run_dir: Path, man: RunManifest, artifacts: dict[str, Path]) -> None:
    for name, path in sorted(artifacts.items()):
        man.add_artifact(name, path)
    man.save(run_dir)
    print(f"run directory: {run_dir}")


def _require_masks(graph: SimilarityGraph) -> None:
    if graph.masks is None:
        raise ValueError("graph has no train/val/test masks; run `split` first")


def _loss_config(args: argparse.Namespace) -> LossConfig:
    return LossConfig(
        kind=args.loss, pos_weight=args.pos_weight, alpha=args.alpha, gamma=args.gamma
    )


def _train_config(args: argparse.Namespace, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        weight_decay=args.weight_decay,
        patience=args.patience,
        seed=seed,
        threshold=args.threshold,
    )


def _train_one_arch(
    graph: SimilarityGraph, arch: str, args: argparse.Namespace
) -> list[dict]:
    """Train `args.seeds` models with consecutive seeds; return per-seed data."""
    loss_cfg = _loss_config(args)
    results = []
    for offset in range(args.seeds):
        seed = args.seed + offset
        model = build_model(
            arch,
            in_dim=graph.dim,
            hidden_dim=args.hidden,
            n_layers=args.layers,
            heads=args.heads,
            use_batchnorm=not args.no_batchnorm,
            seed=seed,
            threshold=args.threshold,
        )
        model, history = train_model(
            model, graph, loss_cfg, _train_config(args, seed), verbose=args.verbose
        )
        probs, dump = model.predict(graph)
        report = metrics.compute_report(
            probs, graph.labels, graph.mask("test"), args.threshold
        )
        results.append(
            {
                "seed": seed,
                "model": model,
                "history": history,
                "probs": probs,
                "dump": dump,
                "report": report,
                "best_val_f1": max(row["val_f1"] for row in history),
            }
        )
        print(
            f"{arch} seed {seed}: test f1 {report.f1:.4f} "
            f"auroc {report.auroc:.4f} auprc {report.auprc:.4f} "
            f"({len(history)} epochs)"
        )
    return results


def _aggregate(results: list[dict]) -> dict:
    out = {}
    for key in ("f1", "auroc", "auprc", "accuracy", "balanced_accuracy", "precision", "recall"):
        mean, std = summarize_seeds([getattr(r["report"], key) for r in results])
        out[key] = mean
        out[f"{key}_std"] = std
    out["seeds"] = [r["seed"] for r in results]
    return out


def _evaluate_probs(graph, probs, threshold, mask_name="test") -> metrics.MetricReport:
    return metrics.compute_report(probs, graph.labels, graph.mask(mask_name), threshold)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> None:
    cfg = synth.SynthConfig(
        seed=args.seed,
        n_patients=args.patients,
        positive_rate=args.positive_rate,
        n_diag=args.n_diag,
        n_proc=args.n_proc,
        n_rx=args.n_rx,
        embed_dim=args.embed_dim,
        visits_per_patient=(args.visits_min, args.visits_max),
        codes_per_visit=(args.codes_min, args.codes_max),
        signal_strength=args.signal,
    )
    cfg.validate()
    run_dir, man = _start_run(args, {})
    man.seeds = [args.seed]
    paths = synth.generate(cfg, run_dir)
    truth = synth.load_truth(paths["truth"])
    n_pos = sum(truth.values())
    print(f"generated {len(truth)} patients ({n_pos} positive) with seed {args.seed}")
    _finish_run(run_dir, man, paths)


def cmd_represent(args) -> None:
    run_dir, man = _start_run(
        args, {"cohort": args.cohort, "embeddings": args.embeddings}
    )
    raw = ehr.load_cohort(args.cohort)
    records, excluded = ehr.build_cohort(raw)
    store = ehr.load_embeddings(args.embeddings)
    vectors, coverage = ehr.represent_cohort(
        records, store, drop=_kind(args.drop), only=_kind(args.only)
    )
    if not vectors:
        raise ValueError("no representable patients after filtering")
    vec_path = run_dir / "vectors.tsv"
    ehr.save_vectors(vec_path, vectors)
    cov_path = run_dir / "coverage.json"
    payload = coverage.as_dict()
    payload["cohort_excluded"] = excluded
    with open(cov_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    n_pos = sum(1 for v in vectors if v.label is ehr.Label.POSITIVE)
    print(
        f"represented {len(vectors)} patients ({n_pos} positive, "
        f"{excluded} excluded, {coverage.patients_dropped} unrepresentable)"
    )
    _finish_run(run_dir, man, {"vectors": vec_path, "coverage": cov_path})


def cmd_graph(args) -> None:
    if not args.select_k and args.k is None:
        raise ValueError("pass --k N or --select-k")
    run_dir, man = _start_run(args, {"vectors": args.vectors})
    man.seeds = [args.seed]
    vectors = ehr.load_vectors(args.vectors)
    artifacts: dict[str, Path] = {}
    if args.select_k:
        features = np.stack([v.features for v in vectors])
        k, curve = select_k_by_distortion(
            features, _parse_k_range(args.k_range), seed=args.seed
        )
        dist_path = run_dir / "distortion.csv"
        with open(dist_path, "w", encoding="utf-8") as fh:
            fh.write("k,distortion\n")
            for kk, dd in curve:
                fh.write(f"{kk},{repr(dd)}\n")
        fig_path = run_dir / "distortion.png"
        figures.fig_distortion(fig_path, curve, k)
        artifacts["distortion"] = dist_path
        artifacts["distortion_fig"] = fig_path
        print(f"selected k={k} from distortion elbow over {args.k_range}")
    else:
        k = args.k
    graph = build_knn_graph(vectors, k, seed=args.seed)
    graph_path = run_dir / "graph.txt"
    save_graph(graph_path, graph)
    artifacts["graph"] = graph_path
    degs = graph.degrees()
    print(
        f"graph: {graph.n} nodes, {graph.num_edges} undirected edges, "
        f"k={k}, mean degree {degs.mean():.2f}, max degree {degs.max()}"
    )
    _finish_run(run_dir, man, artifacts)


def cmd_split(args) -> None:
    run_dir, man = _start_run(args, {"graph": args.graph})
    man.seeds = [args.seed]
    graph = load_graph(args.graph)
    spec = SplitSpec(
        fractions=_parse_fractions(args.fractions),
        seed=args.seed,
        stratified=not args.no_stratify,
    )
    split_nodes(graph, spec)
    graph_path = run_dir / "graph.txt"
    save_graph(graph_path, graph)
    summary = {}
    for name in ("train", "val", "test"):
        m = graph.mask(name)
        summary[name] = {
            "size": int(m.sum()),
            "positives": int(np.count_nonzero(graph.labels[m] == 1)),
        }
    split_path = run_dir / "split.json"
    with open(split_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(
        "split sizes: "
        + ", ".join(f"{k} {v['size']} ({v['positives']} pos)" for k, v in summary.items())
    )
    _finish_run(run_dir, man, {"graph": graph_path, "split": split_path})


def cmd_train(args) -> None:
    run_dir, man = _start_run(args, {"graph": args.graph})
    graph = load_graph(args.graph)
    _require_masks(graph)
    results = _train_one_arch(graph, args.arch, args)
    man.seeds = [r["seed"] for r in results]

    artifacts: dict[str, Path] = {}
    best = max(results, key=lambda r: r["best_val_f1"])
    for r in results:
        s = r["seed"]
        hist_path = run_dir / f"history_seed{s}.csv"
        save_history(hist_path, r["history"])
        fig_path = run_dir / f"history_seed{s}.png"
        figures.fig_history(fig_path, r["history"], title=f"{args.arch} seed {s}")
        ckpt_path = run_dir / f"model_seed{s}.ckpt"
        save_model(ckpt_path, r["model"])
        report_path = run_dir / f"report_seed{s}.json"
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write(r["report"].to_json())
            fh.write("\n")
        artifacts[f"history_seed{s}"] = hist_path
        artifacts[f"history_fig_seed{s}"] = fig_path
        artifacts[f"model_seed{s}"] = ckpt_path
        artifacts[f"report_seed{s}"] = report_path
    best_path = run_dir / "model_best.ckpt"
    shutil.copyfile(run_dir / f"model_seed{best['seed']}.ckpt", best_path)
    artifacts["model_best"] = best_path

    agg = _aggregate(results)
    agg.update({"arch": args.arch, "loss": args.loss, "best_seed": best["seed"]})
    summary_path = run_dir / "summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(agg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    artifacts["summary"] = summary_path
    print(
        f"{args.arch}/{args.loss}: test f1 {agg['f1']:.4f} ± {agg['f1_std']:.4f}, "
        f"auroc {agg['auroc']:.4f} ± {agg['auroc_std']:.4f} over {args.seeds} seeds"
    )
    _finish_run(run_dir, man, artifacts)


def cmd_evaluate(args) -> None:
    run_dir, man = _start_run(args, {"graph": args.graph, "model": args.model})
    graph = load_graph(args.graph)
    _require_masks(graph)
    model = load_model(args.model)
    threshold = args.threshold if args.threshold is not None else model.threshold
    probs, _ = model.predict(graph)
    report = _evaluate_probs(graph, probs, threshold, args.mask)
    report_path = run_dir / "report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    roc_path, pr_path = run_dir / "roc.csv", run_dir / "pr.csv"
    metrics.save_curves(roc_path, pr_path, probs, graph.labels, graph.mask(args.mask))
    roc_fig, pr_fig = run_dir / "roc.png", run_dir / "pr.png"
    figures.fig_roc(roc_fig, metrics.roc_points(probs, graph.labels, graph.mask(args.mask)), report.auroc)
    figures.fig_pr(pr_fig, metrics.pr_points(probs, graph.labels, graph.mask(args.mask)), report.auprc)
    print(
        f"{args.mask} metrics: f1 {report.f1:.4f}, accuracy {report.accuracy:.4f}, "
        f"auroc {report.auroc:.4f}, auprc {report.auprc:.4f}"
    )
    _finish_run(
        run_dir,
        man,
        {"report": report_path, "roc": roc_path, "pr": pr_path,
         "roc_fig": roc_fig, "pr_fig": pr_fig},
    )


def cmd_benchmark(args) -> None:
    run_dir, man = _start_run(args, {"graph": args.graph})
    graph = load_graph(args.graph)
    _require_masks(graph)
    man.seeds = [args.seed + i for i in range(args.seeds)]
    rows: list[dict] = []

    for arch in [a for a in args.archs.split(",") if a]:
        results = _train_one_arch(graph, arch, args)
        agg = _aggregate(results)
        rows.append({"model": f"{arch}+{args.loss}", **agg})

    for kind in [b for b in args.baselines.split(",") if b]:
        if kind == "majority":
            probs = bl.majority_probabilities(graph.labels, graph.mask("train"))
            report = _evaluate_probs(graph, probs, args.threshold)
            rows.append(_baseline_row("majority", [report]))
        elif kind == "mlp":
            reports = []
            for offset in range(args.seeds):
                cfg = bl.BaselineConfig(
                    kind="mlp", epochs=args.epochs, seed=args.seed + offset
                )
                probs = bl.fit_predict(cfg, graph)
                reports.append(_evaluate_probs(graph, probs, args.threshold))
                print(f"mlp seed {args.seed + offset}: test f1 {reports[-1].f1:.4f}")
            rows.append(_baseline_row("mlp", reports))
        elif kind == "logreg":
            cfg = bl.BaselineConfig(kind="logreg", epochs=args.logreg_epochs)
            probs = bl.fit_predict(cfg, graph)
            report = _evaluate_probs(graph, probs, args.threshold)
            rows.append(_baseline_row("logreg", [report]))
            print(f"logreg: test f1 {report.f1:.4f}")
        elif kind == "knn":
            cfg = bl.BaselineConfig(kind="knn", k=args.knn_k)
            probs = bl.fit_predict(cfg, graph)
            report = _evaluate_probs(graph, probs, args.threshold)
            rows.append(_baseline_row(f"knn(k={args.knn_k})", [report]))
            print(f"knn: test f1 {report.f1:.4f}")
        else:
            raise ValueError(f"unknown baseline {kind!r}")

    csv_path = run_dir / "benchmark.csv"
    _write_benchmark_csv(csv_path, rows)
    json_path = run_dir / "benchmark.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")
    fig_path = run_dir / "benchmark.png"
    figures.fig_benchmark(fig_path, rows)
    best = max(rows, key=lambda r: r["f1"])
    print(f"best model by test f1: {best['model']} ({best['f1']:.4f})")
    _finish_run(
        run_dir, man, {"benchmark": csv_path, "benchmark_json": json_path, "benchmark_fig": fig_path}
    )


def _baseline_row(name: str, reports: list[metrics.MetricReport]) -> dict:
    row = {"model": name}
    for key in ("f1", "auroc", "auprc", "accuracy", "balanced_accuracy", "precision", "recall"):
        mean, std = summarize_seeds([getattr(rep, key) for rep in reports])
        row[key] = mean
        row[f"{key}_std"] = std
    return row


def _write_benchmark_csv(path, rows: list[dict]) -> None:
    cols = ("model", "f1", "f1_std", "auroc", "auroc_std", "auprc", "auprc_std",
            "accuracy", "balanced_accuracy", "precision", "recall")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            cells = [str(row["model"])]
            cells += [repr(float(row[c])) for c in cols[1:]]
            fh.write(",".join(cells) + "\n")


def cmd_ablate(args) -> None:
    if args.drop is not None and args.only is not None:
        raise ValueError("specify at most one of --drop / --only")
    run_dir, man = _start_run(
        args, {"cohort": args.cohort, "embeddings": args.embeddings}
    )
    man.seeds = [args.seed + i for i in range(args.seeds)]
    raw = ehr.load_cohort(args.cohort)
    records, _ = ehr.build_cohort(raw)
    store = ehr.load_embeddings(args.embeddings)

    if args.only is not None:
        settings = [("full", None, None)] + [
            (f"only_{k}", None, k) for k in (KINDS if args.only == "each" else [args.only])
        ]
    else:
        drops = KINDS if args.drop in (None, "each") else [args.drop]
        settings = [("full", None, None)] + [(f"drop_{k}", k, None) for k in drops]

    rows = []
    for setting, drop, only in settings:
        vectors, _cov = ehr.represent_cohort(
            records, store, drop=_kind(drop), only=_kind(only)
        )
        if len(vectors) <= args.k:
            raise ValueError(f"setting {setting}: too few representable patients")
        graph = build_knn_graph(vectors, args.k, seed=args.graph_seed)
        split_nodes(
            graph,
            SplitSpec(fractions=_parse_fractions(args.fractions), seed=args.split_seed),
        )
        results = _train_one_arch(graph, args.arch, args)
        agg = _aggregate(results)
        rows.append({"setting": setting, "n_patients": len(vectors), **agg})
        print(f"[{setting}] test f1 {agg['f1']:.4f} ± {agg['f1_std']:.4f}")

    full_f1 = rows[0]["f1"]
    for row in rows:
        row["delta_f1"] = row["f1"] - full_f1

    csv_path = run_dir / "ablation.csv"
    cols = ("setting", "n_patients", "f1", "f1_std", "delta_f1", "auroc", "auroc_std",
            "auprc", "auprc_std")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            cells = [str(row["setting"]), str(row["n_patients"])]
            cells += [repr(float(row[c])) for c in cols[2:]]
            fh.write(",".join(cells) + "\n")
    json_path = run_dir / "ablation.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")
    fig_path = run_dir / "ablation.png"
    figures.fig_ablation(fig_path, rows)
    _finish_run(
        run_dir, man, {"ablation": csv_path, "ablation_json": json_path, "ablation_fig": fig_path}
    )


def cmd_interpret(args) -> None:
    run_dir, man = _start_run(
        args, {"graph": args.graph, "model": args.model, "cohort": args.cohort}
    )
    man.seeds = [args.seed]
    graph = load_graph(args.graph)
    _require_masks(graph)
    model = load_model(args.model)
    threshold = args.threshold if args.threshold is not None else model.threshold
    probs, dump = model.predict(graph)
    groups = interpret.group_assignment(probs, graph.labels, graph.mask("test"), threshold)
    counts = interpret.group_counts(groups)
    print(
        "test groups: "
        + ", ".join(f"{g}={counts[g]}" for g in interpret.GROUPS)
    )
    artifacts: dict[str, Path] = {}
    all_notes: list[str] = []

    stats, notes = degree_stats(graph, groups)
    all_notes += notes
    deg_path = run_dir / "degree_stats.json"
    with open(deg_path, "w", encoding="utf-8") as fh:
        json.dump({"groups": stats, "notes": notes}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    artifacts["degree_stats"] = deg_path

    if dump is not None:
        att_path = run_dir / "attention.csv"
        dump.save_csv(att_path)
        artifacts["attention"] = att_path
        summary, notes = interpret.attention_summary(dump, groups, graph.labels)
        all_notes += notes
        sum_path = run_dir / "attention_summary.json"
        interpret.save_attention_summary(sum_path, summary, notes)
        artifacts["attention_summary"] = sum_path
        hist_path = run_dir / "attention_hist.png"
        figures.fig_attention_hist(hist_path, summary)
        artifacts["attention_hist"] = hist_path
    else:
        all_notes.append("model has no graph-transformer layer; attention axes skipped")
        print("note: no attention dump (model has no GT layer)")

    raw = ehr.load_cohort(args.cohort)
    records, _ = ehr.build_cohort(raw)
    by_pid = {r.patient_id: r for r in records}
    records_by_node = [by_pid.get(pid) for pid in graph.patient_ids]
    rows, notes = interpret.code_frequency(records_by_node, groups, top_n=args.top_n)
    all_notes += notes
    freq_path = run_dir / "code_frequency.csv"
    interpret.save_code_frequency(freq_path, rows)
    artifacts["code_frequency"] = freq_path
    freq_fig = run_dir / "code_frequency.png"
    figures.fig_code_frequency(freq_fig, rows)
    artifacts["code_frequency_fig"] = freq_fig

    chosen, notes = interpret.select_instances(groups, seed=args.seed)
    all_notes += notes
    for group, node in chosen.items():
        dossier = interpret.instance_report(
            graph, records_by_node, node, probs, groups, dump, threshold, hops=args.hops
        )
        base = run_dir / f"instance_{group}"
        with open(f"{base}.json", "w", encoding="utf-8") as fh:
            json.dump(dossier, fh, indent=2, sort_keys=True)
            fh.write("\n")
        nb = interpret.extract_neighborhood(
            graph, node, args.hops, probabilities=probs, groups=groups, dump=dump
        )
        interpret.neighborhood_to_dot(f"{base}.dot", nb)
        figures.fig_neighborhood(f"{base}.png", nb)
        artifacts[f"instance_{group}"] = Path(f"{base}.json")
        artifacts[f"instance_{group}_dot"] = Path(f"{base}.dot")
        artifacts[f"instance_{group}_fig"] = Path(f"{base}.png")
        print(f"instance {group}: node {node} (p={probs[node]:.3f})")

    notes_path = run_dir / "notes.json"
    with open(notes_path, "w", encoding="utf-8") as fh:
        json.dump({"notes": all_notes}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    artifacts["notes"] = notes_path
    _finish_run(run_dir, man, artifacts)


def cmd_export_curves(args) -> None:
    run_dir, man = _start_run(args, {"graph": args.graph, "model": args.model})
    graph = load_graph(args.graph)
    _require_masks(graph)
    model = load_model(args.model)
    probs, _ = model.predict(graph)
    mask = graph.mask(args.mask)
    roc_path, pr_path = run_dir / "roc.csv", run_dir / "pr.csv"
    metrics.save_curves(roc_path, pr_path, probs, graph.labels, mask)
    auroc = metrics.auroc(probs, graph.labels, mask)
    auprc = metrics.auprc(probs, graph.labels, mask)
    roc_fig, pr_fig = run_dir / "roc.png", run_dir / "pr.png"
    figures.fig_roc(roc_fig, metrics.roc_points(probs, graph.labels, mask), auroc)
    figures.fig_pr(pr_fig, metrics.pr_points(probs, graph.labels, mask), auprc)
    print(f"{args.mask} curves: auroc {auroc:.4f}, auprc {auprc:.4f}")
    _finish_run(
        run_dir, man,
        {"roc": roc_path, "pr": pr_path, "roc_fig": roc_fig, "pr_fig": pr_fig},
    )


# ---------------------------------------------------------------------------
# parser assembly


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=None, help="output root (default $HFGRAPH_OUT or ./runs)")
    p.add_argument("--force", action="store_true", help="overwrite an existing run directory")
    p.add_argument("--config", default=None, help="key = value config file; flags override")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--loss", choices=("bce", "wbce", "focal"), default="focal")
    p.add_argument("--alpha", type=float, default=0.75, help="focal alpha")
    p.add_argument("--gamma", type=float, default=1.0, help="focal gamma")
    p.add_argument("--pos-weight", type=float, default=None, help="wbce weight (default #neg/#pos)")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=30, help="early-stop patience (0 disables)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--seeds", type=int, default=3, help="number of consecutive seeds")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--no-batchnorm", action="store_true")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hfgraph",
        description="Heart-failure prediction on patient similarity graphs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--patients", type=int, default=4760)
    p.add_argument("--positive-rate", type=float, default=0.2871)
    p.add_argument("--signal", type=float, default=0.7)
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--n-diag", type=int, default=817)
    p.add_argument("--n-proc", type=int, default=517)
    p.add_argument("--n-rx", type=int, default=3454)
    p.add_argument("--visits-min", type=int, default=2)
    p.add_argument("--visits-max", type=int, default=6)
    p.add_argument("--codes-min", type=int, default=3)
    p.add_argument("--codes-max", type=int, default=15)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("represent", help="cohort + embeddings -> patient vectors")
    p.add_argument("--cohort", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--drop", choices=KINDS, default=None)
    p.add_argument("--only", choices=KINDS, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_represent)

    p = sub.add_parser("graph", help="patient vectors -> cosine KNN graph")
    p.add_argument("--vectors", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--select-k", action="store_true", help="pick k at the distortion elbow")
    p.add_argument("--k-range", default="2:10", help="LO:HI inclusive for --select-k")
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("split", help="assign train/val/test masks")
    p.add_argument("--graph", required=True)
    p.add_argument("--fractions", default="0.6,0.2,0.2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-stratify", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a GNN over 3 seeds")
    p.add_argument("--graph", required=True)
    p.add_argument("--arch", choices=("sage", "gat", "gt"), default="gt")
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metric report for a checkpoint")
    p.add_argument("--graph", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--mask", choices=("train", "val", "test"), default="test")
    p.add_argument("--threshold", type=float, default=None, help="default: checkpoint threshold")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="GNNs vs non-graph baselines")
    p.add_argument("--graph", required=True)
    p.add_argument("--archs", default="sage,gat,gt", help="comma list of GNN archs")
    p.add_argument(
        "--baselines", default="logreg,knn,mlp,majority", help="comma list of baselines"
    )
    p.add_argument("--knn-k", type=int, default=5)
    p.add_argument("--logreg-epochs", type=int, default=500)
    p.add_argument("--arch", help=argparse.SUPPRESS, default=None)  # unused; train flags shared
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("ablate", help="retrain with one code kind removed")
    p.add_argument("--cohort", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--drop", choices=(*KINDS, "each"), default=None)
    p.add_argument("--only", choices=(*KINDS, "each"), default=None)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--graph-seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--fractions", default="0.6,0.2,0.2")
    p.add_argument("--arch", choices=("sage", "gat", "gt"), default="gt")
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("interpret", help="attention, code frequencies, dossiers")
    p.add_argument("--graph", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--seed", type=int, default=0, help="instance selection seed")
    p.add_argument("--hops", type=int, choices=(1, 2), default=2)
    p.add_argument("--top-n", type=int, default=50)
    p.add_argument("--threshold", type=float, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_interpret)

    p = sub.add_parser("export-curves", help="ROC / PR points as CSV + PNG")
    p.add_argument("--graph", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--mask", choices=("train", "val", "test"), default="test")
    _add_common(p)
    p.set_defaults(func=cmd_export_curves)

    return parser


def _inject_config(argv: list[str]) -> list[str]:
    """Expand --config FILE into flags placed before the explicit ones."""
    if not argv or "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        return argv  # argparse will report the missing value
    pairs = parse_config_file(argv[i + 1])
    inject: list[str] = []
    for key, value in sorted(pairs.items()):
        flag = "--" + key.replace("_", "-")
        if key in _BOOL_FLAGS:
            if value.lower() in ("1", "true", "yes", "on"):
                inject.append(flag)
        else:
            inject.extend([flag, value])
    return [argv[0], *inject, *argv[1:]]


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _inject_config(argv)
        parser = build_parser()
        args = parser.parse_args(argv)
        args.func(args)
        return 0
    except (Exception, KeyboardInterrupt) as exc:
        message = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
