"""Command-line front end: simulate, fit, cluster, summarize.

Exit codes: 0 success, 1 usage or validation error, 2 result produced but
the EM did not converge.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .clustering import ClusteringPath, build_dendrogram, resolve_workers, run_clustering
from .dataio import load_rules, prepare, write_csv, write_provenance
from .estimation import EmConfig, FitResult, fit
from .model import (
    ItemPartition,
    ModelParameters,
    ResponseMatrix,
    ValidationError,
    conditional_probabilities,
    dimension_frequency,
)
from .selection import criterion_report, cut_by_min_bic
from .simulate import SimulationSpec, generate, random_spec

log = logging.getLogger("dimscale")

EXIT_OK, EXIT_INVALID, EXIT_DEGRADED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _join_ids(ids: list[str]) -> str:
    return ids[0] if len(ids) == 1 else ", ".join(ids[:-1]) + " and " + ids[-1]


def read_partition(path, item_ids: tuple[str, ...]) -> ItemPartition:
    """One group per line, comma-separated item ids; ``#`` comments allowed."""
    index = {item: j for j, item in enumerate(item_ids)}
    groups, seen = [], {}
    text = Path(path).read_text(encoding="utf-8")
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        group = []
        for item in (x.strip() for x in line.split(",")):
            if not item:
                raise ValidationError(f"{path}:{line_no}: empty item id")
            if item not in index:
                raise ValidationError(f"{path}:{line_no}: unknown item {item!r}")
            if item in seen:
                raise ValidationError(f"{path}:{line_no}: item {item!r} already in group on line {seen[item]}")
            seen[item] = line_no
            group.append(index[item])
        groups.append(tuple(group))
    missing = [i for i in item_ids if i not in seen]
    if missing:
        raise ValidationError(f"{path}: items not assigned to any group: {', '.join(missing)}")
    return ItemPartition(tuple(groups))


def block_partition(n_items: int, n_dims: int) -> ItemPartition:
    if not 1 <= n_dims <= n_items:
        raise ValidationError(f"--dims must lie in 1..{n_items}")
    return ItemPartition.from_labels([j * n_dims // n_items for j in range(n_items)])


def fit_to_dict(result: FitResult, item_ids: tuple[str, ...]) -> dict:
    p = result.parameters
    return {
        "item_ids": list(item_ids),
        "n_classes": p.n_classes,
        "partition": [[item_ids[j] for j in g] for g in result.partition.groups],
        "class_weights": p.class_weights.tolist(),
        "abilities": p.abilities.tolist(),
        "difficulties": p.difficulties.tolist(),
        "discriminations": p.discriminations.tolist(),
        "conditional_probabilities": conditional_probabilities(p, result.partition).tolist(),
        "log_likelihood": result.log_likelihood,
        "n_parameters": result.n_parameters,
        "n_respondents": result.n_respondents,
        "bic": result.bic,
        "aic": result.aic,
        "converged": result.converged,
        "n_em_iterations": result.n_em_iterations,
        "start_index": result.start_index,
        "chain_log_likelihoods": list(result.chain_log_likelihoods),
        "newton_fallbacks": result.newton_fallbacks,
        "warnings": list(result.warnings),
    }


def load_fit(path) -> tuple[ModelParameters, ItemPartition, tuple[str, ...]]:
    try:
        d = json.loads(Path(path).read_text())
        ids = tuple(d["item_ids"])
        index = {item: j for j, item in enumerate(ids)}
        partition = ItemPartition(tuple(tuple(index[i] for i in g) for g in d["partition"]))
        params = ModelParameters(d["class_weights"], d["abilities"], d["difficulties"], d["discriminations"])
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: cannot read fit ({exc!r})") from exc
    return params, partition, ids


def path_to_dict(path: ClusteringPath, item_ids: tuple[str, ...]) -> dict:
    def summary(fit_: FitResult) -> dict:
        return {
            "s": fit_.partition.n_groups,
            "log_likelihood": fit_.log_likelihood,
            "n_parameters": fit_.n_parameters,
            "bic": fit_.bic,
            "aic": fit_.aic,
            "converged": fit_.converged,
            "n_em_iterations": fit_.n_em_iterations,
        }

    steps = []
    prev = path.initial_fit.partition
    for st in path.steps:
        a, b = st.merged_pair
        steps.append(
            {
                "step": st.step_index,
                **summary(st.fit),
                "deviance": st.deviance_from_initial,
                "merged_pair": [a, b],
                "merged": [[item_ids[j] for j in prev.groups[a]], [item_ids[j] for j in prev.groups[b]]],
                "partition": [[item_ids[j] for j in g] for g in st.partition.groups],
                "n_nonconverged_candidates": st.n_nonconverged_candidates,
            }
        )
        prev = st.partition
    selected = path.selected_step
    return {
        "n_classes": path.n_classes,
        "item_ids": list(item_ids),
        "initial": {"step": 0, **summary(path.initial_fit)},
        "steps": steps,
        "selected_step": selected,
        "selected_s": None if selected is None else path.partition_at(selected).n_groups,
    }


def format_table(path: ClusteringPath) -> str:
    """Step / BIC / s table; the minimum-BIC row is starred."""
    init = path.initial_fit
    lines = [
        f"# initial model: s={init.partition.n_groups} BIC={init.bic!r}"
        + ("  * selected" if path.selected_step == 0 else ""),
        f"{'step':>4}  {'BIC':>24}  {'s':>3}",
    ]
    for st in path.steps:
        mark = "  *" if st.step_index == path.selected_step else ""
        lines.append(f"{st.step_index:>4}  {st.fit.bic!r:>24}  {st.partition.n_groups:>3}{mark}")
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> list[tuple[int, float, int]]:
    rows = []
    for line in text.splitlines()[2:]:
        step, bic, s = line.split()[:3]
        rows.append((int(step), float(bic), int(s)))
    return rows


def format_partition(partition: ItemPartition, item_ids, leaf_order: list[int] | None = None) -> str:
    """'Dimension d -- n items: a, b and c', groups in dendrogram order."""
    groups = list(partition.groups)
    if leaf_order is not None:
        pos = {leaf: i for i, leaf in enumerate(leaf_order)}
        groups.sort(key=lambda g: min(pos[j] for j in g))
    lines = []
    for d, g in enumerate(groups, start=1):
        noun = "item" if len(g) == 1 else "items"
        lines.append(f"Dimension {d} -- {len(g)} {noun}: {_join_ids([item_ids[j] for j in g])}")
    return "\n".join(lines) + "\n"


def format_frequencies(params: ModelParameters, partition: ItemPartition, item_ids) -> tuple[str, list[dict]]:
    freq = dimension_frequency(params, partition)
    rows = [
        {"dimension": d + 1, "items": [item_ids[j] for j in g], "frequency": float(freq[d])}
        for d, g in enumerate(partition.groups)
    ]
    rows.sort(key=lambda r: (-r["frequency"], r["dimension"]))
    width = max(len(", ".join(r["items"])) for r in rows)
    lines = [f"{'d':>3}  {'items':<{width}}  lambda_bar"]
    for r in rows:
        lines.append(f"{r['dimension']:>3}  {', '.join(r['items']):<{width}}  {r['frequency']:.3f}")
    return "\n".join(lines) + "\n", rows


def _config(args) -> EmConfig:
    return EmConfig(
        max_iterations=args.max_iter,
        rel_tolerance=args.tol,
        n_starts=args.starts,
        seed=args.seed,
    )


def _load_matrix(args) -> ResponseMatrix:
    rules, groups = None, {}
    if args.recode_rules:
        rules, extra = load_rules(args.recode_rules)
        groups.update(extra)
    if args.aggregate_rules:
        more_rules, extra = load_rules(args.aggregate_rules)
        if more_rules.mappings and rules is None:
            rules = more_rules
        groups.update(extra)
    return prepare(args.input, args.delimiter, rules, groups, args.drop_degenerate)


def _manifest(args, out: Path, outputs: list[str], started: float, config: dict) -> None:
    _dump(
        {
            "command": args.command,
            "inputs": [str(p) for p in (getattr(args, "input", None), getattr(args, "fit", None)) if p],
            "config": config,
            "version": __version__,
            "wall_time_seconds": time.perf_counter() - started,
            "outputs": sorted(outputs + ["manifest.json"]),
        },
        out / "manifest.json",
    )


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    if args.spec:
        spec = SimulationSpec.load(args.spec)
    else:
        missing = [f"--{n}" for n in ("n", "items", "classes", "dims") if getattr(args, n) is None]
        if missing:
            raise ValidationError(f"without --spec, {', '.join(missing)} are required")
        spec = random_spec(args.n, args.items, args.classes, args.dims, args.seed, scale=args.scale)
    matrix = generate(spec)
    out = args.out_dir
    write_csv(matrix, out / "data.csv")
    spec.save(out / "spec.json")
    _manifest(args, out, ["data.csv", "spec.json"], started, spec.to_dict())
    return EXIT_OK


def cmd_fit(args) -> int:
    started = time.perf_counter()
    matrix = _load_matrix(args)
    if args.partition:
        partition = read_partition(args.partition, matrix.item_ids)
    elif args.dims:
        partition = block_partition(matrix.n_items, args.dims)
    else:
        partition = ItemPartition.singletons(matrix.n_items)
    config = _config(args)
    result = fit(matrix, partition, args.classes, config)
    out = args.out_dir
    _dump(fit_to_dict(result, matrix.item_ids), out / "fit.json")
    write_provenance(matrix, out / "provenance.json")
    _manifest(args, out, ["fit.json", "provenance.json"], started, {"classes": args.classes, **vars(config)})
    if not result.converged:
        log.warning("EM did not converge; fit.json holds the best chain so far")
        return EXIT_DEGRADED
    return EXIT_OK


def cmd_cluster(args) -> int:
    started = time.perf_counter()
    matrix = _load_matrix(args)
    if matrix.n_items < 2:
        raise ValidationError("clustering needs at least two items")
    config = _config(args)
    path = run_clustering(matrix, args.classes, config, threads=resolve_workers(args.threads))
    step, s = cut_by_min_bic(path)
    dendro = build_dendrogram(path, matrix.item_ids)
    ids = matrix.item_ids
    out = args.out_dir
    _dump(path_to_dict(path, ids), out / "path.json")
    _dump(criterion_report(path).to_dict(), out / "criteria.json")
    (out / "table.txt").write_text(format_table(path))
    _dump(dendro.to_dict(), out / "dendrogram.json")
    (out / "dendrogram.dot").write_text(dendro.to_dot())
    selected = path.partition_at(step)
    (out / "selected-partition.txt").write_text(format_partition(selected, ids, dendro.leaf_order))
    _dump(fit_to_dict(path.fit_at(step), ids), out / "selected-fit.json")
    write_provenance(matrix, out / "provenance.json")
    outputs = [
        "path.json",
        "criteria.json",
        "table.txt",
        "dendrogram.json",
        "dendrogram.dot",
        "selected-partition.txt",
        "selected-fit.json",
        "provenance.json",
    ]
    _manifest(args, out, outputs, started, {"classes": args.classes, **vars(config)})
    log.info("selected s=%d at step %d", s, step)
    degraded = any(not f.converged for f in path.fits()) or bool(dendro.violations)
    return EXIT_DEGRADED if degraded else EXIT_OK


def cmd_summarize(args) -> int:
    started = time.perf_counter()
    params, partition, ids = load_fit(args.fit)
    if args.partition:
        given = read_partition(args.partition, ids)
        if given != partition:
            raise ValidationError(f"{args.partition} does not match the partition stored in {args.fit}")
    text, rows = format_frequencies(params, partition, ids)
    out = args.out_dir
    (out / "summary.txt").write_text(text)
    _dump({"dimensions": rows, "class_weights": params.class_weights.tolist()}, out / "summary.json")
    _manifest(args, out, ["summary.txt", "summary.json"], started, {})
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dimscale", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, with_input=True):
        p.add_argument("--out-dir", type=Path, default=Path("."), help="directory for outputs")
        p.add_argument("-v", "--verbose", action="count", default=0)
        if with_input:
            p.add_argument("input", type=Path, help="CSV with a header row of item ids")
            p.add_argument("--classes", "-k", type=int, required=True, help="number of latent classes")
            p.add_argument("--tol", type=float, default=1e-8, help="relative log-likelihood tolerance")
            p.add_argument("--max-iter", type=int, default=5000)
            p.add_argument("--starts", type=int, default=5, help="EM starts per model")
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--delimiter", default=",")
            p.add_argument("--recode-rules", type=Path)
            p.add_argument("--aggregate-rules", type=Path)
            p.add_argument("--drop-degenerate", action="store_true", help="drop all-0 / all-1 items")

    p = sub.add_parser("simulate", help="generate a synthetic data set")
    common(p, with_input=False)
    p.add_argument("--spec", type=Path, help="simulation spec JSON")
    p.add_argument("--n", type=int)
    p.add_argument("--items", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--dims", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=3.0, help="spread of class abilities")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one model for a given partition")
    common(p)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--partition", type=Path, help="one line per dimension: comma-separated item ids")
    group.add_argument("--dims", type=int, help="contiguous equal blocks; the item count means singletons")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cluster", help="hierarchical item clustering with BIC cut")
    common(p)
    p.add_argument("--threads", type=int, help="worker processes (default: DIMSCALE_THREADS or 1)")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("summarize", help="dimension frequency table from a fit")
    common(p, with_input=False)
    p.add_argument("fit", type=Path, help="fit.json or selected-fit.json")
    p.add_argument("--partition", type=Path, help="partition file to check against the fit")
    p.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except (ValidationError, OSError) as exc:
        print(f"dimscale {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
