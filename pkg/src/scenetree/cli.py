"""Command-line surface: dataset generation, training, evaluation,
single-image parsing, and tree export.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Every subcommand
is deterministic given its --seed and inputs; nothing is written outside the
paths named by --out/--report/--log.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import datagen, training
from .errors import TrainingDiverged
from .params import config_from_params
from .rsnn import tree_to_dot, tree_to_json
from .sentences import (RelationVocab, SynonymMap, sentence_to_tree)
from .metrics import tree_metrics
from .training import (evaluate_model, load_checkpoint, load_config,
                       parse_image, parse_tree_to_semantic, train)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="scenetree",
        description="Hierarchical scene parsing: synthetic data, weakly "
                    "supervised training, evaluation, and image parsing.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic dataset")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--n", type=int, required=True, help="sample count")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--size", type=int, default=64, help="image side length")
    gen.add_argument("--classes", type=int, default=5,
                     help="foreground category count (2..5)")
    gen.add_argument("--two-object-fraction", type=float, default=0.75)

    tr = sub.add_parser("train", help="train a model on a dataset")
    tr.add_argument("--data", required=True)
    tr.add_argument("--mode", choices=training.MODES, default=None,
                    help="overrides the config file mode")
    tr.add_argument("--config", default=None, help="key = value config file")
    tr.add_argument("--out", required=True, help="checkpoint path")
    tr.add_argument("--strong-fraction", type=float, default=None)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--log", default=None,
                    help="training log path (default: <out>.trainlog.ndjson)")
    tr.add_argument("--val-data", default=None,
                    help="held-out split evaluated after every epoch")
    tr.add_argument("--threads", type=int, default=1,
                    help="worker threads for the per-epoch map estimation")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("--data", required=True)
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--report", required=True, help="output report JSON path")
    ev.add_argument("--csv", default=None, help="optional per-class CSV path")

    pa = sub.add_parser("parse", help="parse one image into a scene tree")
    pa.add_argument("--image", required=True, help="PPM image path")
    pa.add_argument("--ckpt", required=True)
    pa.add_argument("--out", required=True,
                    help="output stem; writes <out>.pgm/.json/.dot")
    pa.add_argument("--sentence-parse", default=None,
                    help="bracketed parse file; adds semantic tree +"
                         " tree-metric comparison")
    pa.add_argument("--data", default=None,
                    help="dataset dir supplying category/relation names")

    ex = sub.add_parser("export-tree", help="convert a tree JSON to DOT")
    ex.add_argument("--tree", required=True, help="tree JSON path")
    ex.add_argument("--out", required=True, help="DOT output path")
    return parser


def _names_for(args, params):
    """Category and relation names from --data, or palette defaults."""
    if getattr(args, "data", None):
        ds = datagen.load(args.data)
        return ds.categories, ds.relations, ds
    k = params.num_classes
    r = params.num_relations
    cats = ["background"] + [datagen.PALETTE[i][0]
                             for i in range(min(k, len(datagen.PALETTE)))]
    cats += [f"class_{i}" for i in range(len(cats), k + 1)]
    rels = datagen.DEFAULT_RELATIONS if r == len(datagen.DEFAULT_RELATIONS) \
        else [f"relation_{i}" for i in range(r - 1)] + ["others"]
    return cats, rels, None


def _cmd_generate(args):
    if args.n < 1:
        raise SystemExit2("--n must be >= 1")
    spec = datagen.SceneSpec(size=args.size, num_classes=args.classes,
                             seed=args.seed,
                             two_object_fraction=args.two_object_fraction)
    ids, histogram = datagen.generate(spec, args.n, args.out)
    print(f"wrote {len(ids)} samples to {args.out}")
    print("relation histogram (merges in emitted trees):")
    for name, count in histogram.items():
        print(f"  {name}: {count}")
    return 0


def _cmd_train(args):
    dataset = datagen.load(args.data)
    config = load_config(args.config) if args.config else training.TrainConfig()
    overrides = {}
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.strong_fraction is not None:
        overrides["strong_fraction"] = args.strong_fraction
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if overrides:
        from dataclasses import replace
        config = replace(config, **overrides)
    log_path = args.log or f"{args.out}.trainlog.ndjson"
    val_dataset = datagen.load(args.val_data) if args.val_data else None
    val_log = f"{args.out}.val.ndjson" if val_dataset is not None else None
    try:
        _params, records = train(dataset, config, checkpoint_path=args.out,
                                 log_path=log_path, val_dataset=val_dataset,
                                 val_log_path=val_log,
                                 map_threads=args.threads)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    print(f"trained {config.epochs} epochs ({len(records)} iterations);"
          f" checkpoint: {args.out}")
    print(f"training log: {log_path}")
    return 0


def _cmd_eval(args):
    params = load_checkpoint(args.ckpt)
    dataset = datagen.load(args.data)
    report = evaluate_model(params, dataset)
    blob = report.to_json(dataset.categories, dataset.relations)
    Path(args.report).write_text(blob + "\n", encoding="utf-8")
    if args.csv:
        Path(args.csv).write_text(
            report.to_csv(dataset.categories, dataset.relations),
            encoding="utf-8")
    print(blob)
    return 0


def _cmd_parse(args):
    params = load_checkpoint(args.ckpt)
    image = datagen.read_ppm(args.image).astype(np.float64) / 255.0
    categories, relations, ds = _names_for(args, params)
    label_map, ptree = parse_image(params, image)
    out = Path(args.out)
    datagen.write_pgm(f"{out}.pgm", label_map.astype(np.uint8))
    blob = tree_to_json(ptree, categories, relations)
    Path(f"{out}.json").write_text(json.dumps(blob, indent=1), encoding="utf-8")
    Path(f"{out}.dot").write_text(tree_to_dot(ptree, categories, relations),
                                  encoding="utf-8")
    print(f"wrote {out}.pgm, {out}.json, {out}.dot")
    if args.sentence_parse:
        text = Path(args.sentence_parse).read_text(encoding="utf-8").strip()
        parse_text = text.splitlines()[0].split("\t")[-1]
        if ds is not None:
            synonyms, vocab = ds.synonyms, ds.vocab
        else:
            spec = datagen.SceneSpec(num_classes=params.num_classes)
            synonyms = SynonymMap(spec.synonym_table(), categories)
            vocab = spec.vocab()
        sem = sentence_to_tree(parse_text, synonyms, vocab, categories)
        Path(f"{out}.tree.json").write_text(
            json.dumps(sem.to_dict(categories, relations), indent=1),
            encoding="utf-8")
        score = tree_metrics(parse_tree_to_semantic(ptree), sem)
        comparison = {
            "relation_fraction": score.relation_fraction,
            "structural_fraction": score.structural_fraction,
            "nodes_total": score.nodes_total,
        }
        Path(f"{out}.metrics.json").write_text(json.dumps(comparison, indent=1),
                                               encoding="utf-8")
        print(f"wrote {out}.tree.json, {out}.metrics.json")
    return 0


def _cmd_export_tree(args):
    blob = json.loads(Path(args.tree).read_text(encoding="utf-8"))
    lines = ["digraph semantic_tree {", "  node [shape=box];"]
    counter = [0]

    def walk(node):
        nid = counter[0]
        counter[0] += 1
        if "category" in node:
            lines.append(f'  n{nid} [label="{node["category"]}"];')
            return nid
        label = node.get("relation", "?")
        if "q" in node:
            label += f'\\nq={node["q"]:.3f}'
        lines.append(f'  n{nid} [label="{label}" shape=ellipse];')
        for child in node["children"]:
            cid = walk(child)
            lines.append(f"  n{nid} -> n{cid};")
        return nid

    walk(blob)
    lines.append("}")
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {args.out}")
    return 0


class SystemExit2(Exception):
    """Usage error detected after argparse; exits with code 2."""


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "parse": _cmd_parse,
    "export-tree": _cmd_export_tree,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except SystemExit2 as exc:
        parser.exit(2, f"error: {exc}\n")
    except (OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
