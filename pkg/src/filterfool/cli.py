"""Command-line interface.

Exit codes: 0 success, 1 configuration error, 2 runtime failure (model
loading, per-image attack errors, I/O).
"""

import argparse
import logging
import sys
from pathlib import Path

import torch

from .classifiers import WEIGHTS_ENV, ModelUnavailable, weights_dir
from .config import ConfigError, load_config, read_image_list
from .defenses import DefenseSpec
from .eval import read_records, write_records_csv, write_records_jsonl
from .image_core import save_png
from .pipeline import defend_dir, evaluate_run, read_run, run_attack, sample_per_class, taxonomy_for
from .report import write_report
from .taxonomy import save_taxonomy

log = logging.getLogger("filterfool")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def cmd_attack(args):
    cfg = load_config(args.config)
    done, skipped, failed = run_attack(cfg)
    print(f"attacked {done}, skipped {skipped} already done, failed {len(failed)} (config {cfg.hash})")
    for iid, err in failed:
        print(f"  {iid}: {err}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_evaluate(args):
    manifest, _ = read_run(args.adv_dir)
    cfg = manifest["config"]
    models = _csv_list(args.models) if args.models else cfg["eval_models"]
    defenses = [DefenseSpec.parse(d) for d in _csv_list(args.defenses)] if args.defenses is not None else [
        DefenseSpec.parse(d) for d in cfg["defenses"]
    ]
    cfg_hash, records = evaluate_run(args.adv_dir, models, defenses, args.cache_dir, args.offline, args.taxonomy)
    out = Path(args.out or Path(args.adv_dir) / "records.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix == ".jsonl":
        write_records_jsonl(records, out, cfg_hash)
    else:
        write_records_csv(records, out, cfg_hash)
    print(f"wrote {len(records)} records to {out}")
    return EXIT_OK


def _config_hash_of(path):
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("# config_hash="):
        return first.strip().split("=", 1)[1]
    return None


def cmd_report(args):
    records, hashes = [], []
    for p in args.records:
        records += read_records(p)
        if not str(p).endswith(".jsonl"):
            hashes.append(_config_hash_of(p))
    if not records:
        raise ConfigError("no records to report on")
    cache = {}

    def taxonomies(model_name):
        D = 10 if model_name == "toy" else 1000
        if D not in cache:
            cache[D] = taxonomy_for(D, args.taxonomy)[0]
        return cache[D]

    config_hash = "+".join(sorted(h for h in set(hashes) if h)) or None
    paths = write_report(records, args.out, taxonomies, plots=not args.no_plots, config_hash=config_hash)
    print(f"wrote {len(paths)} files to {args.out}")
    return EXIT_OK


def cmd_defend(args):
    spec = DefenseSpec.parse(args.defense)
    n = defend_dir(args.input, args.out, spec)
    print(f"applied {spec} to {n} images")
    return EXIT_OK


def cmd_train_toy(args):
    from .toy import make_dataset, save_toy, toy_hypernyms, toy_taxonomy, train_toy

    torch.manual_seed(args.seed)
    out = weights_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, acc = train_toy(n_train=args.n_train, epochs=args.epochs, seed=args.seed)
    save_toy(model, out / "toy.pt")
    save_taxonomy(toy_taxonomy(), out / "toy_taxonomy.csv")
    with open(out / "toy_hypernyms.csv", "w") as fh:
        fh.write("child_wnid,parent_wnid\n")
        g = toy_hypernyms()
        for child in sorted(g.parents):
            for parent in sorted(g.parents[child]):
                fh.write(f"{child},{parent}\n")
    print(f"toy classifier: held-out accuracy {acc:.3f}, weights in {out / 'toy.pt'}")
    if args.test_images:
        data = Path(args.data_dir or out / "toy_data")
        images, labels = make_dataset(args.test_images, seed=args.data_seed)
        lines = []
        for i, (img, y) in enumerate(zip(images, labels)):
            name = f"img_{i:04d}.png"
            save_png(img, data / name)
            lines.append(f"{name},{int(y)}")
        (data / "list.txt").write_text("\n".join(lines) + "\n")
        print(f"wrote {len(lines)} test images to {data}")
    return EXIT_OK


def cmd_sample(args):
    entries = read_image_list(args.list)
    picked = sample_per_class(entries, args.per_class, args.seed)
    text = "".join(f"{p},{y}\n" for p, y in picked)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="filterfool", description="Filter-mimicking semantic adversarial attacks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("attack", help="attack every image in the config's list")
    a.add_argument("--config", required=True)
    a.set_defaults(func=cmd_attack)

    e = sub.add_parser("evaluate", help="evaluate a run directory on models and defenses")
    e.add_argument("--adv-dir", required=True)
    e.add_argument("--models", help="comma-separated model names (default: the run's eval models)")
    e.add_argument("--defenses", help="comma-separated kind:value list, e.g. jpeg:100,median:3")
    e.add_argument("--out", help="records file, .csv or .jsonl (default: <adv-dir>/records.csv)")
    e.add_argument("--taxonomy", help="label taxonomy CSV (default: built-in for the model)")
    e.add_argument("--cache-dir", help=f"weight cache (default: ${WEIGHTS_ENV} or ~/.cache/filterfool)")
    e.add_argument("--offline", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="tables and plots from record files")
    r.add_argument("--records", required=True, nargs="+")
    r.add_argument("--out", required=True)
    r.add_argument("--taxonomy")
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(func=cmd_report)

    d = sub.add_parser("defend", help="apply a defense to a directory of PNGs")
    d.add_argument("--input", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--defense", required=True, help="bits:1..7, median:2|3|5 or jpeg:25|50|75|100")
    d.set_defaults(func=cmd_defend)

    t = sub.add_parser("train-toy", help="train the built-in toy classifier")
    t.add_argument("--out", help=f"weight directory (default: ${WEIGHTS_ENV} or ~/.cache/filterfool)")
    t.add_argument("--epochs", type=int, default=15)
    t.add_argument("--n-train", type=int, default=6000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--test-images", type=int, default=0, help="also write this many labelled test PNGs")
    t.add_argument("--data-dir", help="where to write test images (default: <out>/toy_data)")
    t.add_argument("--data-seed", type=int, default=123)
    t.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("sample", help="deterministic per-class subset of a labelled image list")
    s.add_argument("--list", required=True)
    s.add_argument("--per-class", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sample)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ValueError as exc:
        # ConfigError and malformed command-line values (defense specs, lists)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelUnavailable, OSError, RuntimeError, KeyError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
