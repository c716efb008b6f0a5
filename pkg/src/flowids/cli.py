"""``flowids`` command line: one subcommand per pipeline stage.

Stages exchange CSV on stdin/stdout so they compose as pipes::

    flowids synth --flows 10000 --seed 7 | flowids meter | flowids features

Every subcommand accepts ``--seed``, ``--config`` and ``--out``. A config
file holds ``key = value`` lines whose keys are flag names; explicit flags
win over the file. Exit status is 0 on success, 2 for usage errors and 1 for
data errors, with a JSON error object on stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import os
import sys

from . import cnn, evaluator, image_codec, pipeline, sds_policy, traffic_synth, weibull
from .errors import EmptyInput, FlowIdsError
from .features import Label, read_feature_csv, write_feature_csv
from .flow_meter import (FlowTable, extract_features, finalize, ingest, read_flow_csv,
                         write_flow_csv)
from .packets import ReadStats, read_packet_csv, read_pcap, sort_packets, write_packet_csv, write_pcap

EXIT_DATA = 1
EXIT_USAGE = 2

SCENARIOS = ("mixed", "benign", "flood", "bruteforce", "infiltration")
PIPELINE_SCENARIOS = ("mixed", "flood", "bruteforce", "infiltration")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- I/O helpers


@contextlib.contextmanager
def _text_in(path):
    if path in (None, "-"):
        yield sys.stdin
    else:
        with open(path, newline="") as fh:
            yield fh


@contextlib.contextmanager
def _text_out(path):
    if path in (None, "-"):
        yield sys.stdout
        sys.stdout.flush()
    else:
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(path, "w", newline="") as fh:
            yield fh


@contextlib.contextmanager
def _bytes_out(path):
    if path in (None, "-"):
        yield sys.stdout.buffer
        sys.stdout.buffer.flush()
    else:
        with open(path, "wb") as fh:
            yield fh


def _info(msg):
    print(msg, file=sys.stderr)


def _read_packets(path, stats):
    """Packet CSV or pcap, from a file or stdin."""
    if path in (None, "-"):
        raw = sys.stdin.buffer.read()
    else:
        with open(path, "rb") as fh:
            raw = fh.read()
    if raw[:4] in (b"\xd4\xc3\xb2\xa1", b"\xa1\xb2\xc3\xd4", b"\x4d\x3c\xb2\xa1", b"\xa1\xb2\x3c\x4d"):
        return read_pcap(io.BytesIO(raw), stats)
    return read_packet_csv(io.StringIO(raw.decode("utf-8"), newline=""), stats)


def _read_features(path):
    stats = ReadStats()
    with _text_in(path) as fh:
        rows = list(read_feature_csv(fh, stats))
    if stats.skipped:
        _info(json.dumps({"skipped_rows": stats.skipped, "reasons": stats.reasons}))
    if not rows:
        raise EmptyInput("no feature rows in input")
    return rows


def _write_split(images, split: cnn.Split, names, path):
    subset = {}
    for name_, idx in (("train", split.train), ("val", split.val), ("test", split.test)):
        for i in idx:
            subset[i] = name_
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label", "subset"])
        for i, im in enumerate(images):
            w.writerow([names[i], im.label.value, subset.get(i, "")])


def _manifest_names(manifest):
    with open(manifest, newline="") as fh:
        return [row["path"] for row in csv.DictReader(fh)]


# ---------------------------------------------------------------- subcommands


def cmd_synth(a):
    span = a.span
    if a.scenario == "benign":
        flows = traffic_synth.gen_flows("Benign", a.flows, a.seed, span_s=span)
    else:
        n_benign, n_anomaly = traffic_synth.default_mix_counts(a.flows)
        mix = (traffic_synth.DEFAULT_ATTACK_MIX if a.scenario == "mixed"
               else ((traffic_synth.AttackKind.parse(a.scenario), 1.0),))
        flows = traffic_synth.gen_mixed_flows(n_benign, n_anomaly, a.seed, span_s=span, attack_mix=mix)
    packets = traffic_synth.render_packets(flows)
    if a.truth:
        with _text_out(a.truth) as fh:
            traffic_synth.write_truth_csv(flows, fh)
    if a.format == "pcap":
        with _bytes_out(a.out) as fh:
            write_pcap(packets, fh)
    else:
        with _text_out(a.out) as fh:
            write_packet_csv(packets, fh)


def cmd_meter(a):
    stats = ReadStats()
    packets = _read_packets(a.input, stats)
    # read after the input: in a pipe, synth finishes the truth file before its first packet
    truth = {}
    if a.truth:
        with _text_in(a.truth) as fh:
            truth = traffic_synth.read_truth_csv(fh)
    if a.sort:
        packets = sort_packets(packets)
    table = FlowTable(int(round(a.timeout * 1e6)))

    def closed():
        for p in packets:
            yield from ingest(p, table)
        yield from finalize(table)

    with _text_out(a.out) as fh:
        n = write_flow_csv(((f, truth.get(f.key.canonical(), Label.UNLABELED)) for f in closed()), fh)
    _info(json.dumps({"packets": stats.parsed, "skipped_packets": stats.skipped,
                      "skipped_protocol": table.skipped_protocol, "flows": n}))


def cmd_features(a):
    with _text_in(a.input) as src, _text_out(a.out) as dst:
        write_feature_csv((extract_features(f, label) for f, label in read_flow_csv(src)), dst)


def cmd_fit_baseline(a):
    rows = _read_features(a.input)
    if a.label.lower() != "any":
        want = Label.parse(a.label)
        rows = [r for r in rows if r.label == want]
    iats = [r.flow_iat_mean / 1e6 for r in rows]
    params = weibull.fit_weibull(iats)
    with _text_out(a.out) as fh:
        weibull.save_baseline(params, sum(1 for x in iats if x > 0), a.fitted_at, fh)


def cmd_detect_weibull(a):
    with open(a.baseline) as fh:
        baseline = weibull.load_baseline(fh)
    rows = _read_features(a.input)
    scores = weibull.score_windows(rows, baseline, a.window, a.threshold)
    with _text_out(a.out) as fh:
        weibull.write_scores_csv(scores, fh)
    if a.store:
        store = sds_policy.PolicyStore(a.store)
        for s, sl in zip(scores, weibull.window_slices(len(rows), a.window)):
            if s.flagged:
                store.record_anomaly(sds_policy.detection_from_rows(
                    sds_policy.Source.WEIBULL, f"window{s.window_id}", rows[sl]))
    _info(json.dumps({"windows": len(scores), "flagged": sum(s.flagged for s in scores)}))


def cmd_encode(a):
    rows = _read_features(a.input)
    os.makedirs(a.out, exist_ok=True)
    if a.norm:
        with open(a.norm) as fh:
            spec = image_codec.NormalizationSpec.load(fh)
        images = image_codec.encode_by_label(rows, spec)
        split = None
    else:
        ds = pipeline.build_image_dataset(rows, cnn.TrainConfig(seed=a.seed))
        images, spec, split = ds.images, ds.spec, ds.split
        with open(os.path.join(a.out, "norm.json"), "w") as fh:
            spec.save(fh)
    manifest = image_codec.write_images(images, a.out)
    if split is not None:
        _write_split(images, split, _manifest_names(manifest), os.path.join(a.out, "split.csv"))
    _info(json.dumps({"images": len(images), "manifest": manifest}))


def cmd_train(a):
    images = image_codec.read_images(a.manifest)
    config = cnn.TrainConfig(seed=a.seed, epochs=a.epochs, batch_size=a.batch_size,
                             learning_rate=a.lr, momentum=a.momentum)
    progress = (lambda e: _info(json.dumps(e.__dict__))) if a.verbose else None
    result = cnn.train(images, config, progress=progress)
    os.makedirs(a.out, exist_ok=True)
    with open(os.path.join(a.out, "model.ckpt"), "wb") as fh:
        cnn.save_checkpoint(result.model, fh)
    with open(os.path.join(a.out, "train_log.csv"), "w", newline="") as fh:
        cnn.write_train_log(result.log, fh)
    _write_split(images, result.split, _manifest_names(a.manifest), os.path.join(a.out, "split.csv"))
    _info(json.dumps({"best_epoch": result.best_epoch, "images": len(images)}))


def cmd_predict(a):
    with open(a.model, "rb") as fh:
        model = cnn.load_checkpoint(fh)
    images = image_codec.read_images(a.manifest)
    names = _manifest_names(a.manifest)
    if a.subset != "all":
        if not a.split:
            raise UsageError("--subset needs --split")
        with open(a.split, newline="") as fh:
            chosen = {row["path"] for row in csv.DictReader(fh) if row["subset"] == a.subset}
        keep = [i for i, n in enumerate(names) if n in chosen]
        images, names = [images[i] for i in keep], [names[i] for i in keep]
    scores = cnn.predict_scores(model, images) if images else []
    with _text_out(a.out) as fh:
        evaluator.write_predictions_csv(names, scores, [im.label for im in images], fh)


def cmd_evaluate(a):
    with _text_in(a.input) as fh:
        _, scores, truth = evaluator.read_predictions_csv(fh)
    report = evaluator.evaluate(scores, truth, threshold=a.threshold, with_curve=not a.no_curve)
    with _text_out(a.out) as fh:
        evaluator.write_report_json(report, fh)
    if a.table:
        _info(evaluator.format_table(report))
    if a.pr_curve and report.pr_curve is not None:
        with _text_out(a.pr_curve) as fh:
            evaluator.write_pr_curve_csv(report.pr_curve, fh)


def cmd_push_rules(a):
    store = sds_policy.PolicyStore(a.store)
    ruleset = sds_policy.push_rules(store)
    with _text_out(a.out) as fh:
        json.dump(ruleset.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if a.apply:
        hits = sds_policy.SimulatedIds(ruleset).apply(_read_features(a.apply))
        _info(json.dumps({"version": ruleset.version, "hits": hits}, sort_keys=True))


def cmd_pipeline(a):
    settings = pipeline.PipelineSettings(
        scenario=a.scenario, seed=a.seed, images=a.images, epochs=a.epochs, window=a.window,
        cycles=a.cycles, interval_s=a.interval, cycle_flows=a.cycle_flows, attack_cycle=a.attack_cycle)
    result = pipeline.run_pipeline(a.out, settings, progress=_info)
    rep = result["report"].to_json()
    print(json.dumps({"out": a.out, "policies": len(result["policies"]),
                      "ruleset_version": result["run_log"][-1].ruleset_version,
                      "per_class": rep["per_class"]}, sort_keys=True))


# ---------------------------------------------------------------- parser


def _common(p, out_default="-", out_help="output file ('-' for stdout)"):
    p.add_argument("--seed", type=int, default=0, help="random seed (default %(default)s)")
    p.add_argument("--config", metavar="FILE", help="key = value file supplying flag defaults")
    p.add_argument("--out", default=out_default, help=f"{out_help} (default %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    root = _Parser(prog="flowids", description="Flow-based intrusion detection pipeline.")
    sub = root.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a labelled synthetic packet stream")
    _common(p)
    p.add_argument("--flows", type=int, default=10000, help="number of flows (default %(default)s)")
    p.add_argument("--scenario", choices=SCENARIOS, default="mixed",
                   help="traffic mix; attack names use the default class balance (default %(default)s)")
    p.add_argument("--span", type=float, default=3600.0, help="capture length in seconds (default %(default)s)")
    p.add_argument("--truth", metavar="FILE", help="also write the flow-key -> label CSV here")
    p.add_argument("--format", choices=("csv", "pcap"), default="csv", help="packet format (default %(default)s)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("meter", help="assemble packets (CSV or pcap) into bidirectional flows")
    _common(p)
    p.add_argument("--input", default="-", help="packet CSV or pcap ('-' for stdin)")
    p.add_argument("--timeout", type=float, default=120.0, help="idle timeout in seconds (default %(default)s)")
    p.add_argument("--truth", metavar="FILE", help="ground-truth CSV used to label flows")
    p.add_argument("--sort", action="store_true", help="sort packets by timestamp before metering")
    p.set_defaults(func=cmd_meter)

    p = sub.add_parser("features", help="flow CSV -> 20-feature CSV with Label")
    _common(p)
    p.add_argument("--input", default="-", help="flow CSV from 'meter' ('-' for stdin)")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("fit-baseline", help="fit the Weibull baseline to per-flow mean IAT")
    _common(p)
    p.add_argument("--input", default="-", help="feature CSV ('-' for stdin)")
    p.add_argument("--label", default="Benign", help="rows to fit: a label, or 'any' (default %(default)s)")
    p.add_argument("--fitted-at", default=sds_policy.iso_time(0), help="timestamp recorded in the baseline")
    p.set_defaults(func=cmd_fit_baseline)

    p = sub.add_parser("detect-weibull", help="KS-score flow windows against a baseline")
    _common(p)
    p.add_argument("--input", default="-", help="feature CSV ('-' for stdin)")
    p.add_argument("--baseline", required=True, help="baseline JSON from fit-baseline")
    p.add_argument("--window", type=int, default=100, help="flows per window (default %(default)s)")
    p.add_argument("--threshold", type=float, default=None, help="KS threshold (default 1.36/sqrt(window))")
    p.add_argument("--store", metavar="FILE", help="record flagged windows in this policy store")
    p.set_defaults(func=cmd_detect_weibull)

    p = sub.add_parser("encode", help="pack feature rows into 100x100 RGB images")
    _common(p, "images", "output directory")
    p.add_argument("--input", default="-", help="feature CSV ('-' for stdin)")
    p.add_argument("--norm", help="existing normalization JSON; otherwise learned on the training split")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train the CNN on an image manifest")
    _common(p, "model", "output directory")
    p.add_argument("--manifest", required=True, help="manifest.csv written by encode")
    p.add_argument("--epochs", type=int, default=20, help="(default %(default)s)")
    p.add_argument("--batch-size", type=int, default=16, help="(default %(default)s)")
    p.add_argument("--lr", type=float, default=0.01, help="learning rate (default %(default)s)")
    p.add_argument("--momentum", type=float, default=0.9, help="(default %(default)s)")
    p.add_argument("--verbose", action="store_true", help="log every epoch to stderr")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score images with a trained checkpoint")
    _common(p)
    p.add_argument("--model", required=True, help="checkpoint from train")
    p.add_argument("--manifest", required=True, help="image manifest")
    p.add_argument("--split", help="split.csv from train, used with --subset")
    p.add_argument("--subset", choices=("all", "train", "val", "test"), default="all",
                   help="score only this part of the split (default %(default)s)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="precision/recall/F1 report from predictions")
    _common(p)
    p.add_argument("--input", default="-", help="predictions CSV (id,score,label)")
    p.add_argument("--threshold", type=float, default=0.5, help="decision threshold (default %(default)s)")
    p.add_argument("--table", action="store_true", help="print the metrics table to stderr")
    p.add_argument("--pr-curve", metavar="FILE", help="write the precision-recall curve CSV here")
    p.add_argument("--no-curve", action="store_true", help="skip the PR curve and its AUC")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("push-rules", help="publish the next IDS rule set from a policy store")
    _common(p)
    p.add_argument("--store", required=True, help="policy store (JSON lines)")
    p.add_argument("--apply", metavar="FEATURES", help="report per-rule hits on this feature CSV")
    p.set_defaults(func=cmd_push_rules)

    p = sub.add_parser("pipeline", help="run every stage on a scripted scenario")
    _common(p, os.path.join("runs", "pipeline"), "output directory")
    p.add_argument("--scenario", choices=PIPELINE_SCENARIOS, default="flood", help="attack scenario (default %(default)s)")
    p.add_argument("--images", type=int, default=40, help="corpus size in images (default %(default)s)")
    p.add_argument("--epochs", type=int, default=30, help="(default %(default)s)")
    p.add_argument("--window", type=int, default=100, help="Weibull window in flows (default %(default)s)")
    p.add_argument("--cycles", type=int, default=3, help="scheduled cycles (default %(default)s)")
    p.add_argument("--interval", type=int, default=600, help="cycle length in seconds (default %(default)s)")
    p.add_argument("--cycle-flows", type=int, default=1600, help="benign flows per cycle (default %(default)s)")
    p.add_argument("--attack-cycle", type=int, default=2, help="cycle carrying the attack (default %(default)s)")
    p.set_defaults(func=cmd_pipeline)
    return root


def read_config(path: str) -> dict:
    """``key = value`` lines; '#' starts a comment; keys may use '-' or '_'."""
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value.strip("\"'")
    return out


def _apply_config(parser: argparse.ArgumentParser, argv: list):
    """Re-parse with config values installed as defaults for the chosen subcommand."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    subparser = sub.choices[args.command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in read_config(args.config).items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"{args.config}: unknown key {key!r} for {args.command}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            try:
                value = action.type(raw) if action.type else raw
            except ValueError as exc:
                raise UsageError(f"{args.config}: bad value for {key}: {exc}") from exc
            if action.choices and value not in action.choices:
                raise UsageError(f"{args.config}: {key} must be one of {list(action.choices)}")
            defaults[key] = value
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        args.func(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(json.dumps({"error": "UsageError", "message": str(exc)}), file=sys.stderr)
        return EXIT_USAGE
    except FlowIdsError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return EXIT_DATA
    except (ValueError, KeyError, OSError, csv.Error) as exc:
        if isinstance(exc, BrokenPipeError):
            return 0
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
