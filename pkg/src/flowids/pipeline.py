"""End-to-end wiring shared by the CLI and the acceptance checks."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import cnn, evaluator, image_codec, sds_policy, traffic_synth, weibull
from .features import FeatureVector, Label, write_feature_csv
from .flow_meter import extract_features, meter
from .image_codec import ROWS_PER_IMAGE, NormalizationSpec


@dataclass
class ImageDataset:
    images: list
    spec: NormalizationSpec
    split: cnn.Split


def plan_chunks(rows: Sequence[FeatureVector]) -> list[tuple[Label, list[int]]]:
    """Row indices of every full 1 500-row chunk per label stream (Benign first)."""
    chunks = []
    for label in (Label.BENIGN, Label.ANOMALY):
        idx = [i for i, r in enumerate(rows) if r.label == label]
        for c in range(len(idx) // ROWS_PER_IMAGE):
            chunks.append((label, idx[c * ROWS_PER_IMAGE:(c + 1) * ROWS_PER_IMAGE]))
    return chunks


def build_image_dataset(rows: Sequence[FeatureVector], config: cnn.TrainConfig) -> ImageDataset:
    """Split at image granularity, learn normalization on training rows only, encode all."""
    chunks = plan_chunks(rows)
    by_label: dict = {}
    for i, (label, _) in enumerate(chunks):
        by_label.setdefault(label, []).append(i)
    split = cnn.stratified_split(by_label, config)
    if not split.train:
        raise ValueError("not enough rows for a single training image")
    train_rows = [rows[j] for i in split.train for j in chunks[i][1]]
    spec = image_codec.learn_normalization(train_rows)
    images = []
    label_pos = {Label.BENIGN: 0, Label.ANOMALY: 0}
    for label, idx in chunks:
        img = image_codec.encode([rows[j] for j in idx], spec, first_row=label_pos[label])[0]
        label_pos[label] += ROWS_PER_IMAGE
        images.append(img)
    return ImageDataset(images, spec, split)


def label_flows(flows, truth: dict) -> list[FeatureVector]:
    return [extract_features(f, truth.get(f.key.canonical(), Label.UNLABELED)) for f in flows]


# ---------------------------------------------------------------- scenario pipeline


@dataclass
class PipelineSettings:
    scenario: str = "flood"
    seed: int = 7
    images: int = 40
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 0.01
    momentum: float = 0.9
    window: int = 100
    cycles: int = 3
    interval_s: int = 600
    cycle_flows: int = 1600
    attack_cycle: int = 2
    span_s: float = 3600.0


def _attack_mix(scenario: str):
    if scenario == "mixed":
        return traffic_synth.DEFAULT_ATTACK_MIX
    return ((traffic_synth.AttackKind.parse(scenario), 1.0),)


def _derive(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


def scripted_packets(settings: PipelineSettings):
    """Traffic source for the schedule: benign every cycle, attack in ``attack_cycle`` only."""
    mix = _attack_mix(settings.scenario)
    active_s = settings.interval_s * 0.6

    def packets_for(cycle, start_us, end_us):
        parts = [traffic_synth.gen_benign(settings.cycle_flows, seed=_derive(settings.seed, 100, cycle),
                                          start_us=start_us, span_s=active_s,
                                          first_index=cycle * 1_000_000)]
        if cycle == settings.attack_cycle:
            for j, (kind, w) in enumerate(mix):
                n = max(1, int(settings.cycle_flows * w))
                parts.append(traffic_synth.gen_attack(kind, n, seed=_derive(settings.seed, 200, cycle, j),
                                                      start_us=start_us, span_s=active_s,
                                                      first_index=cycle * 1_000_000))
        return traffic_synth.merge(*parts).packets

    return packets_for


def run_pipeline(out_dir: str, settings: PipelineSettings, progress=None) -> dict:
    """synth -> meter -> features -> baseline -> images -> CNN -> evaluate -> SDS schedule."""
    say = progress or (lambda msg: None)
    os.makedirs(out_dir, exist_ok=True)
    n_total = settings.images * ROWS_PER_IMAGE
    n_benign, n_anomaly = traffic_synth.default_mix_counts(n_total)
    flows = traffic_synth.gen_mixed_flows(n_benign, n_anomaly, _derive(settings.seed, 1),
                                          span_s=settings.span_s, attack_mix=_attack_mix(settings.scenario))
    traffic = traffic_synth.SynthTraffic(traffic_synth.render_packets(flows), flows)
    say(f"synth: {len(traffic.packets)} packets, {len(flows)} flows")
    metered = meter(traffic.packets)
    rows = label_flows(metered, traffic.truth())
    path = lambda name: os.path.join(out_dir, name)
    with open(path("features.csv"), "w", newline="") as fh:
        write_feature_csv(rows, fh)
    say(f"meter: {len(rows)} feature rows")

    benign_iats = [r.flow_iat_mean / 1e6 for r in rows if r.label == Label.BENIGN]
    baseline = weibull.fit_weibull(benign_iats)
    with open(path("baseline.json"), "w") as fh:
        weibull.save_baseline(baseline, sum(1 for x in benign_iats if x > 0),
                              sds_policy.iso_time(0), fh)
    say(f"baseline: shape={baseline.shape:.4f} scale={baseline.scale:.4f}")

    config = cnn.TrainConfig(seed=settings.seed, epochs=settings.epochs, batch_size=settings.batch_size,
                             learning_rate=settings.learning_rate, momentum=settings.momentum)
    ds = build_image_dataset(rows, config)
    image_codec.write_images(ds.images, path("images"))
    with open(path("norm.json"), "w") as fh:
        ds.spec.save(fh)
    say(f"encode: {len(ds.images)} images")

    result = cnn.train(ds.images, config)
    with open(path("model.ckpt"), "wb") as fh:
        cnn.save_checkpoint(result.model, fh)
    with open(path("train_log.csv"), "w", newline="") as fh:
        cnn.write_train_log(result.log, fh)
    say(f"train: best epoch {result.best_epoch}")

    test = [ds.images[i] for i in result.split.test] or [ds.images[i] for i in result.split.val]
    scores = cnn.predict_scores(result.model, test)
    truth = [im.label for im in test]
    ids = [f"{im.label.value.lower()}@{im.first_row}" for im in test]
    with open(path("predictions.csv"), "w", newline="") as fh:
        evaluator.write_predictions_csv(ids, scores, truth, fh)
    report = evaluator.evaluate(scores, truth)
    with open(path("report.json"), "w") as fh:
        evaluator.write_report_json(report, fh)
    with open(path("report.txt"), "w") as fh:
        fh.write(evaluator.format_table(report))
    with open(path("pr_curve.csv"), "w", newline="") as fh:
        evaluator.write_pr_curve_csv(report.pr_curve, fh)

    store_path = path("policies.jsonl")
    if os.path.exists(store_path):
        os.remove(store_path)
    clock = sds_policy.SimClock(0)
    store = sds_policy.PolicyStore(store_path, clock)
    sched = sds_policy.ScheduleConfig(
        baseline=baseline, store=store, packets_for=scripted_packets(settings), window=settings.window,
        model=result.model, norm=ds.spec, vnf=sds_policy.FileVnfManager(path("ruleset.json")))
    run_log = sds_policy.run_schedule(sched, settings.interval_s * 1_000_000, settings.cycles, clock)
    if not store.history:
        # an empty rule set is still published so downstream always finds one
        sds_policy.push_rules(store, sched.vnf)
    with open(path("run_log.csv"), "w", newline="") as fh:
        sds_policy.write_run_log(run_log, fh)
    say(f"schedule: {len(store.policies())} policies, ruleset v{store.current_version}")
    return {"report": report, "run_log": run_log, "policies": store.policies(), "baseline": baseline,
            "train": result, "dataset": ds}
