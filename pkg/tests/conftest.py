import os

import pytest

from flowids.packets import PacketRecord, flags_from_str

DATA = os.path.join(os.path.dirname(__file__), "data")


def pkt(ts, src="10.0.0.1", dst="10.0.0.2", sport=40000, dport=80, proto=6, flags=""):
    return PacketRecord(ts, src, dst, sport, dport, proto, flags_from_str(flags))


@pytest.fixture
def data_dir():
    return DATA


# Desk-scale corpus shared by the classification acceptance check and the
# training-curve test: 1 000 images at the default class balance, seed 7.
DESK_FLOWS = 1_501_500
DESK_SEED = 7
DESK_EPOCHS = 20


@pytest.fixture(scope="session")
def desk_training():
    import time

    from flowids import cnn, traffic_synth
    from flowids.pipeline import build_image_dataset

    t0 = time.perf_counter()
    n_benign, n_anomaly = traffic_synth.default_mix_counts(DESK_FLOWS)
    rows = traffic_synth.corpus_rows(n_benign, n_anomaly, seed=DESK_SEED)
    config = cnn.TrainConfig(seed=DESK_SEED, epochs=DESK_EPOCHS)
    ds = build_image_dataset(rows, config)
    del rows
    t1 = time.perf_counter()
    result = cnn.train(ds.images, config)
    t2 = time.perf_counter()
    return {"dataset": ds, "result": result, "build_s": t1 - t0, "train_s": t2 - t1}


# ---------------------------------------------------------------- acceptance summary

_acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
        detail = getattr(item, "acceptance_detail", "")
        if rep.skipped and isinstance(rep.longrepr, tuple):
            detail = rep.longrepr[2]
        _acceptance[n] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        status, title, detail = _acceptance[n]
        line = f"[{status}] {n}. {title}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)
