import sys
from pathlib import Path

import numpy as np
import pytest

from coalshap import (
    AdapterSpec,
    Coalition,
    StoreAdapter,
    SubprocessAdapter,
    SyntheticAdapter,
    probe,
    write_seg,
)
from coalshap.errors import (
    AdapterFailure,
    AdapterTimeout,
    MissingPrediction,
    ProtocolViolation,
)
from coalshap.synthetic import SubjectSpec, make_subject
from conftest import random_labelmap

STUB = Path(__file__).parent / "adapter_stub.py"


def stub_cmd(mode="echo"):
    return f"{sys.executable} {STUB} {mode}"


class TestStoreAdapter:
    def test_passthrough(self, tmp_path, rng):
        lm = random_labelmap(rng)
        (tmp_path / "subj01").mkdir()
        write_seg(lm, tmp_path / "subj01" / "15.seg")
        adapter = StoreAdapter(tmp_path)
        got = adapter.predict("subj01", None, Coalition(15, 4))
        assert got.labels.tobytes() == lm.labels.tobytes()

    def test_missing_prediction(self, tmp_path):
        adapter = StoreAdapter(tmp_path)
        with pytest.raises(MissingPrediction):
            adapter.predict("nope", None, Coalition(3, 4))

    def test_probe_missing_dir(self, tmp_path):
        report = probe(AdapterSpec(kind="store", model_id="m", store_dir=str(tmp_path / "x")))
        assert not report.reachable
        assert "store dir" in report.reason


class TestSyntheticAdapter:
    def test_empty_coalition_all_background(self):
        vol, gt, _ = make_subject(SubjectSpec("s", seed=1))
        adapter = SyntheticAdapter(label_set=(1,))
        pred = adapter.predict("s", vol, Coalition.empty(4))
        assert not pred.labels.any()

    def test_union_closed_form_dice(self):
        spec = SubjectSpec("s", region_sizes=(10, 20, 30, 40), seed=2)
        vol, gt, regions = make_subject(spec)
        adapter = SyntheticAdapter(label_set=(1,))
        pred = adapter.predict("s", vol, Coalition(0b0101, 4))  # channels 0, 2
        covered = len(regions[0]) + len(regions[2])
        total = sum(len(r) for r in regions)
        from coalshap import DICE, label_averaged_metric

        assert label_averaged_metric(DICE, pred, gt) == pytest.approx(
            2 * covered / (covered + total)
        )

    def test_monotone_in_coalition(self):
        vol, _, _ = make_subject(SubjectSpec("s", seed=3))
        adapter = SyntheticAdapter(label_set=(1,))
        fg = {}
        for bits in range(16):
            fg[bits] = adapter.predict("s", vol, Coalition(bits, 4)).labels != 0
        for s in range(16):
            for t in range(16):
                if s & t == s:  # S subset of T
                    assert np.all(fg[t][fg[s]])

    def test_deterministic(self):
        vol, _, _ = make_subject(SubjectSpec("s", seed=4))
        a = SyntheticAdapter(label_set=(1,), model_kind="noisy_union", seed=5, noise_rate=0.1)
        b = SyntheticAdapter(label_set=(1,), model_kind="noisy_union", seed=5, noise_rate=0.1)
        pa = a.predict("s", vol, Coalition(7, 4))
        pb = b.predict("s", vol, Coalition(7, 4))
        assert pa.labels.tobytes() == pb.labels.tobytes()

    def test_probe_always_reachable(self):
        report = probe(AdapterSpec(kind="synthetic", model_id="m"))
        assert report.reachable


class TestSubprocessAdapter:
    def test_probe_handshake(self):
        report = probe(
            AdapterSpec(kind="subprocess", model_id="m", command=stub_cmd())
        )
        assert report.reachable
        assert report.protocol == 1

    def test_predict_matches_in_process(self):
        vol, gt, _ = make_subject(SubjectSpec("s", seed=6))
        in_proc = SyntheticAdapter(label_set=(1,))
        sub = SubprocessAdapter(stub_cmd(), timeout_s=30)
        try:
            for bits in (0, 5, 15):
                want = in_proc.predict("s", vol, Coalition(bits, 4))
                got = sub.predict("s", vol, Coalition(bits, 4))
                assert got.labels.tobytes() == want.labels.tobytes()
        finally:
            sub.close()

    def test_timeout_fires(self):
        vol, _, _ = make_subject(SubjectSpec("s", seed=7))
        sub = SubprocessAdapter(stub_cmd("silent"), timeout_s=0.5)
        try:
            with pytest.raises(AdapterTimeout):
                sub.predict("s", vol, Coalition(1, 4))
        finally:
            sub.close()

    def test_protocol_mismatch(self):
        report = probe(
            AdapterSpec(kind="subprocess", model_id="m", command=stub_cmd("badproto"))
        )
        assert not report.reachable
        assert "handshake" in report.reason

    def test_missing_command(self):
        report = probe(
            AdapterSpec(kind="subprocess", model_id="m", command="/nonexistent/engine")
        )
        assert not report.reachable
