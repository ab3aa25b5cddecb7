import io

import numpy as np
import pytest

from gazeintent import dataio, synth
from gazeintent.errors import ConfigError


def short_cfg(**kw):
    kw.setdefault("session_len", 20.0)
    return synth.SynthConfig(**kw)


def mouse_speeds_by_label(session):
    """Per-interval mean cursor speed, split into (reading, scanning) pools."""
    mt = np.array([m.t for m in session.mouse])
    sp = np.hypot(np.diff([m.mx for m in session.mouse]),
                  np.diff([m.my for m in session.mouse])) / np.diff(mt)
    mid = (mt[:-1] + mt[1:]) / 2
    read, scan = [], []
    for iv in session.labels:
        sel = (mid >= iv.start) & (mid < iv.end)
        (read if iv.label == "reading" else scan).extend(sp[sel])
    return read, scan


class TestDeterminism:
    def test_same_seed_same_bytes(self, tmp_path):
        for name in ("a", "b"):
            dataio.write_session(
                synth.generate_session(short_cfg(seed=7), 2, "text"),
                tmp_path / name)
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_different_seed_differs(self):
        a = synth.generate_session(short_cfg(seed=0), 0, "text")
        b = synth.generate_session(short_cfg(seed=1), 0, "text")
        assert a.gaze != b.gaze

    def test_subjects_and_tasks_differ(self):
        base = synth.generate_session(short_cfg(), 0, "text")
        assert synth.generate_session(short_cfg(), 1, "text").gaze != base.gaze
        assert synth.generate_session(short_cfg(), 0, "webpage").gaze != base.gaze

    def test_dataset_layout(self, tmp_path):
        paths = synth.generate_dataset(short_cfg(n_subjects=2, session_len=5.0),
                                       tmp_path)
        assert [p.name for p in paths] == [
            "S00_text.session", "S00_webpage.session",
            "S01_text.session", "S01_webpage.session"]
        for p in paths:
            session = dataio.parse_session(p)  # validates on parse
            assert session.labels[0].start == 0.0
            assert session.labels[-1].end == pytest.approx(5.0)


class TestContracts:
    def test_output_parses_cleanly(self, tmp_path):
        session = synth.generate_session(short_cfg(), 0, "text")
        p = tmp_path / "s.session"
        dataio.write_session(session, p)
        back = dataio.parse_session(p)
        assert back.gaze == session.gaze
        assert back.labels == session.labels

    def test_sample_counts(self):
        session = synth.generate_session(short_cfg(session_len=10.0), 0, "text")
        assert len(session.gaze) == 10 * dataio.GAZE_RATE
        assert len(session.mouse) == 10 * dataio.MOUSE_RATE
        assert session.labels[0].label == "reading"

    def test_mouse_faster_during_scanning(self):
        # behavioral contract, aggregated to tame per-session variance
        read, scan = [], []
        for seed in range(20):
            r, s = mouse_speeds_by_label(
                synth.generate_session(short_cfg(seed=seed), 0, "text"))
            read.extend(r)
            scan.extend(s)
        assert np.mean(scan) > 2.0 * np.mean(read)

    def test_reading_majority_of_time(self):
        fracs = []
        for seed in range(20):
            session = synth.generate_session(short_cfg(seed=seed), 0, "text")
            total = sum(iv.end - iv.start for iv in session.labels)
            rd = sum(iv.end - iv.start for iv in session.labels
                     if iv.label == "reading")
            fracs.append(rd / total)
        assert 0.65 <= np.mean(fracs) <= 0.85

    def test_missing_rate_tracks_config(self):
        # expected fraction = burst rate x mean burst length / sample rate
        cfg0 = short_cfg()
        expected = (cfg0.dropout_burst_rate
                    * (cfg0.dropout_burst_len_ms / 1000.0 * dataio.GAZE_RATE)
                    / dataio.GAZE_RATE)
        fracs = []
        for seed in range(20):
            session = synth.generate_session(short_cfg(seed=seed), 0, "text")
            n = len(session.gaze)
            miss = sum(1 for g in session.gaze if g.lx is None)
            miss += sum(1 for g in session.gaze if g.rx is None)
            fracs.append(miss / (2 * n))
        assert np.mean(fracs) == pytest.approx(expected, rel=0.20)

    def test_reading_sweeps_back_left(self):
        # compensated gaze during reading is a sawtooth: many small rightward
        # steps, occasional large leftward return sweeps
        session = synth.generate_session(short_cfg(seed=3), 0, "text")
        m = session.meta.magnification
        cx = np.array([g.vx + (g.lx if g.lx is not None else g.rx or 0.0) / m
                       for g in session.gaze])
        t = np.array([g.t for g in session.gaze])
        labels = np.array([dataio.label_at(session.labels, ti) for ti in t])
        dx = np.diff(cx)[labels[:-1] == dataio.READING]
        moves = dx[np.abs(dx) > 10.0]  # above the tracker-noise floor
        assert (moves > 0).mean() > 0.6
        assert moves.min() < -100.0  # at least one return sweep

    def test_no_magnification_pins_viewport(self):
        session = synth.generate_session(short_cfg(magnification=1.0), 0, "text")
        assert all(g.vx == 0.0 and g.vy == 0.0 for g in session.gaze)

    def test_coordinates_stay_on_screen(self):
        session = synth.generate_session(short_cfg(seed=5), 0, "webpage")
        w, h = session.meta.screen_w, session.meta.screen_h
        for g in session.gaze:
            for c, dim in ((g.lx, w), (g.ly, h), (g.rx, w), (g.ry, h)):
                assert c is None or 0.0 <= c <= dim

    def test_webpage_uses_shorter_reading_segments(self):
        reads = {"text": [], "webpage": []}
        for seed in range(10):
            for task in ("text", "webpage"):
                session = synth.generate_session(short_cfg(seed=seed), 0, task)
                reads[task].extend(iv.end - iv.start for iv in session.labels
                                   if iv.label == "reading")
        assert np.mean(reads["webpage"]) < np.mean(reads["text"])


class TestValidation:
    def test_bad_magnification(self):
        with pytest.raises(ConfigError):
            synth.generate_session(short_cfg(magnification=0.9), 0)

    def test_too_short_session(self):
        with pytest.raises(ConfigError):
            synth.generate_session(short_cfg(session_len=0.5), 0)

    def test_nonpositive_segment_length(self):
        with pytest.raises(ConfigError):
            synth.generate_session(short_cfg(read_seg_s=0.0), 0)
