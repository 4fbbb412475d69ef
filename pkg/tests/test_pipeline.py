import json
import math

import numpy as np
import pytest

from uwqkd.endpoints import Bob, SessionConfig, epoch_seed
from uwqkd.link.transport import read_capture
from uwqkd.pipeline import RunConfig, Seeds, StageError, distill, load_manifest, simulate

GROUP_PARITY = 2304
TAG_BITS = 8


def small(tmp_path, name="run", **kw):
    base = dict(seed=3, pulses=2_000_000, total_db=10.0, groups_per_pa=2,
                epoch_frames=1 << 19, output_dir=str(tmp_path / name))
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipe")
    return simulate(small(tmp), capture=True)


def test_keys_identical_and_nonempty(run):
    m = run.manifest
    assert run.keys_identical and m["keys_identical"]
    assert m["status"] == "ok" and m["key_bits"] > 0
    assert m["bob"]["key_bits"] == m["key_bits"]
    size = (run.run_dir / "alice_key.bin").stat().st_size
    assert size == math.ceil(m["key_bits"] / 8)
    assert m["key_bits"] == sum(b["m_out"] for b in m["blocks"])


def test_ledger_accounting(run):
    m = run.manifest
    groups = m["groups_ok"] + m["groups_failed"]
    assert groups >= 2
    assert m["leaked_bits"] == GROUP_PARITY * groups + TAG_BITS * len(m["blocks"])
    assert m["ledger"]["SYNDROME"] == GROUP_PARITY * groups
    assert m["ledger"]["TAG"] == TAG_BITS * len(m["blocks"])
    assert m["ledger"]["BASIS_ANNOUNCE"] > 0 and m["ledger"]["DISCLOSE_SELECT"] > 0


def test_run_directory_contents(run):
    d = run.run_dir
    for name in ("frames.bin", "events.bin", "tallies.csv", "alice_key.bin", "bob_key.bin",
                 "manifest.json", "link_capture.bin"):
        assert (d / name).exists(), name
    header = (d / "tallies.csv").read_text().splitlines()[0].split(",")
    assert header[:6] == ["Qu", "Qv", "Q0", "Eu", "Ev", "E0"]
    m = json.loads((d / "manifest.json").read_text())
    assert m["seeds"]["master"] == 3 and m["channel"]["total_db"] == pytest.approx(10.0)


def test_capture_holds_whole_transcript(run):
    rec = read_capture(run.run_dir / "link_capture.bin")
    sent = [f for d, _, f in rec if d == ">"]
    received = [f for d, _, f in rec if d == "<"]
    assert sent[0].msg_type == 1 and sent[-1].msg_type == 2  # START ... STOP
    assert received[-1].msg_type == 2
    assert sum(f.msg_type == 5 for f in sent) == run.manifest["groups_ok"] + \
        run.manifest["groups_failed"]


def test_distill_reproduces_from_manifest(run, tmp_path):
    cfg, seeds = load_manifest(run.run_dir)
    assert seeds == Seeds.derive(3)
    again = distill(run.run_dir, cfg, seeds)
    assert again.manifest["alice_key_sha256"] == run.manifest["alice_key_sha256"]
    fresh = simulate(small(tmp_path, "again"))
    assert fresh.manifest["alice_key_sha256"] == run.manifest["alice_key_sha256"]


def test_socket_transport_matches_inproc(run):
    cfg, seeds = load_manifest(run.run_dir)
    cfg.transport = "socket"
    res = distill(run.run_dir, cfg, seeds)
    assert res.keys_identical
    assert res.manifest["alice_key_sha256"] == run.manifest["alice_key_sha256"]
    assert res.manifest["leaked_bits"] == run.manifest["leaked_bits"]


def test_zero_pulses(tmp_path, caplog):
    res = simulate(small(tmp_path, pulses=0))
    assert res.keys_identical and res.key_bits == 0
    assert res.manifest["warning"] == "no secure key"
    assert (res.run_dir / "alice_key.bin").read_bytes() == b""
    assert res.manifest["leaked_bits"] == 0


def test_high_loss_gives_no_key(tmp_path):
    res = simulate(small(tmp_path, total_db=33.5))
    assert res.key_bits == 0 and res.manifest["warning"] == "no secure key"
    assert res.keys_identical


@pytest.mark.parametrize("bad,stage", [({"u": 0.05}, "config"), ({"pulses": -1}, "config"),
                                        ({"water": "Mud"}, "config"),
                                        ({"transport": "carrier-pigeon"}, "config")])
def test_invalid_config_marks_run(tmp_path, bad, stage):
    cfg = small(tmp_path, **bad)
    with pytest.raises(StageError) as exc:
        simulate(cfg)
    assert exc.value.stage == stage
    m = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert m["status"] == "invalid" and m["failed_stage"] == stage
    assert f"[{stage}]" in m["error"]


def test_tag_mismatch_discards_block(tmp_path, monkeypatch):
    orig = Bob._decode

    def wrong_decode(self, groups, parity, qber):
        bits, ok = orig(self, groups, parity, qber)
        bits = bits.copy()
        bits[:, 0] ^= 1  # claim success on a wrong word
        return bits, ok

    monkeypatch.setattr(Bob, "_decode", wrong_decode)
    res = simulate(small(tmp_path))
    blocks = res.manifest["blocks"]
    assert blocks and not any(b["tag_ok"] for b in blocks)
    assert res.key_bits == 0 and res.keys_identical
    assert res.manifest["bob"]["key_bits"] == 0


def test_session_config_epochs():
    cfg = SessionConfig(seed=1, n_slots=10, first_slot=100, epoch_frames=4)
    assert cfg.n_epochs == 3
    assert [cfg.epoch_range(e) for e in range(3)] == [(100, 104), (104, 108), (108, 110)]
    assert SessionConfig(seed=1, n_slots=0).n_epochs == 0
    assert epoch_seed(1, 0) == epoch_seed(1, 0) != epoch_seed(1, 1)


def test_default_operating_point(tmp_path):
    res = simulate(RunConfig(seed=1, output_dir=str(tmp_path / "d")))
    m = res.manifest
    assert res.keys_identical and m["key_bits"] > 0
    assert m["channel"]["total_db"] == pytest.approx(22.8, abs=0.1)
    assert np.isclose(m["leaked_bits"], GROUP_PARITY * (m["groups_ok"] + m["groups_failed"])
                      + TAG_BITS * len(m["blocks"]))
