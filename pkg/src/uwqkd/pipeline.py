"""End-to-end runs: photon simulation, then the two endpoints distilling
keys over a classical link, with everything written to a run directory.

Run directory layout::

    frames.bin      Alice's frames (FRAME_DTYPE records)
    events.bin      Bob's detection events (EVENT_DTYPE records)
    tallies.csv     one row of sifting statistics
    alice_key.bin   final key, bits packed MSB first
    bob_key.bin
    manifest.json   config, seeds, per-block PA records, status
"""
from __future__ import annotations

import contextlib
import hashlib
import json
import logging
import multiprocessing as mp
import socket
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .channel import ChannelParams, parse_water
from .decoy import SourceParams
from .endpoints import Alice, Bob, EndpointResult, SessionConfig
from .link.session import Session
from .link.transport import FrameLink, InProcTransport, SocketTransport
from .photon_sim import DetectorModel, simulate_run
from .protocol import EventArray, FrameArray, Intensities, frame_stream
from .sifting import vacuum_monitor

log = logging.getLogger(__name__)

TALLY_COLUMNS = ("Qu", "Qv", "Q0", "Eu", "Ev", "E0", "Qu_gross", "Qv_gross", "Q0_gross",
                 "elapsed_s")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass
class RunConfig:
    seed: int
    pulses: int = 10_000_000
    water: str = "JerlovIII"
    length_m: float = 10.4
    eta_opt_db: float = 9.59
    total_db: float | None = None  # overrides length_m when set
    u: float = 0.8
    v: float = 0.1
    rep_rate: float = 20e6
    disclosure: float = 0.20
    q0_bps: float = 16.7
    e_det: float = 0.015
    epoch_frames: int = 1 << 22
    groups_per_pa: int = 256
    transport: str = "inproc"
    output_dir: str = "run"
    presets_file: str | None = None

    def validate(self) -> None:
        if self.pulses < 0:
            raise ValueError("pulses must be >= 0")
        if self.transport not in ("inproc", "socket"):
            raise ValueError(f"transport must be inproc or socket, not {self.transport!r}")
        if self.q0_bps < 0:
            raise ValueError("q0_bps must be >= 0")
        if self.groups_per_pa < 1:
            raise ValueError("groups_per_pa must be >= 1")
        # the constructors below carry the per-module checks
        self.channel()
        self.source()
        Intensities(self.u, self.v)
        self.session(0)

    def source(self) -> SourceParams:
        return SourceParams(rep_rate_hz=self.rep_rate, u=self.u, v=self.v,
                            disclosure=self.disclosure)

    def channel(self) -> ChannelParams:
        presets = None
        if self.presets_file:
            from .channel import PRESETS, load_presets
            presets = {**PRESETS, **load_presets(self.presets_file)}
        src = self.source()
        ch = ChannelParams(water=parse_water(self.water, presets), length_m=self.length_m,
                           eta_opt_db=self.eta_opt_db, y0=src.y0_from_rate(self.q0_bps),
                           e_det=self.e_det)
        if self.total_db is not None:
            ch = ch.with_total_db(self.total_db)
        return ch

    def session(self, session_seed: int) -> SessionConfig:
        return SessionConfig(seed=session_seed, n_slots=self.pulses,
                             epoch_frames=self.epoch_frames, disclosure=self.disclosure,
                             u=self.u, v=self.v, rep_rate_hz=self.rep_rate,
                             groups_per_pa=self.groups_per_pa)

    @classmethod
    def from_json(cls, path: str | Path, **overrides) -> "RunConfig":
        data = json.loads(Path(path).read_text())
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


@dataclass(frozen=True)
class Seeds:
    master: int
    frames: int
    channel: int
    session: int

    @classmethod
    def derive(cls, master: int) -> "Seeds":
        st = np.random.SeedSequence(master).generate_state(3, np.uint64)
        return cls(master, *(int(x) for x in st))


@dataclass
class RunResult:
    run_dir: Path
    alice: EndpointResult | None
    bob: EndpointResult | None
    manifest: dict = field(default_factory=dict)

    @property
    def keys_identical(self) -> bool:
        return (self.run_dir / "alice_key.bin").read_bytes() == \
            (self.run_dir / "bob_key.bin").read_bytes()

    @property
    def key_bits(self) -> int:
        return int(self.manifest.get("key_bits", 0))


# --- endpoint drivers -----------------------------------------------------

def _serve_bob_socket(port: int, cfg_dict: dict, run_dir: str, timeout: float):
    """Bob's process: read events, connect to Alice, distill, write key."""
    run = Path(run_dir)
    events = EventArray.load(run / "events.bin")
    link = FrameLink(SocketTransport.connect("127.0.0.1", port), timeout=timeout)
    try:
        res = Bob(Session(link, "bob"), SessionConfig(**cfg_dict), events).run()
    finally:
        link.close()
    write_key(run / "bob_key.bin", res.key)
    (run / "bob_result.json").write_text(json.dumps(res.manifest(), indent=1))


def run_endpoints_inproc(cfg: SessionConfig, frames: FrameArray, events: EventArray, *,
                         capture: str | Path | None = None, timeout: float = 120.0,
                         transport_wrap=None) -> tuple[EndpointResult, EndpointResult]:
    """Alice on the calling thread, Bob on a worker thread."""
    ta, tb = InProcTransport.pair()
    if transport_wrap is not None:
        ta, tb = transport_wrap(ta), transport_wrap(tb)
    la = FrameLink(ta, capture=capture, timeout=timeout)
    lb = FrameLink(tb, timeout=timeout)
    out: dict = {}

    def bob_main():
        try:
            out["bob"] = Bob(Session(lb, "bob"), cfg, events).run()
        except BaseException as exc:  # surfaced on the main thread
            out["bob_error"] = exc
            lb.close()

    th = threading.Thread(target=bob_main, name="bob", daemon=True)
    th.start()
    try:
        alice = Alice(Session(la, "alice"), cfg, frames).run()
    except BaseException:
        la.close()
        th.join(timeout)
        if "bob_error" in out:
            raise out["bob_error"]
        raise
    th.join(timeout)
    if "bob_error" in out:
        raise out["bob_error"]
    if th.is_alive():
        raise TimeoutError("bob did not finish")
    return alice, out["bob"]


def run_endpoints_socket(cfg: SessionConfig, frames: FrameArray, run_dir: Path, *,
                         capture: str | Path | None = None, timeout: float = 120.0
                         ) -> tuple[EndpointResult, EndpointResult | None]:
    """Alice here, Bob in a child process reading ``events.bin``."""
    srv = socket.create_server(("127.0.0.1", 0))
    port = srv.getsockname()[1]
    ctx = mp.get_context("spawn")
    proc = ctx.Process(target=_serve_bob_socket, args=(port, asdict(cfg), str(run_dir), timeout),
                       name="bob")
    proc.start()
    try:
        srv.settimeout(timeout)
        conn, _ = srv.accept()
    finally:
        srv.close()
    link = FrameLink(SocketTransport(conn), capture=capture, timeout=timeout)
    try:
        alice = Alice(Session(link, "alice"), cfg, frames).run()
    finally:
        link.close()
        proc.join(timeout)
    if proc.exitcode != 0:
        raise RuntimeError(f"bob process exited with code {proc.exitcode}")
    return alice, None


# --- outputs --------------------------------------------------------------

def write_key(path: Path, bits: np.ndarray) -> None:
    Path(path).write_bytes(np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes())


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_tallies(path: Path, tallies) -> None:
    if tallies.elapsed_s > 0:
        path.write_text(tallies.to_csv())
    else:
        path.write_text(",".join(TALLY_COLUMNS) + "\n")


def distill(run_dir: str | Path, cfg: RunConfig, seeds: Seeds, *,
            frames: FrameArray | None = None, events: EventArray | None = None,
            capture: bool = False) -> RunResult:
    """Run the two endpoints on the recorded frames/events in ``run_dir``."""
    run = Path(run_dir)
    intens = Intensities(cfg.u, cfg.v)
    with stage("load"):
        frames = frames if frames is not None else FrameArray.load(run / "frames.bin", intens)
        if events is None:
            events = EventArray.load(run / "events.bin")
    scfg = replace(cfg.session(seeds.session), n_slots=len(frames),
                   first_slot=int(frames.slot[0]) if len(frames) else 0)
    cap = run / "link_capture.bin" if capture else None
    if cap is not None and cap.exists():
        cap.unlink()
    with stage("distill"):
        if cfg.transport == "socket":
            alice, bob = run_endpoints_socket(scfg, frames, run, capture=cap)
        else:
            alice, bob = run_endpoints_inproc(scfg, frames, events, capture=cap)
            write_key(run / "bob_key.bin", bob.key)
        write_key(run / "alice_key.bin", alice.key)
    with stage("report"):
        write_tallies(run / "tallies.csv", alice.tallies)
        bob_manifest = bob.manifest() if bob is not None else \
            json.loads((run / "bob_result.json").read_text())
        manifest = {
            "status": "ok",
            "config": asdict(cfg),
            "seeds": asdict(seeds),
            "session": asdict(scfg),
            "key_bits": int(len(alice.key)),
            "alice_key_sha256": _sha256(run / "alice_key.bin"),
            "bob_key_sha256": _sha256(run / "bob_key.bin"),
            "leaked_bits": alice.leaked_bits,
            "ledger": alice.ledger,
            "groups_ok": alice.groups_ok,
            "groups_failed": alice.groups_failed,
            "blocks": alice.manifest()["blocks"],
            "bob": {k: bob_manifest[k] for k in ("key_bits", "groups_ok", "groups_failed")},
        }
        if alice.tallies.elapsed_s > 0:
            manifest["tallies"] = alice.tallies.as_row()
            manifest["Q0_bps"] = vacuum_monitor(alice.tallies)
        manifest["keys_identical"] = manifest["alice_key_sha256"] == manifest["bob_key_sha256"]
        if len(alice.key) == 0:
            manifest["warning"] = "no secure key"
            log.warning("no secure key produced")
        (run / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return RunResult(run, alice, bob, manifest)


def _mark_invalid(run: Path, cfg: RunConfig, seeds: Seeds, err: StageError) -> None:
    run.mkdir(parents=True, exist_ok=True)
    (run / "manifest.json").write_text(json.dumps({
        "status": "invalid", "failed_stage": err.stage, "error": str(err),
        "config": asdict(cfg), "seeds": asdict(seeds),
    }, indent=1, sort_keys=True))


def simulate(cfg: RunConfig, *, capture: bool = False) -> RunResult:
    """Generate frames and events, then distill. Any failure leaves a
    manifest with ``status: invalid`` and re-raises as :class:`StageError`."""
    seeds = Seeds.derive(cfg.seed)
    run = Path(cfg.output_dir)
    try:
        with stage("config"):
            cfg.validate()
            run.mkdir(parents=True, exist_ok=True)
            ch = cfg.channel()
        t0 = time.perf_counter()
        with stage("source"):
            frames = frame_stream(seeds.frames, cfg.pulses, intensities=Intensities(cfg.u, cfg.v))
            frames.save(run / "frames.bin")
        with stage("photon-sim"):
            if len(frames):
                events = simulate_run(frames, ch, DetectorModel.from_channel(ch), seeds.channel)
            else:
                events = EventArray.empty()
            events.save(run / "events.bin")
        log.info("simulated %d pulses in %.2f s", len(frames), time.perf_counter() - t0)
        res = distill(run, cfg, seeds, frames=frames, events=events, capture=capture)
    except StageError as err:
        _mark_invalid(run, cfg, seeds, err)
        raise
    res.manifest["channel"] = {"water": ch.water.name, "c": ch.water.c, "length_m": ch.length_m,
                               "total_db": ch.total_db, "eta": ch.eta, "y0": ch.y0}
    (run / "manifest.json").write_text(json.dumps(res.manifest, indent=1, sort_keys=True))
    return res


def load_manifest(run_dir: str | Path) -> tuple[RunConfig, Seeds]:
    m = json.loads((Path(run_dir) / "manifest.json").read_text())
    return RunConfig(**m["config"]), Seeds(**m["seeds"])
