"""Command-line interface.

Two modes of use:

* Whole runs: ``itstore run scenario.yaml`` executes a configured scenario
  end to end and exits with the aggregate verdict; ``itstore bench``
  sweeps payload sizes and writes timing tables.

* Single steps against a persistent workspace: ``register``,
  ``reconstruct``, ``verify``, ``refute`` and ``renew`` operate on a
  directory that holds the per-role stores, the simulated key network and
  the session bookkeeping, so separate invocations compose into one
  protocol history.  ``inspect`` prints any store, workspace or
  transcript in readable form.

Exit codes: 0 success, 1 verification-failure verdict, 2 protocol abort,
3 configuration error, 4 scenario expectations contradicted.  The master
seed comes from --seed, else the ITSTORE_SEED environment variable, else
the scenario file (default "itstore").
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import yaml

from .config import ScenarioConfig, derive_payload, load_scenario, parse_scenario
from .errors import (ConfigurationError, ItstoreError, ProtocolError,
                     TamperDetectedError)
from .field import PrimeField
from .harness import (COMPARE_EXPONENT, EXIT_ABORT, EXIT_CONFIG, EXIT_FAIL,
                      EXIT_SUCCESS, run_bench, run_scenario)
from .keynet import KeyNetwork, LinkSpec, NetworkTopology, NodeSpec
from .mac import MacScheme
from .protocol import Outcome, RolePlacement, TpvSession
from .renewal import group_by_name
from .spss import SpssParams, data_block_count

_WAIT_STEP_MS = 60_000
_STATE_FILE = "state.json"


# ------------------------------------------------------------ seed & config


def _resolve_seed(cli_seed: "str | None") -> "str | None":
    if cli_seed:
        return cli_seed
    return os.environ.get("ITSTORE_SEED") or None


def _load_config(path: "str | None", seed_override: "str | None",
                 name_default: str = "cli") -> ScenarioConfig:
    """Load a scenario file (or defaults) with the seed resolved first,
    so seed-derived payloads stay consistent with the effective seed."""
    if path is None:
        data = {}
        name = name_default
    else:
        p = Path(path)
        try:
            data = yaml.safe_load(p.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigurationError("cannot read scenario file %s: %s" % (p, exc))
        except yaml.YAMLError as exc:
            raise ConfigurationError("scenario file %s is not valid YAML: %s"
                                     % (p, exc))
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigurationError("scenario: expected a mapping")
        name = p.stem
    if seed_override:
        data = dict(data, seed=seed_override)
    return parse_scenario(data, name_default=name)


# --------------------------------------------------------------- workspace


def _topology_to_json(topology: NetworkTopology) -> dict:
    return {
        "nodes": [dataclasses.asdict(n) for n in topology.nodes],
        "links": [dataclasses.asdict(l) for l in topology.links],
    }


def _topology_from_json(data: dict) -> NetworkTopology:
    return NetworkTopology(
        nodes=tuple(NodeSpec(**row) for row in data["nodes"]),
        links=tuple(LinkSpec(**row) for row in data["links"]),
    )


class Workspace:
    """A directory holding one persistent protocol deployment."""

    def __init__(self, root: Path, session: TpvSession, meta: dict):
        self.root = root
        self.session = session
        self.meta = meta

    @classmethod
    def initialize(cls, root, config: ScenarioConfig) -> "Workspace":
        root = Path(root)
        if (root / _STATE_FILE).exists():
            raise ConfigurationError(
                "workspace %s already exists; omit --config to reuse it" % root)
        root.mkdir(parents=True, exist_ok=True)
        seed = config.seed.encode("utf-8")
        net = KeyNetwork(config.topology, master_seed=seed)
        net.advance(config.warmup_ms)
        session = TpvSession(
            root / "stores", net=net, params=config.params,
            scheme=config.scheme, k=config.k, placement=config.placement,
            clock_skews=config.clock_skews,
            renewal_group=config.renewal_group,
            cs_tag_bits=config.cs_tag_bits, master_seed=seed,
            advance_on_exhaustion_ms=_WAIT_STEP_MS)
        meta = {
            "version": 1,
            "seed": config.seed,
            "scheme": config.scheme.value,
            "k": config.k,
            "cs_tag_bits": config.cs_tag_bits,
            "t_sh": config.params.t_sh,
            "n_sh": config.params.n_sh,
            "field_q": str(config.params.field.q),
            "renewal_group": (config.renewal_group.name
                              if config.renewal_group else None),
            "placement": dataclasses.asdict(config.placement),
            "clock_skews": dict(config.clock_skews),
            "topology": _topology_to_json(config.topology),
        }
        return cls(root, session, meta)

    @classmethod
    def load(cls, root) -> "Workspace":
        root = Path(root)
        state_path = root / _STATE_FILE
        if not state_path.exists():
            raise ConfigurationError(
                "%s is not a workspace (no %s); create one with "
                "`itstore register --workspace %s --config ...`"
                % (root, _STATE_FILE, root))
        state = json.loads(state_path.read_text(encoding="utf-8"))
        meta = state["meta"]
        topology = _topology_from_json(meta["topology"])
        seed = meta["seed"].encode("utf-8")
        net = KeyNetwork.from_state(state["network"], topology, seed)
        placement = RolePlacement(
            owner=meta["placement"]["owner"],
            end_user=meta["placement"]["end_user"],
            calculator=meta["placement"]["calculator"],
            verifier=meta["placement"]["verifier"],
            holders=tuple(meta["placement"]["holders"]))
        params = SpssParams(t_sh=meta["t_sh"], n_sh=meta["n_sh"],
                            field=PrimeField(int(meta["field_q"])))
        group = (group_by_name(meta["renewal_group"])
                 if meta["renewal_group"] else None)
        session = TpvSession(
            root / "stores", net=net, params=params,
            scheme=MacScheme(meta["scheme"]), k=meta["k"],
            placement=placement, clock_skews=meta["clock_skews"],
            renewal_group=group, cs_tag_bits=meta["cs_tag_bits"],
            master_seed=seed, advance_on_exhaustion_ms=_WAIT_STEP_MS)
        for sid_hex, (t1, length) in state["receipts"].items():
            session.owner_receipts[bytes.fromhex(sid_hex)] = (t1, length)
        for sid_hex, (t1, data_hex) in state["end_user"].items():
            session.end_user_received[bytes.fromhex(sid_hex)] = (
                bytes.fromhex(data_hex), t1)
        return cls(root, session, meta)

    def save(self) -> None:
        session = self.session
        state = {
            "meta": self.meta,
            "network": session.net.to_state(),
            "receipts": {sid.hex(): [t1, length]
                         for sid, (t1, length)
                         in sorted(session.owner_receipts.items())},
            "end_user": {sid.hex(): [t1, data.hex()]
                         for sid, (data, t1)
                         in sorted(session.end_user_received.items())},
        }
        (self.root / _STATE_FILE).write_text(
            json.dumps(state, indent=1, sort_keys=True), encoding="utf-8")
        if session.transcript:
            with open(self.root / "transcript.log", "a", encoding="utf-8") as fh:
                fh.write(session.transcript_text())
        if session.verdicts:
            with open(self.root / "verdicts.log", "a", encoding="utf-8") as fh:
                for v in session.verdicts:
                    fh.write("sid=%s phase=%s outcome=%s detail=%s\n"
                             % (v.secret_id.hex(), v.phase.value,
                                v.outcome.value, v.detail))


def _workspace_for(args, allow_init: bool) -> Workspace:
    root = Path(args.workspace)
    exists = (root / _STATE_FILE).exists()
    if exists:
        if getattr(args, "config", None):
            raise ConfigurationError(
                "workspace %s already exists; omit --config to reuse it" % root)
        return Workspace.load(root)
    if not allow_init:
        raise ConfigurationError(
            "%s is not a workspace (no %s); create one with "
            "`itstore register --workspace %s ...`" % (root, _STATE_FILE, root))
    config = _load_config(getattr(args, "config", None),
                          _resolve_seed(args.seed))
    return Workspace.initialize(root, config)


# ----------------------------------------------------------- input helpers


def _payload_from_args(args, seed: str) -> bytes:
    given = [name for name, val in (("--data", args.data),
                                    ("--text", args.text),
                                    ("--size-kb", args.size_kb))
             if val is not None]
    if len(given) != 1:
        raise ConfigurationError(
            "give exactly one of --data, --text, --size-kb (got: %s)"
            % (", ".join(given) or "none"))
    if args.data is not None:
        try:
            return Path(args.data).read_bytes()
        except OSError as exc:
            raise ConfigurationError("cannot read --data file: %s" % exc)
    if args.text is not None:
        if not args.text:
            raise ConfigurationError("--text must not be empty")
        return args.text.encode("utf-8")
    if args.size_kb <= 0:
        raise ConfigurationError("--size-kb must be positive")
    return derive_payload(seed + "|cli-payload", args.size_kb * 1024)


def _claim_from_args(args) -> "bytes | None":
    if args.data is not None and args.text is not None:
        raise ConfigurationError("give at most one of --data, --text")
    if args.data is not None:
        try:
            return Path(args.data).read_bytes()
        except OSError as exc:
            raise ConfigurationError("cannot read --data file: %s" % exc)
    if args.text is not None:
        return args.text.encode("utf-8")
    return None


def _sid_from_args(ws: Workspace, args) -> bytes:
    known = sorted(sid.hex() for sid in ws.session.owner_receipts)
    if args.sid is None:
        if len(known) == 1:
            return bytes.fromhex(known[0])
        raise ConfigurationError(
            "--sid is required (registered: %s)" % (", ".join(known) or "none"))
    try:
        sid = bytes.fromhex(args.sid)
    except ValueError:
        raise ConfigurationError("--sid must be hex")
    if sid not in ws.session.owner_receipts:
        raise ConfigurationError(
            "unknown secret id %s (registered: %s)"
            % (args.sid, ", ".join(known) or "none"))
    return sid


def _indices(raw: "str | None") -> "tuple | None":
    if raw is None:
        return None
    try:
        return tuple(int(part) for part in raw.split(",") if part)
    except ValueError:
        raise ConfigurationError("expected comma-separated holder indices")


def _outcome_exit(outcome: Outcome) -> int:
    return {Outcome.SUCCESS: EXIT_SUCCESS, Outcome.FAIL: EXIT_FAIL,
            Outcome.ABORT: EXIT_ABORT}[outcome]


# ------------------------------------------------------------- subcommands


def _cmd_run(args) -> int:
    config = _load_config(args.config, _resolve_seed(args.seed))
    result = run_scenario(config, storage_root=args.workdir)
    print("scenario %s (seed %r)" % (config.name, config.seed))
    for phase, outcome in result.observed.items():
        print("  %-16s %s" % (phase + ":", outcome))
    for v in result.verdicts:
        print("  verdict %s %s: %s" % (v.phase.value, v.outcome.value, v.detail))
    if result.released is not None:
        print("  released %d bytes to the end user" % len(result.released))
    print("  key conservation: %s"
          % ("exact" if result.conservation_ok else "VIOLATED"))
    for failure in result.failures:
        print("  EXPECTATION FAILED: %s" % failure)
    if config.outputs.transcript:
        print("  transcript written to %s" % config.outputs.transcript)
    print("exit code %d" % result.exit_code)
    return result.exit_code


def _cmd_bench(args) -> int:
    config = _load_config(args.config, _resolve_seed(args.seed))
    outputs = config.outputs
    if args.csv:
        outputs = dataclasses.replace(outputs, csv=args.csv)
    if args.gnuplot:
        outputs = dataclasses.replace(outputs, gnuplot=args.gnuplot)
    config = dataclasses.replace(config, outputs=outputs)
    report = run_bench(config, storage_root=args.workdir)
    print("benchmark %s: sizes %s KB x %d repetitions"
          % (config.name, list(config.bench.sizes_kb),
             config.bench.repetitions))
    print("  %-16s %10s %12s %12s" % ("phase", "size", "median_s", "iqr_s"))
    for (phase, size), (med, iqr) in sorted(report.medians.items()):
        print("  %-16s %9dB %12.6f %12.6f" % (phase, size, med, iqr))
    for size in sorted(report.ledger_summary):
        row = report.ledger_summary[size]
        print("  key use at %dB: generated=%d consumed=%d relay_overhead=%d"
              % (size, row["generated"], row["consumed"],
                 row["relay_overhead"]))
    if report.mersenne_faster is not None:
        print("  modulus comparison (%d-bit registration): mersenne=%.6fs "
              "general=%.6fs -> %s" % (
                  COMPARE_EXPONENT,
                  report.compare_medians["mersenne"],
                  report.compare_medians["general"],
                  "mersenne faster" if report.mersenne_faster
                  else "general faster"))
    if config.outputs.csv:
        print("  csv written to %s" % config.outputs.csv)
    if config.outputs.gnuplot:
        print("  gnuplot data written to %s" % config.outputs.gnuplot)
    return EXIT_SUCCESS


def _cmd_register(args) -> int:
    ws = _workspace_for(args, allow_init=True)
    payload = _payload_from_args(args, ws.meta["seed"])
    password = args.password.encode("utf-8")
    sid, t1 = ws.session.register(payload, password)
    if args.computational:
        ws.session.cs_register(sid, payload)
    ws.save()
    print("registered %d bytes" % len(payload))
    print("  secret id: %s" % sid.hex())
    print("  owner timestamp t1: %d" % t1)
    return EXIT_SUCCESS


def _cmd_reconstruct(args) -> int:
    ws = _workspace_for(args, allow_init=False)
    session = ws.session
    sid = _sid_from_args(ws, args)
    _t1, byte_length = session.owner_receipts[sid]
    tracks = data_block_count(byte_length, session.params) + 1
    store = next(iter(session.holder_stores.values()))
    have = len(store.get_secret(sid).unconsumed_rounds())
    if have < tracks:
        session.precompute(sid, rounds=tracks - have)
    result = session.reconstruct_and_release(
        sid, args.password.encode("utf-8"),
        subset=_indices(args.subset), offline=_indices(args.offline) or ())
    ws.save()
    print("reconstruction %s: %s" % (result.outcome.value, result.detail))
    if result.data is not None and args.out:
        Path(args.out).write_bytes(result.data)
        print("  wrote %d bytes to %s" % (len(result.data), args.out))
    elif result.data is not None:
        print("  released %d bytes to the end user" % len(result.data))
    return _outcome_exit(result.outcome)


def _cmd_verify(args) -> int:
    ws = _workspace_for(args, allow_init=False)
    sid = _sid_from_args(ws, args)
    claim = _claim_from_args(args)
    if args.computational:
        if claim is None and sid in ws.session.end_user_received:
            claim = ws.session.end_user_received[sid][0]
        if claim is None:
            raise ConfigurationError(
                "--computational needs --data/--text or a released secret")
        verdict = ws.session.cs_check(sid, claim, claim_t1=args.t1)
    else:
        verdict = ws.session.integrity_check(sid, claim_data=claim,
                                             claim_t1=args.t1)
    ws.save()
    print("integrity check %s: %s" % (verdict.outcome.value, verdict.detail))
    return _outcome_exit(verdict.outcome)


def _cmd_refute(args) -> int:
    ws = _workspace_for(args, allow_init=False)
    sid = _sid_from_args(ws, args)
    claim = _claim_from_args(args)
    verdict = ws.session.refute(sid, claim_data=claim, claim_t1=args.t1)
    ws.save()
    print("refutation %s: %s" % (verdict.outcome.value, verdict.detail))
    return _outcome_exit(verdict.outcome)


def _cmd_renew(args) -> int:
    ws = _workspace_for(args, allow_init=False)
    sid = _sid_from_args(ws, args)
    if args.rounds <= 0:
        raise ConfigurationError("--rounds must be positive")
    code = EXIT_SUCCESS
    for _ in range(args.rounds):
        report = ws.session.renew(sid)
        print("renewal round %d: %s (%d tracks)"
              % (report.round_no,
                 "accepted" if report.accepted else "REJECTED",
                 report.tracks))
        for accusation in report.accusations:
            print("  accusation: %s" % (accusation,))
        if not report.accepted:
            code = EXIT_FAIL
            break
    ws.save()
    return code


# ---------------------------------------------------------------- inspect


def _inspect_verifier(path: Path) -> None:
    from .stores import VerifierStore
    store = VerifierStore(path)
    records = store.records()
    print("verifier store %s: %d records" % (path, len(records)))
    for rec in records:
        print("  sid=%s t1=%d t2=%d tag[k=%d]=%s"
              % (rec.secret_id.hex(), rec.t1, rec.t2, rec.tag.k,
                 hex(rec.tag.value)))


def _inspect_calculator(path: Path) -> None:
    from .stores import CalculatorStore
    store = CalculatorStore(path)
    ids = store.ids()
    print("calculator store %s: %d records (scheme=%s, k=%d)"
          % (path, len(ids), store.scheme.value, store.k))
    for sid in ids:
        t1, seed = store.get(sid)
        print("  sid=%s t1=%d stored_bytes=%d seed_bits=%d"
              % (sid.hex(), t1, store.record_bytes(sid), seed.width_bits))


def _inspect_holder(path: Path) -> None:
    from .stores import HolderStore
    store = HolderStore(path)
    ids = store.secret_ids()
    print("holder %d store %s: %d secrets" % (store.holder, path, len(ids)))
    for sid in ids:
        share_set = store.get_secret(sid)
        consumed = store.consumed_rounds(sid)
        renewed = store.renewal_rounds(sid)
        print("  sid=%s tracks=%d masking(unconsumed=%d consumed=%d) "
              "renewal_rounds=%s"
              % (sid.hex(), share_set.block_count,
                 len(share_set.unconsumed_rounds()), len(consumed),
                 list(renewed) or "[]"))


def _inspect_workspace(root: Path) -> None:
    state = json.loads((root / _STATE_FILE).read_text(encoding="utf-8"))
    meta = state["meta"]
    print("workspace %s" % root)
    print("  layout: %d-of-%d over a %d-bit field, mac=%s k=%d"
          % (meta["t_sh"], meta["n_sh"],
             int(meta["field_q"]).bit_length(), meta["scheme"], meta["k"]))
    placement = meta["placement"]
    print("  placement: owner=%s end_user=%s calculator=%s verifier=%s"
          % (placement["owner"], placement["end_user"],
             placement["calculator"], placement["verifier"]))
    print("  holders: %s" % ", ".join(placement["holders"]))
    print("  network time: %d ms; registered secrets: %d"
          % (state["network"]["now_ms"], len(state["receipts"])))
    for sid_hex, (t1, length) in sorted(state["receipts"].items()):
        print("    sid=%s t1=%d bytes=%d" % (sid_hex, t1, length))
    for name in ("calculator", "verifier"):
        sub = root / "stores" / name
        if sub.exists():
            _inspect_store_dir(sub)
    for sub in sorted(root.glob("stores/holder-*")):
        _inspect_store_dir(sub)
    verdicts = root / "verdicts.log"
    if verdicts.exists():
        lines = verdicts.read_text(encoding="utf-8").splitlines()
        print("  verdicts: %d" % len(lines))
        for line in lines:
            print("    %s" % line)


def _inspect_store_dir(path: Path) -> None:
    if (path / "verifier.log").exists() or path.name == "verifier":
        _inspect_verifier(path)
    elif (path / "meta.bin").exists() or path.name == "calculator":
        _inspect_calculator(path)
    elif (path / "state.bin").exists() or path.name.startswith("holder"):
        _inspect_holder(path)
    else:
        raise ConfigurationError(
            "%s does not look like an itstore store" % path)


def _cmd_inspect(args) -> int:
    path = Path(args.path)
    if not path.exists():
        raise ConfigurationError("%s does not exist" % path)
    try:
        if path.is_file():
            text = path.read_text(encoding="utf-8")
            print("transcript %s: %d lines" % (path, len(text.splitlines())))
            sys.stdout.write(text)
        elif (path / _STATE_FILE).exists():
            _inspect_workspace(path)
        elif (path / "stores").exists():
            _inspect_workspace(path)  # partially built workspace
        else:
            _inspect_store_dir(path)
    except TamperDetectedError as exc:
        print("TAMPER DETECTED in %s: %s" % (path, exc))
        return EXIT_FAIL
    return EXIT_SUCCESS


# ------------------------------------------------------------------ parser


def _add_workspace_options(sub, with_config: bool):
    sub.add_argument("--workspace", required=True,
                     help="directory holding the persistent deployment")
    if with_config:
        sub.add_argument("--config", help="scenario file used to initialize "
                         "a new workspace (layout, topology, placement)")
        sub.add_argument("--seed", help="master seed for a new workspace "
                         "(overrides ITSTORE_SEED and the scenario file)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="itstore",
        description="Long-term secure distributed storage over a simulated "
                    "key-distribution network.",
        epilog="exit codes: 0 success, 1 verification failure, 2 abort, "
               "3 configuration error, 4 expectation mismatch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario end to end")
    p.add_argument("config", help="scenario YAML file")
    p.add_argument("--seed", help="override the master seed")
    p.add_argument("--workdir", help="keep per-role stores in this directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("bench", help="benchmark phases across payload sizes")
    p.add_argument("config", help="scenario YAML file with a bench section")
    p.add_argument("--seed", help="override the master seed")
    p.add_argument("--workdir", help="keep per-run stores in this directory")
    p.add_argument("--csv", help="write timing rows to this CSV file")
    p.add_argument("--gnuplot", help="write plot data to this file")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("register", help="register a secret into a workspace")
    _add_workspace_options(p, with_config=True)
    p.add_argument("--data", help="payload file")
    p.add_argument("--text", help="payload string")
    p.add_argument("--size-kb", type=int, help="seed-derived payload size")
    p.add_argument("--password", default="correct horse battery staple")
    p.add_argument("--computational", action="store_true",
                   help="also register a computational-security digest")
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("reconstruct",
                       help="reconstruct a secret and release it")
    _add_workspace_options(p, with_config=False)
    p.add_argument("--sid", help="secret id (hex); optional when only one")
    p.add_argument("--password", default="correct horse battery staple")
    p.add_argument("--subset", help="holder indices, e.g. 1,2,4")
    p.add_argument("--offline", help="holders to treat as unreachable")
    p.add_argument("--out", help="write the released payload to this file")
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("verify", help="third-party integrity check")
    _add_workspace_options(p, with_config=False)
    p.add_argument("--sid", help="secret id (hex); optional when only one")
    p.add_argument("--data", help="claimed payload file")
    p.add_argument("--text", help="claimed payload string")
    p.add_argument("--t1", type=int, help="claimed registration timestamp")
    p.add_argument("--computational", action="store_true",
                   help="check against the computational digest instead")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("refute", help="adjudicate a disputed claim")
    _add_workspace_options(p, with_config=False)
    p.add_argument("--sid", help="secret id (hex); optional when only one")
    p.add_argument("--data", help="claimed payload file")
    p.add_argument("--text", help="claimed payload string")
    p.add_argument("--t1", type=int, help="claimed registration timestamp")
    p.set_defaults(func=_cmd_refute)

    p = sub.add_parser("renew", help="proactively renew the data shares")
    _add_workspace_options(p, with_config=False)
    p.add_argument("--sid", help="secret id (hex); optional when only one")
    p.add_argument("--rounds", type=int, default=1)
    p.set_defaults(func=_cmd_renew)

    p = sub.add_parser("inspect",
                       help="print a workspace, store or transcript")
    p.add_argument("path")
    p.set_defaults(func=_cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print("configuration error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except TamperDetectedError as exc:
        print("tamper detected: %s" % exc, file=sys.stderr)
        return EXIT_FAIL
    except ProtocolError as exc:
        print("protocol error: %s" % exc, file=sys.stderr)
        return EXIT_ABORT
    except ItstoreError as exc:
        print("aborted: %s" % exc, file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
