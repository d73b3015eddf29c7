"""Command line entry point: ``autonom <group> <command> ...``.

Exit status is 0 on success, 1 when the input fails validation and 2 on usage
errors (bad flags, unreadable or malformed input files).
"""
from __future__ import annotations

import argparse
import json
import logging
import ssl
import sys
import time
from pathlib import Path

from . import classifier, perfmodel
from .chain import Chain, ChainFileError, load_chain, save_chain
from .netapi import serve
from .node import Node, NodeConfig
from .scenario import ConfigError, ScenarioConfig, render_report, report_json, run_scenario
from .wallet import generate_keypair

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# -- wallet / chain ---------------------------------------------------------


def cmd_wallet_new(args) -> int:
    seed = bytes.fromhex(args.seed) if args.seed is not None else None
    _print_json(generate_keypair(seed).to_dict())
    return EXIT_OK


def _load(path: str) -> Chain:
    try:
        return load_chain(path, validate=False)
    except ChainFileError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def cmd_chain_validate(args) -> int:
    chain = _load(args.file)
    result = chain.validate()
    if result:
        print(f"valid: {len(chain)} blocks, head {chain.head_hash}")
        return EXIT_OK
    print(f"invalid at block {result.index}: {result.reason}")
    return EXIT_INVALID


def cmd_chain_show(args) -> int:
    chain = _load(args.file)
    result = chain.validate()
    print(f"difficulty {chain.difficulty}  reward {chain.mining_reward}  blocks {len(chain)}  "
          f"pending {len(chain.pending_transactions)}  {'valid' if result else 'INVALID'}")
    for i, block in enumerate(chain.chain):
        print(f"#{i:<4} {block.hash[:16]}  ts {block.timestamp}  nonce {block.nonce:<8} txs {len(block.transactions)}")
    balances = chain.balances()
    if balances:
        print("balances:")
        for addr, amount in sorted(balances.items()):
            print(f"  {addr[:20]}...  {amount}")
    return EXIT_OK if result else EXIT_INVALID


# -- node ---------------------------------------------------------------------


def _parse_bind(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise UsageError(f"--bind expects HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def cmd_node_run(args) -> int:
    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        config = NodeConfig.from_dict(raw)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"{args.config}: {exc}") from exc
    bind = _parse_bind(args.bind)
    difficulty = int(raw.get("difficulty", 2))
    chain = Chain(difficulty)
    if args.chain and Path(args.chain).exists():
        try:
            chain = load_chain(args.chain)
        except ChainFileError as exc:
            print(f"{args.chain}: {exc}", file=sys.stderr)
            return EXIT_INVALID
    model = classifier.load_model(raw["modelFile"]) if raw.get("modelFile") else None
    node = Node(config, model=model, chain=chain, difficulty=difficulty)
    node.peers.extend(raw.get("peers", []))

    context = None
    if raw.get("tlsCert"):
        context = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
        context.load_cert_chain(raw["tlsCert"], raw.get("tlsKey"))
    persist = (lambda n: save_chain(n.chain, args.chain)) if args.chain else None
    server = serve(node, bind, context, on_change=persist)
    print(f"node {config.node_id} address {config.keypair.address}")
    print(f"listening on {server.url}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return EXIT_OK


# -- simulation ---------------------------------------------------------------


def cmd_sim_run(args) -> int:
    try:
        config = ScenarioConfig.from_file(args.config)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        raise UsageError(f"{args.config}: {exc}") from exc
    report = run_scenario(config)
    text = report_json(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(render_report(report))
    return EXIT_OK if report["ok"] else EXIT_INVALID


# -- classifier -------------------------------------------------------------


def _read_csv(path: str) -> list[classifier.FlowRecord]:
    try:
        return classifier.load_csv(path)
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    except classifier.CSVFormatError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def cmd_classify_synth(args) -> int:
    records = classifier.synth_dataset(args.seed, args.n, args.separation)
    classifier.write_csv(records, args.csv, with_src=args.with_src)
    print(f"wrote {len(records)} flows to {args.csv}")
    return EXIT_OK


def cmd_classify_train(args) -> int:
    records = _read_csv(args.csv)
    config = classifier.TrainConfig(args.reg, args.epochs, args.seed, include_failed=args.include_failed)
    try:
        model = classifier.train(records, config)
    except (classifier.SingleClassError, ValueError) as exc:
        print(f"cannot train: {exc}", file=sys.stderr)
        return EXIT_INVALID
    classifier.save_model(model, args.model)
    m = classifier.evaluate(model, records)
    print(f"trained on {model.trained_on} flows, train accuracy {m.accuracy:.4f}; model written to {args.model}")
    return EXIT_OK


def cmd_classify_eval(args) -> int:
    records = _read_csv(args.csv)
    try:
        model = classifier.load_model(args.model)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"{args.model}: {exc}") from exc
    try:
        metrics = classifier.evaluate(model, records)
    except ValueError as exc:
        print(f"cannot evaluate: {exc}", file=sys.stderr)
        return EXIT_INVALID
    _print_json(dict(metrics.to_dict(), confusion=metrics.confusion))
    return EXIT_OK


# -- performance model ------------------------------------------------------


def cmd_perf_mttr(args) -> int:
    try:
        params = perfmodel.QueueParams(args.lam, args.mu)
        breakdown = perfmodel.mttr_breakdown(params, args.difficulty_d, args.hashrate)
    except perfmodel.PerfModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.breakdown:
        _print_json(breakdown.to_dict())
    else:
        print(f"{breakdown.total:g}")
    return EXIT_OK


def cmd_perf_sweep(args) -> int:
    if args.d_min > args.d_max:
        raise UsageError("--d-min must not exceed --d-max")
    try:
        rows = perfmodel.difficulty_sweep(range(args.d_min, args.d_max + 1), args.trials, seed=args.seed)
    except perfmodel.PerfModelError as exc:
        raise UsageError(str(exc)) from exc
    if args.out:
        perfmodel.write_sweep_csv(rows, args.out)
    print(",".join(perfmodel.SWEEP_HEADER))
    for r in rows:
        print(f"{r.d},{r.mean_attempts:.2f},{r.mean_seconds:.6g},{r.log_mean_seconds:.4f}")
    if len(rows) >= 2:
        print(f"log16 slope {perfmodel.log16_slope(rows):.3f}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autonom", description="Decentralized intrusion detection toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    groups = parser.add_subparsers(dest="group", required=True)

    wallet = groups.add_parser("wallet").add_subparsers(dest="command", required=True)
    p = wallet.add_parser("new", help="create a secp256k1 key pair")
    p.add_argument("--seed", help="hex seed for a reproducible key")
    p.set_defaults(func=cmd_wallet_new)

    chain = groups.add_parser("chain").add_subparsers(dest="command", required=True)
    p = chain.add_parser("validate", help="check a chain file")
    p.add_argument("file")
    p.set_defaults(func=cmd_chain_validate)
    p = chain.add_parser("show", help="summarize a chain file")
    p.add_argument("file")
    p.set_defaults(func=cmd_chain_show)

    node = groups.add_parser("node").add_subparsers(dest="command", required=True)
    p = node.add_parser("run", help="serve the HTTP API for one node")
    p.add_argument("--config", required=True)
    p.add_argument("--bind", default="127.0.0.1:8080")
    p.add_argument("--chain", help="chain file to load and keep updated")
    p.set_defaults(func=cmd_node_run)

    sim = groups.add_parser("sim").add_subparsers(dest="command", required=True)
    p = sim.add_parser("run", help="run a seeded network scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_sim_run)

    cls = groups.add_parser("classify").add_subparsers(dest="command", required=True)
    p = cls.add_parser("synth", help="write a synthetic labeled flow CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--with-src", action="store_true")
    p.set_defaults(func=cmd_classify_synth)
    p = cls.add_parser("train", help="fit a linear SVM")
    p.add_argument("--csv", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--reg", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--include-failed", action="store_true")
    p.set_defaults(func=cmd_classify_train)
    p = cls.add_parser("eval", help="score a model on a labeled CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_classify_eval)

    perf = groups.add_parser("perf").add_subparsers(dest="command", required=True)
    p = perf.add_parser("mttr", help="mean time to respond")
    p.add_argument("--lambda", dest="lam", type=float, required=True, help="arrival rate")
    p.add_argument("--mu", type=float, required=True, help="service rate")
    p.add_argument("--difficulty-d", type=float, required=True, help="expected hashes per block")
    p.add_argument("--hashrate", type=float, required=True, help="hashes per second")
    p.add_argument("--breakdown", action="store_true", help="print queueing and block time separately")
    p.set_defaults(func=cmd_perf_mttr)
    p = perf.add_parser("sweep", help="measure mining time against difficulty")
    p.add_argument("--d-min", type=int, default=1)
    p.add_argument("--d-max", type=int, default=3)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_perf_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
