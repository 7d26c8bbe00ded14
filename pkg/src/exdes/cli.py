"""`exdes` command line: simulator, agent, collector and designer tools.

Exit codes: 0 success, 1 domain error (parsing, validation, rejections),
2 I/O or connectivity error. Data goes to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import os
import socket
import sys

from . import analysis
from .agent import Agent, load_agent_config, read_key_file
from .collector import (
    AlarmNotifier,
    Collector,
    CollectorServer,
    encode_query_payload,
    file_alarm_sink,
    stdout_alarm_sink,
)
from .errors import DomainError, ParseError, StaleVersion, TransportDown, UnknownAgent
from .rules import compile_ruleset
from .sim import FridgeSimulator, load_model, load_scenario, read_trace, write_trace
from .telemetry import (
    AgentId,
    NS_PER_S,
    SensorSample,
    Timestamp,
    ViolationClass,
    parameter_registry,
)
from .transport import TcpTransport, recv_frame
from .wire import (
    PT_ACK,
    PT_ERROR,
    PT_QUERY,
    PT_QUERY_RESULT,
    PT_RULESET_UPDATE,
    decode_ack_payload,
    decode_batch_payload,
    decode_error_payload,
    decode_frame,
    encode_frame,
)

DESIGNER_TAG = "designer"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exdes", description=__doc__)
    top = parser.add_subparsers(dest="group", required=True)

    sim = top.add_parser("sim", help="run the refrigerator simulator")
    sim_sub = sim.add_subparsers(dest="command", required=True)
    sim_run = sim_sub.add_parser("run", help="simulate a scenario and export a trace")
    sim_run.add_argument("--model", required=True, help="model file")
    sim_run.add_argument("--scenario", required=True, help="scenario file")
    sim_run.add_argument("--out", required=True, help="trace output file")

    agent = top.add_parser("agent", help="run an expectation agent")
    agent_sub = agent.add_subparsers(dest="command", required=True)
    agent_run = agent_sub.add_parser("run", help="monitor a live simulator or replay a trace")
    agent_run.add_argument("--config", required=True, help="agent configuration file")
    agent_run.add_argument("--model", help="model file (live mode)")
    agent_run.add_argument("--scenario", help="scenario file (live mode)")
    agent_run.add_argument("--out", help="also export the live sample stream as a trace")
    agent_run.add_argument("--replay", help="replay an exported trace instead of simulating")
    agent_run.add_argument("--rules", help="override the configured rule file")
    agent_run.add_argument("--collector", help="override the configured collector host:port")
    agent_run.add_argument("--key-file", help="shared secret key file")
    agent_run.add_argument("--chunk-steps", type=int, default=0,
                           help="simulator steps per chunk (default: 1 with actuators, 8192 otherwise)")

    coll = top.add_parser("collector", help="run the designer-side collector")
    coll_sub = coll.add_subparsers(dest="command", required=True)
    serve = coll_sub.add_parser("serve", help="accept agent connections")
    serve.add_argument("--listen", default="127.0.0.1:7700", help="host:port to listen on")
    serve.add_argument("--store", required=True, help="store directory")
    serve.add_argument("--key-file", help="shared secret key file")
    serve.add_argument("--notify-file", help="append ALARM notifications to this file")
    serve.add_argument("--chambers", default="main,freezer", help="registry chambers")

    rules = top.add_parser("rules", help="manage rule sets")
    rules_sub = rules.add_subparsers(dest="command", required=True)
    deploy = rules_sub.add_parser("deploy", help="publish a rule set to the collector")
    deploy.add_argument("--target", required=True, help="agent tag the rules are for")
    deploy.add_argument("--file", required=True, help="rule-DSL source file")
    deploy.add_argument("--collector", required=True, help="collector host:port")
    deploy.add_argument("--key-file", help="shared secret key file")
    deploy.add_argument("--chambers", default="main,freezer", help="registry chambers")

    report = top.add_parser("report", help="query stored events")
    report_sub = report.add_subparsers(dest="command", required=True)
    query = report_sub.add_parser("query", help="fetch events from the collector")
    query.add_argument("--agent", required=True, help="agent tag")
    query.add_argument("--collector", required=True, help="collector host:port")
    query.add_argument("--key-file", help="shared secret key file")
    query.add_argument("--class", dest="violation_class", choices=["UFB", "UEB", "UUB"])
    query.add_argument("--from", dest="from_s", type=float, help="period start, seconds")
    query.add_argument("--to", dest="to_s", type=float, help="period end, seconds")

    an = top.add_parser("analyze", help="designer-side feedback analysis")
    an_sub = an.add_subparsers(dest="command", required=True)

    usage = an_sub.add_parser("usage", help="usage history from a trace")
    usage.add_argument("--replay", required=True, help="trace file")
    usage.add_argument("--from", dest="from_s", type=float)
    usage.add_argument("--to", dest="to_s", type=float)
    usage.add_argument("--p-on", type=float, default=35.0, help="compressor-on power threshold")
    usage.add_argument("--duty-window", type=int, default=5)
    usage.add_argument("--out", help="write the duty series as two-column text")

    leakage = an_sub.add_parser("leakage", help="leak estimation from duty-ratio drift")
    leakage.add_argument("--replay", required=True, help="trace file")
    leakage.add_argument("--baseline-to", type=float, required=True,
                         help="end of the healthy baseline period, seconds")
    leakage.add_argument("--threshold", type=float, default=0.005,
                         help="residual trend (per day) above which a leak is flagged")
    leakage.add_argument("--p-on", type=float, default=35.0)
    leakage.add_argument("--duty-window", type=int, default=5)
    leakage.add_argument("--out", help="write eval-period residuals as two-column text")

    copattern = an_sub.add_parser("copattern", help="co-occurrence patterns")
    copattern.add_argument("--replay", help="trace file (door-opening edges)")
    copattern.add_argument("--events", help="store/query line file (situation ids)")
    copattern.add_argument("--window", type=float, required=True, help="window, seconds")
    copattern.add_argument("--min-support", type=float, default=0.5)

    optimize = an_sub.add_parser("optimize", help="hysteresis grid search")
    optimize.add_argument("--model", required=True, help="model file")
    optimize.add_argument("--grid", required=True, help="comma-separated bands, degC")
    optimize.add_argument("--t-limit", type=float, required=True,
                          help="max permissible internal temperature")
    optimize.add_argument("--out", help="write band/energy table as two-column text")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; that is a validation failure here
        return 0 if exc.code in (0, None) else 1
    try:
        return _dispatch(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DomainError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (TransportDown, ConnectionError, socket.gaierror, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    handler = {
        ("sim", "run"): _cmd_sim_run,
        ("agent", "run"): _cmd_agent_run,
        ("collector", "serve"): _cmd_collector_serve,
        ("rules", "deploy"): _cmd_rules_deploy,
        ("report", "query"): _cmd_report_query,
        ("analyze", "usage"): _cmd_analyze_usage,
        ("analyze", "leakage"): _cmd_analyze_leakage,
        ("analyze", "copattern"): _cmd_analyze_copattern,
        ("analyze", "optimize"): _cmd_analyze_optimize,
    }[(args.group, args.command)]
    return handler(args)


def _read(path) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _key_from(args) -> bytes:
    path = getattr(args, "key_file", None) or os.environ.get("EXDES_KEY_FILE")
    if not path:
        return b""
    return read_key_file(path)


def _host_port(text: str):
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ParseError(0, f"expected host:port, got {text!r}")
    return host, int(port)


# -- product/agent side ---------------------------------------------------------

def _cmd_sim_run(args) -> int:
    model = load_model(_read(args.model))
    scenario = load_scenario(_read(args.scenario))
    result = write_trace(model, scenario, args.out)
    print(f"sim steps={result.n_steps} energy_wh={result.energy_wh!r} "
          f"max_internal_c={result.max_internal_c!r}")
    return 0


def _cmd_agent_run(args) -> int:
    config = load_agent_config(args.config)
    if args.rules:
        config.rules_source = _read(args.rules)
    if args.collector:
        config.collector = args.collector
    if args.key_file or os.environ.get("EXDES_KEY_FILE"):
        config.key = _key_from(args)
    transport = None
    if config.collector:
        transport = TcpTransport(*_host_port(config.collector))
    agent = Agent(config, transport=transport,
                  alarm_console=lambda line: print(f"ALARM {line}"))

    if args.replay:
        if args.model or args.scenario:
            raise ParseError(0, "--replay excludes --model/--scenario")
        count = 0
        for sample in read_trace(args.replay):
            agent.step(sample)
            count += 1
        agent.close()
        print(f"agent replayed samples={count} events_sent={agent.buffer.acked}",
              file=sys.stderr)
        return 0

    if not args.model or not args.scenario:
        raise ParseError(0, "live mode needs --model and --scenario (or use --replay)")
    model = load_model(_read(args.model))
    scenario = load_scenario(_read(args.scenario))
    sim = FridgeSimulator(model, scenario)
    if agent.actuators:
        agent.actuator_target = sim.set_band
    chunk = args.chunk_steps or (1 if agent.actuators else 8192)
    writer = open(args.out, "w", encoding="utf-8") if args.out else None
    try:
        run_agent_live(agent, sim, chunk_steps=chunk, trace_writer=writer)
    finally:
        if writer:
            writer.close()
    result = sim.result()
    print(f"agent live steps={result.n_steps} energy_wh={result.energy_wh!r} "
          f"events_sent={agent.buffer.acked}", file=sys.stderr)
    return 0


def run_agent_live(agent: Agent, sim: FridgeSimulator, chunk_steps: int = 8192,
                   trace_writer=None) -> None:
    """Feed a live simulation through an agent sample by sample, optionally
    exporting the identical trace that `--replay` would consume."""
    channels = sim.channels
    while not sim.done:
        for row in sim.process_chunk(chunk_steps):
            t_ns = row[0]
            at = Timestamp.from_ns(t_ns)
            if trace_writer is not None:
                t_text = at.text()
                trace_writer.write("".join(
                    f"t={t_text} {name}={value!r}\n"
                    for name, value in zip(channels, row[1:])))
            for name, value in zip(channels, row[1:]):
                agent.step(SensorSample(name, value, at))
    agent.close()


# -- collector side ----------------------------------------------------------------

def _cmd_collector_serve(args) -> int:
    sinks = [stdout_alarm_sink]
    if args.notify_file:
        sinks.append(file_alarm_sink(args.notify_file))
    collector = Collector(args.store, _key_from(args),
                          chambers=tuple(args.chambers.split(",")),
                          notifier=AlarmNotifier(sinks))
    host, port = _host_port(args.listen)
    server = CollectorServer(collector, host, port)
    print(f"collector listening on {server.address[0]}:{server.address[1]} "
          f"store={args.store}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def _cmd_rules_deploy(args) -> int:
    source = _read(args.file)
    # compile locally first so syntax errors report their line numbers
    compile_ruleset(source, parameter_registry(tuple(args.chambers.split(","))))
    key = _key_from(args)
    host, port = _host_port(args.collector)
    frame = encode_frame(PT_RULESET_UPDATE, AgentId.from_tag(args.target).raw, 1,
                         source.encode("utf-8"), key)
    transport = TcpTransport(host, port)
    try:
        response = decode_frame(transport.request(frame), key)
    finally:
        transport.close()
    if response.ptype == PT_ERROR:
        code, message = decode_error_payload(response.payload)
        if code == "STALE_VERSION":
            raise StaleVersion(message)
        raise ParseError(0, f"{code}: {message}")
    version = decode_ack_payload(response.payload)
    print(f"deployed version={version} target={args.target}")
    return 0


def _cmd_report_query(args) -> int:
    key = _key_from(args)
    host, port = _host_port(args.collector)
    cls = ViolationClass(args.violation_class) if args.violation_class else None
    payload = encode_query_payload(
        args.agent, cls,
        Timestamp.from_ns(int(args.from_s * NS_PER_S)) if args.from_s is not None else None,
        Timestamp.from_ns(int(args.to_s * NS_PER_S)) if args.to_s is not None else None,
    )
    frame = encode_frame(PT_QUERY, AgentId.from_tag(DESIGNER_TAG).raw, 1, payload, key)
    sock = socket.create_connection((host, port), timeout=10.0)
    try:
        sock.sendall(frame)
        while True:
            raw = recv_frame(sock)
            if not raw:
                raise TransportDown("collector closed the connection")
            response = decode_frame(raw, key)
            if response.ptype == PT_QUERY_RESULT:
                for line in decode_batch_payload(response.payload):
                    print(line)
            elif response.ptype == PT_ACK:
                return 0
            elif response.ptype == PT_ERROR:
                code, message = decode_error_payload(response.payload)
                if code == "UNKNOWN_AGENT":
                    raise UnknownAgent(message)
                raise ParseError(0, f"{code}: {message}")
            else:
                raise TransportDown(f"unexpected response ptype {response.ptype}")
    finally:
        sock.close()


# -- analysis -------------------------------------------------------------------------

def _period_ns(args):
    from_ns = int(args.from_s * NS_PER_S) if args.from_s is not None else None
    to_ns = int(args.to_s * NS_PER_S) if args.to_s is not None else None
    return from_ns, to_ns


def _cmd_analyze_usage(args) -> int:
    from_ns, to_ns = _period_ns(args)
    summary = analysis.usage_summary(
        read_trace(args.replay), from_ns, to_ns,
        duty_window=args.duty_window, p_on_w=args.p_on)
    print(f"usage energy_wh={summary.energy_wh!r} mean_power_w={summary.mean_power_w!r} "
          f"first={Timestamp.from_ns(summary.first_ns).text()} "
          f"last={Timestamp.from_ns(summary.last_ns).text()}")
    for chamber, stats in summary.doors.items():
        print(f"door chamber={chamber} count={stats.open_count} "
              f"total_open_s={stats.total_open_s!r}")
        for bin_start in sorted(stats.histogram):
            print(f"  [{bin_start},{bin_start + 10}) s: {stats.histogram[bin_start]}")
    print(f"duty points={len(summary.duty_series)}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for t_ns, ratio in summary.duty_series:
                fh.write(f"{t_ns / NS_PER_S!r} {ratio!r}\n")
    return 0


def _collect_leakage_series(samples, p_on_w, duty_window):
    from .abstraction import DutyCycleTracker

    duty = DutyCycleTracker(p_on_w, duty_window)
    duty_series = []
    ambient_series = []
    last_pair = (0, None)
    for sample in samples:
        t_ns = sample.at.to_ns()
        if sample.parameter == "power_w":
            ratio = duty.update(sample.value, t_ns)
            key = (len(duty.pairs), duty.pairs[-1] if duty.pairs else None)
            if ratio is not None and key != last_pair:
                duty_series.append((t_ns, ratio))
                last_pair = key
        elif sample.parameter == "temp_ambient_c":
            if not ambient_series or ambient_series[-1][1] != sample.value:
                ambient_series.append((t_ns, sample.value))
    return duty_series, ambient_series


def _cmd_analyze_leakage(args) -> int:
    duty_series, ambient_series = _collect_leakage_series(
        read_trace(args.replay), args.p_on, args.duty_window)
    if not duty_series:
        print("error: no completed duty cycles in trace", file=sys.stderr)
        return 1
    first_ns = duty_series[0][0]
    last_ns = duty_series[-1][0]
    split_ns = int(args.baseline_to * NS_PER_S)
    report = analysis.leakage_score(
        duty_series, ambient_series,
        (first_ns, split_ns), (split_ns + 1, last_ns),
        threshold_per_day=args.threshold)
    print(f"leakage slope={report.baseline_slope!r} intercept={report.baseline_intercept!r} "
          f"residual_trend_per_day={report.residual_trend_per_day!r} "
          f"leak_suspected={'true' if report.leak_suspected else 'false'}")
    if args.out:
        slope, intercept = report.baseline_slope, report.baseline_intercept
        with open(args.out, "w", encoding="utf-8") as fh:
            for t_ns, ratio in duty_series:
                if t_ns > split_ns:
                    days = t_ns / NS_PER_S / 86400.0
                    fh.write(f"{days!r} {ratio - intercept!r}\n")
    return 0


def _cmd_analyze_copattern(args) -> int:
    if bool(args.replay) == bool(args.events):
        raise ParseError(0, "copattern needs exactly one of --replay or --events")
    if args.replay:
        occurrences = analysis.door_occurrences(read_trace(args.replay))
    else:
        occurrences = []
        for line in _read(args.events).splitlines():
            line = line.strip()
            if not line:
                continue
            fields = dict(item.partition("=")[::2] for item in line.split(" "))
            occurrences.append((Timestamp.parse(fields["first"]).to_ns(), fields["id"]))
    patterns = analysis.copattern_detect(occurrences, args.window, args.min_support)
    for p in patterns:
        print(f"copattern first={p.first} second={p.second} co={p.co_count} "
              f"n={p.first_count} support={p.support!r}")
    if not patterns:
        print("no patterns at this support level", file=sys.stderr)
    return 0


def _cmd_analyze_optimize(args) -> int:
    model = load_model(_read(args.model))
    try:
        grid = [float(v) for v in args.grid.split(",") if v]
    except ValueError as exc:
        raise ParseError(0, f"bad grid: {exc}") from None
    result = analysis.duty_optimization(model, grid, args.t_limit)
    for c in result.candidates:
        print(f"candidate band_c={c.band_c!r} energy_wh={c.energy_wh!r} "
              f"max_internal_c={c.max_internal_c!r} feasible={'yes' if c.feasible else 'no'}")
    print(f"optimize best_band_c={result.best_band_c!r} "
          f"energy_wh={result.best_energy_wh!r}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for c in result.candidates:
                fh.write(f"{c.band_c!r} {c.energy_wh!r}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
