use tsa_core::dataset::extract_features;
use tsa_core::grid::{Adjacency, FaultSpec, Network};
use tsa_core::monitor::{offline_events, run_stream, write_replay, Monitor, MonitorEvent};
use tsa_core::nn::{GraphInput, Model, ModelConfig};
use tsa_core::tds::{simulate, solve_equilibrium, Scenario, Trace};

const WINDOW: usize = 20;

fn short_fault_trace(net: &Network, line: usize) -> Trace {
    let eq = solve_equilibrium(net, 0.6).unwrap();
    let mut sc = Scenario::new(FaultSpec::bolted(line, 0.5), 0.6, 5.0);
    sc.duration_s = 1.6;
    simulate(net, &sc, &eq).unwrap()
}

fn replay(trace: &Trace, line: Option<usize>) -> Vec<u8> {
    let mut buf = Vec::new();
    write_replay(trace, line, &mut buf).unwrap();
    buf
}

fn stream_events(model: &Model, net: &Network, input: &[u8]) -> (Vec<MonitorEvent>, usize) {
    let mut mon = Monitor::new(model.clone(), net, WINDOW).unwrap();
    let mut out = Vec::new();
    let summary = run_stream(&mut mon, input, &mut out).unwrap();
    let events: Vec<MonitorEvent> =
        String::from_utf8(out).unwrap().lines().map(|l| MonitorEvent::from_json(l).unwrap()).collect();
    assert_eq!(events.len(), summary.events);
    (events, summary.skipped)
}

#[test]
fn replay_matches_offline_decisions() {
    let net = Network::new_england_39();
    let line = 16;
    let trace = short_fault_trace(&net, line);
    let model = Model::new(ModelConfig::with_input(2 * WINDOW), 1).unwrap();
    let (events, skipped) = stream_events(&model, &net, &replay(&trace, Some(line)));
    assert_eq!(skipped, 0);
    let offline = offline_events(&model, &net, &trace, Some(line), WINDOW).unwrap();
    assert_eq!(events.len(), trace.len() + 1 - WINDOW);
    assert_eq!(events, offline);

    // The window starting at fault inception is the one a dataset sample sees.
    let start = trace.fault_step.unwrap();
    let f = extract_features(&trace, start, WINDOW).unwrap();
    let x = GraphInput::from_features(&f, &Adjacency::for_network(&net, Some(line))).unwrap();
    let out = &model.forward(&[x]).unwrap()[0];
    let ev = &events[start];
    assert_eq!(ev.timestamp, trace.times[start + WINDOW - 1]);
    assert_eq!(*ev, MonitorEvent::from_output(ev.timestamp, out));
}

#[test]
fn short_stream_emits_nothing() {
    let net = Network::new_england_39();
    let trace = short_fault_trace(&net, 16);
    let model = Model::new(ModelConfig::with_input(2 * WINDOW), 1).unwrap();
    let text = String::from_utf8(replay(&trace, None)).unwrap();
    let head: String = text.lines().take(WINDOW).map(|l| format!("{l}\n")).collect();
    let (events, skipped) = stream_events(&model, &net, head.as_bytes());
    assert!(events.is_empty());
    assert_eq!(skipped, 0);
    let (events, _) = stream_events(&model, &net, b"");
    assert!(events.is_empty());
}

#[test]
fn malformed_lines_are_skipped() {
    let net = Network::new_england_39();
    let trace = short_fault_trace(&net, 16);
    let model = Model::new(ModelConfig::with_input(2 * WINDOW), 1).unwrap();
    let clean = replay(&trace, Some(16));
    let text = String::from_utf8(clean.clone()).unwrap();
    let mut noisy = String::new();
    for (i, l) in text.lines().enumerate() {
        noisy.push_str(l);
        noisy.push('\n');
        if i % 50 == 7 {
            noisy.push_str("1.0,garbage\n");
        }
    }
    noisy.push_str("topo,open,999\n");
    let (a, skipped) = stream_events(&model, &net, noisy.as_bytes());
    let (b, _) = stream_events(&model, &net, &clean);
    assert!(skipped > 3);
    assert_eq!(a, b);
}

#[test]
fn topology_records_switch_adjacency() {
    let net = Network::new_england_39();
    let model = Model::new(ModelConfig::with_input(2 * WINDOW), 1).unwrap();
    let mut mon = Monitor::new(model, &net, WINDOW).unwrap();
    assert_eq!(mon.adjacency(), &Adjacency::for_network(&net, None));
    mon.push_line("topo,open,16").unwrap();
    assert_eq!(mon.adjacency(), &Adjacency::for_network(&net, Some(16)));
    mon.push_line("topo,close,16").unwrap();
    assert_eq!(mon.adjacency(), &Adjacency::for_network(&net, None));
}

#[test]
fn window_mismatch_rejected() {
    let net = Network::new_england_39();
    let model = Model::new(ModelConfig::with_input(10), 1).unwrap();
    assert!(Monitor::new(model, &net, WINDOW).is_err());
}
