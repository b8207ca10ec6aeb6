use std::fs;

use gridsens::io::{
    bundled_wecc9, bundled_wecc9_text, parse_network, read_json, read_matrix_file, read_stream_file, write_json,
    write_matrix_file, write_stream_file,
};
use gridsens::synth::{generate_stream, Event, ScenarioSpec, ScheduledEvent, StreamSource, TruthLog};
use gridsens::{compute_dc_ptdf, Error};

#[test]
fn bundled_files_parse_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let (branches, buses) = bundled_wecc9_text();
    let bp = dir.path().join("branches.csv");
    let up = dir.path().join("buses.csv");
    fs::write(&bp, branches).unwrap();
    fs::write(&up, buses).unwrap();
    let parsed = parse_network(&bp, Some(&up)).unwrap();
    assert!(parsed.warnings.is_empty());
    assert_eq!(parsed.network, bundled_wecc9());
    assert_eq!(parsed.network.n_lines(), 9);
    assert_eq!(parsed.network.n_buses(), 9);
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(parse_network(&dir.path().join("nope.csv"), None), Err(Error::Io(_))));
}

#[test]
fn two_slack_buses_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bp = dir.path().join("b.csv");
    let up = dir.path().join("u.csv");
    fs::write(&bp, "branch_id,from_bus,to_bus,reactance_pu\n1,1,2,0.1\n").unwrap();
    fs::write(&up, "bus_id,nominal_injection_pu,is_slack\n1,0.5,1\n2,-0.5,true\n").unwrap();
    assert!(matches!(parse_network(&bp, Some(&up)), Err(Error::Parse { line: 3, .. })));
}

#[test]
fn matrix_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let h = compute_dc_ptdf::<f64>(&bundled_wecc9()).unwrap().into_inner();
    let p = dir.path().join("H.csv");
    write_matrix_file(&p, &h).unwrap();
    assert_eq!(read_matrix_file(&p).unwrap(), h);
}

#[test]
fn stream_and_truth_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = ScenarioSpec::new(200, 31);
    spec.flow_noise_sd = 0.1;
    spec.outlier_rate = 0.05;
    spec.outlier_amplitude = (30.0, 60.0);
    spec.missing_rate = 0.2;
    spec.events = vec![ScheduledEvent { step: 120, event: Event::ScaleReactance { branch: 8, factor: 2.0 } }];
    let (stream, log) = generate_stream(&StreamSource::Network(bundled_wecc9()), &spec).unwrap();

    let sp = dir.path().join("stream.csv");
    let tp = dir.path().join("truth.json");
    let cp = dir.path().join("scenario.json");
    write_stream_file(&sp, &stream).unwrap();
    write_json(&tp, &log).unwrap();
    write_json(&cp, &spec).unwrap();

    assert_eq!(read_stream_file(&sp, Some(9)).unwrap(), stream);
    let back: TruthLog = read_json(&tp).unwrap();
    assert_eq!(back, log);
    let spec_back: ScenarioSpec = read_json(&cp).unwrap();
    assert_eq!(spec_back, spec);
}
