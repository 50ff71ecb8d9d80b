use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::thread;
use std::time::Duration;

use sigpower_core::transport::{
    audit_barrier, run_ue, Backend, SocketServer, UeOutcome, DEFAULT_DEADLINE,
};
use sigpower_core::*;

fn spawn_ues(scenario: &Scenario, addr: SocketAddr) -> Vec<thread::JoinHandle<Result<UeOutcome>>> {
    scenario
        .agents()
        .unwrap()
        .into_iter()
        .map(|agent| thread::spawn(move || run_ue(addr, agent, DEFAULT_DEADLINE)))
        .collect()
}

#[test]
fn six_users_match_in_process_run() {
    let scenario = Scenario::new(paper_users(), 100.0)
        .with_decay(DecayPolicy::Exponential { l1: 5.0, l2: 10.0 });
    let server = SocketServer::bind("127.0.0.1:0").unwrap();
    let addr = server.local_addr().unwrap();
    let ues = spawn_ues(&scenario, addr);
    let mut backend = server.accept(6, DEFAULT_DEADLINE).unwrap();
    let remote = run_with(&scenario, &mut backend).unwrap();
    audit_barrier(backend.audit_log(), 6).unwrap();

    let local = run(&scenario).unwrap();
    assert_eq!(remote.status, local.status);
    assert_eq!(remote.trace.len(), local.trace.len());
    for (x, y) in remote.trace.iter().zip(&local.trace) {
        assert!((x.price - y.price).abs() <= 1e-12, "round {}", x.n);
        assert_eq!(x.bids, y.bids);
    }

    for (i, handle) in ues.into_iter().enumerate() {
        let outcome = handle.join().unwrap().unwrap();
        assert_eq!(outcome.user_id, i);
        assert_eq!(outcome.price, remote.final_price);
        assert!((outcome.power - remote.final_powers[i]).abs() <= 1e-12);
        // One price per priced round, then the stop.
        assert_eq!(outcome.received.len(), remote.trace.len());
        assert!(matches!(outcome.received.last(), Some(Message::Stop(_))));
    }
}

#[test]
fn symmetric_pair_splits_budget() {
    let u = UtilityParams::new(3.0, 15.0).unwrap();
    let scenario = Scenario::new(vec![u, u], 20.0)
        .with_decay(DecayPolicy::Exponential { l1: 5.0, l2: 10.0 });
    let server = SocketServer::bind("127.0.0.1:0").unwrap();
    let addr = server.local_addr().unwrap();
    let ues = spawn_ues(&scenario, addr);
    let mut backend = server.accept(2, DEFAULT_DEADLINE).unwrap();
    let result = run_with(&scenario, &mut backend).unwrap();
    assert_eq!(result.status, RunStatus::Converged);
    let slack = 10.0 * scenario.delta / result.final_price;
    for p in &result.final_powers {
        assert!((p - 10.0).abs() <= slack, "{p}");
    }
    for h in ues {
        h.join().unwrap().unwrap();
    }
}

fn raw_client(addr: SocketAddr, lines: &[&str]) -> TcpStream {
    let mut stream = TcpStream::connect(addr).unwrap();
    for line in lines {
        stream.write_all(line.as_bytes()).unwrap();
        stream.write_all(b"\n").unwrap();
    }
    stream
}

#[test]
fn missing_bid_times_out() {
    let server = SocketServer::bind("127.0.0.1:0").unwrap();
    let addr = server.local_addr().unwrap();
    let client = thread::spawn(move || {
        let a = raw_client(addr, &[r#"{"t":"hello","id":0}"#, r#"{"t":"bid","id":0,"n":1,"w":1.0}"#]);
        let b = raw_client(addr, &[r#"{"t":"hello","id":1}"#]);
        thread::sleep(Duration::from_millis(500));
        (a, b)
    });
    let mut backend = server.accept(2, Duration::from_millis(200)).unwrap();
    let err = backend.collect_bids(1).unwrap_err();
    assert!(matches!(err, Error::Timeout { round: 1, missing: 1 }), "{err}");
    client.join().unwrap();
}

#[test]
fn duplicate_bid_from_single_user() {
    let server = SocketServer::bind("127.0.0.1:0").unwrap();
    let addr = server.local_addr().unwrap();
    let client = thread::spawn(move || {
        let a = raw_client(
            addr,
            &[
                r#"{"t":"hello","id":0}"#,
                r#"{"t":"bid","id":0,"n":1,"w":1.0}"#,
                r#"{"t":"bid","id":0,"n":1,"w":2.0}"#,
            ],
        );
        let b = raw_client(addr, &[r#"{"t":"hello","id":1}"#]);
        thread::sleep(Duration::from_millis(500));
        (a, b)
    });
    let mut backend = server.accept(2, Duration::from_millis(300)).unwrap();
    let err = backend.collect_bids(1).unwrap_err();
    assert!(matches!(err, Error::DuplicateBid { user_id: 0, round: 1 }), "{err}");
    client.join().unwrap();
}

#[test]
fn bid_under_foreign_id_is_rejected() {
    let server = SocketServer::bind("127.0.0.1:0").unwrap();
    let addr = server.local_addr().unwrap();
    let client = thread::spawn(move || {
        let a = raw_client(addr, &[r#"{"t":"hello","id":0}"#, r#"{"t":"bid","id":1,"n":1,"w":1.0}"#]);
        let b = raw_client(addr, &[r#"{"t":"hello","id":1}"#]);
        thread::sleep(Duration::from_millis(500));
        (a, b)
    });
    let mut backend = server.accept(2, Duration::from_millis(300)).unwrap();
    assert!(matches!(backend.collect_bids(1), Err(Error::Protocol(_))));
    client.join().unwrap();
}

#[test]
fn ue_receives_price_lines() {
    let server = SocketServer::bind("127.0.0.1:0").unwrap();
    let addr = server.local_addr().unwrap();
    let client = thread::spawn(move || {
        let stream = raw_client(addr, &[r#"{"t":"hello","id":0}"#, r#"{"t":"bid","id":0,"n":1,"w":2.0}"#]);
        let mut line = String::new();
        BufReader::new(stream).read_line(&mut line).unwrap();
        line
    });
    let mut backend = server.accept(1, DEFAULT_DEADLINE).unwrap();
    let mut bs = BsAgent::new(1, 40.0, 1e-3).unwrap();
    transport::round_exchange(&mut backend, &mut bs, 1).unwrap();
    assert_eq!(client.join().unwrap(), "{\"t\":\"price\",\"n\":1,\"p\":0.05}\n");
}

#[test]
fn connect_to_closed_port_fails() {
    let server = SocketServer::bind("127.0.0.1:0").unwrap();
    let addr = server.local_addr().unwrap();
    drop(server);
    let agent = Scenario::new(paper_users(), 45.0).agents().unwrap().remove(0);
    assert!(run_ue(addr, agent, Duration::from_millis(200)).is_err());
}
