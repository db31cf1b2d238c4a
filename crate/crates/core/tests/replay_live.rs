mod support;

use std::time::Duration;

use hyrouter::capture::{concat_raw, decode_capture, encode_capture, Direction};
use hyrouter::replay::{
    build_script, mark_placeholder, run_replay, ReplayError, ReplayOptions, Substitution,
};
use proptest::prelude::*;
use support::*;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpListener;

fn s2c(session: &hyrouter::Session) -> Vec<u8> {
    concat_raw(session, Direction::ServerToClient).bytes
}

#[tokio::test]
async fn identity_replay_reproduces_server_stream() {
    let server = start_mock().await;
    let golden = decode_capture(&golden_capture_bytes()).unwrap();
    let script = build_script(&golden).unwrap();
    let out = run_replay(&script, &[], &server.local_addr().to_string(), &ReplayOptions::default())
        .await
        .unwrap();
    assert!(out.is_complete());
    assert_eq!(out.server_closed_at, None);
    assert_eq!(s2c(&out.session), s2c(&golden));
    assert_eq!(
        concat_raw(&out.session, Direction::ClientToServer).bytes,
        concat_raw(&golden, Direction::ClientToServer).bytes
    );
    // the replayed session is itself a valid capture
    let bytes = encode_capture(&out.session).unwrap();
    let back = decode_capture(&bytes).unwrap();
    assert_eq!(back.session_id, out.session.session_id);
    assert_eq!(back.packets, out.session.packets);
}

#[tokio::test]
async fn two_identity_replays_agree() {
    let server = start_mock().await;
    let addr = server.local_addr().to_string();
    let script = build_script(&golden_session()).unwrap();
    let a = run_replay(&script, &[], &addr, &ReplayOptions::default()).await.unwrap();
    let b = run_replay(&script, &[], &addr, &ReplayOptions::default()).await.unwrap();
    assert_ne!(a.session.session_id, b.session.session_id);
    for d in [Direction::ClientToServer, Direction::ServerToClient] {
        assert_eq!(concat_raw(&a.session, d), concat_raw(&b.session, d));
    }
}

#[tokio::test]
async fn unknown_user_is_rejected() {
    let server = start_mock().await;
    let script = mark_placeholder(&build_script(&golden_session()).unwrap(), 0, 5, 9, "user").unwrap();
    let out = run_replay(
        &script,
        &[Substitution::new("user", b"mallory".to_vec())],
        &server.local_addr().to_string(),
        &ReplayOptions::default(),
    )
    .await
    .unwrap();
    let client = concat_raw(&out.session, Direction::ClientToServer).bytes;
    assert!(client.starts_with(b"AUTH mallory demo-pass\n"));
    assert_eq!(s2c(&out.session), b"ERR auth\nERR auth\n");
    assert_eq!(out.session.server_stream().next().unwrap().payload, b"ERR auth\n");
}

#[tokio::test]
async fn rebinding_to_the_same_value_is_identity() {
    let server = start_mock().await;
    let script = mark_placeholder(&build_script(&golden_session()).unwrap(), 0, 5, 9, "user").unwrap();
    let out = run_replay(
        &script,
        &[Substitution::new("user", b"demo".to_vec())],
        &server.local_addr().to_string(),
        &ReplayOptions::default(),
    )
    .await
    .unwrap();
    assert_eq!(s2c(&out.session), s2c(&golden_session()));
}

#[tokio::test]
async fn unbound_placeholder_fails_before_connecting() {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let script = mark_placeholder(&build_script(&golden_session()).unwrap(), 0, 5, 9, "user").unwrap();
    let err = run_replay(&script, &[], &addr, &ReplayOptions::default()).await.unwrap_err();
    assert_eq!(err, ReplayError::UnboundPlaceholder("user".into()));
    assert!(
        tokio::time::timeout(Duration::from_millis(200), listener.accept()).await.is_err(),
        "no connection attempt"
    );
}

#[tokio::test]
async fn connect_failure() {
    let dead = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = dead.local_addr().unwrap().to_string();
    drop(dead);
    let script = build_script(&golden_session()).unwrap();
    let err = run_replay(&script, &[], &addr, &ReplayOptions::default()).await.unwrap_err();
    assert!(matches!(err, ReplayError::ConnectFailed { .. }));
}

#[tokio::test]
async fn reply_timeout_keeps_partial_session() {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    // answers the first request without a terminator, then goes quiet
    let server = tokio::spawn(async move {
        let (mut s, _) = listener.accept().await.unwrap();
        let mut buf = [0u8; 64];
        let _ = s.read(&mut buf).await.unwrap();
        s.write_all(b"partial").await.unwrap();
        let mut rest = Vec::new();
        let _ = s.read_to_end(&mut rest).await;
        rest
    });
    let mut script = build_script(&golden_session()).unwrap();
    for step in &mut script.steps {
        step.reply_timeout_ms = 150;
    }
    let out = run_replay(&script, &[], &addr, &ReplayOptions::default()).await.unwrap();
    assert_eq!(out.timed_out_steps, vec![0, 1]);
    assert!(!out.is_complete());
    assert_eq!(s2c(&out.session), b"partial");
    assert_eq!(server.await.unwrap(), b"GET contacts\n");
}

#[tokio::test]
async fn server_close_ends_replay() {
    let server = start_mock().await;
    let mut script = build_script(&golden_session()).unwrap();
    script.steps[0].template = b"BOGUS\n".to_vec();
    let out = run_replay(&script, &[], &server.local_addr().to_string(), &ReplayOptions::default())
        .await
        .unwrap();
    assert_eq!(s2c(&out.session), b"ERR proto\n");
    assert_eq!(out.server_closed_at, Some(1));
}

#[tokio::test]
async fn custom_terminator() {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    tokio::spawn(async move {
        let (mut s, _) = listener.accept().await.unwrap();
        let mut buf = [0u8; 64];
        let _ = s.read(&mut buf).await.unwrap();
        s.write_all(b"line\nmore;").await.unwrap();
        let mut rest = Vec::new();
        let _ = s.read_to_end(&mut rest).await;
    });
    let mut script = build_script(&golden_session()).unwrap();
    script.steps.truncate(1);
    script.steps[0].reply_timeout_ms = 5000;
    let options = ReplayOptions {
        terminators: vec![b';'],
        ..ReplayOptions::default()
    };
    let out = run_replay(&script, &[], &addr, &options).await.unwrap();
    assert!(out.is_complete());
    assert_eq!(s2c(&out.session), b"line\nmore;");
}

proptest! {
    #[test]
    fn render_identity(packets in prop::collection::vec(
        (any::<bool>(), prop::collection::vec(any::<u8>(), 1..64)), 1..20)
        .prop_filter("needs a client packet", |v| v.iter().any(|(c, _)| *c)))
    {
        let session = session_from(&packets
            .into_iter()
            .map(|(c, p)| (if c { Direction::ClientToServer } else { Direction::ServerToClient }, p))
            .collect::<Vec<_>>());
        let script = build_script(&session).unwrap();
        let rendered: Vec<u8> = script.render_all(&[]).unwrap().concat();
        prop_assert_eq!(rendered, concat_raw(&session, Direction::ClientToServer).bytes);
    }

    #[test]
    fn splice_lengths_and_offsets(
        template in prop::collection::vec(any::<u8>(), 1..80),
        cuts in prop::collection::vec(any::<prop::sample::Index>(), 0..8),
        values in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..10), 8),
    ) {
        let session = session_from(&[(Direction::ClientToServer, template.clone())]);
        let mut script = build_script(&session).unwrap();
        // non-overlapping spans from sorted, deduplicated cut points
        let mut points: Vec<usize> = cuts.iter().map(|i| i.index(template.len() + 1)).collect();
        points.sort_unstable();
        points.dedup();
        let mut spans = Vec::new();
        for pair in points.chunks_exact(2) {
            if pair[0] < pair[1] {
                spans.push((pair[0], pair[1]));
            }
        }
        let mut bindings = Vec::new();
        for (i, &(s, e)) in spans.iter().enumerate() {
            script = mark_placeholder(&script, 0, s, e, &format!("p{i}")).unwrap();
            bindings.push(Substitution::new(format!("p{i}"), values[i].clone()));
        }
        let rendered = script.render_all(&bindings).unwrap().remove(0);

        let removed: usize = spans.iter().map(|(s, e)| e - s).sum();
        let added: usize = bindings.iter().map(|b| b.value.len()).sum();
        prop_assert_eq!(rendered.len(), template.len() - removed + added);

        // independent reassembly: walk the template, copying kept bytes
        let mut expected = Vec::new();
        let mut pos = 0;
        for (i, &(s, e)) in spans.iter().enumerate() {
            expected.extend_from_slice(&template[pos..s]);
            expected.extend_from_slice(&values[i]);
            pos = e;
        }
        expected.extend_from_slice(&template[pos..]);
        prop_assert_eq!(rendered, expected);
    }
}
