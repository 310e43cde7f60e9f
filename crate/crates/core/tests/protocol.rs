//! Scorer wire protocol against the built-in stub.

mod common;

use common::stub_channel;
use dbroute::fixtures::toy_catalog;
use dbroute::graph::{build_graph, DEFAULT_JOIN_THRESHOLD};
use dbroute::protocol::{ProtocolError, StubMode};
use dbroute::router::{DecodeConfig, ProtocolScorer, SchemaRouter};
use dbroute::vocab::Vocabulary;

#[test]
fn thousand_requests_normalize() {
    let mut ch = stub_channel(StubMode::Echo, Some("abc".into()));
    ch.handshake("abc").unwrap();
    for i in 0..1000usize {
        let candidates: Vec<String> = (0..1 + i % 17).map(|j| format!("tok{j}")).collect();
        let lp = ch.score(&format!("tok{} question {i}", i % 5), vec!["x".into()], candidates.clone()).unwrap();
        assert_eq!(lp.len(), candidates.len());
        let total: f64 = lp.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}

#[test]
fn mismatched_vocabulary_is_refused() {
    let mut ch = stub_channel(StubMode::Uniform, Some("abc".into()));
    assert!(matches!(ch.handshake("xyz"), Err(ProtocolError::Refused(_))));
}

#[test]
fn router_decodes_through_the_protocol() {
    let catalog = toy_catalog();
    let vocab = Vocabulary::from_catalog(&catalog);
    let ch = stub_channel(StubMode::Echo, Some(vocab.hash()));
    let scorer = ProtocolScorer::connect(ch, vocab.clone()).unwrap();
    let router = SchemaRouter::new(build_graph(&catalog, DEFAULT_JOIN_THRESHOLD), vocab, DecodeConfig::default()).unwrap();
    let routing = router.route("which singer sang in the concert", 5, &scorer).unwrap();
    assert!(!routing.candidates.is_empty());
    assert!(routing.sequences.iter().all(|s| router.graph().is_valid_schema(&s.schema.schema())));
}
