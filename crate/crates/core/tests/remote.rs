use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use biasprompt::model::{
    spawn_server, LogitProvider, LogitRequest, MockModel, ModelError, NGramModel, RemoteModel, RetryPolicy,
    ServeOptions,
};
use biasprompt::tokenization::{Vocabulary, WordTokenizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vocab() -> Vocabulary {
    Vocabulary::with_byte_fallback(&[" the", " cat", " sat", " on", " mat"]).unwrap()
}

fn fast_retry(max_retries: u32) -> RetryPolicy {
    RetryPolicy { max_retries, initial_backoff: Duration::from_millis(1) }
}

fn serve(model: Arc<dyn LogitProvider>, opts: ServeOptions) -> biasprompt::model::ServerHandle {
    spawn_server(model, &vocab(), "127.0.0.1:0".parse().unwrap(), opts).unwrap()
}

#[test]
fn responses_match_in_process_bit_for_bit() {
    let v = vocab();
    let tok = WordTokenizer::new(v.clone());
    let ngram = NGramModel::from_corpus(" the cat sat on the mat\n the mat sat\n", &tok, 0.5).unwrap();
    let hashed = MockModel::hashed(v.size(), v.eos_id(), 3);
    let models: Vec<Arc<dyn LogitProvider>> = vec![Arc::new(ngram), Arc::new(hashed)];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for model in models {
        let server = serve(model.clone(), ServeOptions::default());
        let remote = RemoteModel::connect(&server.url(), fast_retry(0)).unwrap();
        assert_eq!(remote.vocabulary().fingerprint(), v.fingerprint());
        for _ in 0..40 {
            let ctx: Vec<u32> = (0..rng.gen_range(0..8)).map(|_| rng.gen_range(0..v.size() as u32)).collect();
            let full = LogitRequest::full(ctx.clone().into());
            assert_eq!(remote.next_logits(&full).unwrap(), model.next_logits(&full).unwrap());
            let restrict: BTreeSet<u32> = (0..3).map(|_| rng.gen_range(0..v.size() as u32)).collect();
            let req = LogitRequest::restricted(ctx.into(), restrict);
            assert_eq!(remote.next_logits(&req).unwrap(), model.next_logits(&req).unwrap());
        }
    }
}

#[test]
fn busy_responses_are_retried() {
    let v = vocab();
    let model: Arc<dyn LogitProvider> = Arc::new(MockModel::hashed(v.size(), v.eos_id(), 9));
    let server = serve(model.clone(), ServeOptions { inject_busy: 3, ..Default::default() });
    let remote = RemoteModel::connect(&server.url(), fast_retry(5)).unwrap();
    let req = LogitRequest::full(vec![1, 2].into());
    assert_eq!(remote.next_logits(&req).unwrap(), model.next_logits(&req).unwrap());
}

#[test]
fn persistent_busy_is_a_backend_error() {
    let v = vocab();
    let server = serve(Arc::new(MockModel::hashed(v.size(), v.eos_id(), 9)), ServeOptions {
        inject_busy: 100,
        ..Default::default()
    });
    let remote = RemoteModel::connect(&server.url(), fast_retry(2)).unwrap();
    let err = remote.next_logits(&LogitRequest::full(vec![1].into())).unwrap_err();
    assert!(matches!(err, ModelError::BackendUnavailable(_)), "{err:?}");
    assert!(err.is_backend());
}

#[test]
fn context_overflow_crosses_the_wire() {
    let v = vocab();
    let server = serve(Arc::new(MockModel::hashed(v.size(), v.eos_id(), 9).with_context_limit(4)), ServeOptions::default());
    let remote = RemoteModel::connect(&server.url(), fast_retry(0)).unwrap();
    let err = remote.next_logits(&LogitRequest::full(vec![1; 6].into())).unwrap_err();
    assert_eq!(err, ModelError::ContextOverflow { len: 6, limit: 4 });
    assert!(!err.is_backend());
}

#[test]
fn invalid_requests_are_rejected_locally() {
    let v = vocab();
    let server = serve(Arc::new(MockModel::hashed(v.size(), v.eos_id(), 9)), ServeOptions::default());
    let remote = RemoteModel::connect(&server.url(), fast_retry(0)).unwrap();
    let err = remote.next_logits(&LogitRequest::full(vec![v.size() as u32].into())).unwrap_err();
    assert!(matches!(err, ModelError::InvalidRequest(_)), "{err:?}");
}

#[test]
fn unreachable_server_is_a_backend_error() {
    let url = {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}", listener.local_addr().unwrap())
    };
    let err = RemoteModel::connect(&url, fast_retry(1)).err().expect("connect should fail");
    assert!(err.is_backend(), "{err:?}");
}

#[test]
fn server_stops_when_handle_drops() {
    let v = vocab();
    let server = serve(Arc::new(MockModel::hashed(v.size(), v.eos_id(), 9)), ServeOptions::default());
    let url = server.url();
    drop(server);
    assert!(RemoteModel::connect(&url, fast_retry(0)).is_err());
}
