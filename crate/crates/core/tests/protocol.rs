use bridgeprobe::protocol::{
    join_words, run_pool, BackendClient, BackendSpec, MockBackend, MockConfig, MockMode,
    ProtocolError, Request, Response, MOCK_MASK, UNIFORM_LOGPROB,
};
use proptest::prelude::*;

fn client(mode: MockMode) -> BackendClient {
    mock_client(MockConfig {
        mode,
        ..MockConfig::default()
    })
}

fn mock_client(config: MockConfig) -> BackendClient {
    BackendClient::new(Box::new(MockBackend::new(config))).unwrap()
}

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,8}"
}

proptest! {
    #[test]
    fn requests_round_trip(id in "[0-9a-z]{1,6}", words in prop::collection::vec(word(), 1..6), slot in 0usize..8) {
        let (text, spans) = join_words(&words);
        let requests = [
            Request::Describe { id: id.clone() },
            Request::Tokenize { id: id.clone(), text: text.clone(), words: spans.clone() },
            Request::Attn { id: id.clone(), text, words: spans },
            Request::Score { id: id.clone(), pieces: words.clone(), mask_slots: vec![slot], queries: vec![words] },
        ];
        for r in requests {
            let line = serde_json::to_string(&r).unwrap();
            prop_assert!(!line.contains('\n'));
            prop_assert_eq!(serde_json::from_str::<Request>(&line).unwrap(), r);
        }
    }

    #[test]
    fn responses_round_trip(id in "[0-9]{1,4}", message in ".{0,20}") {
        for r in [
            Response::failure(&id, "overflow", message.clone()),
            Response::success(&id, &serde_json::json!({"pieces": []})),
        ] {
            let line = serde_json::to_string(&r).unwrap();
            prop_assert_eq!(serde_json::from_str::<Response>(&line).unwrap(), r);
        }
    }

    #[test]
    fn join_words_spans_recover_words(words in prop::collection::vec("[a-zé]{1,6}", 1..8)) {
        let (text, spans) = join_words(&words);
        let chars: Vec<char> = text.chars().collect();
        for (w, [a, b]) in words.iter().zip(spans) {
            prop_assert_eq!(&chars[a..b].iter().collect::<String>(), w);
        }
    }

    #[test]
    fn alignment_covers_every_word(words in prop::collection::vec("[a-z]{1,10}", 1..10)) {
        let mut c = client(MockMode::Uniform);
        let align = c.tokenize(&words).unwrap();
        prop_assert_eq!(align.n_words(), words.len());
        prop_assert!(align.is_special(0) && align.is_special(align.len() - 1));
        for (w, text) in words.iter().enumerate() {
            let joined: String = align.pieces_of_word(w)
                .map(|p| align.pieces()[p].text.trim_start_matches("##").to_string())
                .collect();
            prop_assert_eq!(&joined, text);
        }
    }
}

#[test]
fn describe_reports_mock_shape() {
    let c = client(MockMode::Uniform);
    let d = c.descriptor();
    assert_eq!((d.layers, d.heads, d.max_input_pieces), (12, 12, 512));
    assert_eq!(d.mask_piece, MOCK_MASK);
    assert_eq!(d.address, "mock:uniform");
}

#[test]
fn tokenize_splits_suffixes() {
    let mut c = client(MockMode::Uniform);
    let align = c.tokenize_text("playing chess").unwrap();
    assert_eq!(align.piece_texts(), ["[CLS]", "play", "##ing", "chess", "[SEP]"]);
    assert_eq!(align.pieces_of_word(0), 1..3);
    assert_eq!(align.pieces_of_word(1), 3..4);
    assert_eq!(align.word_of_piece(0), None);
    assert_eq!(align.word_of_piece(2), Some(0));
    assert_eq!(align.word_pieces(), ["play", "##ing", "chess"]);
}

#[test]
fn uniform_attention_rows() {
    let mut c = client(MockMode::Uniform);
    let (align, attn) = c.attentions(&["the", "firms", "were", "robbed"]).unwrap();
    assert_eq!(align.len(), 7);
    assert_eq!(attn.seq_len(), 7);
    assert!(attn.weights().iter().all(|&w| w == 1.0 / 7.0));
}

#[test]
fn random_attention_is_deterministic_and_stochastic() {
    let words = ["several", "small", "firms", "reported", "payment"];
    let a = client(MockMode::Random(5)).attentions(&words).unwrap().1;
    let b = client(MockMode::Random(5)).attentions(&words).unwrap().1;
    let other = client(MockMode::Random(6)).attentions(&words).unwrap().1;
    assert_eq!(a, b);
    assert_ne!(a, other);
    for l in 0..a.layers() {
        for h in 0..a.heads() {
            for q in 0..a.seq_len() {
                let sum: f64 = a.row(l, h, q).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn scaled_attention_is_rejected() {
    let mut c = client(MockMode::Scaled(2.0));
    assert!(matches!(c.attentions(&["a", "b"]), Err(ProtocolError::Tensor(_))));
}

#[test]
fn onehot_column_outside_sequence_is_a_backend_error() {
    let mut c = client(MockMode::OneHot(50));
    assert!(matches!(c.attentions(&["a"]), Err(ProtocolError::Backend { .. })));
}

#[test]
fn mask_scores_by_mode() {
    let pieces: Vec<String> = ["[CLS]", "percent", "of", "[MASK]", "[SEP]"].map(String::from).to_vec();
    let asked = vec![vec!["firms".to_string(), "police".to_string()]];

    let r = client(MockMode::Uniform).mask_scores(&pieces, &[3], &asked).unwrap();
    assert_eq!(r.get(0, "firms"), Some(Some(UNIFORM_LOGPROB)));

    let r = client(MockMode::Delta("firms".into())).mask_scores(&pieces, &[3], &asked).unwrap();
    assert_eq!(r.get(0, "firms"), Some(Some(0.0)));
    assert_eq!(r.get(0, "police"), Some(Some(-30.0)));

    let table: MockMode = r#"table:{"firms":-2.0}"#.parse().unwrap();
    let r = client(table).mask_scores(&pieces, &[3], &asked).unwrap();
    assert_eq!(r.get(0, "firms"), Some(Some(-2.0)));
    assert_eq!(r.get(0, "police"), Some(None));
    assert_eq!(r.get(0, "year"), None);
}

#[test]
fn score_request_validation() {
    let mut c = client(MockMode::Uniform);
    let pieces: Vec<String> = ["[CLS]", "a", "[SEP]"].map(String::from).to_vec();
    assert!(matches!(c.mask_scores(&pieces, &[], &[]), Err(ProtocolError::ZeroMaskSlots)));
    assert!(matches!(
        c.mask_scores(&pieces, &[1], &[vec!["x".into()]]),
        Err(ProtocolError::Backend { .. })
    ));
}

#[test]
fn overflow_is_typed() {
    let mut c = mock_client(MockConfig {
        max_input_pieces: 5,
        ..MockConfig::default()
    });
    assert!(c.tokenize(&["a", "b", "c"]).is_ok());
    match c.tokenize(&["a", "b", "c", "d"]) {
        Err(ProtocolError::Overflow { max, .. }) => assert_eq!(max, 5),
        other => panic!("expected overflow, got {other:?}"),
    }
    assert!(matches!(c.attentions(&["playing", "chess", "now"]), Err(ProtocolError::Overflow { .. })));
}

#[test]
fn backend_spec_parsing() {
    assert_eq!("mock:delta:firms".parse::<BackendSpec>().unwrap(), BackendSpec::Mock("delta:firms".into()));
    assert_eq!("cmd:python3 server.py".parse::<BackendSpec>().unwrap(), BackendSpec::Command("python3 server.py".into()));
    assert_eq!("http://127.0.0.1:9".parse::<BackendSpec>().unwrap(), BackendSpec::Http("http://127.0.0.1:9".into()));
    assert!("cmd:".parse::<BackendSpec>().is_err());
    assert!("ftp://x".parse::<BackendSpec>().is_err());
    assert!(matches!("mock:bogus".parse::<BackendSpec>().unwrap().connect(), Err(ProtocolError::BadSpec(_))));
}

#[test]
fn pool_preserves_order() {
    let items: Vec<usize> = (0..40).collect();
    let spec: BackendSpec = "mock:uniform".parse().unwrap();
    let out = run_pool(&items, 4, || spec.connect(), |c, &i| {
        c.tokenize(&vec!["w"; i + 1]).unwrap().len()
    })
    .unwrap();
    assert_eq!(out, items.iter().map(|i| i + 3).collect::<Vec<_>>());
}
