use std::collections::BTreeMap;
use std::path::PathBuf;

use bridgeprobe::corpus::standoff::convert_standoff;
use bridgeprobe::corpus::{
    build_candidates, distance_bucket, filter_instances, load_corpus, CandidateScope, ContextScope,
    Corpus, CorpusError, DistanceBucketScheme, InstanceFilter,
};
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn tiny_corpus_counts() {
    let corpus = load_corpus(&fixture("tiny.bpc.json")).unwrap();
    let c = corpus.counts();
    assert_eq!((c.documents, c.mentions, c.instances), (2, 14, 3));
    for inst in corpus.instances() {
        assert!(build_candidates(inst.doc, inst.instance.anaphor, CandidateScope::AllPrevious).is_ok());
        assert!(inst.gold().any(|g| g.is_np));
    }
    let ids: Vec<String> = corpus.instances().map(|i| i.id()).collect();
    assert_eq!(ids, ["d1:m4", "d1:m7", "d2:e2"]);
}

#[test]
fn example_heads_and_candidates() {
    let corpus = load_corpus(&fixture("tiny.bpc.json")).unwrap();
    let inst = corpus.instances().next().unwrap();
    assert_eq!(inst.doc.head_word(inst.anaphor()), "percent");
    assert_eq!(inst.doc.head_word(inst.nearest_antecedent()), "firms");
    let all = build_candidates(inst.doc, inst.instance.anaphor, CandidateScope::AllPrevious).unwrap();
    let ids: Vec<&str> = all.iter().map(|&i| inst.doc.mention(i).id.as_str()).collect();
    assert_eq!(ids, ["m1", "m2", "m3"]);
}

#[test]
fn synthetic_corpus_matches_manifest() {
    let corpus = load_corpus(&fixture("synthetic.bpc.json")).unwrap();
    let text = std::fs::read_to_string(fixture("synthetic.manifest.json")).unwrap();
    let m: Value = serde_json::from_str(&text).unwrap();
    let n = |k: &str| m[k].as_u64().unwrap() as usize;
    let c = corpus.counts();
    assert_eq!(c.documents, n("documents"));
    assert_eq!(c.mentions, n("mentions"));
    assert_eq!(c.instances, n("instances"));
    let np = InstanceFilter::NpAntecedents;
    assert_eq!(filter_instances(&corpus, &[np.clone()]).len(), n("np"));
    assert_eq!(filter_instances(&corpus, &[InstanceFilter::Not(Box::new(np.clone()))]).len(), n("not_np"));
    assert_eq!(filter_instances(&corpus, &[np.clone(), InstanceFilter::InWindow]).len(), n("window"));
    assert_eq!(
        filter_instances(&corpus, &[np, InstanceFilter::Not(Box::new(InstanceFilter::InWindow))]).len(),
        n("np_outside_window")
    );
    for scope in ContextScope::ALL {
        let got = filter_instances(&corpus, &[InstanceFilter::AntecedentInContext(scope)]).len();
        assert_eq!(got as u64, m["ante_in_context"][scope.as_str()].as_u64().unwrap(), "{scope}");
    }
    let mut cloze = BTreeMap::new();
    let mut attention = BTreeMap::new();
    for inst in corpus.instances() {
        *cloze.entry(distance_bucket(inst.instance, DistanceBucketScheme::Cloze)).or_insert(0u64) += 1;
        *attention.entry(distance_bucket(inst.instance, DistanceBucketScheme::Attention)).or_insert(0u64) += 1;
    }
    for (got, key) in [(cloze, "cloze_buckets"), (attention, "attention_buckets")] {
        let want: BTreeMap<&str, u64> = m[key]
            .as_object()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_u64().unwrap()))
            .collect();
        assert_eq!(got, want, "{key}");
    }
}

#[test]
fn save_and_reload_is_lossless() {
    let corpus = load_corpus(&fixture("synthetic.bpc.json")).unwrap();
    let mut buf = Vec::new();
    corpus.write_to(&mut buf).unwrap();
    let again = Corpus::from_reader(buf.as_slice()).unwrap();
    let mut buf2 = Vec::new();
    again.write_to(&mut buf2).unwrap();
    assert_eq!(buf, buf2);
    assert_eq!(again.counts(), corpus.counts());
}

#[test]
fn loader_reports_line_context() {
    let good = std::fs::read_to_string(fixture("tiny.bpc.json")).unwrap();
    let first = good.lines().next().unwrap();
    let broken = format!("{first}\n{{\"id\": \"x\"\n");
    match Corpus::from_reader(broken.as_bytes()) {
        Err(CorpusError::Schema { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected schema error, got {other:?}"),
    }
    let dangling = first.replace("\"antecedents\":[\"m1\"]", "\"antecedents\":[\"nope\"]");
    assert!(matches!(
        Corpus::from_reader(dangling.as_bytes()),
        Err(CorpusError::Validation { line: 1, .. })
    ));
    assert!(matches!(
        load_corpus(&fixture("absent.bpc.json")),
        Err(CorpusError::Io { .. })
    ));
}

#[test]
fn standoff_fixture_converts() {
    let conv = convert_standoff(&fixture("standoff")).unwrap();
    let c = conv.corpus.counts();
    assert_eq!((c.documents, c.mentions, c.instances), (1, 6, 2));
    let doc = &conv.corpus.documents()[0];
    assert_eq!(doc.sentences.len(), 3);
    assert_eq!(doc.sentences[1].text, "The economy grew by five percent .");
    let ids: Vec<String> = conv.corpus.instances().map(|i| i.id()).collect();
    assert_eq!(ids, ["doc1:m2", "doc1:m4"]);
    let m4 = conv.corpus.instances().nth(1).unwrap();
    assert_eq!(m4.gold_ids(), ["m2"]);
    assert_eq!(m4.instance.sentence_distance, 1);
    // the unresolvable markable, its dangling antecedent, the dropped link
    assert_eq!(conv.log.len(), 3, "{:?}", conv.log);
    assert!(conv.log.iter().any(|n| n.item.contains("m9")));
}
