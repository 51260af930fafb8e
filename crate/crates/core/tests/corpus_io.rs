mod common;

use std::collections::BTreeMap;
use std::fs;

use activemix::corpus::{load_corpus, split_corpus, subsample_sizes, subsample_to_rate};
use activemix::model::{load_labels, LabelStore};
use activemix::Error;
use common::corpus_from_dense;
use proptest::prelude::*;

#[test]
fn loads_counts_and_texts_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let dfm = dir.path().join("corpus.dfm");
    fs::write(&dfm, "2 2\nd1\tw1\t2\nd1\tw2\t1\nd2\tw2\t3\n").unwrap();
    let texts = dir.path().join("texts.tsv");
    fs::write(&texts, "d2\tsecond\\tdocument\n").unwrap();
    let c = load_corpus(&dfm, Some(&texts)).unwrap();
    assert_eq!((c.n_docs(), c.n_terms()), (2, 2));
    assert_eq!(c.lengths(), &[3, 3]);
    assert_eq!(c.raw_text("d2"), Some("second\tdocument"));
    assert_eq!(c.raw_text("d1"), None);

    fs::write(&texts, "d9\tunknown\n").unwrap();
    assert!(load_corpus(&dfm, Some(&texts)).is_err());
}

#[test]
fn empty_file_with_vocabulary_header() {
    let dir = tempfile::tempdir().unwrap();
    let dfm = dir.path().join("empty.dfm");
    fs::write(&dfm, "0 4\n").unwrap();
    let c = load_corpus(&dfm, None).unwrap();
    assert_eq!((c.n_docs(), c.n_terms()), (0, 4));
}

#[test]
fn negative_count_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let dfm = dir.path().join("bad.dfm");
    fs::write(&dfm, "1 1\nd1\tw1\t-1\n").unwrap();
    match load_corpus(&dfm, None) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    assert!(matches!(load_corpus(&dir.path().join("missing.dfm"), None), Err(Error::Io { .. })));
}

#[test]
fn label_files_resolve_document_ids() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus_from_dense(&[vec![1, 0], vec![0, 2], vec![1, 1]], 2);
    let path = dir.path().join("labels.tsv");
    fs::write(&path, "d2\t1\nd0\t0\n").unwrap();
    assert_eq!(load_labels(&path, &c, 2).unwrap(), vec![(2, 1), (0, 0)]);
    fs::write(&path, "d2\t4\n").unwrap();
    assert!(load_labels(&path, &c, 2).is_err());
    fs::write(&path, "nope\t0\n").unwrap();
    assert!(load_labels(&path, &c, 2).is_err());
}

#[test]
fn subsample_trace_example() {
    assert_eq!(subsample_sizes(16, 84, 0.05).unwrap(), (4, 76));
    assert_eq!(subsample_sizes(50, 50, 0.5).unwrap(), (50, 50));
    assert!(matches!(subsample_sizes(0, 100, 0.1), Err(Error::Infeasible(_))));
}

fn corpus_strategy() -> impl Strategy<Value = Vec<Vec<u32>>> {
    (1usize..6).prop_flat_map(|v| prop::collection::vec(prop::collection::vec(0u32..4, v), 1..40))
}

proptest! {
    #[test]
    fn dfm_round_trips_through_text(rows in corpus_strategy(), with_text in any::<bool>()) {
        let mut c = corpus_from_dense(&rows, rows[0].len());
        if with_text {
            let texts: BTreeMap<String, String> = c.doc_ids().iter().map(|id| (id.clone(), format!("a\tb\\c\n{id}"))).collect();
            c.set_raw_texts(texts).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let dfm = dir.path().join("c.dfm");
        let txt = dir.path().join("c.txt");
        let mut buf = Vec::new();
        c.write_dfm(&mut buf).unwrap();
        fs::write(&dfm, buf).unwrap();
        let mut buf = Vec::new();
        c.write_texts(&mut buf).unwrap();
        fs::write(&txt, buf).unwrap();
        let back = load_corpus(&dfm, with_text.then_some(txt.as_path())).unwrap();
        prop_assert_eq!(back.n_docs(), c.n_docs());
        prop_assert_eq!(back.doc_ids(), c.doc_ids());
        prop_assert_eq!(back.lengths(), c.lengths());
        for i in 0..c.n_docs() {
            let (t1, n1) = c.row(i);
            let (t2, n2) = back.row(i);
            let a: BTreeMap<&str, u32> = t1.iter().zip(n1).map(|(&t, &n)| (c.vocabulary().term(t as usize), n)).collect();
            let b: BTreeMap<&str, u32> = t2.iter().zip(n2).map(|(&t, &n)| (back.vocabulary().term(t as usize), n)).collect();
            prop_assert_eq!(a, b);
        }
        prop_assert_eq!(back.raw_texts(), c.raw_texts());
    }

    #[test]
    fn split_partitions_every_document(rows in corpus_strategy(), frac in 0.0f64..0.9, seed in any::<u64>()) {
        let c = corpus_from_dense(&rows, rows[0].len());
        prop_assume!(c.n_docs() >= 2 || frac == 0.0);
        let s = split_corpus(&c, frac, seed).unwrap();
        prop_assert_eq!(s.test.len(), (c.n_docs() as f64 * frac).round() as usize);
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..c.n_docs()).collect::<Vec<_>>());
        prop_assert_eq!(split_corpus(&c, frac, seed).unwrap(), s);
    }

    #[test]
    fn subsample_sizes_fit_and_track_the_rate(n_pos in 0usize..300, n_neg in 0usize..300, p in 0.01f64..0.99) {
        match subsample_sizes(n_pos, n_neg, p) {
            Ok((m_pos, m_neg)) => {
                prop_assert!(m_pos >= 1 && m_pos <= n_pos && m_neg <= n_neg);
                let n = n_pos + n_neg;
                if m_pos < (n as f64 * p).floor() as usize {
                    // After a decrement the negative count is rounded from the positive one.
                    prop_assert_eq!(m_neg, (m_pos as f64 * (1.0 - p) / p).round() as usize);
                }
            }
            Err(e) => prop_assert!(matches!(e, Error::Infeasible(_))),
        }
    }

    #[test]
    fn subsampled_corpus_keeps_the_planned_counts(labels in prop::collection::vec(any::<bool>(), 10..120), p in 0.05f64..0.6, seed in any::<u64>()) {
        let rows: Vec<Vec<u32>> = labels.iter().map(|&l| vec![u32::from(l), 1]).collect();
        let c = corpus_from_dense(&rows, 2);
        let truth = LabelStore::from_assignments(
            labels.iter().map(|&l| Some(usize::from(l))).collect(),
            LabelStore::binary_names(),
            vec![0, 1],
        ).unwrap();
        let n_pos = labels.iter().filter(|&&l| l).count();
        let Ok((m_pos, m_neg)) = subsample_sizes(n_pos, labels.len() - n_pos, p) else {
            prop_assert!(subsample_to_rate(&c, &truth, p, seed).is_err());
            return Ok(());
        };
        let sub = subsample_to_rate(&c, &truth, p, seed).unwrap();
        prop_assert_eq!(sub.n_docs(), m_pos + m_neg);
        let kept_pos = (0..sub.n_docs()).filter(|&i| sub.row(i).0.contains(&0)).count();
        prop_assert_eq!(kept_pos, m_pos);
        let idx: Vec<usize> = sub.doc_ids().iter().map(|id| c.doc_index(id).unwrap()).collect();
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }
}
