mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use kqlforge::evaluation::{score_filter, score_table};
use kqlforge::kql::{self, strip_model_decorations, test_corpus::VALID_CORPUS};
use kqlforge::pipeline::query_refine;
use kqlforge::retrieval::{
    CatalogEntry, EmbeddingVector, EntryKind, HashingEmbedder, Payload, StoreBuilder,
};

fn name_set() -> impl Strategy<Value = BTreeSet<String>> {
    prop::collection::btree_set(
        prop::sample::select(vec!["A", "B", "C", "D", "E"]).prop_map(String::from),
        0..5,
    )
}

proptest! {
    #[test]
    fn filter_score_is_symmetric(a in name_set(), b in name_set()) {
        prop_assert_eq!(score_filter(&a, &b, 1.0), score_filter(&b, &a, 1.0));
        let s = score_filter(&a, &b, 1.0);
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn table_score_is_bounded(a in name_set(), b in name_set()) {
        let s = score_table(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        if !a.is_subset(&b) {
            prop_assert_eq!(s, 0.0);
        }
    }

    #[test]
    fn strip_is_idempotent(text in "(```(kusto)?\n)?[ -~\n]{0,80}(\n```)?") {
        let once = strip_model_decorations(&text);
        prop_assert_eq!(strip_model_decorations(&once), once.clone());
    }

    #[test]
    fn strip_recovers_fenced_corpus(i in 0..VALID_CORPUS.len(), lead in "[A-Za-z ,.]{0,30}") {
        let q = VALID_CORPUS[i];
        let wrapped = format!("{lead}\n```kusto\n{q}\n```\nThis query does the job.");
        prop_assert_eq!(strip_model_decorations(&wrapped), q);
    }

    #[test]
    fn refine_never_adds_diagnostics(
        i in 0..20usize,
        edits in prop::collection::vec((any::<prop::sample::Index>(), prop::sample::select(vec!["", "(", ")", "|", "x", "\""])), 1..4),
    ) {
        let schema = common::schema();
        let mut q = common::eval_pairs()[i].kql.clone();
        for (at, ins) in edits {
            let mut cut = at.index(q.len() + 1);
            while !q.is_char_boundary(cut) {
                cut -= 1;
            }
            if ins.is_empty() && cut < q.len() {
                q.remove(cut);
            } else {
                q.insert_str(cut, ins);
            }
        }
        let before = kql::diagnostics(&q, &schema).len();
        let r = query_refine(&q, &schema, &HashingEmbedder::default(), 0.9);
        prop_assert!(kql::diagnostics(&r.kql, &schema).len() <= before, "{}\n=>\n{}", q, r.kql);
    }

    #[test]
    fn top_k_is_sorted_and_sized(
        vectors in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..30),
        query in prop::collection::vec(-1.0f64..1.0, 4),
        k in 1usize..40,
    ) {
        prop_assume!(query.iter().any(|x| *x != 0.0));
        let mut b = StoreBuilder::new();
        for (i, v) in vectors.iter().enumerate() {
            if v.iter().all(|x| *x == 0.0) {
                continue;
            }
            b.insert(CatalogEntry {
                id: format!("v{i:02}"),
                kind: EntryKind::Table,
                text: String::new(),
                payload: Payload::Table { table: String::new(), columns: Vec::new() },
                vector: EmbeddingVector::new(v.clone(), "p"),
            }).unwrap();
        }
        prop_assume!(!b.is_empty());
        let n = b.len();
        let store = b.freeze();
        let r = store.top_k(&EmbeddingVector::new(query, "p"), k).unwrap();
        prop_assert_eq!(r.entries.len(), k.min(n));
        for w in r.entries.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].entry.id < w[1].entry.id));
        }
    }
}
