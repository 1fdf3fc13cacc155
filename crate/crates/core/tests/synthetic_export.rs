use std::collections::BTreeMap;
use std::path::PathBuf;

use skillmine_core::ingest::{
    build_membership, collect_input, filter_members, parse_export, Collected, EventKind, MemberFilter,
};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic_export")
}

#[test]
fn record_counts() {
    let export = parse_export(&root()).unwrap();
    // 50 records on disk, one with an unparseable ts
    assert_eq!(export.stats.files, 4);
    assert_eq!(export.stats.events, 49);
    assert_eq!(export.stats.malformed_records, 1);
    assert_eq!(export.stats.skipped(), 1);
    let expected: BTreeMap<String, usize> =
        [("UID1", 17), ("UID2", 16), ("UID3", 9)].into_iter().map(|(u, n)| (u.to_string(), n)).collect();
    assert_eq!(export.message_counts(), expected);
}

#[test]
fn bot_and_join_records_are_not_messages() {
    let export = parse_export(&root()).unwrap();
    let general = &export.channels["general"];
    let joins = general.iter().filter(|e| e.kind == EventKind::ChannelJoin).count();
    assert_eq!(joins, 3);
    assert!(general.iter().any(|e| e.kind == EventKind::OtherSystem("bot_message".into())));
    assert!(general.windows(2).all(|w| w[0].ts <= w[1].ts));
}

#[test]
fn billing_filter_selects_paying_members() {
    let export = parse_export(&root()).unwrap();
    let billed: Vec<String> = filter_members(&export.members, MemberFilter { billing_active: true, active: false })
        .into_iter()
        .map(|m| m.user_id)
        .collect();
    assert_eq!(billed, ["UID1", "UID2"]);
    assert_eq!(filter_members(&export.members, MemberFilter::default()).len(), 3);
}

#[test]
fn inputs_cover_every_author_in_the_channel() {
    let export = parse_export(&root()).unwrap();
    let index = build_membership(&export.channels);
    let Collected::Input(doc) = collect_input("UID3", "general", &export.channels["general"], &index) else {
        panic!("UID3 joined general");
    };
    let records: Vec<serde_json::Value> = serde_json::from_str(&doc.json).unwrap();
    assert_eq!(records.len(), doc.message_count);
    let authors: std::collections::BTreeSet<&str> = records.iter().filter_map(|r| r["user"].as_str()).collect();
    assert!(authors.len() > 1, "{authors:?}");
    assert!(records.iter().all(|r| r.get("subtype").is_none()));
}
