use std::collections::BTreeSet;

use proptest::prelude::*;
use serde_json::json;
use skillmine_core::chunker::{plan_chunks, ChunkError, ChunkParams, SafetyFactor};
use skillmine_core::evaluator::{mae, mae_std, median_ae, rmse, EvalPair};
use skillmine_core::extractor::{parse_response, ExtractionRecord, KnowledgeItem, KnowledgeLevel, Provenance};
use skillmine_core::ingest::{build_membership, collect_input, ChatEvent, Collected};
use skillmine_core::profiler::{aggregate, normalize_term, top_five, SkillProfile};
use skillmine_core::providers::{
    classify_token_param, lookup_context_window, mock_extract, ConfigOverrides, ProviderConfig, ProviderFamily,
    TokenParam,
};
use skillmine_core::store::{SelfAnnotation, SelfScore, Store};
use skillmine_core::tokenizer::Tokenizer;

// ---- ingest

fn arb_ts() -> impl Strategy<Value = String> {
    (1_400_000_000u64..1_800_000_000, 0u32..1_000_000).prop_map(|(s, us)| format!("{s}.{us:06}"))
}

fn arb_record() -> impl Strategy<Value = serde_json::Value> {
    (
        prop::sample::select(vec!["UID1", "UID2", "UID3", "UID4"]),
        arb_ts(),
        "[a-zA-Z0-9 .,!?日本🎉]{1,40}",
        prop::option::of(prop::sample::select(vec!["channel_join", "channel_purpose"])),
        prop::collection::vec((prop::sample::select(vec!["UID1", "UID2"]), arb_ts()), 0..3),
        prop::collection::vec(("[a-z+_]{1,8}", 1u32..5), 0..3),
    )
        .prop_map(|(user, ts, text, subtype, replies, reactions)| {
            let mut r = json!({"type": "message", "user": user, "ts": ts, "text": text});
            if let Some(s) = subtype {
                r["subtype"] = json!(s);
            }
            if !replies.is_empty() {
                r["thread_ts"] = json!(ts);
                r["reply_count"] = json!(replies.len());
                r["replies"] = json!(replies.iter().map(|(u, t)| json!({"user": u, "ts": t})).collect::<Vec<_>>());
            }
            if !reactions.is_empty() {
                r["reactions"] = json!(reactions
                    .iter()
                    .map(|(n, c)| json!({"name": n, "users": [], "count": c}))
                    .collect::<Vec<_>>());
            }
            r
        })
}

fn parse_all(records: &[serde_json::Value]) -> Vec<ChatEvent> {
    records.iter().map(|r| ChatEvent::from_record("c", r.clone()).unwrap().unwrap()).collect()
}

proptest! {
    #[test]
    fn events_round_trip(record in arb_record()) {
        let event = ChatEvent::from_record("c", record.clone()).unwrap().unwrap();
        prop_assert_eq!(event.ts.to_string(), record["ts"].as_str().unwrap());
        prop_assert_eq!(event.kind == skillmine_core::ingest::EventKind::ChannelJoin, record["subtype"] == "channel_join");
        let again = ChatEvent::from_record("c", event.to_record()).unwrap().unwrap();
        prop_assert_eq!(again, event);
    }

    #[test]
    fn membership_grows_with_the_stream(records in prop::collection::vec(arb_record(), 0..30), cut in 0usize..30) {
        let events = parse_all(&records);
        let cut = cut.min(events.len());
        let full = build_membership(&std::collections::BTreeMap::from([("c".to_string(), events.clone())]));
        let prefix = build_membership(&std::collections::BTreeMap::from([("c".to_string(), events[..cut].to_vec())]));
        for user in ["UID1", "UID2", "UID3", "UID4"] {
            if prefix.is_member("c", user) {
                prop_assert!(full.is_member("c", user));
                prop_assert!(full.first_seen("c", user) <= prefix.first_seen("c", user));
            }
        }
    }

    #[test]
    fn inputs_are_sorted_messages(records in prop::collection::vec(arb_record(), 1..30)) {
        let events = parse_all(&records);
        let index = build_membership(&std::collections::BTreeMap::from([("c".to_string(), events.clone())]));
        let user = events[0].author.clone();
        if let Collected::Input(doc) = collect_input(&user, "c", &events, &index) {
            let out: Vec<serde_json::Value> = serde_json::from_str(&doc.json).unwrap();
            prop_assert!(out.iter().all(|r| r.get("subtype").is_none()));
            let parsed = parse_all(&out);
            prop_assert!(parsed.windows(2).all(|w| w[0].ts <= w[1].ts));
            prop_assert_eq!(parsed.len(), events.iter().filter(|e| e.is_authored()).count());
        }
    }
}

// ---- chunking

fn params(window: u64, s_hundredths: u64, sys: u64, tmpl: u64, res: u64, cap: Option<usize>) -> ChunkParams {
    let mut p = ChunkParams::new(window, SafetyFactor::new(s_hundredths as f64 / 100.0).unwrap());
    p.system_tokens = sys;
    p.template_tokens = tmpl;
    p.reserved_output = res;
    p.max_chunks = cap;
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn segments_partition_the_encoding(
        text in "[a-z ,.\n日本語🎉é]{0,3000}",
        window in 600u64..4000,
        s in 1u64..=100,
        cap in prop::option::of(1usize..6),
    ) {
        let p = params(window, s, 40, 10, 500, cap);
        let tokens = Tokenizer::cl100k().encode(&text);
        let t_eff = window * s / 100;
        match plan_chunks(&text, p) {
            Err(ChunkError::Budget { .. }) => prop_assert!(t_eff <= 550),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
            Ok(plan) => {
                let budget = t_eff - 550;
                let n = (tokens.len() as u64).div_ceil(budget) as usize;
                prop_assert_eq!(plan.effective_limit, t_eff);
                prop_assert_eq!(plan.n_chunks, n);
                prop_assert_eq!(plan.segments.len(), cap.map_or(n, |c| n.min(c)));
                prop_assert!(plan.segments.iter().all(|s| s.tokens.len() as u64 <= budget));
                let joined: Vec<_> = plan.segments.iter().flat_map(|s| s.tokens.iter().copied()).collect();
                if !plan.capped {
                    prop_assert_eq!(&joined, &tokens);
                    prop_assert_eq!(plan.segments.iter().map(|s| s.text.as_str()).collect::<String>(), text.clone());
                }
                prop_assert_eq!(plan.warning.is_some(), plan.capped);
                prop_assert_eq!(plan_chunks(&text, p).unwrap(), plan);
            }
        }
    }

    #[test]
    fn more_reserve_never_grows_the_budget(window in 1u64..500_000, s in 1u64..=100, res in 0u64..5000, extra in 0u64..5000) {
        let budget = |r| params(window, s, 100, 20, r, None).chunk_budget().ok();
        match (budget(res), budget(res + extra)) {
            (Some(a), Some(b)) => prop_assert!(b <= a),
            (None, Some(_)) => prop_assert!(false, "budget appeared with more reserve"),
            _ => {}
        }
    }

    #[test]
    fn effective_limit_is_exact_floor(window in 1u64..10_000_000, s in 1u64..=100) {
        prop_assert_eq!(params(window, s, 0, 0, 0, None).effective_limit(), window * s / 100);
    }
}

// ---- providers

const TABLE_MODELS: &[&str] = &[
    "gpt-4o",
    "gpt-5",
    "o3",
    "o3-mini",
    "claude-sonnet-4-5",
    "claude-haiku-4-5",
    "gemini-2.5-pro",
    "gemini-2.5-flash",
    "mock",
    "other",
];

proptest! {
    #[test]
    fn lookups_ignore_case(model in prop::sample::select(TABLE_MODELS), flips in prop::collection::vec(any::<bool>(), 20)) {
        let mangled: String = model
            .chars()
            .zip(flips.iter().cycle())
            .map(|(c, &up)| if up { c.to_ascii_uppercase() } else { c })
            .collect();
        prop_assert_eq!(lookup_context_window(&mangled, None), lookup_context_window(model, None));
        prop_assert_eq!(classify_token_param(&mangled), classify_token_param(model));
    }

    #[test]
    fn family_rules(model in prop::sample::select(TABLE_MODELS)) {
        let config = ProviderConfig::for_model(model, ConfigOverrides::default()).unwrap();
        prop_assert_eq!(config.token_param == TokenParam::Implicit, config.family == ProviderFamily::Gemini);
        if config.family == ProviderFamily::Anthropic {
            prop_assert_eq!(config.output_cap, Some(4096));
        }
    }

    #[test]
    fn mock_is_a_function_of_its_inputs(texts in prop::collection::vec("[A-Za-z ]{0,60}", 0..8), user in "UID[0-9]") {
        let records: Vec<_> = texts.iter().map(|t| json!({"user": user, "text": t})).collect();
        let input = serde_json::to_string(&records).unwrap();
        prop_assert_eq!(mock_extract(&input, &user), mock_extract(&input, &user));
    }

    #[test]
    fn parsed_items_are_well_formed(entries in prop::collection::vec(("[ a-zA-Z]{0,12}", -2i64..5, "[a-z ]{0,10}"), 0..10)) {
        let raw = serde_json::to_string(
            &entries.iter().map(|(t, l, r)| json!({"text": t, "level": l, "reason": r})).collect::<Vec<_>>(),
        ).unwrap();
        let parsed = parse_response(&raw, "UID1").unwrap();
        prop_assert_eq!(parsed.items.len() + parsed.dropped, entries.len());
        for item in &parsed.items {
            prop_assert!(!item.text.trim().is_empty());
            prop_assert!(u8::from(item.level) <= 2);
        }
    }
}

// ---- profiles

fn record(channel: &str, items: &[(String, u8)]) -> ExtractionRecord {
    ExtractionRecord {
        user: "U".into(),
        channel: channel.into(),
        model: "m".into(),
        items: items
            .iter()
            .enumerate()
            .map(|(i, (text, level))| KnowledgeItem {
                text: text.clone(),
                level: KnowledgeLevel::try_from(*level).unwrap(),
                reason: String::new(),
                provenance: Provenance { user: "U".into(), channel: channel.into(), chunk_index: i, model: "m".into() },
            })
            .collect(),
        chunk_count: 1,
        parse_failures: 0,
        provider_failures: 0,
        dropped_entries: 0,
        capped: false,
        run_timestamp: "1970-01-01T00:00:00Z".into(),
    }
}

fn arb_records() -> impl Strategy<Value = Vec<ExtractionRecord>> {
    prop::collection::vec(
        (
            "c[0-9]",
            prop::collection::vec(
                (prop::sample::select(vec!["CHI", "chi", "Rust", " rust ", "Docker", "ETRA"]), 0u8..3),
                0..6,
            ),
        ),
        0..6,
    )
    .prop_map(|chs| {
        let mut seen = BTreeSet::new();
        chs.into_iter()
            .filter(|(c, _)| seen.insert(c.clone()))
            .map(|(c, items)| record(&c, &items.into_iter().map(|(t, l)| (t.to_string(), l)).collect::<Vec<_>>()))
            .collect()
    })
}

proptest! {
    #[test]
    fn aggregate_ignores_record_order(records in arb_records(), seed in any::<u64>()) {
        let mut shuffled = records.clone();
        let k = if shuffled.is_empty() { 0 } else { seed as usize % shuffled.len() };
        shuffled.rotate_left(k);
        shuffled.reverse();
        prop_assert_eq!(aggregate::<f64>("U", &records), aggregate::<f64>("U", &shuffled));
    }

    #[test]
    fn scores_are_means_of_level_scores(records in arb_records()) {
        for (term, entry) in aggregate::<f64>("U", &records).entries {
            prop_assert!((0.0..=100.0).contains(&entry.estimated_score));
            prop_assert!(!entry.channels.is_empty());
            let total = entry.estimated_score * entry.channels.len() as f64;
            prop_assert!((total / 50.0 - (total / 50.0).round()).abs() < 1e-9);
            prop_assert_eq!(normalize_term(&term), term);
        }
    }

    #[test]
    fn normalization_is_idempotent(term in "[ \tA-Za-zÄ-ö]{0,20}") {
        let once = normalize_term(&term);
        prop_assert_eq!(normalize_term(&once), once.clone());
        prop_assert!(!once.contains("  ") && once.trim() == once);
        prop_assert_eq!(once.to_lowercase(), once);
    }

    #[test]
    fn top_five_survives_scaling(records in arb_records(), factor in 0.01f64..1.0) {
        let profile: SkillProfile<f64> = aggregate("U", &records);
        let mut scaled = profile.clone();
        for e in scaled.entries.values_mut() {
            e.estimated_score *= factor;
        }
        let keys = |p: &SkillProfile<f64>| top_five(p).into_iter().map(|(k, _)| k.to_string()).collect::<Vec<_>>();
        prop_assert_eq!(keys(&profile), keys(&scaled));
    }
}

// ---- store

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn self_scores_are_on_the_grid(n in -50i64..200) {
        prop_assert_eq!(SelfScore::new(n).is_ok(), (0..=100).contains(&n) && n % 5 == 0);
    }

    #[test]
    fn annotations_round_trip(rows in prop::collection::vec((prop::sample::select(vec!["CHI", "Python", "Rust", "numpy"]), 0i64..=20), 1..6)) {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path());
        let at = chrono::DateTime::UNIX_EPOCH;
        let mut last = std::collections::BTreeMap::new();
        for (term, k) in &rows {
            let a = SelfAnnotation::new("U", term, k * 5, at).unwrap();
            store.put_annotation(&a).unwrap();
            last.insert(normalize_term(term), (k * 5) as u8);
        }
        let stored: std::collections::BTreeMap<_, _> =
            store.annotations("U").unwrap().into_iter().map(|a| (a.term, a.self_score.get())).collect();
        prop_assert_eq!(stored, last);
    }
}

// ---- metrics

fn pairs(v: &[(u8, u8)]) -> Vec<EvalPair<f64>> {
    v.iter()
        .map(|&(y, h)| EvalPair {
            y: f64::from(y),
            y_hat: f64::from(h),
            user: "U".into(),
            term: "t".into(),
            model: "m".into(),
        })
        .collect()
}

proptest! {
    #[test]
    fn metric_bounds(v in prop::collection::vec((0u8..=100, 0u8..=100), 1..60)) {
        let p = pairs(&v);
        let (m, r, med) = (mae(&p).unwrap(), rmse(&p).unwrap(), median_ae(&p).unwrap());
        prop_assert!(0.0 <= med && 0.0 <= m && m <= r + 1e-12 && r <= 100.0);
        let identical = v.iter().all(|(y, h)| y == h);
        prop_assert_eq!(m == 0.0, identical);
        prop_assert_eq!(r == 0.0, identical);
        prop_assert_eq!(mae_std(&p).unwrap().is_none(), v.len() == 1);
    }

    #[test]
    fn metrics_ignore_order(v in prop::collection::vec((0u8..=100, 0u8..=100), 1..60), k in 0usize..60) {
        let mut w = v.clone();
        w.rotate_left(k % v.len());
        w.reverse();
        let (a, b) = (pairs(&v), pairs(&w));
        let close = |x: f64, y: f64| (x - y).abs() < 1e-9;
        prop_assert!(close(mae(&a).unwrap(), mae(&b).unwrap()));
        prop_assert!(close(rmse(&a).unwrap(), rmse(&b).unwrap()));
        prop_assert_eq!(median_ae(&a).unwrap(), median_ae(&b).unwrap());
        match (mae_std(&a).unwrap(), mae_std(&b).unwrap()) {
            (Some(x), Some(y)) => prop_assert!(close(x, y)),
            (x, y) => prop_assert_eq!(x, y),
        }
    }
}
