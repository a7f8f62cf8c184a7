mod common;

use common::{fixture, subset_questions, ScriptedChat, SCRIPT};
use fbpr::extraction::{
    extract_concepts, label_polarity, labeling_request, ExtractionRequest, RecordingChatClient,
    ReplayChatClient, DEFAULT_CHAT_MODEL,
};
use fbpr::model::{Concept, ConceptSet, KMode, Polarity};

/// Rewrites `chat_replay.jsonl` from the scripted model.
/// Run with `cargo test -p fbpr --test replay -- --ignored`.
#[test]
#[ignore]
fn regenerate_replay_fixture() {
    let path = fixture("chat_replay.jsonl");
    let _ = std::fs::remove_file(&path);
    let qs = subset_questions();
    let rec = RecordingChatClient::new(ScriptedChat::new(&qs), &path).unwrap();
    for mode in [KMode::FixedFive, KMode::Unrestricted] {
        for q in &qs {
            let req = ExtractionRequest::new(q.stem.clone(), mode, DEFAULT_CHAT_MODEL).unwrap();
            let cs = extract_concepts(&req, &rec).unwrap();
            if mode == KMode::FixedFive {
                label_polarity(&q.stem, &cs, &rec, DEFAULT_CHAT_MODEL).unwrap();
            }
        }
    }
}

#[test]
fn replay_fixture_covers_subset() {
    let qs = subset_questions();
    assert_eq!(qs.len(), 6);
    let replay = ReplayChatClient::open(&fixture("chat_replay.jsonl")).unwrap();
    for (q, (id, script)) in qs.iter().zip(SCRIPT) {
        assert_eq!(&q.id, id);
        let req = ExtractionRequest::new(q.stem.clone(), KMode::FixedFive, DEFAULT_CHAT_MODEL).unwrap();
        let cs = extract_concepts(&req, &replay).unwrap();
        let labeled = label_polarity(&q.stem, &cs, &replay, DEFAULT_CHAT_MODEL).unwrap();
        let expected = ConceptSet::new(
            script
                .iter()
                .map(|(t, neg)| {
                    let p = if *neg { Polarity::Negated } else { Polarity::Affirmed };
                    Concept::new(*t, p).unwrap()
                })
                .collect(),
            KMode::FixedFive,
        )
        .unwrap();
        assert_eq!(labeled, expected);
    }
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(fixture(&format!("golden/{name}"))).unwrap()
}

#[test]
fn prompts_match_goldens() {
    let q1 = &subset_questions()[0];
    assert!(q1.stem.ends_with("Leukocyte count 5,000/mm3"));
    for (mode, system, user) in [
        (KMode::FixedFive, "extract_system_k5.txt", "extract_user_k5_q1.txt"),
        (
            KMode::Unrestricted,
            "extract_system_unrestricted.txt",
            "extract_user_unrestricted_q1.txt",
        ),
    ] {
        let req = ExtractionRequest::new(q1.stem.clone(), mode, "gpt-4o").unwrap().chat_request();
        assert_eq!(req.messages[0].content, golden(system), "{system}");
        assert_eq!(req.messages[1].content, golden(user), "{user}");
    }
    let concepts = ConceptSet::new(
        SCRIPT[0].1.iter().map(|(t, _)| Concept::affirmed(*t).unwrap()).collect(),
        KMode::FixedFive,
    )
    .unwrap();
    let req = labeling_request(&q1.stem, &concepts, "gpt-4o");
    assert_eq!(req.messages[0].content, golden("label_system.txt"));
    assert_eq!(req.messages[1].content, golden("label_user_q1.txt"));
}
