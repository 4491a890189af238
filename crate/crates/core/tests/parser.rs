use proptest::prelude::*;
use rxcycle::rx_parse::{extract_concepts, tokenize, Lexicon, ParseFailure, PrescriptionConcepts};
use serde::Deserialize;

const CORPUS: &str = include_str!("../fixtures/parser_corpus.jsonl");
const NEGATIVES: &str = include_str!("../fixtures/parser_negatives.jsonl");
const LEXICON: &str = include_str!("../fixtures/lexicon.txt");

#[derive(Deserialize)]
struct Case {
    text: String,
    expected: PrescriptionConcepts,
}

#[derive(Deserialize)]
struct Negative {
    text: String,
    failure: String,
}

fn cases() -> Vec<Case> {
    CORPUS.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn corpus_matches_expected_concepts() {
    let lex = Lexicon::parse(LEXICON);
    let cases = cases();
    assert!(cases.len() >= 60);
    let mismatches: Vec<String> = cases
        .iter()
        .filter_map(|c| match extract_concepts(&c.text, &lex) {
            Ok(p) if p.concepts == c.expected => None,
            Ok(p) => Some(format!(
                "{}\n  got      {:?}\n  expected {:?}",
                c.text, p.concepts, c.expected
            )),
            Err(e) => Some(format!("{}: {e}", c.text)),
        })
        .collect();
    assert!(mismatches.is_empty(), "{}", mismatches.join("\n"));
}

#[test]
fn negatives_fail_with_the_expected_reason() {
    let lex = Lexicon::parse(LEXICON);
    let negatives: Vec<Negative> = NEGATIVES.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(negatives.len() >= 10);
    for n in &negatives {
        let want = match n.failure.as_str() {
            "no_drug" => ParseFailure::NoDrug,
            "no_strength" => ParseFailure::NoStrength,
            other => panic!("unknown failure kind {other}"),
        };
        assert_eq!(extract_concepts(&n.text, &lex).unwrap_err(), want, "{}", n.text);
    }
}

fn corpus_words() -> Vec<String> {
    let mut w: Vec<String> = cases().iter().flat_map(|c| tokenize(&c.text)).collect();
    w.sort();
    w.dedup();
    w
}

proptest! {
    #[test]
    fn tokenize_is_total(s in "\\PC*") {
        let toks = tokenize(&s);
        prop_assert!(toks.iter().all(|t| !t.is_empty()));
    }

    #[test]
    fn accepted_sentences_have_lexicon_drug_and_positive_strength(
        picks in prop::collection::vec(0usize..10_000, 1..14)
    ) {
        let words = corpus_words();
        let sentence: Vec<&str> = picks.iter().map(|&k| words[k % words.len()].as_str()).collect();
        let sentence = sentence.join(" ");
        let lex = Lexicon::parse(LEXICON);
        let first = extract_concepts(&sentence, &lex);
        prop_assert_eq!(&first, &extract_concepts(&sentence, &lex));
        if let Ok(p) = first {
            prop_assert!(lex.contains(&p.concepts.drug_name));
            prop_assert!(p.concepts.strength_value > 0.0);
            prop_assert!(p.concepts.dose_amount >= 0.0 && p.concepts.frequency_per_day >= 0.0);
        }
    }
}
