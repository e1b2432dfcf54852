use std::fs;

use x2parser::io::*;
use x2parser_core::corpus::{generate_synthetic, Dataset, GeneratorConfig, Split, Vocabs};
use x2parser_core::treebank::serialize;

fn corpus(n: usize) -> Dataset {
    generate_synthetic(&GeneratorConfig {
        seed: 5,
        domains: vec!["event".into(), "news".into()],
        examples_per_domain: n,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

#[test]
fn jsonl_round_trips_byte_for_byte() {
    let data = corpus(100);
    let mut first = Vec::new();
    write_jsonl_to(&mut first, &data).unwrap();
    let back = parse_jsonl(first.as_slice(), true).unwrap();
    assert!(back.errors.is_empty());
    assert_eq!(back.records, data);
    let mut second = Vec::new();
    write_jsonl_to(&mut second, &back.records).unwrap();
    assert_eq!(first, second);
}

#[test]
fn jsonl_keeps_split_and_field_order() {
    let data = corpus(2);
    let e = data.examples[0].clone().with_split(Some(Split::Test));
    let line = example_to_json(&e);
    assert!(line.starts_with(r#"{"id":"#));
    assert!(line.ends_with(r#","split":"test"}"#));
    let back = parse_jsonl(format!("{line}\n").as_bytes(), true).unwrap();
    assert_eq!(back.records.examples[0], e);
}

#[test]
fn bad_jsonl_records_are_reported_with_line_numbers() {
    let good = example_to_json(&corpus(1).examples[0]);
    let text = format!(
        "{good}\n\nnot json\n{}\n{}\n",
        r#"{"id":"u","locale":"en","domain":"d","utterance":"a b","tree":"[IN:X a ]"}"#,
        r#"{"id":"t","locale":"en","domain":"d","utterance":"a","tree":"[IN:X a"}"#,
    );
    let report = parse_jsonl(text.as_bytes(), false).unwrap();
    assert_eq!(report.records.len(), 1);
    let lines: Vec<usize> = report.errors.iter().map(|e| e.line).collect();
    assert_eq!(lines, vec![3, 4, 5]);
    assert_eq!(report.errors[1].id.as_deref(), Some("u"));
    assert!(report.errors[1].message.contains("utterance"));
    match parse_jsonl(text.as_bytes(), true) {
        Err(IoError::Record(e)) => assert_eq!(e.line, 3),
        other => panic!("expected a record error, got {other:?}"),
    }
}

#[test]
fn frames_round_trip_with_and_without_split() {
    let data = corpus(60);
    let mut records: Vec<FrameRecord> = data.iter().map(FrameRecord::from_example).collect();
    records[0].split = Some(Split::Eval);
    let mut text = Vec::new();
    write_frames_to(&mut text, &records).unwrap();
    let back = parse_frames(text.as_slice()).unwrap();
    assert!(back.errors.is_empty());
    assert_eq!(back.records, records);
    let first = String::from_utf8(text).unwrap();
    assert!(first.lines().next().unwrap().ends_with("\teval"));
}

#[test]
fn malformed_frame_records_are_skipped_and_reported() {
    let text = "a\ten\td\nx\ty\nIN_A\nO\tO\nO\n\nb\ten\td\nx\nIN_B\nO\nO\n\nc\ten\nx\n";
    let report = parse_frames(text.as_bytes()).unwrap();
    assert_eq!(report.records.len(), 1);
    assert_eq!(report.records[0].id, "b");
    let lines: Vec<usize> = report.errors.iter().map(|e| e.line).collect();
    assert_eq!(lines, vec![1, 13]);
}

#[test]
fn tsv_rows_align_decoupled_representations() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mtop.tsv");
    fs::write(
        &path,
        "r1\twhat is the weather in paris\tweather\t[IN:GET_WEATHER [SL:LOCATION paris ] ]\n\
         r2\tcall mom\tcalling\t[IN:CREATE_CALL [SL:CONTACT dad ] ]\n\
         r3\tset alarm\talarm\t[IN:CREATE_ALARM ]\n",
    )
    .unwrap();
    let columns = ColumnMap { id: Some(0), utterance: 1, domain: 2, representation: 3, ..ColumnMap::default() };
    let report = read_mtop_tsv(&path, &columns).unwrap();
    assert_eq!(report.records.len(), 2, "{:?}", report.errors);
    let weather = &report.records.examples[0];
    assert_eq!(weather.id, "r1");
    assert_eq!(weather.locale, "en");
    assert_eq!(serialize(weather.tree()), "[IN:GET_WEATHER what is the weather in [SL:LOCATION paris ] ]");
    assert_eq!(report.errors.len(), 1);
    assert_eq!((report.errors[0].line, report.errors[0].id.as_deref()), (2, Some("r2")));

    let short = ColumnMap { representation: 7, ..columns };
    assert!(matches!(read_mtop_tsv(&path, &short), Err(IoError::MissingColumn { line: 1, column: 7, .. })));
}

#[test]
fn vocab_files_preserve_indices() {
    let vocabs = Vocabs::build(&corpus(30));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("slots.vocab");
    write_vocab(&path, &vocabs.slot_tags).unwrap();
    assert_eq!(read_vocab(&path).unwrap(), vocabs.slot_tags);
}
