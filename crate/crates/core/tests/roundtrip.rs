use proptest::prelude::*;
use x2parser_core::corpus::{enumerate_small_grammar, generate_synthetic, GeneratorConfig, SmallGrammar};
use x2parser_core::decomposer::{
    decompose, fertility_of, flatten_slot_targets, is_nested, reconstruct, regroup_slots,
    DecomposerError, IntentTag, SlotStack,
};
use x2parser_core::treebank::{parse_top, serialize, Child, NodeKind, SemanticNode, SemanticTree};

/// Slot-ancestor count per token by a direct tree walk.
fn slot_ancestors(tree: &SemanticTree) -> Vec<usize> {
    fn go(node: &SemanticNode, above: usize, out: &mut Vec<usize>) {
        let here = above + usize::from(node.kind == NodeKind::Slot);
        for c in &node.children {
            match c {
                Child::Token(i) => out[*i] = here,
                Child::Node(n) => go(n, here, out),
            }
        }
    }
    let mut out = vec![0; tree.len()];
    go(tree.root(), 0, &mut out);
    out
}

fn check_tree(s: &str) -> Result<bool, String> {
    let tree = parse_top(s).map_err(|e| format!("{s}: {e}"))?;
    if serialize(&tree) != s {
        return Err(format!("not canonical: {s}"));
    }
    let frame = match decompose(&tree) {
        Ok(f) => f,
        Err(DecomposerError::Unrepresentable(_)) => return Ok(false),
        Err(e) => return Err(format!("{s}: {e}")),
    };
    frame.validate().map_err(|e| format!("{s}: {e}"))?;
    let back = reconstruct(&frame, &tree.surfaces()).map_err(|e| format!("{s}: {e}"))?;
    if back != tree {
        return Err(format!("{s} reconstructed as {back}"));
    }
    let expected: Vec<usize> = slot_ancestors(&tree).into_iter().map(|c| c.max(1)).collect();
    if fertility_of(&frame) != expected {
        return Err(format!("{s}: fertility mismatch"));
    }
    let decomposed_nested = frame.intent_tags.iter().any(|t| *t != IntentTag::O)
        || frame.slot_stacks.iter().any(|st| st.len() > 1);
    if is_nested(&tree) != decomposed_nested {
        return Err(format!("{s}: is_nested disagrees with the frame"));
    }
    Ok(true)
}

#[test]
fn exhaustive_small_grammar_up_to_four_tokens() {
    let mut represented = 0;
    for unary in [false, true] {
        let g = SmallGrammar::new(if unary { 3 } else { 4 }, unary);
        for s in enumerate_small_grammar(&g) {
            if check_tree(&s).unwrap() {
                represented += 1;
            }
        }
    }
    assert!(represented > 1000);
}

#[test]
fn generator_trees_roundtrip() {
    let d = generate_synthetic(&GeneratorConfig {
        examples_per_domain: 300,
        seed: 11,
        ..GeneratorConfig::default()
    })
    .unwrap();
    for e in &d {
        assert!(check_tree(&serialize(e.tree())).unwrap());
    }
}

fn stack_strategy() -> impl Strategy<Value = SlotStack> {
    prop_oneof![
        Just("O".to_string()),
        "[BI]-[AB]",
        "[BI]-[AB]\\|[BI]-[AB]",
        "[BI]-[AB]\\|[BI]-[AB]\\|[BI]-[AB]",
    ]
    .prop_map(|s| s.parse().unwrap())
}

proptest! {
    #[test]
    fn flatten_regroup_inverse(stacks in prop::collection::vec(stack_strategy(), 1..12)) {
        let frame = x2parser_core::decomposer::DecomposedFrame {
            coarse_intent: "R".into(),
            intent_tags: vec![IntentTag::O; stacks.len()],
            slot_stacks: stacks,
        };
        let flat = flatten_slot_targets(&frame);
        let fert = fertility_of(&frame);
        prop_assert_eq!(flat.len(), fert.iter().sum::<usize>());
        prop_assert_eq!(regroup_slots(&flat, &fert).unwrap(), frame.slot_stacks);
    }

    #[test]
    fn single_char_deletions_of_brackets_are_rejected(idx in 0usize..64, seed in 0u64..50) {
        let d = generate_synthetic(&GeneratorConfig {
            examples_per_domain: 1,
            domains: vec!["event".into()],
            seed,
            ..GeneratorConfig::default()
        }).unwrap();
        let s = serialize(d.examples[0].tree());
        let bracket_positions: Vec<usize> =
            s.char_indices().filter(|(_, c)| *c == '[' || *c == ']').map(|(i, _)| i).collect();
        let at = bracket_positions[idx % bracket_positions.len()];
        let mut broken = s.clone();
        broken.remove(at);
        prop_assert!(parse_top(&broken).is_err(), "{}", broken);
    }
}

#[test]
fn reconstructed_frames_only_for_representable_trees() {
    // Every unrepresentable tree is rejected by decompose before any frame
    // is emitted, so reconstruct never sees one.
    let t = parse_top("[IN:R [IN:X [SL:S w ] ] ]").unwrap();
    assert!(matches!(decompose(&t), Err(DecomposerError::Unrepresentable(_))));
}
