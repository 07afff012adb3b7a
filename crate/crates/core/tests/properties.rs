use std::collections::BTreeMap;

use proptest::prelude::*;
use sbmpa_core::canon::BUILTIN_RULESETS;
use sbmpa_core::probes::{render_prompt, PromptTemplate};
use sbmpa_core::{canonicalize, CanonRuleset, Mode};

fn slots(t: &str, m: &str) -> BTreeMap<String, String> {
    BTreeMap::from([("T".to_string(), t.to_string()), ("M".to_string(), m.to_string())])
}

/// Removes the first occurrence of `a `/`an `/`this ` after `prefix`.
fn strip_determiner<'a>(s: &'a str, prefix: &str) -> (String, &'a str) {
    let rest = &s[prefix.len()..];
    for d in ["an ", "a ", "this "] {
        if let Some(r) = rest.strip_prefix(d) {
            return (format!("{prefix}{r}"), d);
        }
    }
    panic!("no determiner in {s:?}");
}

proptest! {
    #[test]
    fn rulesets_are_idempotent(text in "[ -~]{0,40}|[A-Za-zÀ-ÿ ,.!?]{0,30}") {
        for name in BUILTIN_RULESETS {
            let r = CanonRuleset::builtin(name).unwrap();
            let once = canonicalize(&text, &r).unwrap();
            prop_assert_eq!(canonicalize(&once, &r).unwrap(), once.clone());
        }
        prop_assert_eq!(canonicalize(&text, &CanonRuleset::identity()).unwrap(), text.clone());
        let first = canonicalize(&text, &CanonRuleset::vqa_first_term()).unwrap();
        prop_assert!(first.chars().count() <= text.chars().count());
        prop_assert!(!first.bytes().any(|b| b.is_ascii_uppercase()));
    }

    #[test]
    fn paired_prompts_differ_only_in_the_determiner(t in "[a-z]{1,10}", m in "[a-z]{1,10}") {
        let template = PromptTemplate::new("q", "Is {a}/this {M} {T} fragile?");
        let vlm = render_prompt(&template, Mode::Vlm, &slots(&t, &m)).unwrap();
        let llm = render_prompt(&template, Mode::Llm, &slots(&t, &m)).unwrap();
        let (v, vd) = strip_determiner(&vlm, "Is ");
        let (l, ld) = strip_determiner(&llm, "Is ");
        prop_assert_eq!(v, l);
        prop_assert_eq!(vd, "this ");
        prop_assert!(ld == "a " || ld == "an ");
        prop_assert_eq!(render_prompt(&template, Mode::Llm, &slots(&t, &m)).unwrap(), llm);
    }

    #[test]
    fn article_expansion_touches_nothing_else(t in "[a-zA-Z]{1,12}") {
        let template = PromptTemplate::new("q", "What color is {a} {T}?");
        let out = render_prompt(&template, Mode::Llm, &slots(&t, "x")).unwrap();
        let (rest, d) = strip_determiner(&out, "What color is ");
        prop_assert_eq!(rest, format!("What color is {t}?"));
        let vowel = t.to_lowercase().starts_with(['a', 'e', 'i', 'o', 'u']);
        let exception = ["one", "user", "unicorn", "university", "unique", "hour", "honest", "heir"]
            .iter()
            .any(|w| t.to_lowercase().starts_with(w));
        if !exception {
            prop_assert_eq!(d, if vowel { "an " } else { "a " });
        }
    }
}

#[test]
fn chained_prompt_examples() {
    let s = slots("spoon", "steel");
    let fragile = PromptTemplate::new("fragile", "Is {a}/this {T} fragile?");
    assert_eq!(render_prompt(&fragile, Mode::Llm, &s).unwrap(), "Is a spoon fragile?");
    assert_eq!(render_prompt(&fragile, Mode::Vlm, &s).unwrap(), "Is this spoon fragile?");
    let lift = PromptTemplate::new("lift", "Can a human lift {a} {M} {T}?");
    assert_eq!(render_prompt(&lift, Mode::Llm, &s).unwrap(), "Can a human lift a steel spoon?");
    let color = PromptTemplate::new("color", "What color is {a} {T}?");
    assert_eq!(render_prompt(&color, Mode::Llm, &slots("iceberg", "")).unwrap(), "What color is an iceberg?");
}
