use unicode_normalization::UnicodeNormalization;

/// Canonical comparison form shared by every string metric: NFKC, case-fold,
/// whitespace runs collapsed to one space, trimmed.
pub fn normalize(s: &str) -> String {
    if s.is_ascii() {
        return collapse_whitespace(&s.to_ascii_lowercase());
    }
    full_normalize(s)
}

fn full_normalize(s: &str) -> String {
    let folded: String = s.nfkc().collect();
    let folded = caseless::default_case_fold_str(&folded);
    // Case folding can emit sequences that NFKC rewrites again (and vice
    // versa); a second pass reaches the fixed point.
    let folded: String = folded.nfkc().collect();
    let folded = caseless::default_case_fold_str(&folded);
    collapse_whitespace(&folded)
}

fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn ascii_shortcut_agrees(s in "[ -~\t\n]{0,24}") {
            prop_assert_eq!(normalize(&s), full_normalize(&s));
        }
    }

    #[test]
    fn examples() {
        assert_eq!(normalize("  Doral\n"), "doral");
        assert_eq!(normalize("A  B"), "a b");
        assert_eq!(normalize("\t\n "), "");
        // NFKC folds the full-width digit and the ligature.
        assert_eq!(normalize("Ｔｏｔａｌ ﬁle ２"), "total file 2");
        assert_eq!(normalize("STRASSE"), normalize("straße"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn idempotent(s in any::<String>()) {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once);
        }

        #[test]
        fn idempotent_on_text_like(s in "[a-zA-Z0-9ßİﬁ Ｔ\u{0301}\t\n]{0,24}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once);
        }
    }
}
