use super::Token;

const TRAILING: &[char] = &[':', ';', '.', '-'];
const QUOTES: &[char] = &['"', '\'', '\u{2018}', '\u{2019}', '\u{201C}', '\u{201D}'];

/// Strips trailing `: ; . -`, surrounding quotation marks, and a leading `+`,
/// repeating until nothing changes. A token that would become empty is
/// returned unchanged.
pub fn normalize_token(token: &Token) -> Token {
    match normalize_str(token.as_str()) {
        Some(s) if s != token.as_str() => Token::new(s).expect("substring of a valid token"),
        _ => token.clone(),
    }
}

/// `None` when stripping would leave nothing.
pub(crate) fn normalize_str(surface: &str) -> Option<&str> {
    let mut s = surface;
    loop {
        let next = s
            .trim_end_matches(|c| TRAILING.contains(&c) || QUOTES.contains(&c))
            .trim_start_matches(|c| c == '+' || QUOTES.contains(&c));
        if next.len() == s.len() {
            break;
        }
        s = next;
    }
    (!s.is_empty()).then_some(s)
}
