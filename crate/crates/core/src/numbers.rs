//! Decimal literal scanning shared by the precision filter and numeric
//! normalization.

/// A literal like `12.345`: byte span plus the position of the dot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct DecimalLiteral {
    pub start: usize,
    pub dot: usize,
    pub end: usize,
}

impl DecimalLiteral {
    pub fn decimals(&self) -> usize {
        self.end - self.dot - 1
    }
}

/// Decimal literals with digits on both sides of a single dot. Dotted runs
/// such as version strings (`1.2.3`) and bare fractions (`.5`) are skipped.
pub(crate) fn decimal_literals(text: &str) -> Vec<DecimalLiteral> {
    let b = text.as_bytes();
    let digit = |i: usize| b.get(i).is_some_and(u8::is_ascii_digit);
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if !digit(i) {
            i += 1;
            continue;
        }
        let preceded_by_dot = i > 0 && b[i - 1] == b'.';
        let start = i;
        while digit(i) {
            i += 1;
        }
        if b.get(i) != Some(&b'.') || !digit(i + 1) {
            continue;
        }
        let dot = i;
        i += 1;
        while digit(i) {
            i += 1;
        }
        let dotted_run = preceded_by_dot || (b.get(i) == Some(&b'.') && digit(i + 1));
        if dotted_run {
            while digit(i) || (b.get(i) == Some(&b'.') && digit(i + 1)) {
                i += 1;
            }
            continue;
        }
        out.push(DecimalLiteral { start, dot, end: i });
    }
    out
}

pub(crate) fn max_decimals<'a>(texts: impl Iterator<Item = &'a str>) -> usize {
    texts
        .flat_map(|t| decimal_literals(t).into_iter().map(|d| d.decimals()))
        .max()
        .unwrap_or(0)
}
