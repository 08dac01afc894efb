use super::PhonemeSequence;

/// Levenshtein distance with unit costs over arbitrary units.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance counted in phoneme symbols, not characters.
pub fn phoneme_edit_distance(a: &PhonemeSequence, b: &PhonemeSequence) -> usize {
    edit_distance(&a.symbols, &b.symbols)
}
