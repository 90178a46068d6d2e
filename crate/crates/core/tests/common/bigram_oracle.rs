//! Independent count-based reference for the bigram likelihood provider.

/// Chain-rule scoring straight from raw counts: add-one over the vocabulary
/// plus one unknown slot, with each text's end counted as a transition into
/// the unknown slot.
pub fn oracle_score(train: &[String], context: &str, query: &str) -> f64 {
    let split = |t: &str| -> Vec<String> {
        t.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect()
    };
    let texts: Vec<Vec<String>> = train.iter().map(|t| split(t)).collect();
    let mut vocab: Vec<&str> = texts.iter().flatten().map(String::as_str).collect();
    vocab.sort_unstable();
    vocab.dedup();
    let v = vocab.len() as f64;
    let known = |w: &str| vocab.binary_search(&w).is_ok();
    let count = |w: &str| texts.iter().flatten().filter(|x| *x == w).count() as f64;
    let pair = |a: &str, b: Option<&str>| -> f64 {
        texts
            .iter()
            .map(|t| {
                let mut n = 0;
                for i in 0..t.len() {
                    let next = t.get(i + 1).map(String::as_str);
                    let next_is = match (b, next) {
                        (Some(b), Some(x)) => b == x,
                        (None, None) => true,
                        (None, Some(x)) => !known(x),
                        _ => false,
                    };
                    if t[i] == a && next_is {
                        n += 1;
                    }
                }
                n
            })
            .sum::<usize>() as f64
    };
    let q = split(query);
    let mut prev = split(context).last().cloned();
    let mut total = 0.0;
    for w in &q {
        let p = match prev.as_deref().filter(|p| known(p)) {
            Some(p) => {
                let b = Some(w.as_str()).filter(|w| known(w));
                (pair(p, b) + 1.0) / (count(p) + v + 1.0)
            }
            None => 1.0 / (v + 1.0),
        };
        total += p.ln();
        prev = Some(w.clone());
    }
    total / q.len() as f64
}
